"""Unnormalized target distributions for the three benchmarks and the
exact-enumeration oracle for small periodic Ising lattices."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .core import Kind, SpinStates, States
from .errors import (
    DimensionMismatchError,
    KindMismatchError,
    LatticeTooLargeError,
    ModeOutOfRangeError,
    QuadratureNotConvergedError,
    SingularCovarianceError,
)

# Observable convention, fixed by calibrating the exact L=3 enumeration
# against known reference values and pinned by golden tests:
#   <E>   : total lattice energy (not per site)
#   m     : per-site magnetization (1/N) sum_i s_i
#   C_v   : beta^2 * Var(E)
#   chi   : beta * N * (<m^2> - <|m|>^2)
OBSERVABLE_CONVENTION = "total-E/cv-total/chi-site-abs/v1"

_LOG_2PI = np.log(2.0 * np.pi)


def _default_gmm_weights() -> np.ndarray:
    return np.array([0.6, 0.4])


def _default_gmm_means() -> np.ndarray:
    return np.array([[1.0, 1.0], [-1.0, -1.0]])


def _default_gmm_covs() -> np.ndarray:
    return np.array([
        [[0.5, 0.2], [0.2, 0.5]],
        [[0.5, -0.2], [-0.2, 0.5]],
    ])


@dataclass(frozen=True)
class GmmTarget:
    """Two-component bivariate Gaussian mixture with exact normalization."""

    weights: np.ndarray = field(default_factory=_default_gmm_weights)
    means: np.ndarray = field(default_factory=_default_gmm_means)
    covs: np.ndarray = field(default_factory=_default_gmm_covs)

    kind = Kind.CONTINUOUS

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        cov = np.asarray(self.covs, dtype=np.float64)
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w <= 0):
            raise ValueError("mixture weights must be positive and sum to 1")
        precs, logdets = [], []
        for c in cov:
            if not np.allclose(c, c.T):
                raise SingularCovarianceError("covariance not symmetric")
            sign, logdet = np.linalg.slogdet(c)
            if sign <= 0:
                raise SingularCovarianceError("covariance not positive definite")
            precs.append(np.linalg.inv(c))
            logdets.append(logdet)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", cov)
        object.__setattr__(self, "_precs", np.array(precs))
        object.__setattr__(self, "_logdets", np.array(logdets))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Log of the normalized mixture density at points x of shape (..., 2)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        comps = []
        for w, mu, prec, logdet in zip(
            self.weights, self.means, self._precs, self._logdets
        ):
            d = pts - mu
            quad = np.einsum("ni,ij,nj->n", d, prec, d)
            comps.append(np.log(w) - 0.5 * (self.dim * _LOG_2PI + logdet + quad))
        out = logsumexp(np.stack(comps, axis=0), axis=0)
        return out[0] if single else out

    def density(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_density(x))


def gmm_log_density(target: GmmTarget, x: np.ndarray) -> np.ndarray:
    return target.log_density(x)


def _lattice_bonds(side: int) -> np.ndarray:
    """Each periodic nearest-neighbor bond exactly once: right and down
    neighbors of every site in row-major order; 2*L^2 bonds total."""
    bonds = []
    for r in range(side):
        for c in range(side):
            i = r * side + c
            bonds.append((i, r * side + (c + 1) % side))
            bonds.append((i, ((r + 1) % side) * side + c))
    return np.array(bonds, dtype=np.int64)


def _lattice_neighbors(side: int) -> np.ndarray:
    """(L^2, 4) neighbor site indices under periodic boundaries."""
    nbr = np.empty((side * side, 4), dtype=np.int64)
    for r in range(side):
        for c in range(side):
            i = r * side + c
            nbr[i] = (
                r * side + (c + 1) % side,
                r * side + (c - 1) % side,
                ((r + 1) % side) * side + c,
                ((r - 1) % side) * side + c,
            )
    return nbr


@dataclass(frozen=True)
class IsingTarget:
    """Ferromagnetic Ising model on a periodic L x L square lattice."""

    side: int
    beta: float
    coupling: float = 1.0
    field_h: float = 0.0

    kind = Kind.SPINS

    def __post_init__(self):
        if self.side < 1:
            raise ValueError("side must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        object.__setattr__(self, "bonds", _lattice_bonds(self.side))
        object.__setattr__(self, "neighbors", _lattice_neighbors(self.side))

    @property
    def n_sites(self) -> int:
        return self.side * self.side

    def energy(self, spins: np.ndarray) -> np.ndarray:
        """Total energy of spin rows, each bond counted once."""
        s = np.atleast_2d(np.asarray(spins))
        if s.shape[1] != self.n_sites:
            raise DimensionMismatchError(
                f"spin rows of length {s.shape[1]}, lattice has {self.n_sites} sites"
            )
        s64 = s.astype(np.int64)
        b = self.bonds
        bond_sum = np.sum(s64[:, b[:, 0]] * s64[:, b[:, 1]], axis=1)
        site_sum = s64.sum(axis=1)
        e = -self.coupling * bond_sum - self.field_h * site_sum
        return e if spins.ndim > 1 else e[0]


def ising_energy(target: IsingTarget, s: SpinStates | np.ndarray) -> np.ndarray:
    spins = s.spins if isinstance(s, SpinStates) else s
    return target.energy(spins)


def _default_mus() -> tuple[float, ...]:
    return (1.0, 9.0, 25.0)


@dataclass(frozen=True)
class DoubleWellTarget:
    """Hybrid target p(x, k) = (1/M) exp(-(x^2 - mu_k)^2) / Z_k.

    Every mode carries total mass exactly 1/M; Z_k is computed by adaptive
    quadrature on first use and cached.
    """

    mus: tuple[float, ...] = field(default_factory=_default_mus)

    kind = Kind.HYBRID

    def __post_init__(self):
        mus = tuple(float(m) for m in self.mus)
        if any(m <= 0 for m in mus):
            raise ValueError("well parameters must be positive")
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "_log_z", None)

    @property
    def n_modes(self) -> int:
        return len(self.mus)

    def energy(self, x: np.ndarray, k: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        k = np.asarray(k, dtype=np.int64)
        if k.size and (k.min() < 0 or k.max() >= self.n_modes):
            raise ModeOutOfRangeError(f"mode index outside [0, {self.n_modes})")
        mu = np.asarray(self.mus)[k]
        return (x * x - mu) ** 2

    @property
    def log_z(self) -> np.ndarray:
        if self._log_z is None:
            object.__setattr__(self, "_log_z", compute_mode_normalizers(self))
        return self._log_z

    def log_density(self, x: np.ndarray, k: np.ndarray) -> np.ndarray:
        return -self.energy(x, k) - self.log_z[np.asarray(k, dtype=np.int64)] \
            - np.log(self.n_modes)

    def cutoff(self, k: int) -> float:
        """Integration half-width; e^{-E} is below 1e-25 of its peak there."""
        return float(np.sqrt(self.mus[k]) + 8.0)


def double_well_energy(target: DoubleWellTarget, x, k) -> np.ndarray:
    return target.energy(x, k)


def _gauss_legendre_panels(f, a: float, b: float, n_panels: int, nodes=16) -> float:
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(a, b, n_panels + 1)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    pts = mid[:, None] + half[:, None] * x[None, :]
    return float(np.sum(half[:, None] * w[None, :] * f(pts)))


def compute_mode_normalizers(
    target: DoubleWellTarget, atol: float = 1e-10, max_halvings: int = 20
) -> np.ndarray:
    """log Z_k = log int exp(-(x^2 - mu_k)^2) dx per mode.

    Composite Gauss-Legendre with panel doubling until two successive
    estimates differ by less than ``atol``.
    """
    out = np.empty(target.n_modes)
    for k, mu in enumerate(target.mus):
        r = target.cutoff(k)
        f = lambda x: np.exp(-((x * x - mu) ** 2))
        prev = _gauss_legendre_panels(f, -r, r, 1)
        for j in range(1, max_halvings + 1):
            cur = _gauss_legendre_panels(f, -r, r, 2 ** j)
            if abs(cur - prev) < atol:
                out[k] = np.log(cur)
                break
            prev = cur
        else:
            raise QuadratureNotConvergedError(
                f"mode {k}: estimates did not settle within {atol}"
            )
    return out


def spins_to_index(spins: np.ndarray) -> np.ndarray:
    """Bitmask with bit i = (spin_i + 1) / 2, row-major site order."""
    s = np.atleast_2d(np.asarray(spins))
    bits = ((s + 1) // 2).astype(np.uint64)
    weights = (np.uint64(1) << np.arange(s.shape[1], dtype=np.uint64))
    idx = (bits * weights).sum(axis=1)
    return idx if spins.ndim > 1 else idx[0]


def index_to_spins(idx: np.ndarray, n_sites: int) -> np.ndarray:
    i = np.atleast_1d(np.asarray(idx, dtype=np.uint64))
    bits = (i[:, None] >> np.arange(n_sites, dtype=np.uint64)[None, :]) & np.uint64(1)
    s = (bits.astype(np.int8) * 2 - 1)
    return s if np.ndim(idx) > 0 else s[0]


def all_spin_states(n_sites: int) -> np.ndarray:
    """(2^n, n) int8 matrix of every configuration, index = bitmask."""
    return index_to_spins(np.arange(1 << n_sites, dtype=np.uint64), n_sites)


@dataclass(frozen=True)
class EnumerationTable:
    """Exact Boltzmann probabilities and observables over all 2^{L^2} states."""

    side: int
    coupling: float
    field_h: float
    beta: float
    energies: np.ndarray   # (2^N,) indexed by spin bitmask
    probs: np.ndarray      # (2^N,) sums to 1
    mean_energy: float
    mean_abs_mag: float
    specific_heat: float
    susceptibility: float
    convention: str = OBSERVABLE_CONVENTION

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    def observables(self) -> dict[str, float]:
        return {
            "mean_energy": self.mean_energy,
            "mean_abs_mag": self.mean_abs_mag,
            "specific_heat": self.specific_heat,
            "susceptibility": self.susceptibility,
        }

    def sample_indices(self, rng, n: int) -> np.ndarray:
        """Draw n state bitmasks from the exact distribution."""
        return rng.gen.choice(self.n_states, size=n, p=self.probs)

    def save_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["L", "J", "h", "beta", "convention"])
            w.writerow([
                self.side,
                f"{self.coupling:.17g}",
                f"{self.field_h:.17g}",
                f"{self.beta:.17g}",
                self.convention,
            ])
            w.writerow(["bitmask", "energy", "probability"])
            for i in range(self.n_states):
                w.writerow([i, f"{self.energies[i]:.17g}", f"{self.probs[i]:.17g}"])

    @staticmethod
    def load_csv(path) -> "EnumerationTable":
        path = Path(path)
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[1]
        target = IsingTarget(
            side=int(header[0]),
            beta=float(header[3]),
            coupling=float(header[1]),
            field_h=float(header[2]),
        )
        body = rows[3:]
        energies = np.array([float(r[1]) for r in body])
        probs = np.array([float(r[2]) for r in body])
        return _table_from_arrays(target, energies, probs, header[4])


def _table_from_arrays(
    target: IsingTarget, energies: np.ndarray, probs: np.ndarray, convention: str
) -> EnumerationTable:
    n = target.n_sites
    spins = all_spin_states(n)
    m = spins.sum(axis=1, dtype=np.float64) / n
    mean_e = float(probs @ energies)
    var_e = float(probs @ (energies - mean_e) ** 2)
    mean_abs_m = float(probs @ np.abs(m))
    mean_m2 = float(probs @ m**2)
    return EnumerationTable(
        side=target.side,
        coupling=target.coupling,
        field_h=target.field_h,
        beta=target.beta,
        energies=energies,
        probs=probs,
        mean_energy=mean_e,
        mean_abs_mag=mean_abs_m,
        specific_heat=target.beta**2 * var_e,
        susceptibility=target.beta * n * (mean_m2 - mean_abs_m**2),
        convention=convention,
    )


def enumerate_ising(target: IsingTarget) -> EnumerationTable:
    """Exact probabilities, energies, and observables for all 2^{L^2} states."""
    n = target.n_sites
    if n > 20:
        raise LatticeTooLargeError(f"{n} sites exceeds the enumeration bound of 20")
    spins = all_spin_states(n)
    energies = target.energy(spins).astype(np.float64)
    logw = -target.beta * energies
    logz = logsumexp(logw)
    probs = np.exp(logw - logz)
    probs /= probs.sum()
    return _table_from_arrays(target, energies, probs, OBSERVABLE_CONVENTION)


Target = GmmTarget | IsingTarget | DoubleWellTarget


def log_target(target: Target, states: States) -> np.ndarray:
    """Per-state log pi up to one additive constant shared across states."""
    if isinstance(target, GmmTarget):
        if states.kind is not Kind.CONTINUOUS:
            raise KindMismatchError("GMM target over continuous states only")
        return target.log_density(states.x)
    if isinstance(target, IsingTarget):
        if states.kind is not Kind.SPINS:
            raise KindMismatchError("Ising target over spin states only")
        return -target.beta * target.energy(states.spins).astype(np.float64)
    if isinstance(target, DoubleWellTarget):
        if states.kind is not Kind.HYBRID:
            raise KindMismatchError("double-well target over hybrid states only")
        return target.log_density(states.x[:, 0], states.modes)
    raise KindMismatchError(f"unknown target {type(target)!r}")
