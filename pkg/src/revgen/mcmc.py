"""Detailed-balance-preserving transition kernels for all three state kinds,
m-step evolution over chain batches, and the verification oracles.

Transitions never carry gradient information: inputs and outputs are plain
state batches, so the stop-gradient on evolved states is structural.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from math import comb
from pathlib import Path

import numpy as np

from . import _backend
from .core import (
    ContinuousStates,
    HybridStates,
    Kind,
    SeededRng,
    SpinStates,
    States,
)
from .errors import KindMismatchError, LatticeTooLargeError
from .targets import (
    DoubleWellTarget,
    EnumerationTable,
    GmmTarget,
    IsingTarget,
    Target,
    all_spin_states,
    index_to_spins,
    log_target,
    spins_to_index,
)


@dataclass(frozen=True)
class GaussianRW:
    """Isotropic Gaussian random-walk proposal (symmetric)."""

    sigma_prop: float = 0.1


@dataclass(frozen=True)
class IsingMixture:
    """Single uniformly chosen spin flip with probability 1 - p_global, a
    global all-spin flip otherwise (both symmetric)."""

    p_global: float = 0.1


@dataclass(frozen=True)
class IsingMultiSpin:
    """Flip a uniformly chosen n-subset of spins, n uniform on {1..N};
    q(s, s') = (1/N) / C(N, Hamming(s, s')) depends only on the Hamming
    distance, hence symmetric."""


@dataclass(frozen=True)
class HybridTwoPhase:
    """Stochastic mixture of an intra-mode random walk (with occasional sign
    flip) and a cross-mode teleport x' = x * sqrt(mu_k' / mu_k) whose
    acceptance carries the matching Jacobian factor."""

    p_teleport: float = 0.2
    sigma_rw: float = 0.5
    p_flip: float = 0.1


Move = GaussianRW | IsingMixture | IsingMultiSpin | HybridTwoPhase

_MOVE_KIND = {
    GaussianRW: Kind.CONTINUOUS,
    IsingMixture: Kind.SPINS,
    IsingMultiSpin: Kind.SPINS,
    HybridTwoPhase: Kind.HYBRID,
}


@dataclass(frozen=True)
class TransitionKernel:
    move: Move
    target: Target
    steps: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if _MOVE_KIND[type(self.move)] is not self.target.kind:
            raise KindMismatchError(
                f"{type(self.move).__name__} cannot target {type(self.target).__name__}"
            )


@dataclass(frozen=True)
class TransitionRecord:
    """Diagnostics of the last step applied to each chain."""

    proposed: States
    accepted: np.ndarray        # (n,) bool
    log_acceptance: np.ndarray  # (n,) float <= 0


def mh_accept_log_ratio(
    target: Target, s: States, s_prop: States, log_q_correction=0.0
) -> np.ndarray:
    """log acceptance probability min(0, log pi(s') - log pi(s) + corr);
    the correction is 0 for symmetric proposals."""
    if s.kind is not s_prop.kind:
        raise KindMismatchError(f"{s.kind} vs {s_prop.kind}")
    return np.minimum(
        0.0, log_target(target, s_prop) - log_target(target, s) + log_q_correction
    )


# -- continuous random walk ---------------------------------------------------

def _evolve_gaussian(
    move: GaussianRW, target: GmmTarget, rng: SeededRng, states: ContinuousStates,
    steps: int, want_record: bool
):
    x = states.x.copy()
    logp = target.log_density(x)
    record = None
    for _ in range(steps):
        eps = rng.gen.standard_normal(x.shape)
        logu = np.log(rng.gen.random(x.shape[0]))
        prop = x + move.sigma_prop * eps
        logp_prop = target.log_density(prop)
        log_alpha = np.minimum(0.0, logp_prop - logp)
        acc = logu < log_alpha
        if want_record:
            record = TransitionRecord(ContinuousStates(prop), acc, log_alpha)
        x[acc] = prop[acc]
        logp[acc] = logp_prop[acc]
    return ContinuousStates(x), record


def step_gaussian_rw(
    rng: SeededRng, target: GmmTarget, states: ContinuousStates,
    sigma_prop: float = 0.1
) -> tuple[ContinuousStates, TransitionRecord]:
    return _evolve_gaussian(GaussianRW(sigma_prop), target, rng, states, 1, True)


# -- Ising kernels ------------------------------------------------------------

def _predraw_mixture(rng: SeededRng, steps: int, n_chains: int, n_sites: int):
    move_u = rng.gen.random((steps, n_chains))
    sites = rng.gen.integers(0, n_sites, size=(steps, n_chains))
    logu = np.log(rng.gen.random((steps, n_chains)))
    return move_u, sites, logu


def _evolve_ising_mixture(
    move: IsingMixture, target: IsingTarget, rng: SeededRng, states: SpinStates,
    steps: int, want_record: bool
):
    move_u, sites, logu = _predraw_mixture(rng, steps, states.n, target.n_sites)
    out = _backend.evolve_ising_mixture(
        states.spins, target.neighbors, target.beta, target.coupling,
        target.field_h, move.p_global, move_u, sites, logu,
    )
    record = None
    if want_record:
        # replay the last step from the state just before it
        prev = _backend.evolve_ising_mixture(
            states.spins, target.neighbors, target.beta, target.coupling,
            target.field_h, move.p_global, move_u[:-1], sites[:-1], logu[:-1],
        ) if steps > 1 else states.spins
        record = _mixture_record(
            move, target, prev, states.side, move_u[-1], sites[-1], logu[-1]
        )
    return SpinStates(out, states.side), record


def _mixture_record(move, target, spins, side, move_u, sites, logu) -> TransitionRecord:
    s = spins.astype(np.int64)
    rows = np.arange(s.shape[0])
    glob = move_u < move.p_global
    prop = s.copy()
    prop[glob] = -prop[glob]
    single = ~glob
    prop[rows[single], sites[single]] *= -1
    de = target.energy(prop) - target.energy(s)
    log_alpha = np.minimum(0.0, -(target.beta * de.astype(np.float64)))
    acc = logu < log_alpha
    return TransitionRecord(SpinStates(prop.astype(np.int8), side), acc, log_alpha)


def step_ising_mixture(
    rng: SeededRng, target: IsingTarget, states: SpinStates, p_global: float = 0.1
) -> tuple[SpinStates, TransitionRecord]:
    return _evolve_ising_mixture(IsingMixture(p_global), target, rng, states, 1, True)


def _predraw_multispin(rng: SeededRng, steps: int, n_chains: int, n_sites: int):
    n_flip = rng.gen.integers(1, n_sites + 1, size=(steps, n_chains))
    u = rng.gen.random((steps, n_chains, n_sites))
    ranks = u.argsort(axis=-1).argsort(axis=-1)
    masks = (ranks < n_flip[..., None]).astype(np.uint8)
    logu = np.log(rng.gen.random((steps, n_chains)))
    return masks, logu


def _evolve_ising_multispin(
    move: IsingMultiSpin, target: IsingTarget, rng: SeededRng, states: SpinStates,
    steps: int, want_record: bool
):
    masks, logu = _predraw_multispin(rng, steps, states.n, target.n_sites)
    out = _backend.evolve_ising_multispin(
        states.spins, target.bonds, target.beta, target.coupling, target.field_h,
        masks, logu,
    )
    record = None
    if want_record:
        prev = _backend.evolve_ising_multispin(
            states.spins, target.bonds, target.beta, target.coupling,
            target.field_h, masks[:-1], logu[:-1],
        ) if steps > 1 else states.spins
        prop = np.where(masks[-1] != 0, -prev, prev).astype(np.int8)
        de = (target.energy(prop) - target.energy(prev)).astype(np.float64)
        log_alpha = np.minimum(0.0, -(target.beta * de))
        acc = logu[-1] < log_alpha
        record = TransitionRecord(SpinStates(prop, states.side), acc, log_alpha)
    return SpinStates(out, states.side), record


def step_ising_multispin(
    rng: SeededRng, target: IsingTarget, states: SpinStates
) -> tuple[SpinStates, TransitionRecord]:
    return _evolve_ising_multispin(IsingMultiSpin(), target, rng, states, 1, True)


# -- hybrid two-phase kernel --------------------------------------------------

def _evolve_hybrid(
    move: HybridTwoPhase, target: DoubleWellTarget, rng: SeededRng,
    states: HybridStates, steps: int, want_record: bool
):
    x = states.x[:, 0].copy()
    k = states.modes.copy()
    n = x.shape[0]
    mus = np.asarray(target.mus)
    n_modes = target.n_modes
    logp = target.log_density(x, k)
    record = None
    for _ in range(steps):
        phase_u = rng.gen.random(n)
        k_off = rng.gen.integers(0, n_modes - 1, size=n)
        mix_u = rng.gen.random(n)
        eps = rng.gen.standard_normal(n) * move.sigma_rw
        logu = np.log(rng.gen.random(n))

        teleport = phase_u < move.p_teleport
        k_new = k_off + (k_off >= k)  # uniform over modes != k
        x_tel = x * np.sqrt(mus[k_new] / mus[k])
        x_rw = np.where(mix_u < move.p_flip, -x, x) + eps
        x_prop = np.where(teleport, x_tel, x_rw)
        k_prop = np.where(teleport, k_new, k)
        logp_prop = target.log_density(x_prop, k_prop)
        corr = np.where(teleport, 0.5 * (np.log(mus[k_prop]) - np.log(mus[k])), 0.0)
        log_alpha = np.minimum(0.0, logp_prop - logp + corr)
        acc = logu < log_alpha
        if want_record:
            record = TransitionRecord(
                HybridStates(x_prop[:, None], k_prop, n_modes), acc, log_alpha
            )
        x = np.where(acc, x_prop, x)
        k = np.where(acc, k_prop, k)
        logp = np.where(acc, logp_prop, logp)
    return HybridStates(x[:, None], k, n_modes), record


def step_hybrid(
    rng: SeededRng, target: DoubleWellTarget, states: HybridStates,
    p_teleport: float = 0.2, sigma_rw: float = 0.5, p_flip: float = 0.1
) -> tuple[HybridStates, TransitionRecord]:
    move = HybridTwoPhase(p_teleport, sigma_rw, p_flip)
    return _evolve_hybrid(move, target, rng, states, 1, True)


# -- m-step evolution ---------------------------------------------------------

def evolve(kernel: TransitionKernel, rng: SeededRng, states: States,
           want_record: bool = False):
    """Apply the single-step kernel `kernel.steps` times; returns the final
    states (and the last step's record when requested)."""
    if states.kind is not _MOVE_KIND[type(kernel.move)]:
        raise KindMismatchError(
            f"{type(kernel.move).__name__} cannot evolve {states.kind}"
        )
    move = kernel.move
    if isinstance(move, GaussianRW):
        out, rec = _evolve_gaussian(move, kernel.target, rng, states,
                                    kernel.steps, want_record)
    elif isinstance(move, IsingMixture):
        out, rec = _evolve_ising_mixture(move, kernel.target, rng, states,
                                         kernel.steps, want_record)
    elif isinstance(move, IsingMultiSpin):
        out, rec = _evolve_ising_multispin(move, kernel.target, rng, states,
                                           kernel.steps, want_record)
    elif isinstance(move, HybridTwoPhase):
        out, rec = _evolve_hybrid(move, kernel.target, rng, states,
                                  kernel.steps, want_record)
    else:
        raise KindMismatchError(f"unknown move {type(move)!r}")
    return (out, rec) if want_record else out


# -- exact oracles ------------------------------------------------------------

def exact_transition_matrix(kernel: TransitionKernel) -> np.ndarray:
    """Exact single-step transition matrix over all 2^{L^2} spin states,
    including the self-transition mass from rejections."""
    target = kernel.target
    if not isinstance(target, IsingTarget):
        raise KindMismatchError("exact matrices exist for spin kernels only")
    n = target.n_sites
    if n > 12:
        raise LatticeTooLargeError(f"{n} sites is too large for a dense matrix")
    n_states = 1 << n
    spins = all_spin_states(n)
    energies = target.energy(spins).astype(np.float64)
    idx = np.arange(n_states)
    p = np.zeros((n_states, n_states))
    move = kernel.move
    if isinstance(move, IsingMixture):
        per_site = (1.0 - move.p_global) / n
        for q in range(n):
            j = idx ^ (1 << q)
            alpha = np.minimum(1.0, np.exp(-target.beta * (energies[j] - energies)))
            p[idx, j] += per_site * alpha
        j = idx ^ (n_states - 1)
        alpha = np.minimum(1.0, np.exp(-target.beta * (energies[j] - energies)))
        p[idx, j] += move.p_global * alpha
    elif isinstance(move, IsingMultiSpin):
        ham = np.bitwise_count(idx[:, None] ^ idx[None, :])
        alpha = np.minimum(
            1.0, np.exp(-target.beta * (energies[None, :] - energies[:, None]))
        )
        inv_choose = np.array([0.0] + [1.0 / comb(n, d) for d in range(1, n + 1)])
        p = (inv_choose[ham] / n) * alpha
        np.fill_diagonal(p, 0.0)
    else:
        raise KindMismatchError(f"no exact matrix for {type(move).__name__}")
    np.fill_diagonal(p, np.diagonal(p) + (1.0 - p.sum(axis=1)))
    return p


def detailed_balance_violation(p: np.ndarray, probs: np.ndarray) -> float:
    """max over state pairs of |pi(s) p(s,s') - pi(s') p(s',s)|."""
    flux = probs[:, None] * p
    return float(np.max(np.abs(flux - flux.T)))


def gaussian_rw_flux_gap(
    target: GmmTarget, rng: SeededRng, sigma_prop: float = 0.1,
    n_pairs: int = 1000, spread: float = 1.5
) -> float:
    """max |pi(s) q(s,s') a(s->s') - pi(s') q(s',s) a(s'->s)| over random
    nearby pairs; zero for an exact Metropolis rule."""
    d = target.dim
    s = rng.gen.standard_normal((n_pairs, d)) * spread
    sp = s + sigma_prop * rng.gen.standard_normal((n_pairs, d))
    log_pi_s = target.log_density(s)
    log_pi_sp = target.log_density(sp)
    diff = sp - s
    log_q = -0.5 * (diff**2).sum(axis=1) / sigma_prop**2 \
        - d * np.log(np.sqrt(2 * np.pi) * sigma_prop)
    fwd = np.exp(log_pi_s + log_q + np.minimum(0.0, log_pi_sp - log_pi_s))
    bwd = np.exp(log_pi_sp + log_q + np.minimum(0.0, log_pi_s - log_pi_sp))
    return float(np.max(np.abs(fwd - bwd)))


def joint_transition_counts(
    kernel: TransitionKernel, rng: SeededRng, table: EnumerationTable, n_samples: int
) -> np.ndarray:
    """Empirical (state, next-state) counts with the chain started from the
    exact distribution; symmetric in expectation under detailed balance."""
    idx = table.sample_indices(rng, n_samples)
    states = SpinStates(index_to_spins(idx, table.side**2), table.side)
    nxt = evolve(TransitionKernel(kernel.move, kernel.target, 1), rng, states)
    jdx = spins_to_index(nxt.spins)
    counts = np.zeros((table.n_states, table.n_states))
    np.add.at(counts, (idx.astype(np.int64), jdx.astype(np.int64)), 1.0)
    return counts


def symmetry_fraction_within(counts: np.ndarray, n_sigma: float = 3.0) -> float:
    """Fraction of unordered index pairs whose count asymmetry is within
    n_sigma standard errors (pairs with zero total always pass)."""
    diff = np.abs(counts - counts.T)
    tot = counts + counts.T
    iu = np.triu_indices_from(counts, k=1)
    d, t = diff[iu], tot[iu]
    ok = d <= n_sigma * np.sqrt(np.maximum(t, 1.0))
    return float(np.mean(ok))


def hybrid_flux_counts(
    move: HybridTwoPhase, target: DoubleWellTarget, rng: SeededRng,
    n_chains: int, n_steps: int, n_x_bins: int = 40, x_range: tuple = (-6.0, 6.0),
) -> np.ndarray:
    """Binned transition counts (x-bin, mode) -> (x-bin, mode) with chains
    started from the exact sampler; total transitions = n_chains * n_steps."""
    from .metrics import reference_hybrid_sampler

    states = reference_hybrid_sampler(target, rng, n_chains)
    edges = np.linspace(x_range[0], x_range[1], n_x_bins + 1)
    n_bins = n_x_bins * target.n_modes

    def bin_of(st: HybridStates) -> np.ndarray:
        xb = np.clip(np.searchsorted(edges, st.x[:, 0], side="right") - 1,
                     0, n_x_bins - 1)
        return xb * target.n_modes + st.modes

    counts = np.zeros((n_bins, n_bins))
    cur = states
    b_cur = bin_of(cur)
    kern = TransitionKernel(move, target, 1)
    for _ in range(n_steps):
        nxt = evolve(kern, rng, cur)
        b_nxt = bin_of(nxt)
        np.add.at(counts, (b_cur, b_nxt), 1.0)
        cur, b_cur = nxt, b_nxt
    return counts


def log_transitions_csv(
    path, kernel: TransitionKernel, rng: SeededRng, states: States, n_steps: int
) -> None:
    """Stream one chain's records to CSV rows (step, accepted, log_acceptance)."""
    path = Path(path)
    cur = states
    single = TransitionKernel(kernel.move, kernel.target, 1)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "accepted", "log_acceptance"])
        for step in range(n_steps):
            cur, rec = evolve(single, rng, cur, want_record=True)
            for a, la in zip(rec.accepted, rec.log_acceptance):
                w.writerow([step, int(a), f"{la:.17g}"])
