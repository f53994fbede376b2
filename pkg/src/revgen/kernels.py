"""Positive-definite kernels on pair space, their analytic gradients, and
embeddings of state pairs into vectors the kernels act on.

All variants are radial in the continuous embedding (optionally multiplied by
discrete-slot indicators), so a kernel is characterized by two scalar maps of
the squared distance: its value and its gradient weight w with
grad_u k(u, v) = -(u - v) * w(||u - v||^2).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .core import Kind, PairBatch, States
from .errors import DimensionMismatchError, KindMismatchError

DEFAULT_RBF_BANDWIDTHS = (0.1, 0.5, 1.0, 2.0, 5.0)


@dataclass(frozen=True)
class MultiScaleRBF:
    """Unweighted sum of Gaussian RBF terms exp(-r^2 / (2 sigma^2))."""

    bandwidths: tuple[float, ...] = DEFAULT_RBF_BANDWIDTHS

    def __post_init__(self):
        bw = tuple(float(b) for b in self.bandwidths)
        if not bw or any(b <= 0 for b in bw):
            raise ValueError("bandwidths must be positive")
        object.__setattr__(self, "bandwidths", bw)


@dataclass(frozen=True)
class IMQ:
    """Inverse multiquadric (c^2 / (c^2 + r^2))^beta, normalized to 1 at r=0."""

    beta: float = 0.5
    c: float = 1.4

    def __post_init__(self):
        if not (0.0 < self.beta < 1.0):
            raise ValueError("IMQ beta must lie in (0, 1)")
        if self.c <= 0:
            raise ValueError("IMQ c must be positive")


@dataclass(frozen=True)
class SpinRBF(MultiScaleRBF):
    """Gaussian RBF on +-1 embeddings; r^2 = 4 * Hamming distance."""

    bandwidths: tuple[float, ...] = (1.5, 3.0, 6.0)


def default_spin_bandwidths(n_sites: int) -> tuple[float, float, float]:
    root = float(np.sqrt(n_sites))
    return (root / 2.0, root, 2.0 * root)


@dataclass(frozen=True)
class SumKernel:
    """Unweighted sum of radial kernel terms; sums of characteristic kernels
    stay characteristic."""

    parts: tuple[MultiScaleRBF | IMQ, ...]

    def __post_init__(self):
        if not self.parts:
            raise ValueError("SumKernel needs at least one part")
        object.__setattr__(self, "parts", tuple(self.parts))


@dataclass(frozen=True)
class ProductHybrid:
    """Continuous RBF value times indicator matches of every discrete slot."""

    rbf: MultiScaleRBF = field(default_factory=MultiScaleRBF)


KernelSpec = MultiScaleRBF | IMQ | SpinRBF | SumKernel | ProductHybrid


def gmm_default_kernel() -> SumKernel:
    return SumKernel((MultiScaleRBF(DEFAULT_RBF_BANDWIDTHS), IMQ(0.5, 1.4)))


def radial_terms(spec: KernelSpec) -> tuple[tuple[float, ...], float, float]:
    """(rbf bandwidths, imq beta, imq c); imq c == 0 means no IMQ term."""
    if isinstance(spec, ProductHybrid):
        return radial_terms(spec.rbf)
    if isinstance(spec, MultiScaleRBF):
        return spec.bandwidths, 0.0, 0.0
    if isinstance(spec, IMQ):
        return (), spec.beta, spec.c
    if isinstance(spec, SumKernel):
        bws: list[float] = []
        imq_beta = imq_c = 0.0
        for part in spec.parts:
            b, ib, ic = radial_terms(part)
            bws.extend(b)
            if ic > 0:
                if imq_c > 0:
                    raise ValueError("at most one IMQ term per kernel")
                imq_beta, imq_c = ib, ic
        return tuple(bws), imq_beta, imq_c
    raise KindMismatchError(f"unknown kernel spec {type(spec)!r}")


def radial_value(spec: KernelSpec, sqdist: np.ndarray) -> np.ndarray:
    """Kernel value as a function of squared distance."""
    bws, ib, ic = radial_terms(spec)
    r2 = np.asarray(sqdist, dtype=np.float64)
    out = np.zeros_like(r2)
    for s in bws:
        out += np.exp(-r2 / (2.0 * s * s))
    if ic > 0:
        c2 = ic * ic
        out += (c2 / (c2 + r2)) ** ib
    return out


def radial_weight(spec: KernelSpec, sqdist: np.ndarray) -> np.ndarray:
    """w(r^2) with grad_u k = -(u - v) * w(r^2)."""
    bws, ib, ic = radial_terms(spec)
    r2 = np.asarray(sqdist, dtype=np.float64)
    out = np.zeros_like(r2)
    for s in bws:
        out += np.exp(-r2 / (2.0 * s * s)) / (s * s)
    if ic > 0:
        c2 = ic * ic
        out += 2.0 * ib * c2**ib / (c2 + r2) ** (ib + 1.0)
    return out


@dataclass(frozen=True)
class PairEmbedding:
    """Vector view of pairs: continuous blocks concatenated row-wise, hybrid
    discrete indices kept in separate integer slots."""

    cont: np.ndarray              # (n, n_blocks * block) float64
    block: int                    # width of one state block inside cont
    disc: np.ndarray | None = None  # (n, n_blocks) int64, hybrid only
    n_modes: int | None = None

    @property
    def n(self) -> int:
        return self.cont.shape[0]

    def row(self, i: int) -> "PairEmbedding":
        return PairEmbedding(
            self.cont[i : i + 1],
            self.block,
            None if self.disc is None else self.disc[i : i + 1],
            self.n_modes,
        )


def _state_blocks(states: States) -> tuple[np.ndarray, np.ndarray | None, int | None]:
    if states.kind is Kind.CONTINUOUS:
        return states.x, None, None
    if states.kind is Kind.SPINS:
        return states.real(), None, None
    return states.x, states.modes[:, None], states.n_modes


def embed_states(states: States) -> PairEmbedding:
    """Single-state embedding (one block), used for plain two-sample MMD."""
    cont, disc, m = _state_blocks(states)
    return PairEmbedding(np.ascontiguousarray(cont), cont.shape[1], disc, m)


def embed_pairs(batch: PairBatch) -> PairEmbedding:
    """(s, s') embeddings: continuous concatenation, discrete slots separate."""
    a, da, m = _state_blocks(batch.cur)
    b, db, _ = _state_blocks(batch.nxt)
    cont = np.ascontiguousarray(np.concatenate([a, b], axis=1))
    disc = None if da is None else np.concatenate([da, db], axis=1)
    return PairEmbedding(cont, a.shape[1], disc, m)


def _check_compatible(u: PairEmbedding, v: PairEmbedding) -> None:
    if u.cont.shape[1] != v.cont.shape[1] or u.block != v.block:
        raise DimensionMismatchError(
            f"embedding widths {u.cont.shape[1]} vs {v.cont.shape[1]}"
        )
    if (u.disc is None) != (v.disc is None):
        raise DimensionMismatchError("one embedding has discrete slots, the other not")


def _indicator(spec: KernelSpec, u: PairEmbedding, v: PairEmbedding) -> np.ndarray:
    """Product of discrete-slot match indicators, as an (n_u, n_v) matrix."""
    if not isinstance(spec, ProductHybrid):
        return np.ones((u.n, v.n))
    if u.disc is None or v.disc is None:
        raise DimensionMismatchError("ProductHybrid needs discrete slots")
    ind = np.ones((u.n, v.n))
    for s in range(u.disc.shape[1]):
        ind *= u.disc[:, s][:, None] == v.disc[:, s][None, :]
    return ind


def gram(spec: KernelSpec, a: PairEmbedding, b: PairEmbedding) -> np.ndarray:
    """G[i, j] = k(a_i, b_j)."""
    _check_compatible(a, b)
    sq = cdist(a.cont, b.cont, "sqeuclidean")
    return radial_value(spec, sq) * _indicator(spec, a, b)


def kernel_eval(spec: KernelSpec, u: PairEmbedding, v: PairEmbedding) -> float:
    """Kernel value for single-row embeddings."""
    if u.n != 1 or v.n != 1:
        raise DimensionMismatchError("kernel_eval takes single-row embeddings")
    return float(gram(spec, u, v)[0, 0])


def kernel_grad_block(
    spec: KernelSpec, u: PairEmbedding, v: PairEmbedding, block: int
) -> np.ndarray:
    """d k(u, v) / d (block-th continuous block of u), block in {0, 1}.

    For hybrid embeddings the discrete indicators multiply through as
    constants; the gradient with respect to the discrete slots themselves is
    defined via the one-hot relaxation and lives in the loss assembly, not
    here.
    """
    _check_compatible(u, v)
    if u.n != 1 or v.n != 1:
        raise DimensionMismatchError("kernel_grad_block takes single-row embeddings")
    n_blocks = u.cont.shape[1] // u.block
    if not 0 <= block < n_blocks:
        raise DimensionMismatchError(f"block {block} outside 0..{n_blocks - 1}")
    du = u.cont[0] - v.cont[0]
    sq = float(du @ du)
    w = float(radial_weight(spec, sq)) * float(_indicator(spec, u, v)[0, 0])
    sl = slice(block * u.block, (block + 1) * u.block)
    return -du[sl] * w
