"""Deterministic random streams and immutable state/pair containers.

Every stochastic component draws from a :class:`SeededRng`.  A stream is
fully determined by ``(seed, stream)``: the same pair yields bit-identical
draw sequences across runs, and distinct stream ids give independent
counter-based streams, so concurrent workers derive their own substream
instead of sharing a generator.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    KindMismatchError,
    NegativeProbabilityError,
    NonNormalizedError,
)

_MASK64 = (1 << 64) - 1


class Kind(enum.Enum):
    CONTINUOUS = "continuous"
    SPINS = "spins"
    HYBRID = "hybrid"


class SeededRng:
    """Philox (counter-based) generator keyed by ``(seed, stream)``.

    Philox streams with distinct keys never overlap, which covers the
    substream independence requirement for any realistic draw count.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._bitgen = np.random.Philox(
            key=np.array([self.seed, self.stream], dtype=np.uint64)
        )
        self.gen = np.random.Generator(self._bitgen)

    def substream(self, stream: int) -> "SeededRng":
        """Independent stream derived from the same seed."""
        return SeededRng(self.seed, stream)

    def state(self) -> dict:
        st = self._bitgen.state
        return {
            "seed": self.seed,
            "stream": self.stream,
            "counter": [int(v) for v in st["state"]["counter"]],
            "buffer": [int(v) for v in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    def set_state(self, state: dict) -> None:
        if state["seed"] != self.seed or state["stream"] != self.stream:
            raise KindMismatchError("rng state belongs to a different (seed, stream)")
        st = self._bitgen.state
        st["state"]["counter"] = np.array(state["counter"], dtype=np.uint64)
        st["buffer"] = np.array(state["buffer"], dtype=np.uint64)
        st["buffer_pos"] = state["buffer_pos"]
        st["has_uint32"] = state["has_uint32"]
        st["uinteger"] = state["uinteger"]
        self._bitgen.state = st

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, stream={self.stream})"


def gaussian(rng: SeededRng, n: int) -> np.ndarray:
    """n i.i.d. standard normal draws; advances the stream."""
    if n < 1:
        raise DimensionMismatchError(f"need n >= 1, got {n}")
    return rng.gen.standard_normal(n)


def categorical(rng: SeededRng, probs) -> int:
    """Single draw of an index distributed according to ``probs``."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0):
        raise NegativeProbabilityError(f"negative entry in {p}")
    total = p.sum()
    if abs(total - 1.0) > 1e-6:
        raise NonNormalizedError(f"probabilities sum to {total}, not 1")
    cdf = np.cumsum(p / total)
    u = rng.gen.random()
    return int(np.searchsorted(cdf, u, side="right").clip(0, len(p) - 1))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = a.copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ContinuousStates:
    """Batch of points in R^d, one per row."""

    x: np.ndarray  # (n, d) float64

    kind = Kind.CONTINUOUS

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "x", _frozen(x))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def take(self, idx) -> "ContinuousStates":
        return ContinuousStates(self.x[idx])


@dataclass(frozen=True)
class SpinStates:
    """Batch of +-1 spin configurations on an L x L periodic lattice,
    stored row-major as int8 rows of length L^2."""

    spins: np.ndarray  # (n, L*L) int8
    side: int

    kind = Kind.SPINS

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.spins, dtype=np.int8))
        if s.shape[1] != self.side * self.side:
            raise DimensionMismatchError(
                f"spin rows have length {s.shape[1]}, expected {self.side ** 2}"
            )
        if not np.all(np.abs(s) == 1):
            raise KindMismatchError("spin entries must be -1 or +1")
        object.__setattr__(self, "spins", _frozen(s))

    @property
    def n(self) -> int:
        return self.spins.shape[0]

    @property
    def n_sites(self) -> int:
        return self.spins.shape[1]

    def real(self) -> np.ndarray:
        """Float64 view used by kernels and the sign-layer relaxation."""
        return self.spins.astype(np.float64)

    def take(self, idx) -> "SpinStates":
        return SpinStates(self.spins[idx], self.side)


@dataclass(frozen=True)
class HybridStates:
    """Batch of (continuous coordinate, discrete mode index) states."""

    x: np.ndarray      # (n, dx) float64
    modes: np.ndarray  # (n,) int64 in [0, n_modes)
    n_modes: int

    kind = Kind.HYBRID

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        k = np.atleast_1d(np.asarray(self.modes, dtype=np.int64))
        if x.shape[0] != k.shape[0]:
            raise DimensionMismatchError(
                f"{x.shape[0]} coordinates but {k.shape[0]} mode indices"
            )
        if k.size and (k.min() < 0 or k.max() >= self.n_modes):
            raise KindMismatchError(
                f"mode indices must lie in [0, {self.n_modes})"
            )
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "modes", _frozen(k))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def take(self, idx) -> "HybridStates":
        return HybridStates(self.x[idx], self.modes[idx], self.n_modes)


States = ContinuousStates | SpinStates | HybridStates


def check_same_shape(a: States, b: States) -> None:
    if a.kind is not b.kind:
        raise KindMismatchError(f"{a.kind} vs {b.kind}")
    if a.kind is Kind.CONTINUOUS and a.dim != b.dim:
        raise DimensionMismatchError(f"dim {a.dim} vs {b.dim}")
    if a.kind is Kind.SPINS and (a.side != b.side):
        raise DimensionMismatchError(f"side {a.side} vs {b.side}")
    if a.kind is Kind.HYBRID and (a.dim != b.dim or a.n_modes != b.n_modes):
        raise DimensionMismatchError("hybrid shape mismatch")


@dataclass(frozen=True)
class PairBatch:
    """N forward transition pairs (s_i, s'_i).

    The time-reversed set is always the elementwise swap of the forward set;
    it is produced by :meth:`swap` as a view, never stored independently.
    """

    cur: States
    nxt: States

    def __post_init__(self):
        check_same_shape(self.cur, self.nxt)
        if self.cur.n != self.nxt.n:
            raise DimensionMismatchError(
                f"{self.cur.n} states paired with {self.nxt.n}"
            )

    @property
    def n(self) -> int:
        return self.cur.n

    @property
    def kind(self) -> Kind:
        return self.cur.kind

    def swap(self) -> "PairBatch":
        return PairBatch(self.nxt, self.cur)


def swap(batch: PairBatch) -> PairBatch:
    """Reverse every pair: (s, s') -> (s', s).  Involution."""
    return batch.swap()
