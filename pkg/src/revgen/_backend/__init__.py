"""Hot-kernel backend selection.

The compiled extension (`revgen._backend._fused`, Cython) and the pure-numpy
fallback (`_numpy_impl`) implement the same four operations:

  * pair_mmd_cotangents        -- fused MMD V-statistic + per-sample
                                  cotangents for continuous/spin pair batches
  * hybrid_pair_mmd_cotangents -- same for hybrid pairs under the product
                                  kernel, including the one-hot slot gradient
  * evolve_ising_mixture       -- m steps of single-flip/global-flip
                                  Metropolis over a batch of chains
  * evolve_ising_multispin     -- m steps of uniform multi-spin-flip
                                  Metropolis over a batch of chains

All randomness is pre-drawn by the caller, and the spin-evolution arithmetic
is written identically on both sides, so the two backends produce
bit-identical trajectories.  The MMD ops agree to rounding (~1e-12 relative).

Selection: REVGEN_BACKEND=cython|numpy forces a backend; the default tries
the extension and silently falls back to numpy.
"""
from __future__ import annotations

import os

from . import _numpy_impl

_requested = os.environ.get("REVGEN_BACKEND", "auto").lower()

_impl = _numpy_impl
BACKEND_NAME = "numpy"

if _requested in ("auto", "cython"):
    try:
        from . import _fused  # type: ignore[attr-defined]

        _impl = _fused
        BACKEND_NAME = "cython"
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "REVGEN_BACKEND=cython but the compiled extension is not "
                "available; reinstall with a C compiler or unset the variable"
            )
elif _requested != "numpy":
    raise ValueError(f"unknown REVGEN_BACKEND={_requested!r}")


def backend_name() -> str:
    return BACKEND_NAME


def set_num_threads(n: int) -> None:
    """Cap OpenMP parallelism of the compiled kernels; no-op on numpy."""
    if hasattr(_impl, "set_num_threads"):
        _impl.set_num_threads(int(n))


def pair_mmd_cotangents(s, sp, bandwidths, imq_beta, imq_c, want_cot=True):
    return _impl.pair_mmd_cotangents(s, sp, bandwidths, imq_beta, imq_c, want_cot)


def hybrid_pair_mmd_cotangents(x, xp, k, kp, n_modes, bandwidths, want_cot=True):
    return _impl.hybrid_pair_mmd_cotangents(
        x, xp, k, kp, n_modes, bandwidths, want_cot
    )


def evolve_ising_mixture(spins, neighbors, beta, coupling, field_h, p_global,
                         move_u, sites, logu):
    return _impl.evolve_ising_mixture(
        spins, neighbors, beta, coupling, field_h, p_global, move_u, sites, logu
    )


def evolve_ising_multispin(spins, bonds, beta, coupling, field_h, flip_masks, logu):
    return _impl.evolve_ising_multispin(
        spins, bonds, beta, coupling, field_h, flip_masks, logu
    )
