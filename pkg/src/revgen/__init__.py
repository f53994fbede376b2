"""revgen: generative equilibrium samplers trained by penalizing the
time-reversal asymmetry of Markov transition pairs.

Sampling targets need only energy differences (through Metropolis acceptance
ratios), never gradients, so continuous, discrete, and hybrid state spaces
share one training objective.
"""
from ._backend import backend_name
from .core import (
    ContinuousStates,
    HybridStates,
    Kind,
    PairBatch,
    SeededRng,
    SpinStates,
    swap,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "backend_name",
    "ContinuousStates",
    "HybridStates",
    "Kind",
    "PairBatch",
    "SeededRng",
    "SpinStates",
    "swap",
]
