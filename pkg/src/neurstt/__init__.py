"""Unsupervised infrared small-target detection with a neural low-rank
Tucker background, neural 3-D total variation and soft-threshold target
extraction."""

from neurstt.lrtf import TuckerRepresentation, TvConfig
from neurstt.solver import SeparationResult, SolverConfig, run
from neurstt.synth import SynthConfig, generate

__all__ = [
    "SeparationResult",
    "SolverConfig",
    "SynthConfig",
    "TuckerRepresentation",
    "TvConfig",
    "generate",
    "run",
]
__version__ = "0.1.0"
