"""Residual-shifting diffusion toolkit for toy-scale image super-resolution.

The package wires together a noise schedule with fixed endpoints and a
geometric interior law, the Markov chain that shifts the HR/LR residual,
a small autodiff engine with a convolutional denoiser, the randomized
degradation pipeline that synthesizes LR inputs, and the data/metric/IO
plumbing needed to train and evaluate end to end on one CPU.
"""

from .diffusion import DiffusionProcess, GaussianParams
from .rng import RandomStream
from .schedule import NoiseSchedule, ScheduleParams, build_schedule, eta_one

__version__ = "0.1.0"

__all__ = [
    "DiffusionProcess",
    "GaussianParams",
    "RandomStream",
    "NoiseSchedule",
    "ScheduleParams",
    "build_schedule",
    "eta_one",
    "__version__",
]
