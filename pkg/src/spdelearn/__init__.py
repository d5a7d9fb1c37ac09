"""Spectral operator learning for stochastic PDEs.

Submodules
----------
grids      uniform-grid fields and discrete Fourier transforms
autodiff   tape-based reverse-mode differentiation and gradient checks
noise      space-time white noise and spatially colored Q-Wiener sampling
solvers    ground-truth generators (1-D reaction-diffusion, 2-D vorticity)
nspde      Picard fixed-point spectral operator model
fno        Fourier neural operator baseline
training   loss, Adam, schedule, splits, metrics
dataio     binary dataset / checkpoint containers, run-config parsing
cli        command line driver (generate / train / eval)
"""

from .grids import (
    FrequencyGrid,
    GridFunction,
    grid_function,
    dft,
    idft,
    pad_modes,
    spectral_derivative,
    truncate_modes,
)
from .autodiff import Param, Tape, grad_check
from .noise import NoisePath, coarsen_increments, sample_q_wiener, sample_white_noise

__all__ = [
    "FrequencyGrid",
    "GridFunction",
    "grid_function",
    "dft",
    "idft",
    "pad_modes",
    "spectral_derivative",
    "truncate_modes",
    "Param",
    "Tape",
    "grad_check",
    "NoisePath",
    "sample_white_noise",
    "sample_q_wiener",
    "coarsen_increments",
]
