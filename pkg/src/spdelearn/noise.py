"""Samplers for the driving noises.

Space-time white noise carries i.i.d. ``N(0, dt / cell_volume)`` increments
per grid cell.  The colored 2-D process has spatial covariance with Fourier
eigenvalues ``q_k = exp(-alpha |k|^2)``; ``|k|`` is the integer mode radius
``sqrt(k1^2 + k2^2)`` (change it here if a different normalization is wanted).

All sampling is counter-based and reproducible: sample ``i`` of a path batch
uses a Philox4x64-10 generator keyed by ``(seed, stream, i)``, so batches may
be generated in parallel without changing the draws.  The generator identifier
is recorded in dataset headers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PRNG_ID = "philox4x64-10/numpy-standard-normal"

# sub-stream tags so independent consumers of one user seed never collide
STREAM_NOISE = 0
STREAM_ETA = 1
STREAM_INIT_FIELD = 2
STREAM_SPLIT = 3
STREAM_MODEL_INIT = 4
STREAM_SHUFFLE = 5


class NoiseError(ValueError):
    """Raised on invalid sampler arguments."""


def derived_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Generator for (seed, stream, index); distinct triples are independent."""
    key = np.array([np.uint64(seed % 2**64),
                    np.uint64((stream % 2**32) * 2**32 + index % 2**32)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class NoisePath:
    """Increments of a driving noise on a uniform space-time grid.

    ``increments[b, i]`` is the noise gathered over ``[t_i, t_{i+1})`` for
    sample ``b``; slices over disjoint steps are independent.
    """

    increments: np.ndarray  # (batch, time_steps, *spatial), float64
    dt: float
    kind: str  # "white" | "q_wiener"
    seed: int
    extents: tuple[float, ...]
    alpha: float | None = None

    @property
    def batch(self) -> int:
        return self.increments.shape[0]

    @property
    def time_steps(self) -> int:
        return self.increments.shape[1]

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.increments.shape[2:]


def _cell_volume(spatial_shape: Sequence[int], extents: Sequence[float]) -> float:
    vol = 1.0
    for n, ext in zip(spatial_shape, extents):
        vol *= float(ext) / n
    return vol


def sample_white_noise(
    seed: int,
    batch: int,
    time_steps: int,
    dt: float,
    spatial_shape: Sequence[int],
    extents: Sequence[float] | None = None,
) -> NoisePath:
    """Space-time white noise: each cell increment ~ N(0, dt / cell_volume)."""
    if dt <= 0:
        raise NoiseError("dt must be positive")
    if batch < 1 or time_steps < 1 or any(n < 1 for n in spatial_shape):
        raise NoiseError("batch, time_steps and spatial axes must be nonzero")
    if extents is None:
        extents = (1.0,) * len(spatial_shape)
    std = np.sqrt(dt / _cell_volume(spatial_shape, extents))
    out = np.empty((batch, time_steps, *spatial_shape), dtype=np.float64)
    for b in range(batch):
        rng = derived_rng(seed, STREAM_NOISE, b)
        out[b] = std * rng.standard_normal((time_steps, *spatial_shape))
    return NoisePath(out, float(dt), "white", int(seed), tuple(float(e) for e in extents))


def _reverse_conj(z: np.ndarray) -> np.ndarray:
    """conj(Z[-k]) for the trailing two (full-spectrum) axes."""
    out = np.conj(np.flip(z, axis=(-2, -1)))
    return np.roll(out, shift=(1, 1), axis=(-2, -1))


def q_wiener_eigenvalues(n1: int, n2: int, alpha: float) -> np.ndarray:
    """exp(-alpha |k|^2) on the FFT-ordered integer mode grid, zero-mean mode zeroed."""
    k1 = np.fft.fftfreq(n1, d=1.0 / n1)
    k2 = np.fft.fftfreq(n2, d=1.0 / n2)
    ksq = k1[:, None] ** 2 + k2[None, :] ** 2
    q = np.exp(-float(alpha) * ksq)
    q[0, 0] = 0.0
    return q


def sample_q_wiener(
    seed: int,
    batch: int,
    time_steps: int,
    dt: float,
    spatial_shape: Sequence[int],
    alpha: float,
    extents: Sequence[float] | None = None,
) -> NoisePath:
    """Spatially colored increments with covariance sum_k q_k phi_k (x) phi_k * dt.

    Realized spectrally: i.i.d. complex Gaussians per mode scaled by
    sqrt(dt * q_k), Hermitian-symmetrized so the field is real, zero-mean mode
    held at zero.
    """
    if alpha <= 0:
        raise NoiseError("alpha must be positive")
    if dt <= 0:
        raise NoiseError("dt must be positive")
    if len(spatial_shape) != 2:
        raise NoiseError("the colored sampler is two-dimensional")
    n1, n2 = spatial_shape
    if extents is None:
        extents = (1.0, 1.0)
    a1, a2 = (float(e) for e in extents)
    q = q_wiener_eigenvalues(n1, n2, alpha)
    # the orthonormal torus basis carries 1/sqrt(a1 a2); ifft carries 1/(n1 n2)
    amp = n1 * n2 * np.sqrt(dt * q / (a1 * a2))
    out = np.empty((batch, time_steps, n1, n2), dtype=np.float64)
    for b in range(batch):
        rng = derived_rng(seed, STREAM_NOISE, b)
        z = (rng.standard_normal((time_steps, n1, n2))
             + 1j * rng.standard_normal((time_steps, n1, n2))) / np.sqrt(2.0)
        s = (z + _reverse_conj(z)) / np.sqrt(2.0)
        spec = amp * s
        field = np.fft.ifft2(spec, axes=(-2, -1))
        out[b] = field.real
    return NoisePath(out, float(dt), "q_wiener", int(seed), (a1, a2), float(alpha))


def noise_drive(path: NoisePath) -> np.ndarray:
    """Pointwise drive dW/dt on the (time_steps + 1)-point model grid.

    Slice i covers [t_i, t_{i+1}); the final grid point carries no observed
    increment and is zero.  A singleton channel axis is inserted.
    """
    b, steps = path.batch, path.time_steps
    drive = np.zeros((b, 1, steps + 1, *path.spatial_shape), dtype=np.float64)
    drive[:, 0, :steps] = path.increments / path.dt
    return drive


def coarsen_increments(path: NoisePath, factor: int) -> NoisePath:
    """Aggregate consecutive increments: the same noise realization on a
    coarser time grid (dt -> factor * dt)."""
    if factor < 1 or path.time_steps % factor != 0:
        raise NoiseError("factor must divide the number of time steps")
    b, steps = path.batch, path.time_steps
    inc = path.increments.reshape(b, steps // factor, factor, *path.spatial_shape).sum(axis=2)
    return NoisePath(inc, path.dt * factor, path.kind, path.seed, path.extents, path.alpha)
