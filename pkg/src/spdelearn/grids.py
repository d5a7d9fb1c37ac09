"""Dense fields on uniform grids and the discrete Fourier transforms they share.

Conventions used throughout the package:

* the forward transform is the unnormalized sum ``sum_x f(x) exp(-2 pi i k x / N)``,
  the inverse divides by the axis length, so ``idft(dft(f)) == f``;
* mode indices follow FFT ordering ``0, 1, ..., ceil(N/2)-1, -floor(N/2), ..., -1``;
* "grid axes" are the trailing axes of an array; leading axes (batch, channels)
  carry no physical extent;
* spatial axes are periodic (a torus of side ``extent``); a time axis is marked
  non-periodic and only ever transformed as a plain sequence of samples.

Complex data is stored as ``complex128`` (an interleaved float64 pair per
scalar); real data as ``float64``.  Arbitrary axis lengths are supported, the
underlying FFT is mixed-radix with a Bluestein fallback for large primes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import fft as _sfft


def fft_workers() -> int:
    """Worker count for batched FFTs (default 1: strictly serial execution)."""
    return int(os.environ.get("SPDELEARN_FFT_WORKERS", "1"))


class GridError(ValueError):
    """Raised when grid metadata or operands are inconsistent."""


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridFunction:
    """A scalar field sampled on a uniform grid, with physical axis metadata.

    ``extents[i]`` and ``periodic[i]`` describe the ``i``-th *grid* axis, i.e.
    axis ``data.ndim - len(extents) + i`` of the array.  Values are validated
    to be finite on construction, so a ``GridFunction`` never holds NaN/Inf.
    """

    data: np.ndarray
    extents: tuple[float, ...]
    periodic: tuple[bool, ...]

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype != np.float64 and arr.dtype != np.complex128:
            if np.iscomplexobj(arr):
                arr = arr.astype(np.complex128)
            else:
                arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise GridError("grid function holds non-finite values")
        ext = tuple(float(e) for e in self.extents)
        per = tuple(bool(p) for p in self.periodic)
        if len(ext) != len(per):
            raise GridError("extents and periodic flags differ in length")
        if len(ext) > arr.ndim:
            raise GridError(
                f"{len(ext)} grid axes declared for a {arr.ndim}-d array"
            )
        if any(e <= 0 for e in ext):
            raise GridError("axis extents must be positive")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "periodic", per)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def grid_axes(self) -> tuple[int, ...]:
        n = len(self.extents)
        return tuple(range(self.data.ndim - n, self.data.ndim))

    @property
    def is_complex(self) -> bool:
        return self.data.dtype == np.complex128

    def spacing(self, grid_axis: int) -> float:
        """Grid spacing extent / N of the ``grid_axis``-th grid axis."""
        ax = self.grid_axes[grid_axis]
        return self.extents[grid_axis] / self.data.shape[ax]

    def with_data(self, data: np.ndarray) -> "GridFunction":
        return GridFunction(data, self.extents, self.periodic)


def grid_function(
    data: Iterable,
    extents: Sequence[float] | None = None,
    periodic: Sequence[bool] | None = None,
) -> GridFunction:
    """Convenience constructor: all trailing axes are grid axes by default.

    ``extents`` defaults to 1.0 per axis (unit torus), ``periodic`` to True.
    """
    arr = np.asarray(data)
    if extents is None:
        extents = (1.0,) * arr.ndim
    if periodic is None:
        periodic = (True,) * len(extents)
    return GridFunction(arr, tuple(extents), tuple(periodic))


@dataclass(frozen=True)
class FrequencyGrid:
    """Integer mode indices (FFT ordering) and angular factors 2*pi*k/extent."""

    mode_indices: tuple[np.ndarray, ...]
    angular: tuple[np.ndarray, ...]

    @classmethod
    def for_axes(cls, lengths: Sequence[int], extents: Sequence[float]) -> "FrequencyGrid":
        if len(lengths) != len(extents):
            raise GridError("lengths and extents differ in length")
        modes = []
        angular = []
        for n, ext in zip(lengths, extents):
            if n < 1:
                raise GridError("axis length must be >= 1")
            k = mode_numbers(n)
            modes.append(k)
            angular.append(2.0 * np.pi * k / float(ext))
        return cls(tuple(modes), tuple(angular))


def mode_numbers(n: int) -> np.ndarray:
    """Signed integer modes in FFT ordering, -floor(N/2) <= k <= ceil(N/2)-1."""
    return np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)


# ---------------------------------------------------------------------------
# raw ndarray kernels (shared with the autodiff tape)
# ---------------------------------------------------------------------------


def dft_raw(a: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    return _sfft.fftn(a, axes=axes, workers=fft_workers())


def idft_raw(a: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    return _sfft.ifftn(a, axes=axes, workers=fft_workers())


def rdft_raw(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Half-spectrum forward transform of a real array along one axis."""
    return _sfft.rfft(a, axis=axis, workers=fft_workers())


def irdft_raw(a: np.ndarray, n: int, axis: int = -1) -> np.ndarray:
    """Real synthesis from a half spectrum; imaginary parts of the
    self-conjugate entries (DC and, for even n, Nyquist) are ignored."""
    return _sfft.irfft(a, n=n, axis=axis, workers=fft_workers())


def _normalize_axes(ndim: int, axes: Sequence[int]) -> tuple[int, ...]:
    out = []
    for ax in axes:
        a = ax + ndim if ax < 0 else ax
        if not 0 <= a < ndim:
            raise GridError(f"axis {ax} out of range for {ndim}-d data")
        out.append(a)
    if len(set(out)) != len(out):
        raise GridError("duplicate axes")
    return tuple(out)


def _box_indices(n: int, width: int) -> np.ndarray:
    return np.concatenate([np.arange(width), np.arange(n - width, n)])


def take_mode_box(a: np.ndarray, axes: tuple[int, ...], widths: tuple[int, ...]) -> np.ndarray:
    """Extract the 2*w lowest-|k| entries per axis (first w and last w)."""
    out = a
    for ax, w in zip(axes, widths):
        n = a.shape[ax]
        if 2 * w > n:
            raise GridError(f"cutoff {w} exceeds Nyquist for axis length {n}")
        out = np.concatenate(
            [
                out[(slice(None),) * ax + (slice(0, w),)],
                out[(slice(None),) * ax + (slice(n - w, n),)],
            ],
            axis=ax,
        )
    return out


def embed_mode_box(
    a: np.ndarray,
    axes: tuple[int, ...],
    widths: tuple[int, ...],
    sizes: tuple[int, ...],
) -> np.ndarray:
    """Zero-embed a compact mode box back into full-length axes."""
    shape = list(a.shape)
    for ax, w, n in zip(axes, widths, sizes):
        if 2 * w > n:
            raise GridError(f"cutoff {w} exceeds Nyquist for axis length {n}")
        if a.shape[ax] != 2 * w:
            raise GridError("mode box does not match the stated cutoffs")
        shape[ax] = n
    out = np.zeros(shape, dtype=a.dtype)
    # scatter the 2^m corner blocks of the box
    corners = [((slice(0, w), slice(0, w)), (slice(w, 2 * w), slice(n - w, n)))
               for w, n in zip(widths, sizes)]
    import itertools

    for combo in itertools.product(*corners):
        src = [slice(None)] * a.ndim
        dst = [slice(None)] * a.ndim
        for ax, (s_src, s_dst) in zip(axes, combo):
            src[ax] = s_src
            dst[ax] = s_dst
        out[tuple(dst)] = a[tuple(src)]
    return out


def derivative_multiplier(n: int, extent: float) -> np.ndarray:
    """Fourier multiplier i*2*pi*k/extent with the Nyquist mode zeroed (even n)."""
    k = mode_numbers(n).astype(np.float64)
    if n % 2 == 0:
        k[n // 2] = 0.0
    return 1j * 2.0 * np.pi * k / float(extent)


# ---------------------------------------------------------------------------
# public GridFunction operations
# ---------------------------------------------------------------------------


def dft(f: GridFunction, axes: Sequence[int] | None = None) -> GridFunction:
    """Unnormalized forward DFT over the selected axes (grid axes by default)."""
    axes_t = _normalize_axes(f.data.ndim, axes if axes is not None else f.grid_axes)
    if any(f.data.shape[a] < 1 for a in axes_t):
        raise GridError("axis lengths must be >= 1")
    return f.with_data(dft_raw(f.data.astype(np.complex128), axes_t))


def idft(g: GridFunction, axes: Sequence[int] | None = None) -> GridFunction:
    """Inverse DFT with 1/N normalization per axis, so idft(dft(f)) == f."""
    axes_t = _normalize_axes(g.data.ndim, axes if axes is not None else g.grid_axes)
    return g.with_data(idft_raw(g.data.astype(np.complex128), axes_t))


def truncate_modes(
    g: GridFunction,
    cutoffs: Sequence[int],
    axes: Sequence[int] | None = None,
) -> GridFunction:
    """Keep the 2*w lowest-|k| modes per axis as a compact block, drop the rest.

    ``cutoffs`` aligns with ``axes`` (default: the last len(cutoffs) axes).
    """
    if axes is None:
        axes = range(g.data.ndim - len(cutoffs), g.data.ndim)
    axes_t = _normalize_axes(g.data.ndim, axes)
    block = take_mode_box(g.data, axes_t, tuple(int(c) for c in cutoffs))
    return g.with_data(block)


def pad_modes(
    g: GridFunction,
    sizes: Sequence[int],
    axes: Sequence[int] | None = None,
) -> GridFunction:
    """Embed a compact mode block into full-length axes with zeros elsewhere."""
    if axes is None:
        axes = range(g.data.ndim - len(sizes), g.data.ndim)
    axes_t = _normalize_axes(g.data.ndim, axes)
    widths = tuple(g.data.shape[a] // 2 for a in axes_t)
    out = embed_mode_box(g.data, axes_t, widths, tuple(int(s) for s in sizes))
    return g.with_data(out)


def spectral_derivative(u: GridFunction, grid_axis: int) -> GridFunction:
    """d/dx along a periodic grid axis via the multiplier i*2*pi*k/extent.

    ``grid_axis`` indexes the grid axes (0 = first grid axis).  Real input
    yields real output; the imaginary residue must stay below 1e-10.
    """
    if not 0 <= grid_axis < len(u.extents):
        raise GridError(f"grid axis {grid_axis} out of range")
    if not u.periodic[grid_axis]:
        raise GridError(f"grid axis {grid_axis} is not periodic")
    ax = u.grid_axes[grid_axis]
    n = u.data.shape[ax]
    mult = derivative_multiplier(n, u.extents[grid_axis])
    shape = [1] * u.data.ndim
    shape[ax] = n
    spec = dft_raw(u.data.astype(np.complex128), (ax,)) * mult.reshape(shape)
    deriv = idft_raw(spec, (ax,))
    if not u.is_complex:
        residue = float(np.max(np.abs(deriv.imag))) if deriv.size else 0.0
        scale = float(np.max(np.abs(deriv.real))) + 1.0
        if residue > 1e-10 * scale:
            raise GridError(f"imaginary residue {residue:g} too large for a real field")
        return u.with_data(deriv.real)
    return u.with_data(deriv)
