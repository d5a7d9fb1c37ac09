"""Ground-truth trajectory generators.

Two solvers produce the training data:

* a 1-D semilinear reaction-diffusion equation on the unit torus,
  du = (Lap u + 3u - u^3) dt + u dW, advanced by an Euler-Maruyama step whose
  finite-difference Laplacian is treated with the trapezoidal (Crank-Nicolson)
  rule while drift and the multiplicative Ito increment stay explicit;
* the 2-D incompressible vorticity equation on the unit torus,
  dw = (nu Lap w - u . grad w + f) dt + sigma dW, advanced pseudo-spectrally
  with a Crank-Nicolson update of the viscous term, 2/3-rule dealiasing of the
  advection product, and velocity recovered from the stream function.

Both are bit-deterministic given a seed and vectorized over the batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grids import GridFunction
from .noise import (
    NoisePath,
    STREAM_ETA,
    STREAM_INIT_FIELD,
    derived_rng,
)


class SolverError(RuntimeError):
    """Raised when a trajectory blows up or the inputs are inconsistent."""


# ---------------------------------------------------------------------------
# 1-D reaction-diffusion with multiplicative noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Phi41Config:
    """Defaults follow the reference experiment: 128 grid points on the unit
    torus, dt = 1e-3, 50 saved steps to T = 0.05, u0(x) = x(1-x) with an
    optional smooth random perturbation."""

    n_x: int = 128
    dt: float = 1e-3
    t_end: float = 0.05
    lam: float = 2.0
    vary_u0: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_x < 4:
            raise SolverError("n_x must be at least 4")
        if self.dt <= 0 or self.t_end <= 0:
            raise SolverError("dt and t_end must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


def default_drift(u: np.ndarray) -> np.ndarray:
    return 3.0 * u - u**3


def u0_profile(n_x: int) -> np.ndarray:
    """x(1-x) sampled on the torus grid (the endpoint kink is kept as stated)."""
    x = np.arange(n_x) / n_x
    return x * (1.0 - x)


def eta_from_coeffs(a: np.ndarray, n_x: int, lam: float = 2.0) -> np.ndarray:
    """0.1 * sum_{k=-10..10} a_k / (1 + k^2) sin(k pi (x - 0.5) / lam)."""
    ks = np.arange(-10, 11)
    if a.shape != (21,):
        raise SolverError("expected 21 coefficients for modes -10..10")
    x = np.arange(n_x) / n_x
    out = np.zeros(n_x)
    for ak, k in zip(a, ks):
        out += ak / (1.0 + k * k) * np.sin(k * np.pi * (x - 0.5) / lam)
    return 0.1 * out


def sample_eta(seed: int, n_x: int, lam: float = 2.0, index: int = 0) -> np.ndarray:
    """Smooth random initial-condition perturbation with N(0,1) coefficients."""
    rng = derived_rng(seed, STREAM_ETA, index)
    return eta_from_coeffs(rng.standard_normal(21), n_x, lam)


def solve_phi41(
    cfg: Phi41Config,
    noise: NoisePath,
    u0: np.ndarray | None = None,
    drift: Callable[[np.ndarray], np.ndarray] = default_drift,
) -> GridFunction:
    """Trajectories (batch, n_steps + 1, n_x), saved every step.

    ``u0`` may be (n_x,) shared or (batch, n_x); defaults to x(1-x), plus an
    eta perturbation per sample when ``cfg.vary_u0`` is set.
    """
    n_x, dt, steps = cfg.n_x, cfg.dt, cfg.n_steps
    if noise.spatial_shape != (n_x,) or noise.time_steps < steps:
        raise SolverError(
            f"noise of shape {noise.increments.shape} does not cover "
            f"{steps} steps on {n_x} points")
    if abs(noise.dt - dt) > 1e-12 * dt:
        raise SolverError("noise dt does not match the solver dt")
    batch = noise.batch
    if u0 is None:
        base = u0_profile(n_x)
        if cfg.vary_u0:
            u = np.stack([base + sample_eta(cfg.seed, n_x, cfg.lam, b)
                          for b in range(batch)])
        else:
            u = np.tile(base, (batch, 1))
    else:
        u = np.broadcast_to(np.asarray(u0, dtype=np.float64), (batch, n_x)).copy()

    # circulant second-difference Laplacian, diagonal in Fourier space
    k = np.arange(n_x)
    lam_k = (2.0 * np.cos(2.0 * np.pi * k / n_x) - 2.0) * n_x**2
    step_mult = (1.0 + 0.5 * dt * lam_k) / (1.0 - 0.5 * dt * lam_k)
    rhs_mult = 1.0 / (1.0 - 0.5 * dt * lam_k)

    out = np.empty((batch, steps + 1, n_x), dtype=np.float64)
    out[:, 0] = u
    for n in range(steps):
        explicit = dt * drift(u) + u * noise.increments[:, n]
        u_hat = np.fft.fft(u, axis=-1) * step_mult
        u_hat += np.fft.fft(explicit, axis=-1) * rhs_mult
        u = np.fft.ifft(u_hat, axis=-1).real
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > 1e6:
            raise SolverError(f"reaction-diffusion trajectory blew up at step {n + 1}")
        out[:, n + 1] = u
    return GridFunction(out, (cfg.t_end, 1.0), (False, True))


# ---------------------------------------------------------------------------
# 2-D vorticity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NsConfig:
    """Defaults follow the stochastic experiment: 64x64 unit torus, dt = 1e-3,
    nu = 1e-4, additive colored noise scaled by sigma = 0.05 with alpha =
    0.005, trajectories of 15000 steps windowed into length-500 pairs."""

    n: int = 64
    dt: float = 1e-3
    nu: float = 1e-4
    sigma: float = 0.05
    alpha: float = 0.005
    n_steps: int = 15000
    window: int = 500
    stride: int = 72
    max_windows: int = 200
    trajectories: int = 10
    forcing: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n < 4 or self.n % 2 != 0:
            raise SolverError("grid size must be even and at least 4")
        if self.nu <= 0:
            raise SolverError("viscosity must be positive")
        if self.dt <= 0 or self.n_steps < 1:
            raise SolverError("dt and n_steps must be positive")


def deterministic_forcing(n: int) -> np.ndarray:
    """0.1 (sin(2 pi (x + y)) + cos(2 pi (x + y))), the usual fixed forcing."""
    x = np.arange(n) / n
    xx, yy = np.meshgrid(x, x, indexing="ij")
    return 0.1 * (np.sin(2 * np.pi * (xx + yy)) + np.cos(2 * np.pi * (xx + yy)))


def sample_initial_vorticity(seed: int, n: int, batch: int = 1,
                             scale: float = 3.0 ** 1.5, shift: float = 49.0,
                             power: float = 3.0) -> np.ndarray:
    """Mean-free Gaussian random field with covariance scale*(-Lap + shift I)^-power.

    Spectral sampling: mode k gets sqrt(scale) (4 pi^2 |k|^2 + shift)^(-power/2)
    times a Hermitian-symmetrized complex standard normal.
    """
    k1 = np.fft.fftfreq(n, d=1.0 / n)
    ksq = k1[:, None] ** 2 + k1[None, :] ** 2
    sqrt_eig = np.sqrt(scale) * (4.0 * np.pi**2 * ksq + shift) ** (-power / 2.0)
    sqrt_eig[0, 0] = 0.0
    out = np.empty((batch, n, n))
    for b in range(batch):
        rng = derived_rng(seed, STREAM_INIT_FIELD, b)
        z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
        z = (z + np.conj(np.roll(np.flip(z, axis=(0, 1)), (1, 1), (0, 1)))) / np.sqrt(2)
        out[b] = np.fft.ifft2(n * n * sqrt_eig * z).real
    return out


def _two_thirds_mask(n: int) -> np.ndarray:
    k = np.abs(np.fft.fftfreq(n, d=1.0 / n))
    keep = k < n / 3.0
    return np.logical_and(keep[:, None], keep[None, :])


def solve_ns_vorticity(
    cfg: NsConfig,
    noise: NoisePath | None,
    w0: np.ndarray | None = None,
    record_every: int = 1,
) -> GridFunction:
    """Vorticity trajectories (batch, n_rec + 1, n, n).

    ``noise`` may be None for the deterministic variant.  The advection term
    u . grad w is formed on the grid from spectral derivatives and dealiased
    with the 2/3 rule; the mean mode is held at zero every step.
    """
    n, dt, nu = cfg.n, cfg.dt, cfg.nu
    steps = cfg.n_steps
    if noise is not None:
        if noise.spatial_shape != (n, n) or noise.time_steps < steps:
            raise SolverError("noise does not cover the requested trajectory")
        if abs(noise.dt - dt) > 1e-12 * dt:
            raise SolverError("noise dt does not match the solver dt")
        batch = noise.batch
    else:
        batch = 1 if w0 is None else np.atleast_3d(np.asarray(w0)).shape[0]
    if steps % record_every != 0:
        raise SolverError("record_every must divide n_steps")

    if w0 is None:
        w = sample_initial_vorticity(cfg.seed, n, batch)
    else:
        w0 = np.asarray(w0, dtype=np.float64)
        if w0.ndim == 2:
            w0 = w0[None]
        w = np.broadcast_to(w0, (batch, n, n)).copy()

    kint = np.fft.fftfreq(n, d=1.0 / n)
    kx = kint[:, None]
    ky = kint[None, :]
    ksq = 4.0 * np.pi**2 * (kx**2 + ky**2)
    inv_ksq = np.divide(1.0, ksq, out=np.zeros_like(ksq), where=ksq > 0)
    dealias = _two_thirds_mask(n)
    dx = 2j * np.pi * kx
    dy = 2j * np.pi * ky
    denom = 1.0 + 0.5 * nu * dt * ksq
    numer = 1.0 - 0.5 * nu * dt * ksq

    f_hat = np.fft.fft2(deterministic_forcing(n)) if cfg.forcing else None

    w_hat = np.fft.fft2(w, axes=(-2, -1))
    w_hat[:, 0, 0] = 0.0
    n_rec = steps // record_every
    out = np.empty((batch, n_rec + 1, n, n), dtype=np.float64)
    out[:, 0] = np.fft.ifft2(w_hat, axes=(-2, -1)).real
    for step in range(steps):
        psi_hat = w_hat * inv_ksq
        ux = np.fft.ifft2(dy * psi_hat, axes=(-2, -1)).real
        uy = np.fft.ifft2(-dx * psi_hat, axes=(-2, -1)).real
        wx = np.fft.ifft2(dx * w_hat, axes=(-2, -1)).real
        wy = np.fft.ifft2(dy * w_hat, axes=(-2, -1)).real
        adv_hat = np.fft.fft2(ux * wx + uy * wy, axes=(-2, -1)) * dealias
        rhs = numer * w_hat - dt * adv_hat
        if f_hat is not None:
            rhs += dt * f_hat
        if noise is not None:
            rhs += cfg.sigma * np.fft.fft2(noise.increments[:, step], axes=(-2, -1))
        w_hat = rhs / denom
        w_hat[:, 0, 0] = 0.0
        if not np.all(np.isfinite(w_hat)):
            raise SolverError(f"vorticity trajectory diverged at step {step + 1}")
        if (step + 1) % record_every == 0:
            frame = np.fft.ifft2(w_hat, axes=(-2, -1)).real
            if np.max(np.abs(frame)) > 1e8:
                raise SolverError(f"vorticity trajectory diverged at step {step + 1}")
            out[:, (step + 1) // record_every] = frame
    t_total = steps * dt
    return GridFunction(out, (t_total, 1.0, 1.0), (False, True, True))


# ---------------------------------------------------------------------------
# dataset helpers
# ---------------------------------------------------------------------------


def downsample(u: GridFunction, factor: int, grid_axes: tuple[int, ...] | None = None) -> GridFunction:
    """Strided subsampling (every factor-th point, no filtering) on grid axes.

    Aliasing is intentional: this mimics observing the field on a coarse mesh.
    """
    if factor < 1:
        raise SolverError("factor must be >= 1")
    if factor == 1:
        return u
    axes = u.grid_axes if grid_axes is None else grid_axes
    sl = [slice(None)] * u.data.ndim
    for ax in axes:
        if u.data.shape[ax] % factor != 0:
            raise SolverError(f"factor {factor} does not divide axis length {u.data.shape[ax]}")
        sl[ax] = slice(None, None, factor)
    return GridFunction(np.ascontiguousarray(u.data[tuple(sl)]), u.extents, u.periodic)


def window_starts(n_steps: int, window: int, stride: int, max_windows: int | None) -> list[int]:
    """Start indices of rolling windows of `window` steps over an n_steps run."""
    if window > n_steps:
        return []
    starts = list(range(0, n_steps - window + 1, stride))
    if max_windows is not None:
        starts = starts[:max_windows]
    return starts


def window_trajectory(
    traj: np.ndarray,
    increments: np.ndarray,
    window: int,
    stride: int,
    max_windows: int | None = None,
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Cut one trajectory into (state-at-start, noise-over-window, trajectory) triples.

    ``traj`` has n_steps + 1 saved states, ``increments`` n_steps increments.
    """
    n_steps = increments.shape[0]
    if traj.shape[0] != n_steps + 1:
        raise SolverError("trajectory and increments are inconsistent")
    samples = []
    for s in window_starts(n_steps, window, stride, max_windows):
        samples.append((traj[s], increments[s:s + window], traj[s:s + window + 1]))
    return samples
