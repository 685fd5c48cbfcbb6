"""Colored complex Gaussian driving noise.

The driving process z*_t is a stationary circular complex Gaussian process
with zero mean, zero pseudo-covariance M(z_t z_s) and covariance

    M(z_t z_s*) = a * gamma * exp(-gamma*|t-s|) * exp(-i*Omega*(t-s)),

i.e. the complex Ornstein-Uhlenbeck process.  Paths are generated by the
exact one-step recursion

    w_{k+1} = exp(-(gamma + i*Omega)*dt) * w_k + xi_k,

with xi_k circular complex Gaussian of variance a*gamma*(1 - exp(-2*gamma*dt))
and w_0 drawn from the stationary distribution of variance a*gamma.  The grid
covariance is then exact for any step size (no discretization bias), unlike
Euler stepping of the corresponding SDE.  Circularity (independent real and
imaginary components of equal variance) is what makes the pseudo-covariance
vanish; it is a tested property, not an assumption.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .core import BathSpec, TimeGrid


@dataclass(frozen=True, eq=False)
class NoisePath:
    """One realization of z*_t on a uniform grid, reproducible from its seed."""

    grid: TimeGrid
    values: np.ndarray  # (n_steps + 1,) complex, samples of z*_{t_k}
    seed: int


def derive_seeds(master_seed: int, n: int) -> list[int]:
    """Derive ``n`` per-path seeds from a master seed by a counter-based split.

    The i-th seed depends only on (master_seed, i), so ensemble membership is
    independent of scheduling, chunking or worker count, and requesting more
    seeds extends the list without changing earlier entries.
    """
    root = np.random.SeedSequence(master_seed)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in root.spawn(n)]


def sample_noise_path(bath: BathSpec, grid: TimeGrid, seed: int) -> NoisePath:
    """Draw one noise path; deterministic for a fixed seed.

    Parameters
    ----------
    bath : BathSpec
        Correlation parameters (a, gamma, Omega).
    grid : TimeGrid
        Sampling grid; values are produced at every grid point.
    seed : int
        64-bit seed for the path's private PCG64 stream.

    Returns
    -------
    NoisePath
        Samples of z*_t at the grid points.  For ``a == 0`` the path is
        exactly zero.
    """
    n = grid.n_steps
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.standard_normal(2 * (n + 1))
    circ = (x[0::2] + 1j * x[1::2]) / np.sqrt(2.0)  # unit-variance circular

    var = bath.a * bath.gamma
    q = np.exp(-(bath.gamma + 1j * bath.Omega) * grid.dt)
    u = np.empty(n + 1, dtype=complex)
    u[0] = np.sqrt(var) * circ[0]
    u[1:] = np.sqrt(var * (1.0 - np.exp(-2.0 * bath.gamma * grid.dt))) * circ[1:]
    # AR(1) recursion w_k = q*w_{k-1} + u_k with w_{-1} = 0, run in C.
    w = lfilter(np.array([1.0 + 0j]), np.array([1.0 + 0j, -q]), u)
    return NoisePath(grid=grid, values=np.conj(w), seed=int(seed))


@dataclass(eq=False)
class CovarianceEstimate:
    """Empirical two-time moments of an ensemble of noise paths.

    ``zz_star[i, j]`` estimates M(z_{t_i} z*_{t_j}) and ``zz[i, j]`` the
    pseudo-covariance M(z_{t_i} z_{t_j}) for the sampled times; standard
    errors combine the real and imaginary sample scatter and scale as
    1/sqrt(n_samples).
    """

    times: np.ndarray          # (K,) sampled times
    zz_star: np.ndarray        # (K, K) complex
    zz: np.ndarray             # (K, K) complex
    mean: np.ndarray           # (K,) complex, empirical M(z_t)
    n_samples: int
    stderr_zz_star: np.ndarray  # (K, K) real
    stderr_zz: np.ndarray       # (K, K) real
    stderr_mean: np.ndarray     # (K,) real


def _mean_and_stderr(samples: np.ndarray) -> tuple[complex, float]:
    m = samples.mean()
    n = samples.shape[0]
    se = np.sqrt(samples.real.var(ddof=1) / n + samples.imag.var(ddof=1) / n)
    return m, float(se)


def estimate_covariance(paths: Sequence[NoisePath], sample_indices: Sequence[int]) -> CovarianceEstimate:
    """Unbiased sample moments of z over an ensemble of paths.

    Parameters
    ----------
    paths : sequence of NoisePath
        At least two paths on a common grid.
    sample_indices : sequence of int
        Grid indices at which moments are estimated (all pairs are formed).
    """
    if len(paths) < 2:
        raise ValueError("need at least 2 paths to estimate moments")
    grid = paths[0].grid
    for p in paths[1:]:
        if not grid.same_points(p.grid):
            raise ValueError("all paths must share one grid")
    idx = np.asarray(list(sample_indices), dtype=int)
    if idx.size == 0:
        raise ValueError("sample_indices must not be empty")

    # stored values are z*; the process itself is the conjugate
    z = np.conj(np.stack([p.values for p in paths])[:, idx])  # (N, K)
    n, k = z.shape

    zz_star = np.zeros((k, k), dtype=complex)
    zz = np.zeros((k, k), dtype=complex)
    se_star = np.zeros((k, k))
    se_zz = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            zz_star[i, j], se_star[i, j] = _mean_and_stderr(z[:, i] * np.conj(z[:, j]))
            zz[i, j], se_zz[i, j] = _mean_and_stderr(z[:, i] * z[:, j])
    mean = z.mean(axis=0)
    se_mean = np.sqrt(z.real.var(axis=0, ddof=1) / n + z.imag.var(axis=0, ddof=1) / n)

    return CovarianceEstimate(
        times=grid.times()[idx], zz_star=zz_star, zz=zz, mean=mean,
        n_samples=n, stderr_zz_star=se_star, stderr_zz=se_zz, stderr_mean=se_mean,
    )
