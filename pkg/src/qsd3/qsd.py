"""Linear stochastic trajectories, ensemble averaging and the identity check.

A trajectory is the unnormalized pure state driven by one noise realization,

    psi' = ( -i H + z*_t L - L_dag Obar(t) ) psi,
    Obar(t) = F2(t) Jm + G2(t) Jz Jm,

integrated with fixed-step RK4; z*_t (and the smooth coefficients) are held
piecewise-linear between grid points, so the stochastic accuracy is
controlled empirically against the deterministic integrators rather than by
the formal RK4 order.

Ensemble averages of the projectors |psi><psi| recover the reduced density
matrix.  Reduction is bitwise reproducible: trajectories are sorted by seed,
partitioned into fixed-size chunks, accumulated per chunk, and the per-chunk
partial sums are combined by a pairwise tree over the chunk index.  The
result is therefore identical for any worker count and any input ordering.

``validate_novikov`` Monte-Carlo-checks the Gaussian integration-by-parts
identity M(z*_t P) = M(P Obar_d_dag) that underpins the positivity-preserving
master equation, where the derivative-consistent operator carries an extra
noise term built from the three-time kernel convolution:

    Obar_d(t) = F2 Jm + G2 Jz Jm + (integral of P2(t, s') z*_{s'} ds') Jm^2.

Replacing Obar_d by the noise-free Obar leaves a systematic offset; the
report estimates it by the paired difference of the two right-hand sides over
a common trajectory ensemble (common random numbers), which resolves the
small offset far below the scatter of either residual alone.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .coeff import CoefficientPath, KernelGrid
from .core import (BathSpec, DensityPath, NonFiniteError, SystemSpec, TimeGrid,
                   three_level_ops)
from .noise import NoisePath, derive_seeds, sample_noise_path

CHUNK_SIZE = 256

_SQRT2 = np.sqrt(2.0)
_JZ, _JP, _JM = three_level_ops()
_JZJM = _JZ @ _JM
_JM2 = _JM @ _JM
_E110 = np.array([1.0, 1.0, 0.0])
_E010 = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True, eq=False)
class TrajectoryPath:
    """One unnormalized trajectory plus the seed its noise regenerates from."""

    grid: TimeGrid
    states: np.ndarray  # (n_steps + 1, 3) complex
    seed: int


@dataclass(eq=False)
class EnsembleResult:
    """Ensemble-averaged density path with Monte-Carlo error estimates.

    ``pop_stderr`` holds per-time standard errors of the level populations in
    matrix order (top level first); ``trace_stderr`` those of the mean squared
    norm.  The density is Hermitian by construction (average of projectors).
    """

    density: DensityPath
    n_trajectories: int
    pop_stderr: np.ndarray    # (n_steps + 1, 3)
    trace_stderr: np.ndarray  # (n_steps + 1,)
    master_seed: int | None = None


def _check_ladder_system(system: SystemSpec) -> None:
    if system.dim != 3:
        raise ValueError("trajectory propagation is implemented for the three-level ladder")
    if not np.allclose(system.hamiltonian, system.omega * _JZ, atol=1e-12):
        raise ValueError("system Hamiltonian must be omega * J_z")
    if not np.array_equal(system.lindblad, _JM):
        raise ValueError("system coupling operator must be J_minus")


def _propagate_block(omega: float, f2: np.ndarray, g2: np.ndarray,
                     zvals: np.ndarray, psi0: np.ndarray, dt: float) -> np.ndarray:
    """RK4 for a block of trajectories sharing the grid; zvals is (B, n+1).

    Only elementwise array operations are used, so the arithmetic of every
    trajectory is independent of the block size (a block of one reproduces
    any batched run bitwise).
    """
    n_blk, n_pts = zvals.shape
    hdiag = -1j * omega * np.array([1.0, 0.0, -1.0])

    def rhs(psi, z, f, g):
        d = hdiag - (2.0 * f) * _E110 + (2.0 * g) * _E010
        out = psi * d[None, :]
        out[:, 1] = out[:, 1] + _SQRT2 * z * psi[:, 0]
        out[:, 2] = out[:, 2] + _SQRT2 * z * psi[:, 1]
        return out

    states = np.empty((n_blk, n_pts, 3), dtype=complex)
    psi = np.tile(np.asarray(psi0, dtype=complex), (n_blk, 1))
    states[:, 0] = psi
    # divergence is detected by the caller's finiteness check, not mid-run
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_pts - 1):
            zk = zvals[:, k]
            zk1 = zvals[:, k + 1]
            zh = 0.5 * (zk + zk1)
            fh = 0.5 * (f2[k] + f2[k + 1])
            gh = 0.5 * (g2[k] + g2[k + 1])
            k1 = rhs(psi, zk, f2[k], g2[k])
            k2 = rhs(psi + 0.5 * dt * k1, zh, fh, gh)
            k3 = rhs(psi + 0.5 * dt * k2, zh, fh, gh)
            k4 = rhs(psi + dt * k3, zk1, f2[k + 1], g2[k + 1])
            psi = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            states[:, k + 1] = psi
    return states


def propagate_trajectory(system: SystemSpec, coeffs: CoefficientPath, noise: NoisePath,
                         psi0: np.ndarray, grid: TimeGrid) -> TrajectoryPath:
    """Propagate one trajectory; coefficients and noise must share the grid."""
    _check_ladder_system(system)
    if not (coeffs.grid.same_points(grid) and noise.grid.same_points(grid)):
        raise ValueError("coeffs, noise and the propagation grid must share one grid")
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.vdot(psi0, psi0).real - 1.0) > 1e-9:
        raise ValueError("psi0 must be normalized")
    states = _propagate_block(system.omega, coeffs.F2, coeffs.G2,
                              noise.values[None, :], psi0, grid.dt)[0]
    if not np.isfinite(states).all():
        raise NonFiniteError("trajectory amplitudes became non-finite")
    return TrajectoryPath(grid=grid, states=states, seed=noise.seed)


def propagate_trajectories(system: SystemSpec, bath: BathSpec, coeffs: CoefficientPath,
                           psi0: np.ndarray, grid: TimeGrid,
                           seeds: Sequence[int], *,
                           chunk_size: int = CHUNK_SIZE) -> list[TrajectoryPath]:
    """Propagate one trajectory per seed, batched internally.

    Bitwise-identical to calling ``propagate_trajectory`` per seed (the block
    integrator is purely elementwise), but materializes noise and states in
    chunks for speed.
    """
    _check_ladder_system(system)
    if not coeffs.grid.same_points(grid):
        raise ValueError("coefficient path must live on the propagation grid")
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.vdot(psi0, psi0).real - 1.0) > 1e-9:
        raise ValueError("psi0 must be normalized")
    out: list[TrajectoryPath] = []
    for i in range(0, len(seeds), chunk_size):
        chunk = seeds[i:i + chunk_size]
        zvals = np.empty((len(chunk), grid.n_steps + 1), dtype=complex)
        for j, seed in enumerate(chunk):
            zvals[j] = sample_noise_path(bath, grid, seed).values
        block = _propagate_block(system.omega, coeffs.F2, coeffs.G2, zvals, psi0, grid.dt)
        if not np.isfinite(block).all():
            raise NonFiniteError("trajectory amplitudes became non-finite")
        out.extend(TrajectoryPath(grid=grid, states=block[j], seed=int(chunk[j]))
                   for j in range(len(chunk)))
    return out


def _reduce_block(block: np.ndarray):
    """Per-chunk partial sums: projector sum, population sums/squares, norms."""
    dens = np.einsum("bti,btj->tij", block, block.conj())
    pops = block.real ** 2 + block.imag ** 2          # (B, T, 3)
    pop_sum = pops.sum(axis=0)
    pop_sq = (pops * pops).sum(axis=0)
    norms = pops.sum(axis=2)                          # (B, T)
    norm_sum = norms.sum(axis=0)
    norm_sq = (norms * norms).sum(axis=0)
    return dens, pop_sum, pop_sq, norm_sum, norm_sq


def _combine_pairwise(parts: list):
    """Fixed-topology pairwise tree over the chunk index."""
    items = list(parts)
    while len(items) > 1:
        merged = [tuple(a + b for a, b in zip(items[i], items[i + 1]))
                  for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            merged.append(items[-1])
        items = merged
    return items[0]


def _finalize(grid: TimeGrid, totals, n: int, master_seed: int | None) -> EnsembleResult:
    dens, pop_sum, pop_sq, norm_sum, norm_sq = totals
    density = dens / n
    pop_mean = pop_sum / n
    norm_mean = norm_sum / n
    if n > 1:
        pop_var = np.clip((pop_sq - n * pop_mean ** 2) / (n - 1), 0.0, None)
        norm_var = np.clip((norm_sq - n * norm_mean ** 2) / (n - 1), 0.0, None)
        pop_se = np.sqrt(pop_var / n)
        norm_se = np.sqrt(norm_var / n)
    else:
        pop_se = np.zeros_like(pop_mean)
        norm_se = np.zeros_like(norm_mean)
    return EnsembleResult(density=DensityPath.from_states(grid, density),
                          n_trajectories=n, pop_stderr=pop_se, trace_stderr=norm_se,
                          master_seed=master_seed)


def _ensemble_chunk_job(args):
    omega, bath, grid, f2, g2, psi0, seeds = args
    zvals = np.empty((len(seeds), grid.n_steps + 1), dtype=complex)
    for i, seed in enumerate(seeds):
        zvals[i] = sample_noise_path(bath, grid, seed).values
    block = _propagate_block(omega, f2, g2, zvals, psi0, grid.dt)
    if not np.isfinite(block).all():
        raise NonFiniteError("trajectory amplitudes became non-finite")
    return _reduce_block(block)


def run_ensemble(system: SystemSpec, bath: BathSpec, coeffs: CoefficientPath, psi0: np.ndarray,
                 grid: TimeGrid, n_trajectories: int, master_seed: int, *,
                 workers: int = 1, chunk_size: int = CHUNK_SIZE) -> EnsembleResult:
    """Propagate and average an ensemble without materializing every trajectory.

    Seeds are derived from the master seed by a counter-based split, sorted,
    and processed in fixed-size chunks; the output is bitwise identical for
    any ``workers`` value and equals ``ensemble_density`` applied to the
    individually propagated trajectories.
    """
    _check_ladder_system(system)
    if not coeffs.grid.same_points(grid):
        raise ValueError("coefficient path must live on the propagation grid")
    if n_trajectories < 1:
        raise ValueError("need at least one trajectory")
    seeds = sorted(derive_seeds(master_seed, n_trajectories))
    chunks = [seeds[i:i + chunk_size] for i in range(0, len(seeds), chunk_size)]
    payloads = [(system.omega, bath, grid, coeffs.F2, coeffs.G2, psi0, chunk)
                for chunk in chunks]
    if workers <= 1 or len(chunks) == 1:
        parts = [_ensemble_chunk_job(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_ensemble_chunk_job, payloads))
    return _finalize(grid, _combine_pairwise(parts), len(seeds), master_seed)


def ensemble_density(trajectories: Sequence[TrajectoryPath], *,
                     chunk_size: int = CHUNK_SIZE) -> EnsembleResult:
    """Average materialized trajectories into a density path.

    Input order does not matter: trajectories are sorted by seed before the
    fixed-order reduction, so any permutation yields bitwise-identical output.
    """
    if len(trajectories) < 1:
        raise ValueError("need at least one trajectory")
    grid = trajectories[0].grid
    for t in trajectories[1:]:
        if not grid.same_points(t.grid):
            raise ValueError("all trajectories must share one grid")
    ordered = sorted(trajectories, key=lambda t: t.seed)
    parts = []
    for i in range(0, len(ordered), chunk_size):
        block = np.stack([t.states for t in ordered[i:i + chunk_size]])
        parts.append(_reduce_block(block))
    return _finalize(grid, _combine_pairwise(parts), len(ordered), None)


@dataclass(eq=False)
class NovikovSide:
    """Mean, residual and per-entry errors for one side comparison."""

    rhs_mean: np.ndarray       # (3, 3) Monte-Carlo estimate of M(P Obar_dag)
    residual: np.ndarray       # (3, 3) lhs - rhs
    stderr_real: np.ndarray    # (3, 3)
    stderr_imag: np.ndarray    # (3, 3)
    residual_norm: float
    max_z: float


@dataclass(eq=False)
class NovikovReport:
    """Monte-Carlo check of the integration-by-parts identity at one time.

    ``derivative_consistent`` uses the full noise-carrying operator (the
    identity holds; its residual is pure Monte-Carlo noise and shrinks like
    1/sqrt(N)).  ``noise_free`` replaces it by the noise-free operator.
    ``offset`` is the paired difference of the two right-hand sides over the
    same trajectories; its mean estimates the systematic gap between the two
    operators and is the statistic that distinguishes them.
    """

    t: float
    n_samples: int
    lhs_mean: np.ndarray  # (3, 3) centered estimate of M(z*_t P)
    derivative_consistent: NovikovSide
    noise_free: NovikovSide
    offset: NovikovSide


def _side_stats(samples: np.ndarray, rhs_mean: np.ndarray, residual: np.ndarray) -> NovikovSide:
    n = samples.shape[0]
    se_re = np.sqrt(samples.real.var(axis=0, ddof=1) / n)
    se_im = np.sqrt(samples.imag.var(axis=0, ddof=1) / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        z_re = np.where(np.abs(residual.real) > 0, np.abs(residual.real) / se_re, 0.0)
        z_im = np.where(np.abs(residual.imag) > 0, np.abs(residual.imag) / se_im, 0.0)
    max_z = float(np.nanmax(np.maximum(z_re, z_im)))
    return NovikovSide(rhs_mean=rhs_mean, residual=residual, stderr_real=se_re,
                       stderr_imag=se_im, residual_norm=float(np.linalg.norm(residual)),
                       max_z=max_z)


def validate_novikov(trajectories: Sequence[TrajectoryPath], kernels: KernelGrid,
                     coeffs: CoefficientPath, t: float) -> NovikovReport:
    """Estimate both sides of the identity at time ``t`` over an ensemble.

    Noise paths are regenerated from the stored seeds (the kernel grid
    supplies the bath).  The kernel grid spacing must be an integer multiple
    of the trajectory grid spacing and ``t`` must be a node of both.  The
    left side is estimated in covariance form, mean((z*_t - zbar) P), which
    is consistent (the noise mean vanishes identically) and exactly zero at
    t = 0 where P is deterministic.
    """
    if len(trajectories) < 2:
        raise ValueError("need at least 2 trajectories")
    grid = trajectories[0].grid
    for tr in trajectories[1:]:
        if not grid.same_points(tr.grid):
            raise ValueError("all trajectories must share one grid")
    if not coeffs.grid.same_points(grid):
        raise ValueError("coefficient path must live on the trajectory grid")

    it = round(t / grid.dt)
    if not (0 <= it <= grid.n_steps) or abs(it * grid.dt - t) > 1e-9:
        raise ValueError(f"t = {t} is not a node of the trajectory grid")
    h = kernels.grid.dt
    ratio = round(h / grid.dt)
    if ratio < 1 or abs(ratio * grid.dt - h) > 1e-12:
        raise ValueError("kernel grid spacing must be an integer multiple of the trajectory dt")
    kt = round(t / h)
    if not (0 <= kt <= kernels.grid.n_steps) or abs(kt * h - t) > 1e-9:
        raise ValueError(f"t = {t} is not a node of the kernel grid")

    n = len(trajectories)
    bath = kernels.bath

    # quadrature of the kernel convolution against each path's noise
    p2row = kernels.P2[kt, :kt + 1]
    w = np.full(kt + 1, h)
    if kt >= 1:
        w[0] = w[-1] = 0.5 * h
    else:
        w[:] = 0.0
    wp = w * p2row

    psi_t = np.empty((n, 3), dtype=complex)
    z_t = np.empty(n, dtype=complex)
    q = np.empty(n, dtype=complex)
    for i, tr in enumerate(trajectories):
        psi_t[i] = tr.states[it]
        zvals = sample_noise_path(bath, grid, tr.seed).values
        z_t[i] = zvals[it]
        q[i] = wp @ zvals[::ratio][:kt + 1]

    proj = np.einsum("ni,nj->nij", psi_t, psi_t.conj())
    f2t = coeffs.F2[it]
    g2t = coeffs.G2[it]

    o0_dag = np.conj(f2t) * _JP + np.conj(g2t) * _JZJM.conj().T
    od_dag = o0_dag[None, :, :] + np.conj(q)[:, None, None] * _JM2.conj().T[None, :, :]

    y_o0 = proj @ o0_dag                               # (n, 3, 3)
    y_od = np.einsum("nij,njk->nik", proj, od_dag)

    zbar = z_t.mean()
    lhs_samples = (z_t - zbar)[:, None, None] * proj
    lhs_mean = lhs_samples.mean(axis=0)

    d_od = lhs_samples - y_od
    d_o0 = lhs_samples - y_o0
    d_offset = y_od - y_o0   # paired difference, common random numbers

    return NovikovReport(
        t=float(t), n_samples=n, lhs_mean=lhs_mean,
        derivative_consistent=_side_stats(d_od, y_od.mean(axis=0), d_od.mean(axis=0)),
        noise_free=_side_stats(d_o0, y_o0.mean(axis=0), d_o0.mean(axis=0)),
        offset=_side_stats(d_offset, y_o0.mean(axis=0), d_offset.mean(axis=0)),
    )
