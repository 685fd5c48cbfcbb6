"""Deterministic integrators for the two approximated master equations.

Both generators share the commutator structure

    rho' = -i[H, rho] + ( [(F2*Jm + G2*Jz*Jm) rho, Jp] + ... ) + H.c.

The positivity-preserving variant adds the double-quantum transfer term
Pfstar * Jm^2 rho Jp^2 inside the braces; the comparison variant omits it and
is expected to develop negative populations in strongly non-Markovian
regimes, possibly growing without bound.  The generator is evaluated exactly
as written (X plus the adjoint of X) at every integrator stage, which keeps
Hermiticity exact to rounding; trace and positivity are diagnostics only.

Coefficient values at RK4 half-steps are taken from a coefficient path
integrated on a grid of half the step, so no interpolation error enters the
density integration.
"""

from __future__ import annotations

import csv

import numpy as np

from .coeff import CoefficientPath
from .core import (DensityPath, NonFiniteError, SystemSpec, TimeGrid,
                   three_level_ops, validate_density)

NORM_GUARD = 1e6

DEFAULT_NEGATIVITY_THRESHOLD = 1e-6

_JZ, _JP, _JM = three_level_ops()
_JZJM = _JZ @ _JM
_JM2 = _JM @ _JM
_JP2 = _JM2.conj().T


def _require_half_grid(coeffs: CoefficientPath, grid: TimeGrid) -> None:
    half = grid.half()
    if not coeffs.grid.same_points(half):
        raise ValueError(
            "coefficients must be integrated on the half-step grid of the density "
            f"grid (expected dt={half.dt}, n_steps={half.n_steps}; got "
            f"dt={coeffs.grid.dt}, n_steps={coeffs.grid.n_steps}); "
            "use integrate_coefficients(system, bath, grid.half())")


def _generator(h: np.ndarray, rho: np.ndarray, f2: complex, g2: complex,
               pf: complex, include_double_transfer: bool) -> np.ndarray:
    c_rho = (f2 * _JM + g2 * _JZJM) @ rho
    x = c_rho @ _JP - _JP @ c_rho
    if include_double_transfer:
        x = x + pf * (_JM2 @ rho @ _JP2)
    return -1j * (h @ rho - rho @ h) + x + x.conj().T


def _integrate(system: SystemSpec, coeffs: CoefficientPath, rho0: np.ndarray,
               grid: TimeGrid, include_double_transfer: bool,
               truncate_on_guard: bool) -> DensityPath:
    _require_half_grid(coeffs, grid)
    validate_density(rho0)
    h = np.asarray(system.hamiltonian)
    f2, g2, pf = coeffs.F2, coeffs.G2, coeffs.Pfstar
    dt = grid.dt
    n = grid.n_steps

    states = np.full((n + 1, 3, 3), np.nan, dtype=complex)
    rho = np.asarray(rho0, dtype=complex).copy()
    states[0] = rho
    for k in range(n):
        i0, i1, i2 = 2 * k, 2 * k + 1, 2 * k + 2
        k1 = _generator(h, rho, f2[i0], g2[i0], pf[i0], include_double_transfer)
        k2 = _generator(h, rho + 0.5 * dt * k1, f2[i1], g2[i1], pf[i1], include_double_transfer)
        k3 = _generator(h, rho + 0.5 * dt * k2, f2[i1], g2[i1], pf[i1], include_double_transfer)
        k4 = _generator(h, rho + dt * k3, f2[i2], g2[i2], pf[i2], include_double_transfer)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(rho).all() or np.max(np.abs(rho)) > NORM_GUARD:
            if truncate_on_guard:
                # a diverging run is a result here, not a failure
                return DensityPath.from_states(grid, states, truncated_at_index=k)
            raise NonFiniteError(
                f"density matrix left the overflow guard at t = {(k + 1) * dt:.6g}")
        states[k + 1] = rho
    return DensityPath.from_states(grid, states)


def integrate_pp_me(system: SystemSpec, coeffs: CoefficientPath, rho0: np.ndarray,
                    grid: TimeGrid) -> DensityPath:
    """Positivity-preserving master equation (with the double-quantum term)."""
    return _integrate(system, coeffs, rho0, grid,
                      include_double_transfer=True, truncate_on_guard=False)


def integrate_npp_me(system: SystemSpec, coeffs: CoefficientPath, rho0: np.ndarray,
                     grid: TimeGrid) -> DensityPath:
    """Comparison master equation without the double-quantum transfer term.

    Positivity is expected to fail in strongly non-Markovian regimes.  If the
    solution hits the overflow guard the path is truncated and flagged
    instead of raising: divergence is the documented behaviour.
    """
    return _integrate(system, coeffs, rho0, grid,
                      include_double_transfer=False, truncate_on_guard=True)


class PositivityReport:
    """Per-time positivity diagnostics of a density path."""

    def __init__(self, path: DensityPath, threshold: float = DEFAULT_NEGATIVITY_THRESHOLD):
        self.threshold = float(threshold)
        self.times = path.grid.times()
        self.traces = path.traces
        self.herm_residuals = path.herm_residuals
        self.min_eigs = path.min_eigs
        self.truncated = path.truncated_at_index is not None
        self.truncated_at_time = (None if path.truncated_at_index is None
                                  else float(self.times[path.truncated_at_index]))
        valid = path.n_valid
        below = np.nonzero(self.min_eigs[:valid] < -self.threshold)[0]
        self.first_negativity_time = float(self.times[below[0]]) if below.size else None

    def __repr__(self):
        neg = ("none" if self.first_negativity_time is None
               else f"{self.first_negativity_time:.6g}")
        return (f"PositivityReport(first_negativity={neg}, threshold={self.threshold:g}, "
                f"min_eig={np.nanmin(self.min_eigs):.3e}, truncated={self.truncated})")


def positivity_report(path: DensityPath,
                      threshold: float = DEFAULT_NEGATIVITY_THRESHOLD) -> PositivityReport:
    """Min-eigenvalue/trace/Hermiticity time series and the first-negativity time."""
    return PositivityReport(path, threshold)


_CSV_HEADER = ["t", "rho00", "rho11", "rho22",
               "re_rho01", "im_rho01", "re_rho02", "im_rho02", "re_rho12", "im_rho12",
               "trace", "min_eig", "norm_rho00", "norm_rho11", "norm_rho22"]


def write_density_csv(path, dens: DensityPath, pop_stderr: np.ndarray | None = None) -> None:
    """Write a density path as CSV in physical-level labels (rho00 = ground).

    ``pop_stderr``, when given, holds per-time Monte-Carlo standard errors of
    the populations in matrix order (top level first) and adds three columns.
    Rows past a truncation point are omitted.
    """
    times = dens.grid.times()
    header = list(_CSV_HEADER)
    if pop_stderr is not None:
        header += ["stderr_rho00", "stderr_rho11", "stderr_rho22"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(dens.n_valid):
            r = dens.states[k]
            tr = dens.traces[k]
            row = [times[k],
                   r[2, 2].real, r[1, 1].real, r[0, 0].real,
                   r[2, 1].real, r[2, 1].imag,
                   r[2, 0].real, r[2, 0].imag,
                   r[1, 0].real, r[1, 0].imag,
                   tr, dens.min_eigs[k],
                   r[2, 2].real / tr, r[1, 1].real / tr, r[0, 0].real / tr]
            if pop_stderr is not None:
                row += [pop_stderr[k, 2], pop_stderr[k, 1], pop_stderr[k, 0]]
            w.writerow([repr(float(x)) for x in row])
