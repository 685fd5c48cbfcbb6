"""Exact reference dynamics via a single damped auxiliary mode.

An exponentially decaying bath correlation (a Lorentzian spectral density) at
zero temperature is exactly reproduced by coupling the system to one damped
bosonic mode: with coupling lam = sqrt(a*gamma), mode frequency Omega and
lowering operator damped at rate gamma (collapse operator sqrt(2*gamma)*a),
the mode's vacuum two-time function is

    lam^2 <a(t) a_dag(s)> = a*gamma * exp(-(gamma + i*Omega)(t - s)),

which matches the bath correlation for t >= s.  The Markovian master
equation on the enlarged system-plus-mode space, traced over the mode, then
yields the exact reduced dynamics of the open system, and serves as the
independent reference that the approximated integrators are judged against.
The dissipator normalization (gamma vs gamma/2 in the exponent) is pinned by
``mode_two_time_function``, which checks the decay law numerically on the
mode alone.

Starting from a state with at most two ladder excitations, the mode never
holds more than two quanta, so small Fock truncations converge immediately;
``check_truncation`` quantifies that.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (BathSpec, DensityPath, NonFiniteError, SystemSpec, TimeGrid,
                   three_level_ops, validate_density)

DEFAULT_FOCK_DIM = 8
TRUNCATION_TOL = 1e-4


@dataclass(frozen=True)
class PseudomodeConfig:
    """Auxiliary-mode parameters; ``coupling**2`` must equal a*gamma."""

    fock_dim: int
    coupling: float
    Omega: float
    gamma: float

    def __post_init__(self):
        if self.fock_dim < 2:
            raise ValueError(f"fock_dim must be >= 2, got {self.fock_dim}")
        if not (self.gamma > 0):
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.coupling < 0:
            raise ValueError(f"coupling must be >= 0, got {self.coupling}")

    @classmethod
    def from_bath(cls, bath: BathSpec, fock_dim: int = DEFAULT_FOCK_DIM) -> "PseudomodeConfig":
        return cls(fock_dim=fock_dim, coupling=float(np.sqrt(bath.a * bath.gamma)),
                   Omega=bath.Omega, gamma=bath.gamma)


def _lowering(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1.0, dim)), 1).astype(complex)


def _lindblad_rhs(h: np.ndarray, c: np.ndarray, cdc: np.ndarray, rho: np.ndarray) -> np.ndarray:
    y = cdc @ rho
    return -1j * (h @ rho - rho @ h) + c @ rho @ c.conj().T - 0.5 * (y + y.conj().T)


def integrate_reference(system: SystemSpec, bath: BathSpec, rho0: np.ndarray,
                        cfg: PseudomodeConfig, grid: TimeGrid) -> DensityPath:
    """Joint-space Lindblad integration, traced over the mode at every step.

    ``rho0`` is the system initial state; the mode starts in vacuum.
    """
    validate_density(rho0)
    if abs(cfg.coupling ** 2 - bath.a * bath.gamma) > 1e-12:
        raise ValueError("pseudomode coupling does not reproduce the bath correlation "
                         "(coupling**2 must equal a*gamma)")
    d = system.dim
    f = cfg.fock_dim
    a_m = _lowering(f)
    i_s = np.eye(d, dtype=complex)
    i_f = np.eye(f, dtype=complex)
    _, j_plus, j_minus = _ladder_ops_checked(system)

    h = (np.kron(system.hamiltonian, i_f)
         + np.kron(i_s, cfg.Omega * (a_m.conj().T @ a_m))
         + cfg.coupling * (np.kron(j_plus, a_m) + np.kron(j_minus, a_m.conj().T)))
    c = np.sqrt(2.0 * cfg.gamma) * np.kron(i_s, a_m)
    cdc = c.conj().T @ c

    rho = np.kron(np.asarray(rho0, dtype=complex), _vacuum(f))
    n = grid.n_steps
    dt = grid.dt
    reduced = np.empty((n + 1, d, d), dtype=complex)
    reduced[0] = _trace_out_mode(rho, d, f)
    for k in range(n):
        k1 = _lindblad_rhs(h, c, cdc, rho)
        k2 = _lindblad_rhs(h, c, cdc, rho + 0.5 * dt * k1)
        k3 = _lindblad_rhs(h, c, cdc, rho + 0.5 * dt * k2)
        k4 = _lindblad_rhs(h, c, cdc, rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(rho).all():
            raise NonFiniteError("reference integration became non-finite")
        reduced[k + 1] = _trace_out_mode(rho, d, f)
    return DensityPath.from_states(grid, reduced)


def _ladder_ops_checked(system: SystemSpec):
    j_z, j_plus, j_minus = three_level_ops()
    if system.dim != 3 or not np.array_equal(system.lindblad, j_minus):
        raise ValueError("reference dynamics are implemented for the three-level ladder")
    return j_z, j_plus, j_minus


def _vacuum(f: int) -> np.ndarray:
    v = np.zeros((f, f), dtype=complex)
    v[0, 0] = 1.0
    return v


def _trace_out_mode(rho: np.ndarray, d: int, f: int) -> np.ndarray:
    return rho.reshape(d, f, d, f).trace(axis1=1, axis2=3)


def mode_two_time_function(cfg: PseudomodeConfig, grid: TimeGrid) -> np.ndarray:
    """<a(tau) a_dag(0)> in the mode vacuum, by the quantum regression rule.

    The operator a_dag|0><0| is evolved under the mode-only generator and
    Tr[a X(tau)] sampled at the grid points; analytically this equals
    exp(-(gamma + i*Omega) * tau), which pins the dissipator convention.
    """
    f = cfg.fock_dim
    a_m = _lowering(f)
    h = cfg.Omega * (a_m.conj().T @ a_m)
    c = np.sqrt(2.0 * cfg.gamma) * a_m
    cdc = c.conj().T @ c
    x = a_m.conj().T @ _vacuum(f)
    out = np.empty(grid.n_steps + 1, dtype=complex)
    out[0] = np.trace(a_m @ x)
    dt = grid.dt
    for k in range(grid.n_steps):
        k1 = _lindblad_rhs(h, c, cdc, x)
        k2 = _lindblad_rhs(h, c, cdc, x + 0.5 * dt * k1)
        k3 = _lindblad_rhs(h, c, cdc, x + 0.5 * dt * k2)
        k4 = _lindblad_rhs(h, c, cdc, x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = np.trace(a_m @ x)
    return out


@dataclass
class TruncationReport:
    """Max-over-time population differences between successive truncations."""

    differences: list[float]
    converged: bool
    tol: float


def check_truncation(paths: Sequence[DensityPath], tol: float = TRUNCATION_TOL) -> TruncationReport:
    """Compare populations across a series of increasing Fock truncations.

    Converged means the last pair of paths differs by less than ``tol`` in
    every population at every time.
    """
    if len(paths) < 2:
        raise ValueError("need at least 2 truncations to compare")
    diffs = []
    for lo, hi in zip(paths[:-1], paths[1:]):
        if not lo.grid.same_points(hi.grid):
            raise ValueError("paths must share one grid")
        diffs.append(float(np.abs(lo.populations() - hi.populations()).max()))
    return TruncationReport(differences=diffs, converged=diffs[-1] < tol, tol=tol)
