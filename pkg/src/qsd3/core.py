"""Shared domain types and small dense complex linear algebra.

All operators and states are plain ``numpy`` arrays of ``complex128``.  The
three-level ladder is represented in the eigenbasis of J_z ordered from the
highest level down: vector index 0 is the top level |2>, index 1 the middle
level |1>, index 2 the ground level |0>.  That ordering matches the standard
matrix form of the ladder operators (J_z = diag(1, 0, -1)); helpers that
report physical-level quantities translate from it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITICITY_TOL = 1e-9

_SQRT2 = np.sqrt(2.0)


class NonFiniteError(RuntimeError):
    """An integration left its validity region (overflow guard or NaN/inf)."""


def three_level_ops() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return the ladder operators (J_z, J_plus, J_minus) as 3x3 arrays."""
    j_z = np.diag([1.0, 0.0, -1.0]).astype(complex)
    j_plus = _SQRT2 * np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=complex)
    j_minus = _SQRT2 * np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=complex)
    return j_z, j_plus, j_minus


def matrix_index(level: int) -> int:
    """Map a physical level label (0 = ground .. 2 = top) to a vector index."""
    if level not in (0, 1, 2):
        raise ValueError(f"level must be 0, 1 or 2, got {level}")
    return 2 - level


def basis_state(level: int) -> np.ndarray:
    """Basis vector of the given physical level (0 = ground, 2 = top)."""
    psi = np.zeros(3, dtype=complex)
    psi[matrix_index(level)] = 1.0
    return psi


def level_populations(rho: np.ndarray) -> np.ndarray:
    """Diagonal of a 3x3 density matrix in physical-level order (ground first)."""
    return np.real(np.diagonal(rho))[::-1].copy()


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """AB - BA for equal-dimension square matrices."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a @ b - b @ a


def dagger(a: np.ndarray) -> np.ndarray:
    return np.asarray(a).conj().T


def projector(psi: np.ndarray) -> np.ndarray:
    """|psi><psi| as a dense matrix."""
    psi = np.asarray(psi)
    return np.outer(psi, psi.conj())


def hermiticity_residual(a: np.ndarray) -> float:
    """Largest entrywise deviation of ``a`` from its own adjoint."""
    return float(np.max(np.abs(a - dagger(a))))


def hermitian_eigenvalues(h: np.ndarray) -> np.ndarray:
    """Real eigenvalues of a Hermitian matrix, ascending.

    Raises ValueError if the input fails the Hermiticity tolerance
    (entrywise ``HERMITICITY_TOL``).
    """
    h = np.asarray(h)
    res = hermiticity_residual(h)
    if res > HERMITICITY_TOL:
        raise ValueError(f"matrix is not Hermitian within tolerance: residual {res:.3e}")
    return np.linalg.eigvalsh(h)


def min_eigenvalue(rho: np.ndarray) -> float:
    """Smallest eigenvalue of a Hermitian matrix (positivity diagnostic)."""
    return float(hermitian_eigenvalues(rho)[0])


def validate_density(rho: np.ndarray, *, check_positive: bool = True, atol: float = 1e-8) -> None:
    """Check Hermiticity, unit trace and (optionally) positive semidefiniteness.

    Positivity is deliberately a check on initial data only, never an
    invariant of evolved states: one of the integrators in this package is
    expected to violate it.
    """
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {rho.shape}")
    if hermiticity_residual(rho) > HERMITICITY_TOL:
        raise ValueError("density matrix is not Hermitian within tolerance")
    tr = complex(np.trace(rho))
    if abs(tr - 1.0) > atol:
        raise ValueError(f"density matrix trace {tr} is not 1 within {atol}")
    if check_positive and np.linalg.eigvalsh(rho)[0] < -atol:
        raise ValueError("density matrix has a negative eigenvalue beyond tolerance")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid: points t_k = k*dt for k = 0..n_steps."""

    dt: float
    n_steps: int

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @classmethod
    def from_duration(cls, t_end: float, dt: float) -> "TimeGrid":
        if not (dt > 0):
            raise ValueError(f"dt must be > 0, got {dt}")
        n = round(t_end / dt)
        if n < 1 or abs(n * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
            raise ValueError(f"t_end {t_end} is not an integer multiple of dt {dt}")
        return cls(dt=dt, n_steps=n)

    @property
    def t_end(self) -> float:
        return self.n_steps * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def half(self) -> "TimeGrid":
        """Grid with half the step and the same endpoint (even points coincide)."""
        return TimeGrid(dt=self.dt * 0.5, n_steps=self.n_steps * 2)

    def same_points(self, other: "TimeGrid") -> bool:
        return self.n_steps == other.n_steps and self.dt == other.dt


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Three-level ladder system: Hamiltonian omega*J_z, coupling J_minus."""

    omega: float
    dim: int
    hamiltonian: np.ndarray
    lindblad: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.hamiltonian)
        l = np.asarray(self.lindblad)
        if h.shape != (self.dim, self.dim) or l.shape != (self.dim, self.dim):
            raise ValueError("operator dimensions do not match dim")
        if hermiticity_residual(h) > HERMITICITY_TOL:
            raise ValueError("hamiltonian must be Hermitian")


def three_level_system(omega: float) -> SystemSpec:
    """Ladder system with level splitting ``omega`` and lowering-operator coupling."""
    j_z, _, j_minus = three_level_ops()
    return SystemSpec(omega=omega, dim=3, hamiltonian=omega * j_z, lindblad=j_minus)


@dataclass(frozen=True)
class BathSpec:
    """Zero-temperature bath with exponentially decaying correlation.

    The correlation function is a*gamma * exp(-gamma*|t-s|) * exp(-i*Omega*(t-s)):
    ``a`` is the dimensionless coupling amplitude, 1/``gamma`` the memory time
    and ``Omega`` the central frequency of the environment.
    """

    a: float
    gamma: float
    Omega: float = 0.0

    def __post_init__(self):
        if self.a < 0:
            raise ValueError(f"bath coupling a must be >= 0, got {self.a}")
        if not (self.gamma > 0):
            raise ValueError(f"bath gamma must be > 0, got {self.gamma}")

    def correlation(self, t, s):
        """Correlation function alpha(t, s); accepts scalars or arrays."""
        dt_ = np.asarray(t) - np.asarray(s)
        return self.a * self.gamma * np.exp(-self.gamma * np.abs(dt_)) * np.exp(-1j * self.Omega * dt_)


@dataclass(eq=False)
class DensityPath:
    """Time series of density matrices with per-time diagnostics.

    ``truncated_at_index`` marks the last valid point when an integration was
    stopped by the overflow guard; entries beyond it are NaN.  Trace and
    positivity are diagnostics, not invariants: only Hermiticity is
    structurally preserved by every integrator in this package.
    """

    grid: TimeGrid
    states: np.ndarray          # (n_steps + 1, d, d) complex
    traces: np.ndarray          # (n_steps + 1,) real
    herm_residuals: np.ndarray  # (n_steps + 1,) real
    min_eigs: np.ndarray        # (n_steps + 1,) real
    truncated_at_index: int | None = None

    @classmethod
    def from_states(cls, grid: TimeGrid, states: np.ndarray,
                    truncated_at_index: int | None = None) -> "DensityPath":
        states = np.asarray(states)
        n_pts = grid.n_steps + 1
        if states.shape[0] != n_pts:
            raise ValueError("states length does not match the grid")
        valid = n_pts if truncated_at_index is None else truncated_at_index + 1
        traces = np.full(n_pts, np.nan)
        herm = np.full(n_pts, np.nan)
        mins = np.full(n_pts, np.nan)
        good = states[:valid]
        traces[:valid] = np.einsum("tii->t", good).real
        herm[:valid] = np.abs(good - np.conj(np.swapaxes(good, 1, 2))).max(axis=(1, 2))
        mins[:valid] = np.linalg.eigvalsh(good)[:, 0]
        return cls(grid=grid, states=states, traces=traces, herm_residuals=herm,
                   min_eigs=mins, truncated_at_index=truncated_at_index)

    @property
    def n_valid(self) -> int:
        if self.truncated_at_index is None:
            return self.grid.n_steps + 1
        return self.truncated_at_index + 1

    def populations(self) -> np.ndarray:
        """Per-time populations in physical-level order (ground, middle, top)."""
        return np.real(np.diagonal(self.states, axis1=1, axis2=2))[:, ::-1].copy()


def rk4_step(f, t: float, y: np.ndarray, h: float) -> np.ndarray:
    """One classical Runge-Kutta step for y' = f(t, y)."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
