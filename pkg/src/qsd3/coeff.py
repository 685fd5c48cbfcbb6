"""Evolution coefficients of the truncated memory-kernel construction.

Two independent routes compute the same four time-dependent coefficients
F2(t), G2(t), Ptilde2(t) and Pfstar(t) that drive the trajectory and
master-equation integrators:

* ``integrate_coefficients`` solves the closed ODE system obtained by
  differentiating the kernel convolutions under the exponential bath
  correlation.  With beta = gamma + i*Omega and w = i*omega - beta,

      F2'  = a*gamma + (w + 2 G2) F2
      G2'  = -2 F2^2 + (w + 6 F2 - 2 G2) G2
      Pt2' = a*gamma*G2 + (2w + 2 F2) Pt2
      Pf'  = (w + 2 F2 + 2 conj(G2)) Pf + Pt2 + G2 conj(F2)

  from vanishing initial data.  The system is nonlinear (the -2 F2^2 term)
  and can blow up outside its validity region; an overflow guard turns that
  into a hard error instead of silent garbage.

* ``integrate_kernel_grid`` advances the underlying two-time kernels
  f2(t, s), g2(t, s) and the three-time kernel p2(t, s, s') directly,

      d/dt f2 = (i*omega + 2 G1) f2
      d/dt g2 = (-2 F1 + 4 G1) f2 + (i*omega + 2 F1 - 2 G1) g2
      d/dt p2 = (2 i*omega + 2 F1) p2

  with diagonal data f2(s, s) = 1, g2(s, s) = 0, p2(s', s, s') = g2(s', s),
  where F1 and G1 are computed at every integrator stage by trapezoidal
  quadrature of the kernels themselves against the correlation function.
  The convolved outputs serve as an independent oracle for the ODE route
  (target agreement 1e-3 relative, not machine precision).

The f1/g1 kernel pair obeys the same equations and initial data as f2/g2 and
is provided as a separate code path so the identity can be checked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BathSpec, NonFiniteError, SystemSpec, TimeGrid

OVERFLOW_GUARD = 1e6

DEFAULT_P2_MEMORY_BUDGET = 128 * 1024 * 1024  # bytes for the stored p2 snapshots


class MemoryBudgetError(RuntimeError):
    """The three-time kernel cannot be stored within the configured budget."""


@dataclass(eq=False)
class CoefficientPath:
    """The four coefficients sampled on a uniform grid (all vanish at t = 0)."""

    grid: TimeGrid
    F2: np.ndarray
    G2: np.ndarray
    Ptilde2: np.ndarray
    Pfstar: np.ndarray


def integrate_coefficients(system: SystemSpec, bath: BathSpec, grid: TimeGrid) -> CoefficientPath:
    """RK4 solution of the reduced coefficient ODEs from zero initial data.

    Raises NonFiniteError if any coefficient magnitude exceeds the overflow
    guard, signalling parameters outside the truncation's validity region.
    """
    w = 1j * system.omega - (bath.gamma + 1j * bath.Omega)
    drive = bath.a * bath.gamma
    dt = grid.dt
    n = grid.n_steps

    def rhs(y):
        f, g, pt, pf = y
        return np.array([
            drive + (w + 2.0 * g) * f,
            -2.0 * f * f + (w + 6.0 * f - 2.0 * g) * g,
            drive * g + (2.0 * w + 2.0 * f) * pt,
            (w + 2.0 * f + 2.0 * np.conj(g)) * pf + pt + g * np.conj(f),
        ])

    out = np.zeros((n + 1, 4), dtype=complex)
    y = np.zeros(4, dtype=complex)
    for k in range(n):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(y).all() or np.max(np.abs(y)) > OVERFLOW_GUARD:
            raise NonFiniteError(
                f"coefficient blow-up at t = {(k + 1) * dt:.6g} "
                f"(|coefficient| > {OVERFLOW_GUARD:g} or non-finite)")
        out[k + 1] = y
    return CoefficientPath(grid=grid, F2=out[:, 0].copy(), G2=out[:, 1].copy(),
                           Ptilde2=out[:, 2].copy(), Pfstar=out[:, 3].copy())


@dataclass(eq=False)
class KernelGrid:
    """Two-time kernels, the three-time kernel and their quadrature convolutions.

    Kernels live on the triangular domain s <= t of a uniform grid.  Rows of
    ``f2``/``g2``/``P2`` are indexed by t, columns by s (or s'); entries with
    s > t are zero.  ``p2`` holds snapshots p2(t, s, s') at the times in
    ``p2_times`` only (the stride is chosen from the memory budget); it is
    zero for s' < s.  ``F2``/``G2``/``Ptilde2``/``Pfstar`` are available at
    every grid time.
    """

    system: SystemSpec
    bath: BathSpec
    grid: TimeGrid
    s: np.ndarray
    f2: np.ndarray        # (n+1, n+1)
    g2: np.ndarray        # (n+1, n+1)
    p2: np.ndarray        # (n_snap, n+1, n+1)
    p2_times: np.ndarray  # (n_snap,)
    F2: np.ndarray        # (n+1,)
    G2: np.ndarray        # (n+1,)
    P2: np.ndarray        # (n+1, n+1), rows t, columns s'
    Ptilde2: np.ndarray   # (n+1,)
    Pfstar: np.ndarray    # (n+1,)


def _trapz_weights(n_nodes: int, h: float) -> np.ndarray:
    """Composite trapezoid weights on n_nodes uniform nodes (zero if < 2)."""
    if n_nodes < 2:
        return np.zeros(n_nodes)
    w = np.full(n_nodes, h)
    w[0] = w[-1] = 0.5 * h
    return w


class _KernelStepper:
    """Shared stepping logic for the kernel families on one uniform grid.

    At every integrator stage the convolutions F1, G1 are evaluated by
    trapezoidal quadrature over s in [0, t_stage]; the partial interval
    between the last node and a half- or full-step stage time uses the exact
    diagonal data (f = 1, g = 0) as its endpoint value.
    """

    def __init__(self, system: SystemSpec, bath: BathSpec, grid: TimeGrid):
        self.iw = 1j * system.omega
        self.decay = bath.gamma + 1j * bath.Omega
        self.ag = bath.a * bath.gamma
        self.h = grid.dt
        self.n = grid.n_steps
        self.s = grid.times()
        self.f = np.zeros(self.n + 1, dtype=complex)
        self.g = np.zeros(self.n + 1, dtype=complex)
        self.f[0] = 1.0

    def _quad(self, t_stage: float, k: int, f_stage: np.ndarray, g_stage: np.ndarray):
        """(F1, G1) at a stage time, over nodes 0..k plus the diagonal endpoint."""
        w = _trapz_weights(k + 1, self.h)
        arow = self.ag * np.exp(-self.decay * (t_stage - self.s[:k + 1]))
        f1 = (w * arow * f_stage).sum()
        g1 = (w * arow * g_stage).sum()
        tail = t_stage - self.s[k]
        if tail > 1e-15:
            f1 = f1 + 0.5 * tail * (arow[-1] * f_stage[-1] + self.ag)
            g1 = g1 + 0.5 * tail * (arow[-1] * g_stage[-1])
        return f1, g1

    def step(self, k: int):
        """Advance the active kernel members from t_k to t_{k+1}.

        Returns the four stage values of (2*i*omega + 2*F1), from which the
        caller can form the shared RK4 multiplier for the p2 family.
        """
        h, iw = self.h, self.iw
        t = self.s[k]
        fa = self.f[:k + 1].copy()
        ga = self.g[:k + 1].copy()

        f1a, g1a = self._quad(t, k, fa, ga)
        kf1 = (iw + 2.0 * g1a) * fa
        kg1 = (-2.0 * f1a + 4.0 * g1a) * fa + (iw + 2.0 * f1a - 2.0 * g1a) * ga

        fb, gb = fa + 0.5 * h * kf1, ga + 0.5 * h * kg1
        f1b, g1b = self._quad(t + 0.5 * h, k, fb, gb)
        kf2 = (iw + 2.0 * g1b) * fb
        kg2 = (-2.0 * f1b + 4.0 * g1b) * fb + (iw + 2.0 * f1b - 2.0 * g1b) * gb

        fc, gc = fa + 0.5 * h * kf2, ga + 0.5 * h * kg2
        f1c, g1c = self._quad(t + 0.5 * h, k, fc, gc)
        kf3 = (iw + 2.0 * g1c) * fc
        kg3 = (-2.0 * f1c + 4.0 * g1c) * fc + (iw + 2.0 * f1c - 2.0 * g1c) * gc

        fd, gd = fa + h * kf3, ga + h * kg3
        f1d, g1d = self._quad(t + h, k, fd, gd)
        kf4 = (iw + 2.0 * g1d) * fd
        kg4 = (-2.0 * f1d + 4.0 * g1d) * fd + (iw + 2.0 * f1d - 2.0 * g1d) * gd

        self.f[:k + 1] = fa + (h / 6.0) * (kf1 + 2.0 * kf2 + 2.0 * kf3 + kf4)
        self.g[:k + 1] = ga + (h / 6.0) * (kg1 + 2.0 * kg2 + 2.0 * kg3 + kg4)
        # member with s = t_{k+1} starts from its diagonal data
        self.f[k + 1] = 1.0
        self.g[k + 1] = 0.0

        c = 2.0 * iw
        return c + 2.0 * f1a, c + 2.0 * f1b, c + 2.0 * f1c, c + 2.0 * f1d

    def alpha_row(self, k: int) -> np.ndarray:
        """alpha(t_k, s_j) for nodes j = 0..k."""
        return self.ag * np.exp(-self.decay * (self.s[k] - self.s[:k + 1]))


def integrate_kernel_grid(system: SystemSpec, bath: BathSpec, grid: TimeGrid, *,
                          p2_memory_budget: int = DEFAULT_P2_MEMORY_BUDGET) -> KernelGrid:
    """Integrate the kernel families and form all convolutions by quadrature.

    The three-time kernel is advanced as a full (s, s') family; its stored
    snapshots are strided so that they fit in ``p2_memory_budget`` bytes.
    Raises MemoryBudgetError if even a single snapshot does not fit.
    """
    st = _KernelStepper(system, bath, grid)
    n = st.n
    h = st.h
    s = st.s

    snap_bytes = (n + 1) * (n + 1) * 16
    if snap_bytes > p2_memory_budget:
        raise MemoryBudgetError(
            f"one p2 snapshot needs {snap_bytes} bytes, budget is {p2_memory_budget}; "
            "coarsen the grid or raise the budget")
    max_snaps = max(1, p2_memory_budget // snap_bytes)
    stride = 1
    while (n // stride) + 1 > max_snaps:
        stride += 1
    snap_indices = [k for k in range(0, n + 1) if k % stride == 0]
    if snap_indices[-1] != n:
        snap_indices.append(n)

    f2 = np.zeros((n + 1, n + 1), dtype=complex)
    g2 = np.zeros((n + 1, n + 1), dtype=complex)
    p = np.zeros((n + 1, n + 1), dtype=complex)
    p2_snaps = np.zeros((len(snap_indices), n + 1, n + 1), dtype=complex)
    F2 = np.zeros(n + 1, dtype=complex)
    G2 = np.zeros(n + 1, dtype=complex)
    P2 = np.zeros((n + 1, n + 1), dtype=complex)
    Pt2 = np.zeros(n + 1, dtype=complex)
    Pfs = np.zeros(n + 1, dtype=complex)

    # conj(alpha(s_j, s_l)) for the double convolution
    ds = s[:, None] - s[None, :]
    alpha_star = bath.a * bath.gamma * np.exp(-bath.gamma * np.abs(ds)) * np.exp(1j * bath.Omega * ds)

    f2[0, 0] = 1.0
    snap_pos = 0
    if snap_indices[0] == 0:
        snap_pos = 1  # snapshot at t = 0 is the zero matrix already in place

    for k in range(n):
        c1, c2, c3, c4 = st.step(k)

        # shared RK4 multiplier for the linear p2 family, d/dt p = c(t) p
        m1 = c1
        m2 = c2 * (1.0 + 0.5 * h * m1)
        m3 = c3 * (1.0 + 0.5 * h * m2)
        m4 = c4 * (1.0 + h * m3)
        mult = 1.0 + (h / 6.0) * (m1 + 2.0 * m2 + 2.0 * m3 + m4)
        p[:k + 1, :k + 1] *= mult
        # members with s' = t_{k+1} start from the current g-field values
        p[:k + 2, k + 1] = st.g[:k + 2]

        kk = k + 1
        f2[kk, :kk + 1] = st.f[:kk + 1]
        g2[kk, :kk + 1] = st.g[:kk + 1]

        w = _trapz_weights(kk + 1, h)
        arow = st.alpha_row(kk)
        wa = w * arow
        F2[kk] = (wa * st.f[:kk + 1]).sum()
        G2[kk] = (wa * st.g[:kk + 1]).sum()
        p2row = wa @ p[:kk + 1, :kk + 1]
        P2[kk, :kk + 1] = p2row
        Pt2[kk] = (wa * p2row).sum()
        Pfs[kk] = (w * p2row) @ alpha_star[:kk + 1, :kk + 1] @ (w * np.conj(st.f[:kk + 1]))

        if snap_pos < len(snap_indices) and snap_indices[snap_pos] == kk:
            p2_snaps[snap_pos] = p
            snap_pos += 1

    return KernelGrid(system=system, bath=bath, grid=grid, s=s, f2=f2, g2=g2,
                      p2=p2_snaps, p2_times=s[np.asarray(snap_indices)],
                      F2=F2, G2=G2, P2=P2, Ptilde2=Pt2, Pfstar=Pfs)


@dataclass(eq=False)
class FirstOrderKernels:
    """The f1/g1 kernel pair of the noise-free truncation ansatz."""

    grid: TimeGrid
    s: np.ndarray
    f1: np.ndarray  # (n+1, n+1), rows t
    g1: np.ndarray


def integrate_f1g1(system: SystemSpec, bath: BathSpec, grid: TimeGrid) -> FirstOrderKernels:
    """Integrate the first-order kernel pair on its own (it must equal f2/g2)."""
    st = _KernelStepper(system, bath, grid)
    n = st.n
    f1 = np.zeros((n + 1, n + 1), dtype=complex)
    g1 = np.zeros((n + 1, n + 1), dtype=complex)
    f1[0, 0] = 1.0
    for k in range(n):
        st.step(k)
        f1[k + 1, :k + 2] = st.f[:k + 2]
        g1[k + 1, :k + 2] = st.g[:k + 2]
    return FirstOrderKernels(grid=grid, s=st.s, f1=f1, g1=g1)


def write_coefficients_csv(path, coeffs: CoefficientPath) -> None:
    """Dump a coefficient path as CSV (t plus Re/Im of each coefficient)."""
    import csv

    times = coeffs.grid.times()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "re_F2", "im_F2", "re_G2", "im_G2",
                    "re_Ptilde2", "im_Ptilde2", "re_Pfstar", "im_Pfstar"])
        for k in range(times.size):
            row = [times[k],
                   coeffs.F2[k].real, coeffs.F2[k].imag,
                   coeffs.G2[k].real, coeffs.G2[k].imag,
                   coeffs.Ptilde2[k].real, coeffs.Ptilde2[k].imag,
                   coeffs.Pfstar[k].real, coeffs.Pfstar[k].imag]
            w.writerow([repr(float(x)) for x in row])
