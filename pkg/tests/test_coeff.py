import numpy as np
import pytest

from qsd3 import (BathSpec, NonFiniteError, TimeGrid, integrate_coefficients,
                  integrate_f1g1, integrate_kernel_grid, three_level_system)
from qsd3.coeff import MemoryBudgetError, write_coefficients_csv

from conftest import MODERATE_MEMORY, STRONG_MEMORY, make_setup, rel_err

ORACLE_RTOL = 1e-3


def test_initial_values_vanish(strong_setup):
    system, bath = strong_setup
    c = integrate_coefficients(system, bath, TimeGrid.from_duration(1.0, 0.01))
    for arr in (c.F2, c.G2, c.Ptilde2, c.Pfstar):
        assert arr[0] == 0.0


def test_zero_coupling_keeps_all_coefficients_zero():
    system = three_level_system(1.0)
    bath = BathSpec(a=0.0, gamma=0.3)
    c = integrate_coefficients(system, bath, TimeGrid.from_duration(5.0, 0.01))
    for arr in (c.F2, c.G2, c.Ptilde2, c.Pfstar):
        assert np.array_equal(arr, np.zeros_like(arr))


def test_blow_up_raises_non_finite():
    # resonance-free strong driving leaves the truncation's validity region
    system = three_level_system(0.0)
    bath = BathSpec(a=5.0, gamma=0.05)
    with pytest.raises(NonFiniteError):
        integrate_coefficients(system, bath, TimeGrid.from_duration(10.0, 0.005))


@pytest.mark.parametrize("params", [STRONG_MEMORY, MODERATE_MEMORY],
                         ids=["strong", "moderate"])
def test_ode_route_matches_kernel_oracle(params):
    system, bath = make_setup(params)
    ode = integrate_coefficients(system, bath, TimeGrid.from_duration(5.0, 0.005))
    kern = integrate_kernel_grid(system, bath, TimeGrid.from_duration(5.0, 0.02))
    for t in (1.0, 2.5, 5.0):
        io, ik = round(t / 0.005), round(t / 0.02)
        assert rel_err(kern.F2[ik], ode.F2[io]) <= ORACLE_RTOL
        assert rel_err(kern.G2[ik], ode.G2[io]) <= ORACLE_RTOL
        assert rel_err(kern.Ptilde2[ik], ode.Ptilde2[io]) <= ORACLE_RTOL
        assert rel_err(kern.Pfstar[ik], ode.Pfstar[io]) <= ORACLE_RTOL


def test_kernel_diagonal_data_exact(strong_setup):
    system, bath = strong_setup
    kern = integrate_kernel_grid(system, bath, TimeGrid.from_duration(2.0, 0.05))
    n = kern.grid.n_steps
    diag_f = kern.f2[np.arange(n + 1), np.arange(n + 1)]
    diag_g = kern.g2[np.arange(n + 1), np.arange(n + 1)]
    assert np.array_equal(diag_f, np.ones(n + 1, dtype=complex))
    assert np.array_equal(diag_g, np.zeros(n + 1, dtype=complex))


def test_kernel_closed_form_without_coupling():
    system = three_level_system(1.3)
    bath = BathSpec(a=0.0, gamma=0.2)
    grid = TimeGrid.from_duration(2.0, 0.01)
    kern = integrate_kernel_grid(system, bath, grid)
    times = grid.times()
    n = grid.n_steps
    # decoupled linear kernel: f2(t, s) = exp(i*omega*(t-s)), g2 identically zero
    for it in (n // 2, n):
        s_vals = times[:it + 1]
        expected = np.exp(1j * 1.3 * (times[it] - s_vals))
        assert np.max(np.abs(kern.f2[it, :it + 1] - expected)) <= 1e-7
    assert np.array_equal(kern.g2, np.zeros_like(kern.g2))


def test_three_time_kernel_factorizes(strong_setup):
    # p2(t, s, s') / g2(s', s) must not depend on s (same propagator in t)
    system, bath = strong_setup
    kern = integrate_kernel_grid(system, bath, TimeGrid.from_duration(3.0, 0.05))
    it = list(kern.p2_times).index(kern.p2_times[-1])
    p_last = kern.p2[it]
    n = kern.grid.n_steps
    isp = n - 10  # s' node
    ratios = []
    for js in range(0, isp - 5):
        g = kern.g2[isp, js]
        if abs(g) > 1e-8:
            ratios.append(p_last[js, isp] / g)
    ratios = np.array(ratios)
    assert ratios.size >= 10
    assert np.max(np.abs(ratios - ratios[0])) <= 1e-6 * max(1.0, abs(ratios[0]))


def test_three_time_kernel_vanishes_below_diagonal(strong_setup):
    system, bath = strong_setup
    kern = integrate_kernel_grid(system, bath, TimeGrid.from_duration(2.0, 0.1))
    p_last = kern.p2[-1]
    lower = np.tril_indices(p_last.shape[0], k=-1)
    assert np.max(np.abs(p_last[lower])) == 0.0


def test_first_order_kernels_match_second_order(strong_setup):
    system, bath = strong_setup
    grid = TimeGrid.from_duration(3.0, 0.05)
    first = integrate_f1g1(system, bath, grid)
    kern = integrate_kernel_grid(system, bath, grid)
    assert np.max(np.abs(first.f1 - kern.f2)) <= 1e-10
    assert np.max(np.abs(first.g1 - kern.g2)) <= 1e-10
    n = grid.n_steps
    assert np.array_equal(first.f1[np.arange(n + 1), np.arange(n + 1)],
                          np.ones(n + 1, dtype=complex))


def test_first_order_kernels_zero_coupling():
    system = three_level_system(0.7)
    bath = BathSpec(a=0.0, gamma=0.1)
    first = integrate_f1g1(system, bath, TimeGrid.from_duration(1.0, 0.05))
    assert np.array_equal(first.g1, np.zeros_like(first.g1))


def test_rk4_order_of_reduced_system(strong_setup):
    system, bath = strong_setup
    t_end = 5.0

    def final(dt):
        c = integrate_coefficients(system, bath, TimeGrid.from_duration(t_end, dt))
        return np.array([c.F2[-1], c.G2[-1], c.Ptilde2[-1], c.Pfstar[-1]])

    ref = final(0.0125)
    e1 = np.linalg.norm(final(0.1) - ref)
    e2 = np.linalg.norm(final(0.05) - ref)
    ratio = e1 / e2
    assert 16.0 * 0.7 <= ratio <= 16.0 * 1.3, ratio


def test_markov_limit_of_f2():
    # omega = Omega = 0, fast bath: F2 settles at the integrated correlation a
    system = three_level_system(0.0)
    bath = BathSpec(a=0.5, gamma=50.0)
    c = integrate_coefficients(system, bath, TimeGrid.from_duration(1.0, 0.002))
    settled = c.F2[-1]
    assert abs(settled - bath.a) <= 0.02 * bath.a


def test_memory_budget_guard(strong_setup):
    system, bath = strong_setup
    with pytest.raises(MemoryBudgetError):
        integrate_kernel_grid(system, bath, TimeGrid.from_duration(2.0, 0.01),
                              p2_memory_budget=1000)


def test_snapshot_striding_respects_budget(strong_setup):
    system, bath = strong_setup
    grid = TimeGrid.from_duration(2.0, 0.05)  # 41 nodes, one snapshot ~27 kB
    kern = integrate_kernel_grid(system, bath, grid, p2_memory_budget=150_000)
    assert kern.p2.shape[0] <= 150_000 // (41 * 41 * 16) + 1
    assert kern.p2_times[-1] == pytest.approx(2.0)
    assert kern.p2.shape[0] == kern.p2_times.size


def test_coefficient_csv_roundtrip(tmp_path, strong_setup):
    system, bath = strong_setup
    grid = TimeGrid.from_duration(0.5, 0.05)
    c = integrate_coefficients(system, bath, grid)
    out = tmp_path / "coeffs.csv"
    write_coefficients_csv(out, c)
    rows = out.read_text().strip().splitlines()
    assert rows[0].startswith("t,re_F2")
    assert len(rows) == grid.n_steps + 2
    last = [float(x) for x in rows[-1].split(",")]
    assert last[0] == pytest.approx(0.5)
    assert last[1] == c.F2[-1].real
