import numpy as np
import pytest

from qsd3 import (BathSpec, TimeGrid, basis_state, commutator, hermitian_eigenvalues,
                  level_populations, min_eigenvalue, projector, three_level_ops,
                  three_level_system)
from qsd3.core import SystemSpec, hermiticity_residual, matrix_index

SQ2 = np.sqrt(2.0)


def naive_matmul(a, b):
    """Independent 3x3 product for oracle comparisons (no BLAS)."""
    out = np.zeros((3, 3), dtype=complex)
    for i in range(3):
        for j in range(3):
            acc = 0.0 + 0.0j
            for k in range(3):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def test_ladder_matrices_closed_form():
    j_z, j_plus, j_minus = three_level_ops()
    assert np.array_equal(j_z, np.diag([1.0, 0.0, -1.0]).astype(complex))
    assert np.array_equal(j_plus, SQ2 * np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=complex))
    assert np.array_equal(j_minus, SQ2 * np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=complex))


def test_raising_is_adjoint_of_lowering_exactly():
    _, j_plus, j_minus = three_level_ops()
    assert np.array_equal(j_plus, j_minus.conj().T)


def test_commutation_relation():
    j_z, j_plus, j_minus = three_level_ops()
    half_comm = 0.5 * commutator(j_plus, j_minus)
    # sqrt(2)**2 rounds one ulp off 2, so machine tolerance rather than bitwise
    assert np.allclose(half_comm, j_z, rtol=0.0, atol=1e-15)


def test_lowering_action_on_top_level():
    _, _, j_minus = three_level_ops()
    assert np.array_equal(j_minus @ basis_state(2), SQ2 * basis_state(1))
    assert np.array_equal(j_minus @ basis_state(0), np.zeros(3, dtype=complex))


def test_commutator_self_is_zero():
    _, j_plus, _ = three_level_ops()
    assert np.array_equal(commutator(j_plus, j_plus), np.zeros((3, 3), dtype=complex))


def test_commutator_jz_jplus_against_naive_product():
    j_z, j_plus, _ = three_level_ops()
    expected = naive_matmul(j_z, j_plus) - naive_matmul(j_plus, j_z)
    got = commutator(j_z, j_plus)
    assert np.array_equal(got, expected)
    assert np.array_equal(got, j_plus)  # ladder algebra: [J_z, J_+] = J_+


def test_commutator_dimension_mismatch():
    with pytest.raises(ValueError):
        commutator(np.eye(3, dtype=complex), np.eye(2, dtype=complex))


def test_eigenvalues_of_jz_and_identity():
    j_z, _, _ = three_level_ops()
    assert np.allclose(hermitian_eigenvalues(j_z), [-1.0, 0.0, 1.0], atol=1e-12)
    assert np.allclose(hermitian_eigenvalues(np.eye(3, dtype=complex)), [1.0, 1.0, 1.0], atol=1e-12)


def random_hermitian(rng, d):
    m = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return 0.5 * (m + m.conj().T)


def test_eigenvalues_against_characteristic_polynomial():
    rng = np.random.default_rng(7)
    for _ in range(25):
        h = random_hermitian(rng, 3)
        # cubic det(h - x) = -x^3 + c2 x^2 + c1 x + c0, coefficients via traces
        tr = np.trace(h).real
        tr2 = np.trace(h @ h).real
        det = np.linalg.det(h).real
        coeffs = [-1.0, tr, -0.5 * (tr * tr - tr2), det]
        roots = np.sort(np.roots(coeffs).real)
        assert np.allclose(hermitian_eigenvalues(h), roots, atol=1e-8)


def test_eigenvalue_sum_matches_trace():
    rng = np.random.default_rng(11)
    for d in (2, 3, 4, 6):
        for _ in range(20):
            h = random_hermitian(rng, d)
            assert abs(hermitian_eigenvalues(h).sum() - np.trace(h).real) <= 1e-10


def test_eigenvalues_reject_non_hermitian():
    m = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
    with pytest.raises(ValueError):
        hermitian_eigenvalues(m)


def test_min_eigenvalue_examples():
    assert abs(min_eigenvalue(projector(basis_state(2)))) <= 1e-12
    assert abs(min_eigenvalue(np.eye(3, dtype=complex) / 3.0) - 1.0 / 3.0) <= 1e-12
    assert abs(min_eigenvalue(np.diag([1.1, 0.2, -0.3]).astype(complex)) - (-0.3)) <= 1e-14


def test_min_eigenvalue_bounds_rayleigh_quotient():
    rng = np.random.default_rng(23)
    for _ in range(100):
        h = random_hermitian(rng, 3)
        v = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        rq = (np.vdot(v, h @ v) / np.vdot(v, v)).real
        assert min_eigenvalue(h) <= rq + 1e-10


def test_level_mapping_and_populations():
    # physical labels run ground..top, matrix indices the opposite way
    assert [matrix_index(level) for level in (0, 1, 2)] == [2, 1, 0]
    rho = np.diag([0.5, 0.3, 0.2]).astype(complex)  # matrix order: top first
    assert np.allclose(level_populations(rho), [0.2, 0.3, 0.5])
    with pytest.raises(ValueError):
        basis_state(3)


def test_time_grid_construction():
    g = TimeGrid.from_duration(2.0, 0.01)
    assert g.n_steps == 200
    assert np.allclose(g.times()[[0, -1]], [0.0, 2.0])
    h = g.half()
    assert h.n_steps == 400
    assert np.array_equal(h.times()[::2], g.times())
    with pytest.raises(ValueError):
        TimeGrid.from_duration(1.0, 0.3)
    with pytest.raises(ValueError):
        TimeGrid(dt=-0.1, n_steps=10)
    with pytest.raises(ValueError):
        TimeGrid(dt=0.1, n_steps=0)


def test_system_and_bath_validation():
    system = three_level_system(2.5)
    assert hermiticity_residual(system.hamiltonian) == 0.0
    assert system.dim == 3
    with pytest.raises(ValueError):
        SystemSpec(omega=1.0, dim=3, hamiltonian=np.eye(2, dtype=complex),
                   lindblad=np.eye(3, dtype=complex))
    with pytest.raises(ValueError):
        bad = np.zeros((3, 3), dtype=complex)
        bad[0, 1] = 1.0
        SystemSpec(omega=1.0, dim=3, hamiltonian=bad, lindblad=bad)
    with pytest.raises(ValueError):
        BathSpec(a=-0.1, gamma=0.1)
    with pytest.raises(ValueError):
        BathSpec(a=0.1, gamma=0.0)


def test_bath_correlation_function():
    bath = BathSpec(a=0.8, gamma=0.05, Omega=0.3)
    assert np.isclose(bath.correlation(3.0, 3.0), 0.04)
    t, s = 2.0, 0.5
    expected = 0.04 * np.exp(-0.05 * 1.5) * np.exp(-1j * 0.3 * 1.5)
    assert np.isclose(bath.correlation(t, s), expected)
    # symmetry alpha(s, t) = conj(alpha(t, s))
    assert np.isclose(bath.correlation(s, t), np.conj(bath.correlation(t, s)))
