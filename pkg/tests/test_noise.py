import numpy as np
import pytest

from qsd3 import BathSpec, TimeGrid, derive_seeds, estimate_covariance, sample_noise_path

from conftest import MODERATE_MEMORY, STRONG_MEMORY


def sample_many(bath, grid, n, seed0=0):
    seeds = derive_seeds(seed0, n)
    return [sample_noise_path(bath, grid, s) for s in seeds]


def test_zero_coupling_gives_exact_zeros():
    bath = BathSpec(a=0.0, gamma=0.3)
    grid = TimeGrid.from_duration(1.0, 0.01)
    path = sample_noise_path(bath, grid, 42)
    assert np.array_equal(path.values, np.zeros(grid.n_steps + 1, dtype=complex))


def test_fixed_seed_is_bitwise_reproducible():
    bath = BathSpec(a=0.5, gamma=0.1, Omega=0.7)
    grid = TimeGrid.from_duration(2.0, 0.02)
    p1 = sample_noise_path(bath, grid, 987654321)
    p2 = sample_noise_path(bath, grid, 987654321)
    assert np.array_equal(p1.values, p2.values)
    p3 = sample_noise_path(bath, grid, 987654322)
    assert not np.array_equal(p1.values, p3.values)


def test_seed_derivation_is_prefix_stable_and_distinct():
    short = derive_seeds(2024, 8)
    long = derive_seeds(2024, 64)
    assert short == long[:8]
    assert len(set(long)) == 64
    assert derive_seeds(2025, 8) != short


def test_stationary_variance_matches_strong_memory_value():
    # a = 0.8, gamma = 0.05: equal-time covariance must be a*gamma = 0.04
    bath = BathSpec(**{k: STRONG_MEMORY[k] for k in ("a", "gamma", "Omega")})
    grid = TimeGrid.from_duration(20.0, 0.1)
    paths = sample_many(bath, grid, 10_000, seed0=101)
    est = estimate_covariance(paths, [0, 50, 120, 200])
    target = bath.a * bath.gamma
    for i in range(4):
        dev = abs(est.zz_star[i, i] - target)
        assert dev <= 4.0 * est.stderr_zz_star[i, i], (i, dev, est.stderr_zz_star[i, i])


@pytest.fixture(scope="module")
def moderate_ensemble():
    bath = BathSpec(**{k: MODERATE_MEMORY[k] for k in ("a", "gamma", "Omega")})
    grid = TimeGrid.from_duration(25.0, 0.1)
    return bath, grid, sample_many(bath, grid, 10_000, seed0=7)


def test_two_time_moments_match_correlation(moderate_ensemble):
    bath, grid, paths = moderate_ensemble
    rng = np.random.default_rng(3)
    idx = sorted(rng.choice(grid.n_steps + 1, size=7, replace=False))
    est = estimate_covariance(paths, idx)
    times = grid.times()[idx]
    checked = 0
    for i in range(len(idx)):
        for j in range(len(idx)):
            target = bath.correlation(times[i], times[j])
            assert abs(est.zz_star[i, j] - target) <= 4.0 * est.stderr_zz_star[i, j]
            assert abs(est.zz[i, j]) <= 4.0 * est.stderr_zz[i, j]
            checked += 1
    assert checked >= 20
    assert np.all(np.abs(est.mean) <= 4.0 * est.stderr_mean)


def test_stationarity_in_time_difference(moderate_ensemble):
    bath, grid, paths = moderate_ensemble
    # same lag (30 steps), two different absolute positions
    est = estimate_covariance(paths, [10, 40, 150, 180])
    m1, se1 = est.zz_star[0, 1], est.stderr_zz_star[0, 1]
    m2, se2 = est.zz_star[2, 3], est.stderr_zz_star[2, 3]
    assert abs(m1 - m2) <= 4.0 * np.hypot(se1, se2)


def test_distinct_seeds_are_uncorrelated():
    bath = BathSpec(a=0.5, gamma=0.2)
    grid = TimeGrid.from_duration(5.0, 0.05)
    paths = sample_many(bath, grid, 2_000, seed0=55)
    var = bath.a * bath.gamma
    for k in (10, 60):
        z = np.conj(np.stack([p.values[k] for p in paths]))
        cross = z[0::2] * np.conj(z[1::2])  # products of independent pairs
        se = np.hypot(cross.real.std(ddof=1), cross.imag.std(ddof=1)) / np.sqrt(cross.size)
        assert abs(cross.mean()) <= 4.0 * se
        assert abs(cross.mean()) <= var  # sanity scale


def test_stderr_shrinks_with_ensemble_size():
    bath = BathSpec(a=0.4, gamma=0.1)
    grid = TimeGrid.from_duration(1.0, 0.05)
    small = estimate_covariance(sample_many(bath, grid, 500, seed0=1), [0, 10])
    large = estimate_covariance(sample_many(bath, grid, 8_000, seed0=1), [0, 10])
    ratio = small.stderr_zz_star[0, 0] / large.stderr_zz_star[0, 0]
    assert 2.0 <= ratio <= 8.0  # expected 4, generous statistical band


def test_zero_paths_give_exactly_zero_moments():
    bath = BathSpec(a=0.0, gamma=0.3)
    grid = TimeGrid.from_duration(1.0, 0.1)
    paths = [sample_noise_path(bath, grid, s) for s in (1, 2)]
    est = estimate_covariance(paths, [0, 5, 10])
    assert np.array_equal(est.zz_star, np.zeros((3, 3), dtype=complex))
    assert np.array_equal(est.zz, np.zeros((3, 3), dtype=complex))
    assert np.array_equal(est.mean, np.zeros(3, dtype=complex))


def test_estimator_input_validation():
    bath = BathSpec(a=0.1, gamma=0.3)
    grid = TimeGrid.from_duration(1.0, 0.1)
    p1 = sample_noise_path(bath, grid, 1)
    with pytest.raises(ValueError):
        estimate_covariance([p1], [0, 1])
    other = sample_noise_path(bath, TimeGrid.from_duration(1.0, 0.05), 2)
    with pytest.raises(ValueError):
        estimate_covariance([p1, other], [0, 1])
    with pytest.raises(ValueError):
        estimate_covariance([p1, sample_noise_path(bath, grid, 3)], [])
