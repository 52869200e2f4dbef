r"""
Tests for ``rssgeo._solver``
"""

import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from rssgeo import (
    CandidateGrid,
    PathlossModel,
    SolverConfig,
    SparseSolution,
    Termination,
    bloomp_solve,
    build_measurement_matrix,
    coherence,
    coherence_band,
    column_coherences,
    mutual_coherence,
    nnls_on_support,
    omp_solve,
    random_sensor_array,
    simulate_noisy_data,
)
from rssgeo._errors import DegenerateSupport, RssgeoError, ZeroColumn, ZeroVector
from rssgeo._solver import _Bands, _local_optimize, _normalized

EXACT = SolverConfig(sigma_db=0.0)

vectors = st.lists(st.floats(-10, 10), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3
)


@pytest.fixture(scope="module")
def small():
    grid = CandidateGrid(8, 8, spacing=5.0)
    sensors = random_sensor_array(12, extent=(0, 40, 0, 40), altitude=10.0, seed=2)
    matrix = build_measurement_matrix(grid, sensors, PathlossModel(3.5))
    return grid, sensors, matrix


@settings(max_examples=50, deadline=None)
@given(x=vectors, y=vectors, scale=st.floats(0.01, 100))
def test_coherence_properties(x, y, scale):
    mu = coherence(x, y)
    assert 0.0 <= mu <= 1.0
    assert mu == pytest.approx(coherence(y, x))
    assert coherence(x, np.multiply(scale, x)) == pytest.approx(1.0)


def test_coherence_zero_vector():
    with pytest.raises(ZeroVector):
        coherence([0.0, 0.0], [1.0, 0.0])


def test_mutual_coherence(small):
    _, _, matrix = small
    mu = mutual_coherence(matrix, block=7)
    assert 0.9 < mu <= 1.0
    assert mu == pytest.approx(mutual_coherence(matrix))
    with pytest.raises(ZeroColumn):
        mutual_coherence(np.array([[1.0, 0.0], [1.0, 0.0]]))


def test_coherence_band(small):
    _, _, matrix = small
    band = coherence_band(matrix, 27, 0.98)
    assert 27 in band
    mu = column_coherences(matrix, 27)
    assert np.all(mu[band] > 0.98)
    assert np.all(np.delete(mu, band) <= 0.98)


def test_nnls_on_support_exact(small):
    _, _, matrix = small
    d = matrix[:, [3, 40]] @ [0.5, 2.0]
    powers, residual = nnls_on_support(matrix, d, [40, 3])
    np.testing.assert_allclose(powers, [2.0, 0.5], rtol=1e-8)
    assert residual < 1e-10 * np.linalg.norm(d)


def test_nnls_on_support_nonnegative(small):
    _, _, matrix = small
    d = matrix[:, 10] - 0.5 * matrix[:, 11]
    powers, _ = nnls_on_support(matrix, np.maximum(d, 0), [10, 11])
    assert np.all(powers >= 0)


def test_nnls_degenerate():
    matrix = np.array([[1.0, 2.0, 0.0], [1.0, 2.0, 1.0]])
    with pytest.raises(DegenerateSupport) as err:
        nnls_on_support(matrix, [1.0, 1.0], [0, 1])
    assert err.value.index == 1


def test_config_validation():
    with pytest.raises(RssgeoError):
        SolverConfig(band_exclusion=1.0)
    with pytest.raises(RssgeoError):
        SolverConfig(max_sparsity=0)
    with pytest.raises(RssgeoError):
        SolverConfig(epsilon=-1.0)
    with pytest.raises(RssgeoError):
        SolverConfig(candidates=0)
    with pytest.raises(RssgeoError):
        SolverConfig(local_passes=0)
    d = np.array([3.0, 4.0])
    assert SolverConfig(epsilon=0.5).tolerance(d) == 0.5
    assert EXACT.tolerance(d) == pytest.approx(5e-10)


def test_solution_validation():
    with pytest.raises(RssgeoError):
        SparseSolution((1, 1), [0.5, 0.5], 0.0, 2, Termination.STALL)
    with pytest.raises(RssgeoError):
        SparseSolution((1,), [-0.5], 0.0, 1, Termination.STALL)
    solution = SparseSolution((4, 1), [0.5, 2.0], 0.0, 2, Termination.NOISE_FLOOR)
    np.testing.assert_array_equal(solution.power_vector(5), [0, 2.0, 0, 0, 0.5])


@pytest.mark.parametrize("solve", [omp_solve, bloomp_solve])
def test_recover_every_single_emitter(small, solve):
    _, _, matrix = small
    for index in range(matrix.shape[1]):
        d = 0.7 * matrix[:, index]
        solution = solve(matrix, d, EXACT)
        assert solution.support == (index,)
        np.testing.assert_allclose(solution.powers, [0.7], rtol=1e-6)
        assert solution.terminated_by is Termination.NOISE_FLOOR


def _best_pair(matrix, d):
    best = (np.inf, ())
    for pair in itertools.combinations(range(matrix.shape[1]), 2):
        try:
            _, residual = nnls_on_support(matrix, d, list(pair))
        except DegenerateSupport:
            continue
        best = min(best, (residual, pair))
    return best[1]


def _admissible_pairs(matrix, beta=0.98):
    pairs = []
    for i, j in itertools.combinations(range(matrix.shape[1]), 2):
        if column_coherences(matrix, i)[j] <= beta:
            pairs.append((i, j))
    return pairs


def test_two_sparse_oracle(small):
    _, _, matrix = small
    pairs = _admissible_pairs(matrix)[::4]
    exact = 0
    for i, j in pairs:
        powers = np.array([0.5 + 0.25 * (i % 7), 0.6 + 0.2 * (j % 5)])
        d = matrix[:, [i, j]] @ powers
        solution = bloomp_solve(matrix, d, EXACT)
        assert solution.iterations <= EXACT.max_sparsity
        if sorted(solution.support) == [i, j]:
            order = np.argsort(solution.support)
            np.testing.assert_allclose(solution.powers[order], powers, rtol=1e-6)
            exact += 1
    # Nonnegative two-column representations are not always unique on this layout
    assert exact >= 0.93 * len(pairs)


@pytest.mark.parametrize("pair", [(0, 46), (0, 54), (0, 62)])
def test_omp_separated_pair(small, pair):
    _, _, matrix = small
    d = matrix[:, list(pair)] @ [0.5, 1.0]
    solution = omp_solve(matrix, d, EXACT)
    assert solution.iterations <= 2
    assert sorted(solution.support) == list(pair)
    powers = dict(zip(solution.support, solution.powers, strict=True))
    assert powers[pair[0]] == pytest.approx(0.5, rel=1e-6)
    assert powers[pair[1]] == pytest.approx(1.0, rel=1e-6)
    assert solution.terminated_by is Termination.NOISE_FLOOR


@pytest.mark.parametrize("solve", [omp_solve, bloomp_solve])
def test_first_selection_is_best_single_column(small, solve):
    grid, sensors, matrix = small
    emitters = [((7.0, 31.0), 1.0), ((28.0, 12.0), 0.6)]
    d = simulate_noisy_data(emitters, sensors, PathlossModel(3.5), 3.0, seed=11)
    solution = solve(matrix, d, SolverConfig(sigma_db=3.0, max_sparsity=1))
    residuals = [nnls_on_support(matrix, d, [k])[1] for k in range(len(grid))]
    assert solution.support == (int(np.argmin(residuals)),)
    assert solution.residual_norm == pytest.approx(min(residuals))


def test_brute_force_oracle_agrees(small):
    _, _, matrix = small
    d = matrix[:, [9, 50]] @ [1.0, 0.8]
    assert _best_pair(matrix, d) == (9, 50)
    assert sorted(bloomp_solve(matrix, d, EXACT).support) == [9, 50]


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32), count=st.integers(1, 4))
def test_bloomp_invariants(small, seed, count):
    grid, sensors, matrix = small
    rng = np.random.default_rng(seed)
    emitters = [(rng.uniform(0, 40, 2), rng.uniform(0.2, 2.0)) for _ in range(count)]
    d = simulate_noisy_data(emitters, sensors, PathlossModel(3.5), 3.0, seed=seed)
    config = SolverConfig(sigma_db=3.0, max_sparsity=5)
    solution = bloomp_solve(matrix, d, config, grid)
    assert len(solution) <= config.max_sparsity
    assert np.all(solution.powers > 0)
    assert solution.residual_norm <= np.linalg.norm(d) * (1 + 1e-12)
    for a, b in itertools.combinations(solution.support, 2):
        assert coherence(matrix[:, a], matrix[:, b]) <= config.band_exclusion
    if solution.terminated_by is Termination.NOISE_FLOOR:
        assert solution.residual_norm <= config.tolerance(d)
    fitted = matrix @ solution.power_vector(len(grid))
    assert np.linalg.norm(fitted - d) == pytest.approx(solution.residual_norm)
    assert solution.iterations <= config.max_sparsity


def test_zero_data(small):
    _, _, matrix = small
    solution = bloomp_solve(matrix, np.zeros(matrix.shape[0]), EXACT)
    assert solution.support == ()
    assert solution.terminated_by is Termination.NOISE_FLOOR


def test_max_sparsity(small):
    _, _, matrix = small
    d = matrix[:, [0, 7, 56, 63, 27]] @ np.ones(5)
    solution = omp_solve(matrix, d, SolverConfig(max_sparsity=2, sigma_db=0.0))
    assert len(solution) <= 2
    assert solution.terminated_by in {Termination.MAX_SPARSITY, Termination.STALL}


def test_epsilon_override(small):
    _, _, matrix = small
    d = matrix[:, [0, 63]] @ [1.0, 1e-3]
    loose = SolverConfig(epsilon=0.5 * np.linalg.norm(d))
    solution = bloomp_solve(matrix, d, loose)
    assert len(solution) == 1
    assert solution.residual_norm <= loose.tolerance(d)


def test_dimension_mismatch(small):
    _, _, matrix = small
    with pytest.raises(RssgeoError):
        bloomp_solve(matrix, np.ones(3))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32), count=st.integers(1, 4))
@pytest.mark.parametrize("solve", [omp_solve, bloomp_solve])
def test_residual_history_never_increases(small, solve, seed, count):
    _, sensors, matrix = small
    rng = np.random.default_rng(seed)
    emitters = [(rng.uniform(0, 40, 2), rng.uniform(0.2, 2.0)) for _ in range(count)]
    d = simulate_noisy_data(emitters, sensors, PathlossModel(3.5), 3.0, seed=seed)
    solution = solve(matrix, d, SolverConfig(sigma_db=3.0, max_sparsity=6))
    history = np.array(solution.residual_history)
    assert len(history) == solution.iterations + 1
    assert history[0] == pytest.approx(np.linalg.norm(d))
    assert history[-1] == solution.residual_norm
    assert np.all(np.diff(history) < 0)


@settings(max_examples=20, deadline=None)
@given(i=st.integers(0, 63), j=st.integers(0, 63), seed=st.integers(0, 2**16))
def test_local_optimization_never_increases_residual(small, i, j, seed):
    grid, sensors, matrix = small
    assume(i != j and column_coherences(matrix, i)[j] <= 0.98)
    emitters = [(grid.point(i), 1.0), (grid.point(j), 0.5)]
    d = simulate_noisy_data(emitters, sensors, PathlossModel(3.5), 2.0, seed=seed)
    # Start away from the true locations
    start = [(i + 1) % 64, (j + 8) % 64]
    assume(column_coherences(matrix, start[0])[start[1]] <= 0.98)
    powers, residual = nnls_on_support(matrix, d, start)
    unit, _ = _normalized(matrix)
    bands = _Bands(unit, EXACT.band_exclusion)
    support, new_powers, new_residual = _local_optimize(
        matrix, d, start, powers, residual, bands, EXACT
    )
    assert new_residual <= residual * (1 + 1e-9)
    assert len(support) == len(new_powers) <= 2
    fitted = matrix[:, support] @ new_powers
    assert np.linalg.norm(fitted - d) == pytest.approx(new_residual)


def test_band_exclusion_leaves_no_column(small, caplog):
    _, _, matrix = small
    d = matrix[:, [0, 63]] @ [1.0, 1.0]
    # Positive columns are all pairwise coherent above zero
    config = SolverConfig(band_exclusion=0.0, sigma_db=0.0)
    with caplog.at_level("DEBUG", logger="rssgeo._solver"):
        solution = bloomp_solve(matrix, d, config)
    assert len(solution) == 1
    assert solution.terminated_by is Termination.STALL
    assert "No admissible column" in caplog.text
