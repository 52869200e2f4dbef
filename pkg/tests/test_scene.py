r"""
Tests for ``rssgeo._scene``
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from rssgeo import (
    CandidateGrid,
    Emitter,
    PathlossModel,
    Scenario,
    SensorArray,
    build_measurement_matrix,
    distances,
    forward,
    forward_offgrid,
    meander_sensor_array,
    random_sensor_array,
)
from rssgeo._errors import DimensionMismatch, RssgeoError, ScenarioError, ZeroDistance


@pytest.fixture
def scene():
    grid = CandidateGrid(6, 4, spacing=2.0)
    sensors = random_sensor_array(5, extent=(0, 12, 0, 8), altitude=3.0, seed=1)
    return grid, sensors, PathlossModel(3.5)


def test_grid_index_convention():
    grid = CandidateGrid(50, 50)
    assert grid.index_of(19.5, 20.5) == 1019
    assert grid.point(1019) == (19.5, 20.5)
    assert grid.point(0) == (0.5, 0.5)
    # x varies fastest
    assert grid.point(1) == (1.5, 0.5)
    assert grid.point(50) == (0.5, 1.5)
    np.testing.assert_array_equal(grid.points()[1019], [19.5, 20.5])


def test_grid_origin_and_nearest():
    grid = CandidateGrid(4, 3, spacing=5.0, origin=(-10.0, 100.0))
    assert grid.point(0) == (-7.5, 102.5)
    assert grid.nearest_index((-7.0, 103.0)) == 0
    assert grid.nearest_index((1e6, 1e6)) == len(grid) - 1
    with pytest.raises(ValueError, match="not a grid point"):
        grid.index_of(-7.0, 102.5)


@pytest.mark.parametrize(
    ("nx", "ny", "spacing"), [(0, 3, 1.0), (3, 3, 0.0), (3, 3, float("nan"))]
)
def test_grid_invalid(nx, ny, spacing):
    with pytest.raises(ScenarioError):
        CandidateGrid(nx, ny, spacing=spacing)


def test_measurement_matrix_entries(scene):
    grid, sensors, model = scene
    matrix = build_measurement_matrix(grid, sensors, model)
    assert matrix.shape == (len(sensors), len(grid))
    r = distances(sensors, grid.points())
    np.testing.assert_allclose(matrix, (1.0 / r) ** 3.5)
    assert not matrix.flags.writeable


def test_measurement_matrix_single_entry():
    grid = CandidateGrid(1, 1, origin=(-0.5, -0.5))
    sensors = SensorArray([[0.0, 0.0]], altitude=10.0)
    matrix = build_measurement_matrix(grid, sensors, PathlossModel(3.5, k_ref=2.0))
    assert matrix[0, 0] == pytest.approx(2.0 * 10.0**-3.5)


def test_zero_distance():
    grid = CandidateGrid(2, 2)
    sensors = SensorArray([[0.5, 0.5], [5.0, 5.0]], altitude=0.0)
    with pytest.raises(ZeroDistance):
        build_measurement_matrix(grid, sensors, PathlossModel(2.0))


def test_coincident_sensors():
    with pytest.raises(ScenarioError, match="coincide"):
        SensorArray([[1.0, 1.0], [1.0, 1.0]], altitude=2.0)


def test_per_sensor_altitudes():
    sensors = SensorArray([[0.0, 0.0], [0.0, 0.0]], altitudes=[1.0, 2.0])
    np.testing.assert_array_equal(sensors.heights, [1.0, 2.0])
    r = distances(sensors, [(0.0, 0.0)])
    np.testing.assert_allclose(r[:, 0], [1.0, 2.0])


@pytest.mark.parametrize("n", [0.0, -1.0, float("inf")])
def test_pathloss_invalid(n):
    with pytest.raises(ScenarioError):
        PathlossModel(n)


@settings(max_examples=25, deadline=None)
@given(
    a=st.floats(0.0, 10.0),
    b=st.floats(0.0, 10.0),
    seed=st.integers(0, 2**16),
)
def test_forward_linear(a, b, seed):
    grid = CandidateGrid(5, 5)
    sensors = random_sensor_array(4, extent=(0, 5, 0, 5), altitude=2.0, seed=0)
    matrix = build_measurement_matrix(grid, sensors, PathlossModel(3.0))
    rng = np.random.default_rng(seed)
    p, q = rng.uniform(0, 1, (2, len(grid)))
    np.testing.assert_allclose(
        forward(matrix, a * p + b * q),
        a * forward(matrix, p) + b * forward(matrix, q),
        rtol=1e-9,
        atol=1e-15,
    )


def test_forward_validation(scene):
    grid, sensors, model = scene
    matrix = build_measurement_matrix(grid, sensors, model)
    with pytest.raises(DimensionMismatch):
        forward(matrix, np.ones(len(grid) + 1))
    p = np.zeros(len(grid))
    p[3] = -1.0
    with pytest.raises(RssgeoError):
        forward(matrix, p)


def test_forward_offgrid_matches_on_grid(scene):
    grid, sensors, model = scene
    matrix = build_measurement_matrix(grid, sensors, model)
    p = np.zeros(len(grid))
    p[[2, 17]] = [0.5, 2.0]
    d = forward_offgrid(
        [(grid.point(2), 0.5), Emitter(grid.point(17), 2.0)], sensors, model
    )
    np.testing.assert_allclose(d, forward(matrix, p))
    np.testing.assert_array_equal(forward_offgrid([], sensors, model), 0.0)


def test_scenario_round_trip(scene):
    grid, sensors, model = scene
    scenario = Scenario(
        grid, sensors, model, sigma_db=2.5, true_emitters=[((3.3, 4.4), 0.25)]
    )
    assert Scenario.from_dict(scenario.to_dict()) == scenario


def test_scenario_malformed():
    with pytest.raises(ScenarioError, match="Malformed"):
        Scenario.from_dict({"grid": {"nx": 3, "ny": 3}})


def test_true_power_vector(scene):
    grid, sensors, model = scene
    scenario = Scenario(
        grid, sensors, model, true_emitters=[((2.9, 1.2), 1.5), ((3.1, 0.9), 0.5)]
    )
    p = scenario.true_power_vector()
    assert p.sum() == pytest.approx(2.0)
    assert p[grid.nearest_index((3.0, 1.0))] == pytest.approx(2.0)


def test_exponent_override(scene):
    grid, sensors, model = scene
    scenario = Scenario(grid, sensors, model)
    wrong = scenario.measurement_matrix(exponent=2.5)
    r = distances(sensors, grid.points())
    np.testing.assert_allclose(wrong, r**-2.5)


def test_meander_layout():
    sensors = meander_sensor_array(30, altitude=10.0)
    assert len(sensors) == 30
    assert np.all(sensors.heights == 10.0)
    assert np.all((sensors.positions[:, 0] > 0) & (sensors.positions[:, 0] < 50))
    assert np.all((sensors.positions[:, 1] > 0) & (sensors.positions[:, 1] < 50))
    # The path turns around at the end of the first row
    assert sensors.positions[5, 0] == pytest.approx(sensors.positions[6, 0])


def test_random_layout_seeded():
    a = random_sensor_array(10, seed=3)
    assert a == random_sensor_array(10, seed=3)
    assert a != random_sensor_array(10, seed=4)


@pytest.mark.parametrize(
    "position", [(float("nan"), 1.0), (1.0, float("inf")), (-float("inf"), 0.0)]
)
def test_emitter_position_finite(position):
    with pytest.raises(ScenarioError, match="finite"):
        Emitter(position, 1.0)


def test_sensor_digest():
    a = random_sensor_array(10, seed=3)
    assert a.digest() == random_sensor_array(10, seed=3).digest()
    assert len(a.digest()) == 64
    assert a.digest() != random_sensor_array(10, seed=4).digest()
    lifted = SensorArray(a.positions, altitude=a.altitude + 1.0)
    assert lifted.digest() != a.digest()
