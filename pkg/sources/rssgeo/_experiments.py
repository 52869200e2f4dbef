r"""
Seeded experiment runners behind the command line.

Every runner takes an :class:`ExperimentSpec`, draws trial ``k`` from
``substream(spec.seed, k)`` and aggregates by trial index, so results do not depend
on how trials are spread over workers.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Sequence
from pathlib import Path
from typing import Any, Final

import numpy as np
from numpy.typing import NDArray

from ._analysis import (
    ClearanceReport,
    ResolutionField,
    ResolutionQuery,
    clearance_map,
    monte_carlo_resolution,
    prob_correct_assignment,
    resolution_map,
)
from ._errors import QuadratureFailure, RssgeoError
from ._ingest import (
    FadingFilter,
    PathlossFit,
    SensorReadings,
    fit_pathloss,
    normalize_rss,
    read_combined_csv,
    read_distance_csv,
    read_stream_csv,
    remove_fast_fading_all,
)
from ._noise import simulate_noisy_data, substream, termination_epsilon
from ._scene import (
    CandidateGrid,
    Point,
    Scenario,
    SensorArray,
    forward_offgrid,
    random_sensor_array,
)
from ._solver import SolverConfig, SparseSolution, bloomp_solve
from ._workers import ordered_map

__all__ = [
    "DEFAULT_SEED",
    "DEFAULT_TRIALS",
    "DEFAULT_MATCH_RADIUS",
    "ExperimentSpec",
    "RecoveryRun",
    "ResolutionRow",
    "run_simulate_recover",
    "run_resolution_sweep",
    "run_resolution_field",
    "run_clearance",
    "run_fit",
    "run_locate",
]

logger = logging.getLogger(__name__)

DEFAULT_SEED: Final = 42
DEFAULT_TRIALS: Final = 500
DEFAULT_MATCH_RADIUS: Final = 5.0
DISTANCES_FILE: Final = "distances.csv"


def _point(value: Sequence[float] | None) -> Point | None:
    return None if value is None else (float(value[0]), float(value[1]))


@dataclasses.dataclass(frozen=True)
class ExperimentSpec:
    r"""
    A scenario plus the parameters of one command run.

    Parameters
    ----------
    scenario
        Geometry, pathloss model, noise level and true emitters.
    trials
        Number of Monte Carlo trials.
    seed
        Global seed; trial ``k`` uses the spawn key ``(seed, k)``.
    anchor
        Resolution anchor ``q1`` and reference location for clearance reports.
    target
        Second location ``q2`` of a resolution sweep.
    sweep_counts, sweep_sigmas
        Sensor counts and noise levels of a resolution sweep.
    region
        Clearance region ``(xmin, xmax, ymin, ymax)``; the whole grid when ``None``.
    epsilon
        Absolute residual tolerance for the solver and the clearance threshold.
    exponent_override
        Pathloss exponent assumed by the solver instead of the true one.
    solver
        Solver parameters. Defaults to a :class:`SolverConfig` at the scenario's
        noise level.
    match_radius
        Distance within which a recovered index is credited to a true emitter.
    """

    scenario: Scenario
    trials: int = DEFAULT_TRIALS
    seed: int = DEFAULT_SEED
    anchor: Point | None = None
    target: Point | None = None
    sweep_counts: tuple[int, ...] = ()
    sweep_sigmas: tuple[float, ...] = ()
    region: tuple[float, float, float, float] | None = None
    epsilon: float | None = None
    exponent_override: float | None = None
    solver: SolverConfig | None = None
    match_radius: float = DEFAULT_MATCH_RADIUS

    def __post_init__(self) -> None:
        if self.trials < 1:
            msg = f"Trial count must be >= 1, got {self.trials}."
            raise RssgeoError(msg)
        if not 0 <= self.seed < 2**64:
            msg = f"Seed must be a 64-bit unsigned integer, got {self.seed}."
            raise RssgeoError(msg)
        object.__setattr__(self, "anchor", _point(self.anchor))
        object.__setattr__(self, "target", _point(self.target))
        object.__setattr__(
            self, "sweep_counts", tuple(int(m) for m in self.sweep_counts)
        )
        object.__setattr__(
            self, "sweep_sigmas", tuple(float(s) for s in self.sweep_sigmas)
        )
        if self.region is not None:
            object.__setattr__(self, "region", tuple(float(v) for v in self.region))
        if self.epsilon is not None and not self.epsilon >= 0:
            msg = f"epsilon must be >= 0, got {self.epsilon}."
            raise RssgeoError(msg)

    def replace(self, **changes: Any) -> ExperimentSpec:
        """Copy with the non-``None`` entries of ``changes`` applied."""
        return dataclasses.replace(
            self, **{k: v for k, v in changes.items() if v is not None}
        )

    def solver_config(self) -> SolverConfig:
        config = self.solver or SolverConfig(sigma_db=self.scenario.sigma_db)
        if self.epsilon is not None:
            config = dataclasses.replace(config, epsilon=self.epsilon)
        return config

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario.to_dict(),
            "trials": self.trials,
            "seed": self.seed,
            "anchor": self.anchor,
            "target": self.target,
            "sweep_counts": list(self.sweep_counts),
            "sweep_sigmas": list(self.sweep_sigmas),
            "region": self.region,
            "epsilon": self.epsilon,
            "exponent_override": self.exponent_override,
            "solver": self.solver_config().to_dict(),
            "match_radius": self.match_radius,
        }


@dataclasses.dataclass(frozen=True, eq=False)
class RecoveryRun:
    r"""
    Aggregate of repeated noisy recoveries.

    Attributes
    ----------
    mean_power
        Recovered power per grid point averaged over completed trials.
    emitter_power
        Mean recovered power credited to each true emitter.
    detection_rate
        Fraction of completed trials crediting any power to each true emitter.
    solutions
        Per-trial solutions; ``None`` where the trial failed.
    failed
        Indices of failed trials.
    """

    grid: CandidateGrid
    mean_power: NDArray[np.float64]
    emitter_power: NDArray[np.float64]
    detection_rate: NDArray[np.float64]
    solutions: tuple[SparseSolution | None, ...]
    failed: tuple[int, ...]

    @property
    def completed(self) -> int:
        return len(self.solutions) - len(self.failed)

    def image(self) -> NDArray[np.float64]:
        return self.mean_power.reshape(self.grid.ny, self.grid.nx)

    def to_dict(self) -> dict[str, Any]:
        return {
            "trials": len(self.solutions),
            "completed": self.completed,
            "failed_trials": list(self.failed),
            "emitter_power": self.emitter_power.tolist(),
            "detection_rate": self.detection_rate.tolist(),
        }


def _credit(
    solution: SparseSolution,
    grid: CandidateGrid,
    emitters: NDArray[np.float64],
    radius: float,
) -> NDArray[np.float64]:
    """Recovered power assigned to each true emitter (nearest within ``radius``)."""
    credit = np.zeros(len(emitters))
    for index, power in zip(solution.support, solution.powers, strict=True):
        gaps = np.linalg.norm(emitters - np.array(grid.point(index)), axis=1)
        nearest = int(np.argmin(gaps))
        if gaps[nearest] <= radius:
            credit[nearest] += power
    return credit


def run_simulate_recover(
    spec: ExperimentSpec, *, workers: int | None = None
) -> RecoveryRun:
    r"""
    Simulate noisy data from the true emitters and recover them with
    :func:`bloomp_solve`, once per trial.

    A trial that raises is logged, recorded in ``failed`` and left out of the
    averages.
    """
    scenario = spec.scenario
    if len(scenario.true_emitters) == 0:
        msg = "Simulation needs at least one true emitter."
        raise RssgeoError(msg)
    matrix = scenario.measurement_matrix(spec.exponent_override)
    config = spec.solver_config()
    grid = scenario.grid

    def trial(k: int) -> SparseSolution | None:
        try:
            d = simulate_noisy_data(
                scenario.true_emitters,
                scenario.sensors,
                scenario.model,
                scenario.sigma_db,
                substream(spec.seed, k),
            )
            return bloomp_solve(matrix, d, config, grid)
        except RssgeoError as err:
            logger.warning("Trial %d failed: %s", k, err)
            return None

    logger.info("Running %d recovery trials on %d grid points", spec.trials, len(grid))
    solutions = tuple(ordered_map(trial, range(spec.trials), workers=workers))
    failed = tuple(k for k, s in enumerate(solutions) if s is None)
    done = [s for s in solutions if s is not None]

    positions = np.array([e.position for e in scenario.true_emitters])
    total = np.zeros(len(grid))
    credit = np.zeros(len(positions))
    detected = np.zeros(len(positions))
    for solution in done:
        total += solution.power_vector(len(grid))
        c = _credit(solution, grid, positions, spec.match_radius)
        credit += c
        detected += c > 0
    count = max(1, len(done))
    if failed:
        logger.warning("%d of %d trials failed: %s", len(failed), spec.trials, failed)
    return RecoveryRun(
        grid=grid,
        mean_power=total / count,
        emitter_power=credit / count,
        detection_rate=detected / count,
        solutions=solutions,
        failed=failed,
    )


@dataclasses.dataclass(frozen=True, slots=True)
class ResolutionRow:
    """One cell of a resolution sweep; ``p_analytic`` is NaN when flagged."""

    sigma_db: float
    sensors: int
    p_analytic: float
    p_monte_carlo: float
    flag: str = ""

    def as_tuple(self) -> tuple[float, int, float, float, str]:
        return dataclasses.astuple(self)  # type: ignore[return-value]


def _extent(grid: CandidateGrid) -> tuple[float, float, float, float]:
    x0, y0 = grid.origin
    return (x0, x0 + grid.nx * grid.spacing, y0, y0 + grid.ny * grid.spacing)


def _sweep_sensors(spec: ExperimentSpec, count: int) -> SensorArray:
    return random_sensor_array(
        count,
        extent=_extent(spec.scenario.grid),
        altitude=float(np.mean(spec.scenario.sensors.heights)),
        seed=spec.seed + count,
    )


def run_resolution_sweep(
    spec: ExperimentSpec, *, workers: int | None = None
) -> list[ResolutionRow]:
    r"""
    Analytic and simulated ``P(Q > 0)`` for ``anchor`` against ``target`` over every
    noise level and sensor count of the sweep.

    Sensor layouts are random in the grid's extent at the scenario's mean altitude.
    When no sweep counts are given the scenario's own sensors are used.
    """
    if spec.anchor is None or spec.target is None:
        msg = "A resolution sweep needs both an anchor and a target."
        raise RssgeoError(msg)
    sigmas = spec.sweep_sigmas or (spec.scenario.sigma_db,)
    layouts = (
        [(m, _sweep_sensors(spec, m)) for m in spec.sweep_counts]
        if spec.sweep_counts
        else [(len(spec.scenario.sensors), spec.scenario.sensors)]
    )
    cells = [(sigma, m, sensors) for m, sensors in layouts for sigma in sigmas]

    def evaluate(cell: tuple[float, int, SensorArray]) -> ResolutionRow:
        sigma, m, sensors = cell
        query = ResolutionQuery(
            spec.anchor, spec.target, sensors, spec.scenario.model, sigma
        )
        flag = ""
        try:
            p_analytic = prob_correct_assignment(query)
        except QuadratureFailure as err:
            logger.warning("Sweep cell sigma=%g, M=%d: %s", sigma, m, err)
            p_analytic, flag = math.nan, "quadrature-failure"
        p_mc = monte_carlo_resolution(query, spec.trials, spec.seed)
        return ResolutionRow(sigma, m, p_analytic, p_mc, flag)

    logger.info(
        "Resolution sweep over %d cells, %d trials each", len(cells), spec.trials
    )
    return ordered_map(evaluate, cells, workers=workers)


def run_resolution_field(
    spec: ExperimentSpec, *, workers: int | None = None
) -> ResolutionField:
    """Resolution probability around ``spec.anchor`` over the scenario grid."""
    if spec.anchor is None:
        msg = "A resolution field needs an anchor."
        raise RssgeoError(msg)
    scenario = spec.scenario
    return resolution_map(
        spec.anchor,
        scenario.grid,
        scenario.sensors,
        scenario.model,
        scenario.sigma_db,
        workers=workers,
    )


def _region_indices(
    grid: CandidateGrid, region: tuple[float, float, float, float] | None
) -> list[int]:
    points = grid.points()
    if region is None:
        return list(range(len(grid)))
    xmin, xmax, ymin, ymax = region
    inside = (
        (points[:, 0] >= xmin)
        & (points[:, 0] <= xmax)
        & (points[:, 1] >= ymin)
        & (points[:, 1] <= ymax)
    )
    return np.flatnonzero(inside).tolist()


def run_clearance(spec: ExperimentSpec) -> tuple[ClearanceReport, dict[str, Any]]:
    r"""
    Detectability thresholds over ``spec.region``.

    The tolerance is ``spec.epsilon`` or, without one, the termination tolerance of
    the noiseless data of the true emitters. Returns the report and a summary that
    also covers the anchor's grid point when an anchor is given.
    """
    scenario = spec.scenario
    matrix = scenario.measurement_matrix(spec.exponent_override)
    epsilon = spec.epsilon
    if epsilon is None:
        d0 = forward_offgrid(scenario.true_emitters, scenario.sensors, scenario.model)
        config = spec.solver_config()
        epsilon = termination_epsilon(d0, scenario.sigma_db, config.termination_c)
    region = _region_indices(scenario.grid, spec.region)
    if not region:
        msg = f"Clearance region {spec.region} contains no grid points."
        raise RssgeoError(msg)
    report = clearance_map(matrix, region, epsilon)
    summary = report.to_dict(scenario.grid)
    summary["sigma_db"] = scenario.sigma_db
    summary["sensor_layout_sha256"] = scenario.sensors.digest()
    if spec.anchor is not None:
        index = scenario.grid.nearest_index(spec.anchor)
        norm = float(np.linalg.norm(matrix[:, index]))
        summary["anchor"] = {
            "index": index,
            "point_m": list(scenario.grid.point(index)),
            "column_norm": norm,
            "threshold": 2.0 * epsilon / norm,
        }
    return report, summary


def _readings_from(path: Path, params: FadingFilter | None) -> SensorReadings:
    if path.is_dir():
        lookup = read_distance_csv(path / DISTANCES_FILE)
        files = sorted(p for p in path.glob("*.csv") if p.name != DISTANCES_FILE)
        streams = [read_stream_csv(p) for p in files]
        unknown = [s.sensor_id for s in streams if s.sensor_id not in lookup]
        if unknown:
            msg = f"{path}: no distance for sensor(s) {unknown}."
            raise RssgeoError(msg)
        return SensorReadings(
            sensor_ids=tuple(s.sensor_id for s in streams),
            rss=remove_fast_fading_all(streams, params),
            distances=np.array([lookup[s.sensor_id] for s in streams]),
        )
    return read_combined_csv(path)


def run_fit(
    path: str | Path, *, params: FadingFilter | None = None, r0: float = 1.0
) -> PathlossFit:
    r"""
    Fit the pathloss model to measured data.

    ``path`` is either a combined CSV (``sensor_id,distance_m,rss_linear``) or a
    directory of per-sensor stream CSVs next to a ``distances.csv``.
    """
    path = Path(path)
    if not path.exists():
        msg = f"Measurement data not found: {path}"
        raise FileNotFoundError(msg)
    readings = _readings_from(path, params)
    if readings.distances is None:
        msg = f"{path}: distances are required for a pathloss fit."
        raise RssgeoError(msg)
    normalized = normalize_rss(readings.rss, readings.distances)
    fit = fit_pathloss(readings.distances, normalized, r0=r0)
    logger.info(
        "Fitted n=%.4f sigma=%.4f dB to %d sensors",
        fit.n_hat,
        fit.sigma_db_hat,
        fit.count,
    )
    return fit


def run_locate(spec: ExperimentSpec, path: str | Path) -> SparseSolution:
    r"""
    Reconstruct emitters from one measured RSS vector.

    The CSV holds ``sensor_id,x_m,y_m,rss_linear``. Sensors take the mean altitude
    of the scenario's sensors; the scenario supplies grid and pathloss model. Data is
    normalized to the sensor with the largest RSS.
    """
    path = Path(path)
    if not path.is_file():
        msg = f"Measurement file not found: {path}"
        raise FileNotFoundError(msg)
    readings = read_combined_csv(path)
    if readings.positions is None:
        msg = f"{path}: sensor positions x_m,y_m are required to locate emitters."
        raise RssgeoError(msg)
    scenario = spec.scenario
    altitude = float(np.mean(scenario.sensors.heights))
    sensors = SensorArray(readings.positions, altitude=altitude)
    located = scenario.replace(sensors=sensors)
    matrix = located.measurement_matrix(spec.exponent_override)
    rss = np.asarray(readings.rss, dtype=np.float64)
    if np.any(~(rss > 0)):
        msg = f"{path}: RSS values must be > 0."
        raise RssgeoError(msg)
    d = rss / rss.max()
    return bloomp_solve(matrix, d, spec.solver_config(), located.grid)
