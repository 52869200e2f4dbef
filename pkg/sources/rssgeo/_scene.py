r"""
Geometry of sensors and candidate emitter locations, the pathloss model, and the
noiseless forward map from reference powers to received signal strength (RSS).

Conventions
-----------
Distances are in meters throughout. The measurement matrix has one row per sensor
and one column per candidate grid point, so that ``d0 = matrix @ p0``. Grid points
are linearized with ``x`` varying fastest and 0-based column indices; the 1-based
index used in the literature is ``index + 1``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from typing import Any, Final, Self

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist, pdist

from ._errors import DimensionMismatch, RssgeoError, ScenarioError, ZeroDistance

__all__ = [
    "PathlossModel",
    "SensorArray",
    "CandidateGrid",
    "Emitter",
    "Scenario",
    "MeasurementMatrix",
    "PowerVector",
    "Point",
    "distance",
    "distances",
    "build_measurement_matrix",
    "forward",
    "forward_offgrid",
    "random_sensor_array",
    "meander_sensor_array",
]

logger = logging.getLogger(__name__)

type Point = tuple[float, float]
type MeasurementMatrix = NDArray[np.float64]
type PowerVector = NDArray[np.float64]

COINCIDENT_TOLERANCE: Final = 1e-9


def _frozen_array(values: ArrayLike, shape_tail: tuple[int, ...] = ()) -> NDArray:
    arr = np.array(values, dtype=np.float64)
    if shape_tail and (arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail):
        tail = ", ".join(map(str, shape_tail))
        msg = f"Expected an array of shape (K, {tail}), got {arr.shape}."
        raise ScenarioError(msg)
    arr.setflags(write=False)
    return arr


@dataclasses.dataclass(frozen=True, slots=True)
class PathlossModel:
    r"""
    Log-distance pathloss model ``k_ref * (r0 / r) ** n``.

    Parameters
    ----------
    n
        Pathloss exponent.
    r0
        Reference distance in meters.
    k_ref
        Received power at the reference distance (linear units).
    """

    n: float
    r0: float = 1.0
    k_ref: float = 1.0

    def __post_init__(self) -> None:
        for name in ("n", "r0", "k_ref"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                msg = (
                    f"{type(self).__name__}.{name} must be finite and > 0, "
                    f"got {value!r}."
                )
                raise ScenarioError(msg)

    def gain(self, r: ArrayLike) -> NDArray[np.float64]:
        r = np.asarray(r, dtype=np.float64)
        if np.any(r <= 0):
            msg = f"Pathloss gain is unbounded at distance {float(np.min(r))!r} m."
            raise ZeroDistance(msg)
        return self.k_ref * (self.r0 / r) ** self.n

    def with_exponent(self, n: float) -> PathlossModel:
        return dataclasses.replace(self, n=n)


@dataclasses.dataclass(frozen=True, eq=False)
class SensorArray:
    r"""
    Sensor positions in the plane and their altitude.

    Parameters
    ----------
    positions
        Planar coordinates ``(a_j, b_j)`` of shape ``(M, 2)``.
    altitude
        Common altitude ``h`` of all sensors.
    altitudes
        Optional per-sensor altitudes, overriding ``altitude``.
    """

    positions: NDArray[np.float64]
    altitude: float = 0.0
    altitudes: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        positions = _frozen_array(self.positions, (2,))
        object.__setattr__(self, "positions", positions)
        if len(positions) == 0:
            msg = "A sensor array needs at least one sensor."
            raise ScenarioError(msg)
        if not np.all(np.isfinite(positions)):
            msg = "Sensor positions must be finite."
            raise ScenarioError(msg)
        if not (math.isfinite(self.altitude) and self.altitude >= 0):
            msg = f"Sensor altitude must be finite and >= 0, got {self.altitude!r}."
            raise ScenarioError(msg)
        if self.altitudes is not None:
            altitudes = _frozen_array(self.altitudes)
            if altitudes.shape != (len(positions),) or np.any(altitudes < 0):
                msg = (
                    f"Expected {len(positions)} nonnegative per-sensor altitudes, got "
                    f"{altitudes!r}."
                )
                raise ScenarioError(msg)
            object.__setattr__(self, "altitudes", altitudes)
        if len(positions) > 1:
            gaps = pdist(self.coordinates)
            if np.min(gaps) <= COINCIDENT_TOLERANCE:
                msg = "Two or more sensors coincide (within 1e-9 m)."
                raise ScenarioError(msg)

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SensorArray):
            return NotImplemented
        return np.array_equal(self.coordinates, other.coordinates)

    def __hash__(self) -> int:
        return hash(self.coordinates.tobytes())

    @property
    def heights(self) -> NDArray[np.float64]:
        if self.altitudes is not None:
            return self.altitudes
        return np.full(len(self.positions), self.altitude)

    @property
    def coordinates(self) -> NDArray[np.float64]:
        """Three-dimensional sensor coordinates, shape ``(M, 3)``."""
        return np.column_stack([self.positions, self.heights])

    def digest(self) -> str:
        """SHA-256 of the little-endian float64 sensor coordinates."""
        data = np.ascontiguousarray(self.coordinates, dtype="<f8")
        return hashlib.sha256(data.tobytes()).hexdigest()

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "positions_m": self.positions.tolist(),
            "altitude_m": self.altitude,
        }
        if self.altitudes is not None:
            data["altitudes_m"] = self.altitudes.tolist()
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Self:
        return cls(
            np.asarray(data["positions_m"], dtype=np.float64),
            altitude=float(data.get("altitude_m", 0.0)),
            altitudes=data.get("altitudes_m"),  # type: ignore[arg-type]
        )


@dataclasses.dataclass(frozen=True, slots=True)
class CandidateGrid:
    r"""
    Rectangular grid of candidate emitter locations.

    Points sit at cell centres, ``x_i = origin[0] + (i + 0.5) * spacing`` for
    ``i = 0 .. nx - 1`` and likewise in ``y``. The column index of point ``(i, j)``
    is ``j * nx + i``.

    Examples
    --------
    >>> grid = CandidateGrid(50, 50)
    >>> grid.index_of(19.5, 20.5)
    1019
    >>> grid.point(1019)
    (19.5, 20.5)
    """

    nx: int
    ny: int
    spacing: float = 1.0
    origin: Point = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.nx < 1 or self.ny < 1:
            msg = f"Grid dimensions must be >= 1, got {self.nx}x{self.ny}."
            raise ScenarioError(msg)
        if not (math.isfinite(self.spacing) and self.spacing > 0):
            msg = f"Grid spacing must be finite and > 0, got {self.spacing!r}."
            raise ScenarioError(msg)
        origin = (float(self.origin[0]), float(self.origin[1]))
        object.__setattr__(self, "origin", origin)

    def __len__(self) -> int:
        return self.nx * self.ny

    @property
    def xs(self) -> NDArray[np.float64]:
        return self.origin[0] + (np.arange(self.nx) + 0.5) * self.spacing

    @property
    def ys(self) -> NDArray[np.float64]:
        return self.origin[1] + (np.arange(self.ny) + 0.5) * self.spacing

    def points(self) -> NDArray[np.float64]:
        """All grid points, shape ``(N, 2)``, in column order."""
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def point(self, index: int) -> Point:
        if not 0 <= index < len(self):
            msg = f"Grid index {index} out of range for {len(self)} points."
            raise IndexError(msg)
        j, i = divmod(int(index), self.nx)
        return (float(self.xs[i]), float(self.ys[j]))

    def index_of(self, x: float, y: float) -> int:
        """Index of the grid point exactly at ``(x, y)``."""
        fi = (x - self.origin[0]) / self.spacing - 0.5
        fj = (y - self.origin[1]) / self.spacing - 0.5
        i, j = round(fi), round(fj)
        if abs(fi - i) > 1e-9 or abs(fj - j) > 1e-9:
            msg = f"({x}, {y}) is not a grid point."
            raise ValueError(msg)
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            msg = f"({x}, {y}) lies outside the grid."
            raise ValueError(msg)
        return j * self.nx + i

    def nearest_index(self, point: Sequence[float]) -> int:
        u = (point[0] - self.origin[0]) / self.spacing - 0.5
        v = (point[1] - self.origin[1]) / self.spacing - 0.5
        i = int(np.clip(round(u), 0, self.nx - 1))
        j = int(np.clip(round(v), 0, self.ny - 1))
        return j * self.nx + i

    def to_dict(self) -> dict[str, Any]:
        return {
            "nx": self.nx,
            "ny": self.ny,
            "spacing_m": self.spacing,
            "origin_m": list(self.origin),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Self:
        return cls(
            int(data["nx"]),
            int(data["ny"]),
            spacing=float(data.get("spacing_m", 1.0)),
            origin=tuple(data.get("origin_m", (0.0, 0.0))),  # type: ignore[arg-type]
        )


@dataclasses.dataclass(frozen=True, slots=True)
class Emitter:
    """An emitter at an arbitrary (possibly off-grid) position."""

    position: Point
    power: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "position", (float(self.position[0]), float(self.position[1]))
        )
        if not all(math.isfinite(c) for c in self.position):
            msg = f"Emitter position must be finite, got {self.position!r}."
            raise ScenarioError(msg)
        if not (math.isfinite(self.power) and self.power >= 0):
            msg = f"Emitter power must be finite and >= 0, got {self.power!r}."
            raise ScenarioError(msg)


type EmitterLike = Emitter | tuple[Sequence[float], float]


def _as_emitters(emitters: Iterable[EmitterLike]) -> list[Emitter]:
    return [
        e
        if isinstance(e, Emitter)
        else Emitter(e[0], float(e[1]))  # type: ignore[arg-type]
        for e in emitters
    ]


@dataclasses.dataclass(frozen=True)
class Scenario:
    r"""
    Full description of an experiment: where the sensors are, where emitters may be,
    how signals attenuate, how noisy the data is, and which emitters are really there.
    """

    grid: CandidateGrid
    sensors: SensorArray
    model: PathlossModel
    sigma_db: float = 0.0
    true_emitters: tuple[Emitter, ...] = ()

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma_db) and self.sigma_db >= 0):
            msg = f"Scenario noise level must be >= 0 dB, got {self.sigma_db!r}."
            raise ScenarioError(msg)
        emitters = tuple(_as_emitters(self.true_emitters))
        object.__setattr__(self, "true_emitters", emitters)

    def measurement_matrix(self, exponent: float | None = None) -> MeasurementMatrix:
        """Measurement matrix, optionally assuming a different pathloss exponent."""
        model = self.model if exponent is None else self.model.with_exponent(exponent)
        return build_measurement_matrix(self.grid, self.sensors, model)

    def true_power_vector(self) -> PowerVector:
        """True emitters snapped to their nearest grid points."""
        p = np.zeros(len(self.grid))
        for e in self.true_emitters:
            p[self.grid.nearest_index(e.position)] += e.power
        return p

    def replace(self, **changes: Any) -> Scenario:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "grid": self.grid.to_dict(),
            "sensors": self.sensors.to_dict(),
            "model": {
                "exponent": self.model.n,
                "reference_distance_m": self.model.r0,
                "reference_power": self.model.k_ref,
            },
            "sigma_db": self.sigma_db,
            "true_emitters": [
                {"position_m": list(e.position), "power": e.power}
                for e in self.true_emitters
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Self:
        try:
            model = data["model"]
            return cls(
                grid=CandidateGrid.from_dict(data["grid"]),
                sensors=SensorArray.from_dict(data["sensors"]),
                model=PathlossModel(
                    float(model["exponent"]),
                    r0=float(model.get("reference_distance_m", 1.0)),
                    k_ref=float(model.get("reference_power", 1.0)),
                ),
                sigma_db=float(data.get("sigma_db", 0.0)),
                true_emitters=tuple(
                    Emitter(
                        e["position_m"],  # type: ignore[arg-type]
                        float(e.get("power", 1.0)),
                    )
                    for e in data.get("true_emitters", ())
                ),
            )
        except (KeyError, TypeError) as err:
            msg = f"Malformed scenario description: {err!r}"
            raise ScenarioError(msg) from err


def distance(
    sensor: Sequence[float], location: Sequence[float], altitude: float = 0.0
) -> float:
    r"""
    Three-dimensional distance from a sensor at ``altitude`` to a ground location.

    Examples
    --------
    >>> distance((3.0, 4.0), (0.0, 0.0))
    5.0
    >>> distance((0.0, 0.0), (0.0, 0.0), altitude=10.0)
    10.0
    """
    return math.sqrt(
        (sensor[0] - location[0]) ** 2 + (sensor[1] - location[1]) ** 2 + altitude**2
    )


def distances(sensors: SensorArray, locations: ArrayLike) -> NDArray[np.float64]:
    """Distances of shape ``(M, K)`` between every sensor and ground location."""
    locations = np.atleast_2d(np.asarray(locations, dtype=np.float64))
    if locations.shape[-1] != 2:  # noqa: PLR2004
        msg = f"Expected planar locations of shape (K, 2), got {locations.shape}."
        raise DimensionMismatch(msg)
    ground = np.column_stack([locations, np.zeros(len(locations))])
    return cdist(sensors.coordinates, ground)


def _gains(
    sensors: SensorArray, locations: ArrayLike, model: PathlossModel
) -> NDArray[np.float64]:
    r = distances(sensors, locations)
    if np.any(r == 0):
        j, i = np.argwhere(r == 0)[0]
        msg = f"Sensor {j} coincides with location {i}; distance is zero."
        raise ZeroDistance(msg)
    return model.gain(r)


def build_measurement_matrix(
    grid: CandidateGrid, sensors: SensorArray, model: PathlossModel
) -> MeasurementMatrix:
    r"""
    Build the ``M x N`` matrix of pathloss gains between sensors and grid points.

    Raises
    ------
    ZeroDistance
        If a grid point lies directly below a sensor at altitude zero.
    """
    matrix = _gains(sensors, grid.points(), model)
    logger.debug(
        "Built %dx%d measurement matrix (n=%g, r0=%g)",
        matrix.shape[0],
        matrix.shape[1],
        model.n,
        model.r0,
    )
    matrix.setflags(write=False)
    return matrix


def forward(matrix: MeasurementMatrix, power: ArrayLike) -> NDArray[np.float64]:
    """Noiseless data ``d0 = matrix @ power``."""
    power = np.asarray(power, dtype=np.float64)
    if power.ndim != 1 or power.shape[0] != matrix.shape[1]:
        msg = (
            f"Power vector of shape {power.shape} does not match matrix "
            f"{matrix.shape}."
        )
        raise DimensionMismatch(msg)
    if np.any(power < 0):
        msg = "Reference powers must be nonnegative."
        raise RssgeoError(msg)
    return matrix @ power


def forward_offgrid(
    emitters: Iterable[EmitterLike], sensors: SensorArray, model: PathlossModel
) -> NDArray[np.float64]:
    """Noiseless data from emitters at exact (possibly off-grid) positions."""
    emitters = _as_emitters(emitters)
    if len(emitters) == 0:
        return np.zeros(len(sensors))
    positions = np.array([e.position for e in emitters])
    powers = np.array([e.power for e in emitters])
    return _gains(sensors, positions, model) @ powers


def random_sensor_array(
    count: int,
    *,
    extent: tuple[float, float, float, float] = (0.0, 50.0, 0.0, 50.0),
    altitude: float = 10.0,
    seed: int = 0,
) -> SensorArray:
    r"""
    Sensors at uniformly random planar positions inside
    ``extent = (xmin, xmax, ymin, ymax)``.
    """
    rng = np.random.default_rng(seed)
    xmin, xmax, ymin, ymax = extent
    positions = np.column_stack(
        [rng.uniform(xmin, xmax, count), rng.uniform(ymin, ymax, count)]
    )
    return SensorArray(positions, altitude=altitude)


def meander_sensor_array(
    count: int,
    *,
    rows: int = 5,
    extent: tuple[float, float, float, float] = (0.0, 50.0, 0.0, 50.0),
    altitude: float = 10.0,
    amplitude: float = 1.0,
    period: float = 25.0,
) -> SensorArray:
    r"""
    Sensors along a serpentine flight path over ``extent = (xmin, xmax, ymin, ymax)``.

    The path sweeps ``rows`` evenly spaced lines, alternating direction, with a
    sinusoidal cross-track wobble of ``amplitude`` meters. Positions are listed in
    path order.
    """
    if count < 1 or rows < 1:
        msg = f"Need at least one sensor and one row, got {count} and {rows}."
        raise ScenarioError(msg)
    xmin, xmax, ymin, ymax = extent
    per_row = math.ceil(count / rows)
    xs = xmin + (np.arange(per_row) + 0.5) * (xmax - xmin) / per_row
    positions = []
    for k in range(rows):
        y = ymin + (k + 0.5) * (ymax - ymin) / rows
        line = xs if k % 2 == 0 else xs[::-1]
        positions.extend(
            (x, y + amplitude * math.sin(2 * math.pi * x / period)) for x in line
        )
    return SensorArray(np.array(positions[:count]), altitude=altitude)
