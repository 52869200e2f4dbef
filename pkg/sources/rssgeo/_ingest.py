r"""
Measured-data pipeline: fast-fading removal, RSS normalization and regression of the
pathloss exponent and shadowing level.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, Final, Literal

import numpy as np
import regex
import scipy.signal
from numpy.typing import ArrayLike, NDArray

from ._errors import (
    CollinearDegenerate,
    DimensionMismatch,
    EmptyStream,
    InsufficientPoints,
    NonpositiveRss,
    RssgeoError,
    ZeroDistance,
)
from ._noise import ETA, as_generator
from ._workers import ordered_map

__all__ = [
    "RssSampleStream",
    "FadingFilter",
    "PathlossFit",
    "SensorReadings",
    "design_fading_filter",
    "smooth_samples",
    "remove_fast_fading",
    "remove_fast_fading_all",
    "normalize_rss",
    "fit_pathloss",
    "synthesize_streams",
    "read_stream_csv",
    "read_combined_csv",
    "read_distance_csv",
]

logger = logging.getLogger(__name__)

DEFAULT_RIPPLE_DB: Final = 0.5
DEFAULT_CUTOFF_RATIO: Final = 0.01
DEFAULT_TRANSIENT_TIME_CONSTANTS: Final = 5.0

_SENSOR_NAME: Final = regex.compile(r"^(?:sensor|rx|node)?[_\-]?(?P<id>[\p{L}\p{N}]+)$")


@dataclasses.dataclass(frozen=True, eq=False)
class RssSampleStream:
    """Linear power samples taken at one sensor."""

    sensor_id: str
    sample_rate: float
    samples: NDArray[np.float64]

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sample_rate) and self.sample_rate > 0):
            msg = f"Sample rate must be > 0, got {self.sample_rate!r}."
            raise RssgeoError(msg)
        samples = np.array(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(samples)) or np.any(samples < 0):
            msg = f"Samples of sensor {self.sensor_id!r} must be finite and >= 0."
            raise RssgeoError(msg)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclasses.dataclass(frozen=True, slots=True)
class FadingFilter:
    r"""
    Low-pass Chebyshev type I filter and tail reduction used to strip fast fading.

    Parameters
    ----------
    order
        Filter order.
    ripple_db
        Passband ripple in dB.
    cutoff_ratio
        Cutoff frequency as a fraction of the sample rate.
    transient_time_constants
        Filter time constants of output discarded as start-up transient.
    reducer
        How the remaining filtered samples are reduced to one value.
    decimation
        Keep every ``decimation``-th filtered sample before reducing.
    """

    order: int = 1
    ripple_db: float = DEFAULT_RIPPLE_DB
    cutoff_ratio: float = DEFAULT_CUTOFF_RATIO
    transient_time_constants: float = DEFAULT_TRANSIENT_TIME_CONSTANTS
    reducer: Literal["mean", "median"] = "mean"
    decimation: int = 1

    def __post_init__(self) -> None:
        if self.order < 1:
            msg = f"Filter order must be >= 1, got {self.order}."
            raise RssgeoError(msg)
        if not self.ripple_db > 0:
            msg = f"Passband ripple must be > 0 dB, got {self.ripple_db}."
            raise RssgeoError(msg)
        if not 0 < self.cutoff_ratio < 0.5:  # noqa: PLR2004
            msg = f"Cutoff ratio must lie in (0, 0.5), got {self.cutoff_ratio}."
            raise RssgeoError(msg)
        if self.transient_time_constants < 0:
            msg = "Transient discard must be >= 0 time constants."
            raise RssgeoError(msg)
        if self.reducer not in {"mean", "median"}:
            msg = f"Unknown reducer {self.reducer!r}, expected 'mean' or 'median'."
            raise RssgeoError(msg)
        if self.decimation < 1:
            msg = f"Decimation must be >= 1, got {self.decimation}."
            raise RssgeoError(msg)


def design_fading_filter(
    params: FadingFilter, sample_rate: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    r"""
    Transfer function coefficients ``(b, a)`` of the fading filter, scaled to unit DC
    gain.

    Examples
    --------
    >>> b, a = design_fading_filter(FadingFilter(), 1000.0)
    >>> round(float(b.sum() / a.sum()), 12)
    1.0
    """
    b, a = scipy.signal.cheby1(
        params.order,
        params.ripple_db,
        params.cutoff_ratio * sample_rate,
        btype="lowpass",
        fs=sample_rate,
    )
    b = b * (a.sum() / b.sum())
    return b, a


def _transient_samples(a: NDArray[np.float64], time_constants: float) -> int:
    pole = float(np.max(np.abs(np.roots(a)))) if len(a) > 1 else 0.0
    if pole <= 0:
        return 0
    tau = -1.0 / math.log(pole)
    return math.ceil(time_constants * tau)


def smooth_samples(
    samples: ArrayLike, sample_rate: float, params: FadingFilter | None = None
) -> NDArray[np.float64]:
    """Filtered samples, including the start-up transient."""
    params = params or FadingFilter()
    b, a = design_fading_filter(params, sample_rate)
    return scipy.signal.lfilter(b, a, np.asarray(samples, dtype=np.float64))


def remove_fast_fading(
    stream: RssSampleStream, params: FadingFilter | None = None
) -> float:
    r"""
    Representative RSS of a sensor: filter, drop the transient, decimate and reduce.

    When the stream is shorter than the transient, the last filtered sample is used.

    Raises
    ------
    EmptyStream
        If the stream holds no samples.
    """
    params = params or FadingFilter()
    if len(stream) == 0:
        msg = f"Stream of sensor {stream.sensor_id!r} is empty."
        raise EmptyStream(msg)
    b, a = design_fading_filter(params, stream.sample_rate)
    filtered = scipy.signal.lfilter(b, a, stream.samples)
    skip = _transient_samples(a, params.transient_time_constants)
    tail = filtered[skip :: params.decimation]
    if len(tail) == 0:
        logger.warning(
            "Stream of sensor %r (%d samples) is shorter than its %d-sample transient",
            stream.sensor_id,
            len(stream),
            skip,
        )
        tail = filtered[-1:]
    reduce = np.median if params.reducer == "median" else np.mean
    return float(reduce(tail))


def remove_fast_fading_all(
    streams: Iterable[RssSampleStream],
    params: FadingFilter | None = None,
    *,
    workers: int | None = None,
) -> NDArray[np.float64]:
    """Representative RSS of every stream, in input order."""
    values = ordered_map(
        lambda s: remove_fast_fading(s, params), list(streams), workers=workers
    )
    return np.array(values, dtype=np.float64)


def normalize_rss(rss: ArrayLike, distances: ArrayLike) -> NDArray[np.float64]:
    r"""
    Divide every RSS value by the one received at the nearest sensor.

    Examples
    --------
    >>> normalize_rss([4.0, 1.0], [5.0, 20.0]).tolist()
    [1.0, 0.25]
    """
    rss = np.asarray(rss, dtype=np.float64).reshape(-1)
    distances = np.asarray(distances, dtype=np.float64).reshape(-1)
    if rss.shape != distances.shape:
        msg = f"Got {len(rss)} RSS values for {len(distances)} distances."
        raise DimensionMismatch(msg)
    if len(rss) == 0:
        msg = "Nothing to normalize."
        raise InsufficientPoints(msg)
    if np.any(~(rss > 0)):
        msg = f"RSS values must be > 0, got {rss[~(rss > 0)][0]!r}."
        raise NonpositiveRss(msg)
    return rss / rss[int(np.argmin(distances))]


@dataclasses.dataclass(frozen=True, slots=True)
class PathlossFit:
    r"""
    Log-distance regression result.

    Attributes
    ----------
    n_hat
        Estimated pathloss exponent.
    sigma_db_hat
        Standard deviation of the dB residuals.
    k_hat
        Fitted power at the reference distance.
    count
        Number of points in the fit.
    """

    n_hat: float
    sigma_db_hat: float
    k_hat: float
    count: int
    r0: float = 1.0

    def __post_init__(self) -> None:
        if self.sigma_db_hat < 0 or self.count < 2:  # noqa: PLR2004
            msg = f"Invalid pathloss fit {self}."
            raise RssgeoError(msg)

    def to_dict(self) -> dict[str, Any]:
        return {
            "exponent": self.n_hat,
            "sigma_db": self.sigma_db_hat,
            "reference_power": self.k_hat,
            "reference_distance_m": self.r0,
            "count": self.count,
        }


def fit_pathloss(
    distances: ArrayLike, rss: ArrayLike, *, r0: float = 1.0
) -> PathlossFit:
    r"""
    Least-squares fit of ``10 log10(rss) = 10 log10(k) - 10 n log10(distance / r0)``.

    The residual spread uses ``count - 2`` degrees of freedom and is zero for two
    points.

    Raises
    ------
    InsufficientPoints
        With fewer than two points.
    CollinearDegenerate
        If all distances are equal.
    """
    distances = np.asarray(distances, dtype=np.float64).reshape(-1)
    rss = np.asarray(rss, dtype=np.float64).reshape(-1)
    if distances.shape != rss.shape:
        msg = f"Got {len(rss)} RSS values for {len(distances)} distances."
        raise DimensionMismatch(msg)
    count = len(distances)
    if count < 2:  # noqa: PLR2004
        msg = f"A pathloss fit needs at least 2 points, got {count}."
        raise InsufficientPoints(msg)
    if np.any(~(rss > 0)):
        msg = "RSS values must be > 0 for a log-domain fit."
        raise NonpositiveRss(msg)
    if np.any(~(distances > 0)):
        msg = "Distances must be > 0 for a log-domain fit."
        raise ZeroDistance(msg)
    if np.ptp(distances) == 0:
        msg = f"All {count} points lie at distance {distances[0]} m."
        raise CollinearDegenerate(msg)

    dist_db = -10.0 * np.log10(distances / r0)
    rss_db = 10.0 * np.log10(rss)
    slope, intercept = np.polyfit(dist_db, rss_db, 1)
    residuals = rss_db - (slope * dist_db + intercept)
    dof = count - 2
    sigma = math.sqrt(float(residuals @ residuals) / dof) if dof > 0 else 0.0
    logger.debug("Fitted n=%.4f, sigma=%.4f dB from %d points", slope, sigma, count)
    return PathlossFit(
        n_hat=float(slope),
        sigma_db_hat=sigma,
        k_hat=float(10.0 ** (intercept / 10.0)),
        count=count,
        r0=r0,
    )


def synthesize_streams(  # noqa: PLR0913
    distances: Sequence[float],
    *,
    exponent: float,
    sigma_db: float,
    sample_rate: float = 1000.0,
    samples: int = 4000,
    r0: float = 1.0,
    k_ref: float = 1.0,
    trend_depth: float = 0.02,
    tone_ratio: float = 0.4,
    tone_depth: float = 0.5,
    seed: int = 0,
) -> list[RssSampleStream]:
    r"""
    Synthetic sensor streams around a lognormally shadowed distance trend.

    Each stream is ``level * (1 + trend_depth * sin(slow) + tone_depth * sin(fast))``
    where ``fast`` runs at ``tone_ratio`` times the sample rate and ``level`` is the
    pathloss at the sensor's distance times one shadowing factor.
    """
    if not 0 <= trend_depth + tone_depth < 1:
        msg = "Trend and tone depths must keep the samples positive."
        raise RssgeoError(msg)
    rng = as_generator(seed)
    distances = np.asarray(distances, dtype=np.float64)
    levels = k_ref * (r0 / distances) ** exponent
    levels = levels * np.exp(ETA * sigma_db * rng.standard_normal(len(distances)))
    t = np.arange(samples) / sample_rate
    slow = np.sin(2 * np.pi * 0.1 * t / t[-1]) if samples > 1 else np.zeros(samples)
    fast = np.sin(2 * np.pi * tone_ratio * sample_rate * t + rng.uniform(0, 2 * np.pi))
    shape = 1.0 + trend_depth * slow + tone_depth * fast
    return [
        RssSampleStream(f"{k:02d}", sample_rate, level * shape)
        for k, level in enumerate(levels)
    ]


def _sensor_id(path: Path) -> str:
    match = _SENSOR_NAME.match(path.stem)
    return match["id"] if match else path.stem


def read_stream_csv(
    path: str | Path, *, sample_rate: float | None = None, sensor_id: str | None = None
) -> RssSampleStream:
    r"""
    Read a per-sensor CSV with header ``time_s,rss_linear``.

    The sample rate is inferred from the median time step unless given. The sensor
    id defaults to the file name without a ``sensor_`` prefix.
    """
    path = Path(path)
    table = np.atleast_1d(np.genfromtxt(path, delimiter=",", names=True))
    missing = {"time_s", "rss_linear"} - set(table.dtype.names or ())
    if missing:
        msg = f"{path}: missing column(s) {sorted(missing)}."
        raise RssgeoError(msg)
    if sample_rate is None:
        if len(table) < 2:  # noqa: PLR2004
            msg = f"{path}: cannot infer a sample rate from {len(table)} sample(s)."
            raise EmptyStream(msg)
        sample_rate = 1.0 / float(np.median(np.diff(table["time_s"])))
    return RssSampleStream(
        sensor_id or _sensor_id(path), sample_rate, np.asarray(table["rss_linear"])
    )


@dataclasses.dataclass(frozen=True, eq=False)
class SensorReadings:
    r"""
    One reduced RSS value per sensor, with the sensor's distance to the emitter and/or
    its planar position when known.
    """

    sensor_ids: tuple[str, ...]
    rss: NDArray[np.float64]
    distances: NDArray[np.float64] | None = None
    positions: NDArray[np.float64] | None = None

    def __len__(self) -> int:
        return len(self.sensor_ids)


def _read_table(path: Path) -> NDArray[Any]:
    """Headed CSV as a structured array; ``sensor_id`` stays text, the rest is float."""
    with path.open(encoding="utf-8") as fh:
        header = [name.strip() for name in fh.readline().split(",")]
    dtype = [(name, "U64" if name == "sensor_id" else "f8") for name in header]
    return np.atleast_1d(
        np.genfromtxt(
            path, delimiter=",", skip_header=1, dtype=dtype, encoding="utf-8"
        )
    )


def read_combined_csv(path: str | Path) -> SensorReadings:
    r"""
    Read a combined CSV with columns ``sensor_id``, ``rss_linear`` and at least one of
    ``distance_m`` or the pair ``x_m,y_m``.
    """
    path = Path(path)
    table = _read_table(path)
    names = set(table.dtype.names or ())
    has_positions = {"x_m", "y_m"} <= names
    if not {"sensor_id", "rss_linear"} <= names or not (
        "distance_m" in names or has_positions
    ):
        msg = (
            f"{path}: expected columns sensor_id, rss_linear and distance_m or "
            f"x_m,y_m; got {sorted(names)}."
        )
        raise RssgeoError(msg)
    return SensorReadings(
        sensor_ids=tuple(str(s) for s in table["sensor_id"]),
        rss=np.asarray(table["rss_linear"], dtype=np.float64),
        distances=(
            np.asarray(table["distance_m"], dtype=np.float64)
            if "distance_m" in names
            else None
        ),
        positions=(
            np.column_stack([table["x_m"], table["y_m"]]).astype(np.float64)
            if has_positions
            else None
        ),
    )


def read_distance_csv(path: str | Path) -> dict[str, float]:
    """Sensor-to-emitter distances from a CSV with columns ``sensor_id,distance_m``."""
    path = Path(path)
    if not path.is_file():
        msg = f"Distance file not found: {path}"
        raise FileNotFoundError(msg)
    table = _read_table(path)
    if not {"sensor_id", "distance_m"} <= set(table.dtype.names or ()):
        msg = f"{path}: expected columns sensor_id and distance_m."
        raise RssgeoError(msg)
    return {
        str(s): float(d)
        for s, d in zip(table["sensor_id"], table["distance_m"], strict=True)
    }
