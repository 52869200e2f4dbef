r"""
Resolution and detectability limits.

Resolution
----------
An emitter at ``q1`` is assigned to ``q1`` rather than ``q2`` when its noisy data is
more coherent with the normalized signature of ``q1``. That happens exactly when
``Q = sum_j w_j exp(ETA * R_j) > 0`` for known weights ``w``. ``Q`` is split by weight
sign into two positively weighted lognormal sums, each approximated by a single
lognormal, and ``P(Q > 0) = 1 - H(0)`` is evaluated by adaptive quadrature of the cdf
``H`` of their difference.

Detectability
-------------
An extra emitter of power ``P`` at grid index ``i`` is inconsistent with any fit of
residual at most ``epsilon`` once ``P > 2 * epsilon / ||matrix[:, i]||``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Iterable, Sequence
from typing import Any, Final, Protocol

import numpy as np
import scipy.integrate
import scipy.special
from numpy.typing import ArrayLike, NDArray

from ._errors import (
    Degenerate,
    QuadratureFailure,
    RssgeoError,
    ZeroColumn,
    ZeroSignature,
)
from ._noise import ETA, trial_normals
from ._scene import (
    CandidateGrid,
    MeasurementMatrix,
    PathlossModel,
    Point,
    SensorArray,
    distances,
    forward_offgrid,
)
from ._workers import ordered_map

__all__ = [
    "DEGENERACY_TOLERANCE",
    "ResolutionQuery",
    "LognormalFit",
    "LognormalSumFit",
    "ResolutionField",
    "ClearanceReport",
    "normalized_signature",
    "discriminant_weights",
    "fenton_wilkinson",
    "fit_lognormal_sum",
    "difference_cdf",
    "prob_correct_assignment",
    "is_resolvable",
    "monte_carlo_resolution",
    "resolution_map",
    "detectability_threshold",
    "clearance_map",
]

logger = logging.getLogger(__name__)

DEGENERACY_TOLERANCE: Final = 1e-12
QUADRATURE_TOLERANCE: Final = 1e-8
QUADRATURE_BUDGET: Final = 100_000
# Evaluations per subinterval of the 21-point Gauss-Kronrod rule, both halves
_EVALUATIONS_PER_INTERVAL: Final = 42
# Half-width of the integration window in standard deviations
_WINDOW: Final = 40.0


@dataclasses.dataclass(frozen=True, eq=False)
class ResolutionQuery:
    """Can an emitter at ``q1`` be told apart from one at ``q2``?"""

    q1: Point
    q2: Point
    sensors: SensorArray
    model: PathlossModel
    sigma_db: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "q1", (float(self.q1[0]), float(self.q1[1])))
        object.__setattr__(self, "q2", (float(self.q2[0]), float(self.q2[1])))
        if not (math.isfinite(self.sigma_db) and self.sigma_db >= 0):
            msg = f"Noise level must be >= 0 dB, got {self.sigma_db!r}."
            raise RssgeoError(msg)


@dataclasses.dataclass(frozen=True, slots=True)
class LognormalFit:
    r"""
    Lognormal ``exp(N(mu, sigma**2))`` approximating a positively weighted sum.

    ``empty`` marks a sum without terms, which is identically zero.
    """

    mu: float
    sigma: float
    empty: bool = False

    def __post_init__(self) -> None:
        if not self.empty and not (self.sigma > 0 and math.isfinite(self.mu)):
            msg = f"A lognormal fit needs sigma > 0 and finite mu, got {self}."
            raise RssgeoError(msg)

    @classmethod
    def vacuous(cls) -> LognormalFit:
        return cls(mu=-math.inf, sigma=0.0, empty=True)

    @property
    def mean(self) -> float:
        return 0.0 if self.empty else math.exp(self.mu + self.sigma**2 / 2)

    @property
    def variance(self) -> float:
        if self.empty:
            return 0.0
        return math.expm1(self.sigma**2) * math.exp(2 * self.mu + self.sigma**2)


class LognormalSumFit(Protocol):
    """Strategy fitting one lognormal to ``sum_j w_j exp(ETA * N(0, sigma_db**2))``."""

    def __call__(
        self, weights: NDArray[np.float64], sigma_db: float
    ) -> LognormalFit: ...


def fenton_wilkinson(weights: NDArray[np.float64], sigma_db: float) -> LognormalFit:
    r"""
    Two-moment matching: the fitted lognormal has the exact mean and variance of the
    sum of independent terms.

    Examples
    --------
    >>> fit = fenton_wilkinson(np.array([3.0]), 3.0)
    >>> round(fit.mu - math.log(3.0), 12), round(fit.sigma - ETA * 3.0, 12)
    (0.0, 0.0)
    """
    s2 = (ETA * sigma_db) ** 2
    mean = float(np.sum(weights)) * math.exp(s2 / 2)
    variance = float(np.sum(weights**2)) * math.exp(s2) * math.expm1(s2)
    sigma_sq = math.log1p(variance / mean**2)
    return LognormalFit(mu=math.log(mean) - sigma_sq / 2, sigma=math.sqrt(sigma_sq))


def fit_lognormal_sum(
    weights: ArrayLike, sigma_db: float, *, method: LognormalSumFit = fenton_wilkinson
) -> LognormalFit:
    r"""
    Fit a single lognormal to a positively weighted sum of shadowing factors.

    An empty ``weights`` yields :meth:`LognormalFit.vacuous`.
    """
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(weights) == 0:
        return LognormalFit.vacuous()
    if np.any(weights <= 0):
        msg = "Lognormal sum weights must be positive."
        raise RssgeoError(msg)
    if not sigma_db > 0:
        msg = "A noiseless sum is deterministic and has no lognormal fit."
        raise RssgeoError(msg)
    return method(weights, sigma_db)


def normalized_signature(
    location: Sequence[float], sensors: SensorArray, model: PathlossModel
) -> NDArray[np.float64]:
    """Unit-norm noiseless data of an emitter at ``location``."""
    d = forward_offgrid([(location, 1.0)], sensors, model)
    norm = float(np.linalg.norm(d))
    if norm == 0 or not math.isfinite(norm):
        msg = f"Location {tuple(location)} produces no usable signature."
        raise ZeroSignature(msg)
    return d / norm


def discriminant_weights(query: ResolutionQuery) -> NDArray[np.float64]:
    r"""
    Weights ``w_j = (b1_j - b2_j) / r_1j**n`` of the decision variable ``Q``.

    Raises
    ------
    Degenerate
        If the two normalized signatures coincide.
    """
    b1 = normalized_signature(query.q1, query.sensors, query.model)
    b2 = normalized_signature(query.q2, query.sensors, query.model)
    c = b1 - b2
    if np.linalg.norm(c) < DEGENERACY_TOLERANCE:
        msg = f"Locations {query.q1} and {query.q2} are indistinguishable."
        raise Degenerate(msg)
    r1 = distances(query.sensors, [query.q1])[:, 0]
    return c / r1**query.model.n


def _lognormal_cdf(z: float, fit: LognormalFit) -> float:
    if z <= 0:
        return 0.0
    return float(scipy.special.ndtr((math.log(z) - fit.mu) / fit.sigma))


def difference_cdf(
    x: float,
    fit_pos: LognormalFit,
    fit_neg: LognormalFit,
    *,
    epsabs: float = QUADRATURE_TOLERANCE,
    max_evaluations: int = QUADRATURE_BUDGET,
) -> float:
    r"""
    Cdf ``H(x) = P(X - Y <= x)`` of the difference of two independent lognormals.

    The integral over the density of ``Y`` is taken in ``t = log(y)``, which removes
    the endpoint singularity at ``y = 0``.

    Raises
    ------
    QuadratureFailure
        If the absolute tolerance is not reached within ``max_evaluations``.
    """
    if fit_neg.empty:
        return _lognormal_cdf(x, fit_pos) if not fit_pos.empty else float(x >= 0)
    if fit_pos.empty:
        # X = 0, so H(x) = P(Y >= -x)
        return 1.0 - _lognormal_cdf(-x, fit_neg)

    lower = fit_neg.mu - _WINDOW * fit_neg.sigma
    upper = fit_neg.mu + _WINDOW * fit_neg.sigma
    if x < 0:
        lower = max(lower, math.log(-x))
    if lower >= upper:
        return 0.0

    def integrand(t: float) -> float:
        y = math.exp(t)
        density = math.exp(-0.5 * ((t - fit_neg.mu) / fit_neg.sigma) ** 2) / (
            fit_neg.sigma * math.sqrt(2 * math.pi)
        )
        return _lognormal_cdf(x + y, fit_pos) * density

    limit = max(1, max_evaluations // _EVALUATIONS_PER_INTERVAL)
    result = scipy.integrate.quad(
        integrand, lower, upper, epsabs=epsabs, epsrel=0.0, limit=limit, full_output=1
    )
    value, error, info = result[0], result[1], result[2]
    converged = len(result) == 3 and error <= epsabs  # noqa: PLR2004
    if not converged or info["neval"] > max_evaluations:
        msg = (
            f"Quadrature of H({x}) did not converge: estimate {value!r}, error "
            f"{error:.3g}, {info['neval']} evaluations."
        )
        raise QuadratureFailure(msg)
    return min(1.0, max(0.0, value))


def prob_correct_assignment(
    query: ResolutionQuery,
    *,
    method: LognormalSumFit = fenton_wilkinson,
    epsabs: float = QUADRATURE_TOLERANCE,
    max_evaluations: int = QUADRATURE_BUDGET,
) -> float:
    r"""
    Approximate probability ``P(Q > 0)`` that an emitter at ``q1`` is assigned to
    ``q1`` rather than ``q2``.

    Indistinguishable locations give ``0.5``.
    """
    try:
        w = discriminant_weights(query)
    except Degenerate:
        return 0.5
    if query.sigma_db == 0:
        total = float(np.sum(w))
        return 1.0 if total > 0 else (0.0 if total < 0 else 0.5)

    positive, negative = w[w > 0], -w[w < 0]
    if len(negative) == 0:
        return 1.0
    if len(positive) == 0:
        return 0.0
    fit_pos = fit_lognormal_sum(positive, query.sigma_db, method=method)
    fit_neg = fit_lognormal_sum(negative, query.sigma_db, method=method)
    p = 1.0 - difference_cdf(
        0.0, fit_pos, fit_neg, epsabs=epsabs, max_evaluations=max_evaluations
    )
    if p < 0.5:  # noqa: PLR2004
        logger.warning(
            "Resolution probability %.4f below 0.5 for q1=%s, q2=%s",
            p,
            query.q1,
            query.q2,
        )
    return p


def is_resolvable(query: ResolutionQuery, p_min: float = 0.95) -> bool:
    return prob_correct_assignment(query) > p_min


def monte_carlo_resolution(query: ResolutionQuery, trials: int, seed: int) -> float:
    r"""
    Fraction of noisy realizations from ``q1`` that are strictly more coherent with
    the signature of ``q1`` than with that of ``q2``.

    Indistinguishable locations give ``0.5``.
    """
    if trials < 1:
        msg = f"Need at least one trial, got {trials}."
        raise RssgeoError(msg)
    b1 = normalized_signature(query.q1, query.sensors, query.model)
    b2 = normalized_signature(query.q2, query.sensors, query.model)
    if np.linalg.norm(b1 - b2) < DEGENERACY_TOLERANCE:
        return 0.5
    d1 = forward_offgrid([(query.q1, 1.0)], query.sensors, query.model)
    normals = trial_normals(seed, trials, len(d1))
    d = d1 * np.exp(ETA * query.sigma_db * normals)
    wins = d @ b1 > d @ b2
    return float(np.mean(wins))


@dataclasses.dataclass(frozen=True, eq=False)
class ResolutionField:
    r"""
    ``P(Q > 0)`` for a fixed anchor ``q1`` and every grid point as ``q2``.

    ``values`` follows the grid's column order; cells whose quadrature failed are NaN.
    ``sensor_digest`` identifies the sensor layout (see :meth:`SensorArray.digest`).
    """

    anchor: Point
    grid: CandidateGrid
    values: NDArray[np.float64]
    sigma_db: float = 0.0
    sensor_digest: str = ""
    quadrature_tolerance: float = QUADRATURE_TOLERANCE

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.shape != (len(self.grid),):
            msg = f"Expected {len(self.grid)} values, got {values.shape}."
            raise RssgeoError(msg)
        finite = values[np.isfinite(values)]
        if np.any((finite < 0) | (finite > 1)):
            msg = "Resolution probabilities must lie in [0, 1]."
            raise RssgeoError(msg)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def image(self) -> NDArray[np.float64]:
        """Values as an ``(ny, nx)`` array, row ``j`` at ``y_j``."""
        return self.values.reshape(self.grid.ny, self.grid.nx)

    def at(self, point: Sequence[float]) -> float:
        return float(self.values[self.grid.nearest_index(point)])

    def rows(self) -> NDArray[np.float64]:
        """``(x, y, value)`` triples, one per grid point."""
        return np.column_stack([self.grid.points(), self.values])

    def to_dict(self) -> dict[str, Any]:
        return {
            "anchor_m": list(self.anchor),
            "sigma_db": self.sigma_db,
            "grid": self.grid.to_dict(),
            "sensor_layout_sha256": self.sensor_digest,
            "quadrature_tolerance": self.quadrature_tolerance,
            "failed_cells": int(np.count_nonzero(np.isnan(self.values))),
        }


def _contains(grid: CandidateGrid, point: Sequence[float]) -> bool:
    x0, y0 = grid.origin
    return (
        x0 <= point[0] <= x0 + grid.nx * grid.spacing
        and y0 <= point[1] <= y0 + grid.ny * grid.spacing
    )


def resolution_map(
    anchor: Sequence[float],
    grid: CandidateGrid,
    sensors: SensorArray,
    model: PathlossModel,
    sigma_db: float,
    *,
    workers: int | None = None,
) -> ResolutionField:
    r"""
    Evaluate :func:`prob_correct_assignment` with ``q1 = anchor`` and every grid
    point as ``q2``.

    The cell containing the anchor is ``0.5`` by convention. Cells whose quadrature
    fails are NaN and logged.
    """
    anchor = (float(anchor[0]), float(anchor[1]))

    def evaluate(q2: NDArray[np.float64]) -> float:
        query = ResolutionQuery(anchor, (q2[0], q2[1]), sensors, model, sigma_db)
        try:
            return prob_correct_assignment(query)
        except QuadratureFailure as err:
            logger.warning("Resolution map cell %s: %s", tuple(q2), err)
            return math.nan

    values = np.array(ordered_map(evaluate, grid.points(), workers=workers))
    if _contains(grid, anchor):
        values[grid.nearest_index(anchor)] = 0.5
    return ResolutionField(
        anchor=anchor,
        grid=grid,
        values=values,
        sigma_db=sigma_db,
        sensor_digest=sensors.digest(),
    )


@dataclasses.dataclass(frozen=True, eq=False)
class ClearanceReport:
    r"""
    Detectability thresholds over a region of grid indices.

    Attributes
    ----------
    region
        Grid indices considered.
    thresholds
        Minimum detectable power per index.
    maximum
        Weakest power detectable everywhere in the region.
    argmax
        Grid index attaining ``maximum``.
    """

    region: tuple[int, ...]
    thresholds: NDArray[np.float64]
    epsilon: float
    maximum: float
    argmax: int

    def to_dict(self, grid: CandidateGrid | None = None) -> dict[str, Any]:
        data: dict[str, Any] = {
            "epsilon": self.epsilon,
            "maximum": self.maximum,
            "argmax": self.argmax,
            "region_size": len(self.region),
        }
        if grid is not None:
            data["argmax_m"] = list(grid.point(self.argmax))
        return data

    def image(self, grid: CandidateGrid) -> NDArray[np.float64]:
        """Thresholds as an ``(ny, nx)`` array, NaN outside the region."""
        values = np.full(len(grid), np.nan)
        values[list(self.region)] = self.thresholds
        return values.reshape(grid.ny, grid.nx)


def _column_norms(
    matrix: MeasurementMatrix, indices: Sequence[int], ord: float
) -> NDArray[np.float64]:
    norms = np.linalg.norm(np.asarray(matrix)[:, list(indices)], ord=ord, axis=0)
    if np.any(norms == 0):
        msg = f"Column {indices[int(np.argmin(norms))]} is zero."
        raise ZeroColumn(msg)
    return norms


def _check_epsilon(epsilon: float) -> None:
    if not (math.isfinite(epsilon) and epsilon >= 0):
        msg = f"Tolerance epsilon must be finite and >= 0, got {epsilon!r}."
        raise RssgeoError(msg)


def detectability_threshold(
    matrix: MeasurementMatrix, index: int, epsilon: float, *, ord: float = 2
) -> float:
    r"""
    Power ``2 * epsilon / ||matrix[:, index]||`` above which an extra emitter at
    ``index`` cannot hide in a fit of residual ``epsilon``.

    ``ord`` selects the norm (``2`` for Euclidean, ``np.inf`` for supremum).
    """
    _check_epsilon(epsilon)
    return float(2.0 * epsilon / _column_norms(matrix, [index], ord)[0])


def clearance_map(
    matrix: MeasurementMatrix,
    region: Iterable[int],
    epsilon: float,
    *,
    ord: float = 2,
) -> ClearanceReport:
    """Detectability thresholds over ``region`` and their maximum."""
    _check_epsilon(epsilon)
    region = tuple(int(i) for i in region)
    if len(region) == 0:
        msg = "Clearance region must be nonempty."
        raise RssgeoError(msg)
    thresholds = 2.0 * epsilon / _column_norms(matrix, region, ord)
    thresholds.setflags(write=False)
    best = int(np.argmax(thresholds))
    return ClearanceReport(
        region=region,
        thresholds=thresholds,
        epsilon=epsilon,
        maximum=float(thresholds[best]),
        argmax=region[best],
    )
