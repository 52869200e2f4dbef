r"""
Sparse recovery of emitter powers from aggregate RSS data.

Two greedy solvers are provided. :func:`omp_solve` is orthogonal matching pursuit
with nonnegative powers. :func:`bloomp_solve` adds band exclusion (a new column may
not be too coherent with any selected column) and a local optimization sweep that
moves each selected column within its own coherence band when that improves the fit.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
from collections.abc import Sequence
from typing import Any, Final

import numpy as np
import scipy.optimize
from numpy.typing import ArrayLike, NDArray

from ._errors import (
    DegenerateSupport,
    DimensionMismatch,
    NoAdmissibleColumn,
    RssgeoError,
    ZeroColumn,
    ZeroVector,
)
from ._noise import DEFAULT_TERMINATION_C, termination_epsilon
from ._scene import CandidateGrid, MeasurementMatrix, PowerVector

__all__ = [
    "DEFAULT_MAX_SPARSITY",
    "DEFAULT_BAND_EXCLUSION",
    "Termination",
    "SolverConfig",
    "SparseSolution",
    "coherence",
    "mutual_coherence",
    "column_coherences",
    "coherence_band",
    "nnls_on_support",
    "omp_solve",
    "bloomp_solve",
]

logger = logging.getLogger(__name__)

DEFAULT_MAX_SPARSITY: Final = 12
DEFAULT_BAND_EXCLUSION: Final = 0.98
DEFAULT_NNLS_TOLERANCE: Final = 1e-10
DEFAULT_RESIDUAL_FLOOR: Final = 1e-10
DEFAULT_CANDIDATES: Final = 20
DEFAULT_LOCAL_PASSES: Final = 8
PRUNE_TOLERANCE: Final = 1e-9
STALL_TOLERANCE: Final = 1e-12
RANK_TOLERANCE: Final = 1e-8


class Termination(enum.StrEnum):
    """Reason a greedy solver stopped."""

    NOISE_FLOOR = "noise-floor"
    MAX_SPARSITY = "max-sparsity"
    STALL = "stall"


@dataclasses.dataclass(frozen=True, slots=True)
class SolverConfig:
    r"""
    Parameters of the greedy solvers.

    Parameters
    ----------
    max_sparsity
        Maximum number of emitters (iterations).
    band_exclusion
        Coherence threshold ``beta`` above which columns are in each other's band.
    termination_c
        Constant ``C`` of the noise-driven stopping rule.
    sigma_db
        Noise level assumed by the stopping rule.
    epsilon
        Absolute residual tolerance. Overrides the noise-driven rule when given.
    local_optimization
        Whether :func:`bloomp_solve` runs the band-local sweep.
    candidates
        Number of best-correlated admissible columns :func:`bloomp_solve` refits per
        iteration before keeping the one with the smallest residual.
    local_passes
        Maximum number of band-local sweeps per iteration.
    nnls_tolerance
        Tolerance of the dual feasibility check of the restricted NNLS.
    residual_floor
        Residual, relative to ``||d||``, below which the fit counts as exact.
    """

    max_sparsity: int = DEFAULT_MAX_SPARSITY
    band_exclusion: float = DEFAULT_BAND_EXCLUSION
    termination_c: float = DEFAULT_TERMINATION_C
    sigma_db: float = 0.0
    epsilon: float | None = None
    local_optimization: bool = True
    candidates: int = DEFAULT_CANDIDATES
    local_passes: int = DEFAULT_LOCAL_PASSES
    nnls_tolerance: float = DEFAULT_NNLS_TOLERANCE
    residual_floor: float = DEFAULT_RESIDUAL_FLOOR

    def __post_init__(self) -> None:
        if self.max_sparsity < 1:
            msg = f"max_sparsity must be >= 1, got {self.max_sparsity}."
            raise RssgeoError(msg)
        if not 0 <= self.band_exclusion < 1:
            msg = f"band_exclusion must lie in [0, 1), got {self.band_exclusion}."
            raise RssgeoError(msg)
        if not self.termination_c > 0:
            msg = f"termination_c must be > 0, got {self.termination_c}."
            raise RssgeoError(msg)
        if self.epsilon is not None and not self.epsilon >= 0:
            msg = f"epsilon must be >= 0, got {self.epsilon}."
            raise RssgeoError(msg)
        if self.candidates < 1:
            msg = f"candidates must be >= 1, got {self.candidates}."
            raise RssgeoError(msg)
        if self.local_passes < 1:
            msg = f"local_passes must be >= 1, got {self.local_passes}."
            raise RssgeoError(msg)

    def tolerance(self, d: NDArray[np.float64]) -> float:
        """Residual norm at which iteration stops for data ``d``."""
        if self.epsilon is not None:
            eps = self.epsilon
        else:
            eps = termination_epsilon(d, self.sigma_db, self.termination_c)
        return max(eps, self.residual_floor * float(np.linalg.norm(d)))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True, eq=False)
class SparseSolution:
    r"""
    Result of a greedy solve.

    Attributes
    ----------
    support
        Grid (column) indices with positive recovered power, in insertion order.
    powers
        Recovered reference power per support index.
    residual_norm
        ``||d - matrix @ p||``.
    iterations
        Number of accepted greedy selections.
    terminated_by
        Why the solver stopped.
    residual_history
        Residual norm before the first selection and after every accepted one.
    """

    support: tuple[int, ...]
    powers: NDArray[np.float64]
    residual_norm: float
    iterations: int
    terminated_by: Termination
    residual_history: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        powers = np.array(self.powers, dtype=np.float64).reshape(-1)
        if len(powers) != len(self.support):
            msg = f"Got {len(powers)} powers for a support of {len(self.support)}."
            raise DimensionMismatch(msg)
        if len(set(self.support)) != len(self.support):
            msg = f"Support indices must be distinct, got {self.support}."
            raise RssgeoError(msg)
        if np.any(powers < 0):
            msg = "Recovered powers must be nonnegative."
            raise RssgeoError(msg)
        powers.setflags(write=False)
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "support", tuple(int(i) for i in self.support))
        object.__setattr__(
            self, "residual_history", tuple(float(r) for r in self.residual_history)
        )

    def __len__(self) -> int:
        return len(self.support)

    def power_vector(self, n: int) -> PowerVector:
        p = np.zeros(n)
        p[list(self.support)] = self.powers
        return p

    def to_dict(
        self, grid: CandidateGrid | None = None, config: SolverConfig | None = None
    ) -> dict[str, Any]:
        data: dict[str, Any] = {
            "support": list(self.support),
            "powers": self.powers.tolist(),
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "terminated_by": str(self.terminated_by),
            "residual_history": list(self.residual_history),
        }
        if grid is not None:
            data["coordinates_m"] = [list(grid.point(i)) for i in self.support]
        if config is not None:
            data["config"] = config.to_dict()
        return data


def coherence(x: ArrayLike, y: ArrayLike) -> float:
    r"""
    Normalized absolute inner product ``|x . y| / (||x|| ||y||)``.

    Examples
    --------
    >>> round(coherence([1.0, 0.0], [1.0, 1.0]), 5)
    0.70711
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        msg = f"Cannot compare vectors of shape {x.shape} and {y.shape}."
        raise DimensionMismatch(msg)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        msg = "Coherence is undefined for a zero vector."
        raise ZeroVector(msg)
    return float(min(1.0, abs(x @ y) / (nx * ny)))


def _normalized(matrix: MeasurementMatrix) -> tuple[NDArray, NDArray]:
    norms = np.linalg.norm(matrix, axis=0)
    if np.any(norms == 0):
        msg = f"Matrix column {int(np.argmin(norms))} is zero."
        raise ZeroColumn(msg)
    return matrix / norms, norms


def mutual_coherence(matrix: MeasurementMatrix, *, block: int = 1024) -> float:
    """Largest coherence between two distinct columns of ``matrix``."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] < 2:  # noqa: PLR2004
        msg = f"Mutual coherence needs at least two columns, got {matrix.shape}."
        raise DimensionMismatch(msg)
    unit, _ = _normalized(matrix)
    best = 0.0
    for start in range(0, unit.shape[1], block):
        gram = np.abs(unit[:, start : start + block].T @ unit)
        rows = np.arange(gram.shape[0])
        gram[rows, start + rows] = 0.0
        best = max(best, float(gram.max()))
    return min(best, 1.0)


def column_coherences(matrix: MeasurementMatrix, index: int) -> NDArray[np.float64]:
    """Coherence of column ``index`` with every column."""
    unit, _ = _normalized(np.asarray(matrix, dtype=np.float64))
    return np.minimum(np.abs(unit.T @ unit[:, index]), 1.0)


def coherence_band(
    matrix: MeasurementMatrix, index: int, beta: float = DEFAULT_BAND_EXCLUSION
) -> NDArray[np.intp]:
    """Indices whose column coherence with ``index`` exceeds ``beta``."""
    return np.flatnonzero(column_coherences(matrix, index) > beta)


class _Bands:
    """Cached coherence rows of a column-normalized matrix."""

    def __init__(self, unit: NDArray[np.float64], beta: float) -> None:
        self.unit = unit
        self.beta = beta
        self._rows: dict[int, NDArray[np.float64]] = {}

    def coherences(self, index: int) -> NDArray[np.float64]:
        row = self._rows.get(index)
        if row is None:
            row = np.abs(self.unit.T @ self.unit[:, index])
            self._rows[index] = row
        return row

    def band(self, index: int) -> NDArray[np.intp]:
        return np.flatnonzero(self.coherences(index) > self.beta)

    def excluded(self, support: Sequence[int]) -> NDArray[np.bool_]:
        mask = np.zeros(self.unit.shape[1], dtype=bool)
        for s in support:
            mask |= self.coherences(s) > self.beta
        return mask


def nnls_on_support(
    matrix: MeasurementMatrix,
    d: ArrayLike,
    support: Sequence[int],
    *,
    tolerance: float = DEFAULT_NNLS_TOLERANCE,
) -> tuple[NDArray[np.float64], float]:
    r"""
    Nonnegative least squares restricted to the columns in ``support``.

    The problem is solved on unit-norm columns and unit-norm data, so the result does
    not depend on the scale of the pathloss gains.

    Returns
    -------
    powers
        Nonnegative powers, one per support index.
    residual_norm
        ``||matrix[:, support] @ powers - d||``.

    Raises
    ------
    DegenerateSupport
        If the restricted columns are numerically rank-deficient. ``err.index`` is
        the newest support index.
    """
    d = np.asarray(d, dtype=np.float64)
    support = list(support)
    if len(support) == 0:
        msg = "Support must be nonempty."
        raise RssgeoError(msg)
    columns = np.asarray(matrix[:, support], dtype=np.float64)
    unit, norms = _normalized(columns)
    singular = np.linalg.svd(unit, compute_uv=False)
    if len(support) > len(d) or singular[-1] <= RANK_TOLERANCE * singular[0]:
        msg = f"Columns {support} are rank-deficient."
        raise DegenerateSupport(msg, index=support[-1])

    scale = float(np.linalg.norm(d))
    if scale == 0:
        return np.zeros(len(support)), 0.0
    x, _ = scipy.optimize.nnls(unit, d / scale)

    # Dual feasibility at clamped entries
    gradient = unit.T @ (d / scale - unit @ x)
    violated = (x == 0) & (gradient > tolerance)
    if np.any(violated):
        logger.debug(
            "NNLS dual feasibility violated on %s (max %.3g)",
            [support[i] for i in np.flatnonzero(violated)],
            float(gradient[violated].max()),
        )

    powers = x * scale / norms
    residual = float(np.linalg.norm(columns @ powers - d))
    return powers, residual


def omp_solve(
    matrix: MeasurementMatrix, d: ArrayLike, config: SolverConfig | None = None
) -> SparseSolution:
    r"""
    Orthogonal matching pursuit with nonnegative powers.

    Each iteration adds the column with the largest absolute correlation with the
    current residual (normalized by column norm, lowest index on ties) and refits all
    powers by NNLS. Powers that collapse to zero are pruned from the support.
    Iteration stops once the residual reaches :meth:`SolverConfig.tolerance`, after
    ``max_sparsity`` selections, or when a step no longer reduces the residual.
    """
    return _pursue(matrix, d, config or SolverConfig(), banded=False)


def bloomp_solve(
    matrix: MeasurementMatrix,
    d: ArrayLike,
    config: SolverConfig | None = None,
    grid: CandidateGrid | None = None,
) -> SparseSolution:
    r"""
    Band-excluded, locally optimized orthogonal matching pursuit.

    Like :func:`omp_solve`, but a new column must have coherence at most
    ``config.band_exclusion`` with every selected column and a positive correlation
    with the residual. The ``config.candidates`` best-correlated admissible columns
    are each refit and the one leaving the smallest residual is kept. Afterwards
    support indices are moved within their own bands while that strictly reduces the
    residual.

    Parameters
    ----------
    grid
        Only used to report locations in debug logs.
    """
    return _pursue(matrix, d, config or SolverConfig(), banded=True, grid=grid)


def _pursue(  # noqa: C901, PLR0912, PLR0915
    matrix: MeasurementMatrix,
    d: ArrayLike,
    config: SolverConfig,
    *,
    banded: bool,
    grid: CandidateGrid | None = None,
) -> SparseSolution:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1 or d.shape[0] != matrix.shape[0]:
        msg = f"Data of shape {d.shape} does not match matrix {matrix.shape}."
        raise DimensionMismatch(msg)
    if not np.all(np.isfinite(d)):
        msg = "Data must be finite."
        raise RssgeoError(msg)

    unit, _ = _normalized(np.asarray(matrix, dtype=np.float64))
    bands = _Bands(unit, config.band_exclusion)
    tolerance = config.tolerance(d)
    shortlist = config.candidates if banded else 1

    support: list[int] = []
    powers = np.zeros(0)
    residual_norm = float(np.linalg.norm(d))
    history = [residual_norm]
    rejected: set[int] = set()
    iterations = 0

    while True:
        if residual_norm <= tolerance:
            terminated = Termination.NOISE_FLOOR
            break
        if len(support) >= config.max_sparsity or iterations >= config.max_sparsity:
            terminated = Termination.MAX_SPARSITY
            break

        residual = d - matrix[:, support] @ powers if support else d
        try:
            shortlisted = _shortlist(
                unit, residual, support, rejected, bands if banded else None, shortlist
            )
        except NoAdmissibleColumn as err:
            logger.debug("Stopping: %s", err)
            terminated = Termination.STALL
            break

        best: tuple[list[int], NDArray[np.float64], float] | None = None
        for column in shortlisted:
            candidate = [*support, column]
            try:
                new_powers, new_norm = nnls_on_support(
                    matrix, d, candidate, tolerance=config.nnls_tolerance
                )
            except DegenerateSupport as err:
                logger.debug("Dropping column %s: %s", err.index, err)
                rejected.add(column if err.index is None else err.index)
                continue
            if best is None or new_norm < best[2]:
                best = (candidate, new_powers, new_norm)
        if best is None:
            continue

        candidate, new_powers, _ = best
        newest = candidate[-1]
        candidate, new_powers = _prune(candidate, new_powers)
        if newest not in candidate:
            logger.debug("Column %d refit to zero power", newest)
            rejected.add(newest)
            continue
        new_norm = _residual_norm(matrix, d, candidate, new_powers)

        if banded and config.local_optimization:
            candidate, new_powers, new_norm = _local_optimize(
                matrix, d, candidate, new_powers, new_norm, bands, config
            )

        if new_norm >= residual_norm * (1.0 - STALL_TOLERANCE):
            terminated = Termination.STALL
            break

        support, powers, residual_norm = candidate, new_powers, new_norm
        history.append(residual_norm)
        iterations += 1
        logger.debug(
            "Iteration %d: support=%s residual=%.6g tolerance=%.6g",
            iterations,
            support if grid is None else [grid.point(i) for i in support],
            residual_norm,
            tolerance,
        )

    solution = SparseSolution(
        support=tuple(support),
        powers=powers,
        residual_norm=residual_norm,
        iterations=iterations,
        terminated_by=terminated,
        residual_history=tuple(history),
    )
    logger.debug("Solver stopped (%s) after %d iterations", terminated, iterations)
    return solution


def _shortlist(
    unit: NDArray[np.float64],
    residual: NDArray[np.float64],
    support: Sequence[int],
    rejected: set[int],
    bands: _Bands | None,
    size: int,
) -> list[int]:
    """
    Columns worth refitting next, best score first, lowest index on ties.

    Without ``bands`` the score is ``|correlation|``. With ``bands`` only positive
    correlations count and columns in the band of a selected column are skipped.
    """
    correlation = unit.T @ residual
    scores = np.abs(correlation) if bands is None else np.maximum(correlation, 0.0)
    admissible = np.ones(len(scores), dtype=bool)
    admissible[list(support)] = False
    admissible[list(rejected)] = False
    if bands is not None:
        admissible &= ~bands.excluded(support)
    admissible &= scores > 0
    if not np.any(admissible):
        msg = f"No admissible column left besides support {list(support)}."
        raise NoAdmissibleColumn(msg)
    indices = np.flatnonzero(admissible)
    order = np.argsort(-scores[indices], kind="stable")
    return indices[order[:size]].tolist()


def _prune(
    support: Sequence[int], powers: NDArray[np.float64]
) -> tuple[list[int], NDArray[np.float64]]:
    """Drop support entries whose power is negligible next to the largest."""
    if len(powers) == 0:
        return list(support), powers
    keep = powers > PRUNE_TOLERANCE * float(powers.max())
    return [s for s, k in zip(support, keep, strict=True) if k], powers[keep]


def _residual_norm(
    matrix: MeasurementMatrix,
    d: NDArray[np.float64],
    support: Sequence[int],
    powers: NDArray[np.float64],
) -> float:
    if len(support) == 0:
        return float(np.linalg.norm(d))
    return float(np.linalg.norm(d - matrix[:, list(support)] @ powers))


def _local_optimize(
    matrix: MeasurementMatrix,
    d: NDArray[np.float64],
    support: list[int],
    powers: NDArray[np.float64],
    residual_norm: float,
    bands: _Bands,
    config: SolverConfig,
) -> tuple[list[int], NDArray[np.float64], float]:
    r"""
    Move support entries within their own coherence bands.

    Each pass visits the support in insertion order and replaces an entry by a band
    member whenever the refit strictly lowers the residual. Passes repeat until one
    makes no move or ``config.local_passes`` is reached. Entries refit to negligible
    power are pruned at the end.
    """
    support = list(support)
    for _ in range(config.local_passes):
        moved = False
        for position in range(len(support)):
            current = support[position]
            others = support[:position] + support[position + 1 :]
            blocked = bands.excluded(others) if others else None
            for index in bands.band(current):
                index = int(index)
                if index == current or index in others:
                    continue
                if blocked is not None and blocked[index]:
                    continue
                trial = [*others[:position], index, *others[position:]]
                try:
                    trial_powers, trial_norm = nnls_on_support(
                        matrix, d, trial, tolerance=config.nnls_tolerance
                    )
                except DegenerateSupport:
                    continue
                if trial_norm < residual_norm and not math.isclose(
                    trial_norm, residual_norm, rel_tol=STALL_TOLERANCE, abs_tol=0.0
                ):
                    support, powers, residual_norm = trial, trial_powers, trial_norm
                    moved = True
        if not moved:
            break
    support, powers = _prune(support, powers)
    return support, powers, _residual_norm(matrix, d, support, powers)
