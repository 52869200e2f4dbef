r"""
Lognormal shadowing noise.

Each emitter-sensor contribution is multiplied by ``exp(ETA * R)`` with ``R`` normal,
zero mean and standard deviation ``sigma_db``, where ``ETA = ln(10) / 10``. The
moments of ``X = exp(ETA * R) - 1`` give a closed-form bound on the expected squared
residual between noisy and noiseless data, which drives solver termination.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Iterable
from typing import Final

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ._errors import RssgeoError
from ._scene import (
    EmitterLike,
    PathlossModel,
    SensorArray,
    _as_emitters,
    _gains,
    forward_offgrid,
)

__all__ = [
    "ETA",
    "RNG_IDENTITY",
    "DEFAULT_TERMINATION_C",
    "NoiseParams",
    "NoiseMoments",
    "SeedLike",
    "substream",
    "trial_normals",
    "as_generator",
    "noise_moments",
    "shadowing_factors",
    "simulate_noisy_data",
    "expected_residual_sq_bound",
    "termination_epsilon",
    "monte_carlo_residual_sq",
]

logger = logging.getLogger(__name__)

ETA: Final = math.log(10.0) / 10.0
RNG_IDENTITY: Final = "numpy.random.PCG64"
DEFAULT_TERMINATION_C: Final = 0.25

type SeedLike = int | np.random.Generator


@dataclasses.dataclass(frozen=True, slots=True)
class NoiseParams:
    sigma_db: float
    eta: float = dataclasses.field(default=ETA, init=False)

    def __post_init__(self) -> None:
        _check_sigma(self.sigma_db)

    @property
    def log_sigma(self) -> float:
        """Standard deviation of the natural log of the shadowing factor."""
        return self.eta * self.sigma_db


@dataclasses.dataclass(frozen=True, slots=True)
class NoiseMoments:
    """Mean and variance of ``exp(ETA * R) - 1``."""

    mu0: float
    sigma0_sq: float

    @property
    def bound_factor(self) -> float:
        return self.mu0**2 + self.sigma0_sq


def _check_sigma(sigma_db: float) -> None:
    if not (math.isfinite(sigma_db) and sigma_db >= 0):
        msg = f"Noise level must be finite and >= 0 dB, got {sigma_db!r}."
        raise RssgeoError(msg)


def substream(seed: int, index: int) -> np.random.Generator:
    r"""
    Independent generator for trial ``index`` under the global ``seed``.

    The stream depends only on ``(seed, index)``, so trials may run in any order or
    on any worker.
    """
    if not 0 <= seed < 2**64:
        msg = f"Seed must be a 64-bit unsigned integer, got {seed!r}."
        raise RssgeoError(msg)
    sequence = np.random.SeedSequence(seed, spawn_key=(index,))
    return np.random.Generator(np.random.PCG64(sequence))


def trial_normals(seed: int, trials: int, size: int) -> NDArray[np.float64]:
    """Standard normal draws of shape ``(trials, size)``, row ``k`` from trial ``k``."""
    if trials < 1:
        msg = f"Need at least one trial, got {trials}."
        raise RssgeoError(msg)
    return np.stack([substream(seed, k).standard_normal(size) for k in range(trials)])


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if not 0 <= seed < 2**64:
        msg = f"Seed must be a 64-bit unsigned integer, got {seed!r}."
        raise RssgeoError(msg)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def noise_moments(sigma_db: float) -> NoiseMoments:
    r"""
    Closed-form mean and variance of ``exp(ETA * R) - 1``.

    Examples
    --------
    >>> m = noise_moments(3.0)
    >>> round(m.mu0, 3), round(m.sigma0_sq, 3)
    (0.269, 0.985)
    """
    _check_sigma(sigma_db)
    s2 = (ETA * sigma_db) ** 2
    return NoiseMoments(mu0=math.expm1(s2 / 2), sigma0_sq=math.exp(s2) * math.expm1(s2))


def shadowing_factors(
    rng: np.random.Generator, shape: int | tuple[int, ...], sigma_db: float
) -> NDArray[np.float64]:
    """Independent multiplicative factors ``exp(ETA * R)``."""
    _check_sigma(sigma_db)
    return np.exp(ETA * sigma_db * rng.standard_normal(shape))


def simulate_noisy_data(
    emitters: Iterable[EmitterLike],
    sensors: SensorArray,
    model: PathlossModel,
    sigma_db: float,
    seed: SeedLike,
) -> NDArray[np.float64]:
    r"""
    Noisy RSS with one independent shadowing draw per emitter-sensor pair.

    Parameters
    ----------
    emitters
        Emitters at arbitrary positions with nonnegative power.
    sensors, model
        Geometry and pathloss model.
    sigma_db
        Shadowing standard deviation in dB; ``0`` reproduces the noiseless data.
    seed
        Integer seed or an existing generator (e.g. from :func:`substream`).
    """
    emitters = _as_emitters(emitters)
    if len(emitters) == 0:
        return np.zeros(len(sensors))
    if sigma_db == 0:
        return forward_offgrid(emitters, sensors, model)
    rng = as_generator(seed)
    gains = _gains(sensors, np.array([e.position for e in emitters]), model)
    powers = np.array([e.power for e in emitters])
    return (gains * shadowing_factors(rng, gains.shape, sigma_db)) @ powers


def expected_residual_sq_bound(d_ref: ArrayLike, sigma_db: float) -> float:
    r"""
    Upper bound ``(mu0**2 + sigma0_sq) * ||d_ref||**2`` on ``E ||d - d0||**2``.

    The bound holds with equality when a single emitter is present.
    """
    d_ref = np.asarray(d_ref, dtype=np.float64)
    if np.any(d_ref < 0):
        msg = "Reference data must be nonnegative."
        raise RssgeoError(msg)
    return noise_moments(sigma_db).bound_factor * float(d_ref @ d_ref)


def termination_epsilon(
    d: ArrayLike, sigma_db: float, c: float = DEFAULT_TERMINATION_C
) -> float:
    r"""
    Residual norm at which a greedy solver stops:
    ``c * sqrt(mu0**2 + sigma0_sq) * ||d||``.

    Examples
    --------
    >>> round(termination_epsilon([1.0], 3.0), 4)
    0.2572
    """
    if not c > 0:
        msg = f"Termination constant must be > 0, got {c!r}."
        raise RssgeoError(msg)
    norm = float(np.linalg.norm(np.asarray(d, dtype=np.float64)))
    return c * math.sqrt(noise_moments(sigma_db).bound_factor) * norm


def monte_carlo_residual_sq(
    emitters: Iterable[EmitterLike],
    sensors: SensorArray,
    model: PathlossModel,
    sigma_db: float,
    trials: int,
    seed: int,
) -> float:
    """Empirical ``E ||d - d0||**2`` over ``trials`` noise realizations."""
    emitters = _as_emitters(emitters)
    if trials < 1:
        msg = f"Need at least one trial, got {trials}."
        raise RssgeoError(msg)
    if len(emitters) == 0:
        return 0.0
    gains = _gains(sensors, np.array([e.position for e in emitters]), model)
    powers = np.array([e.power for e in emitters])
    d0 = gains @ powers
    normals = trial_normals(seed, trials, gains.size).reshape(trials, *gains.shape)
    factors = np.exp(ETA * sigma_db * normals)
    d = (gains * factors) @ powers
    logger.debug("Estimated residual over %d trials at %g dB", trials, sigma_db)
    return float(np.mean(np.sum((d - d0) ** 2, axis=-1)))
