r"""
Lazy configurations of the reference experiments.

All share a 50 x 50 m area with a 1 m candidate grid, pathloss exponent 3.5 and
3 dB shadowing, observed by 30 sensors along a serpentine path at 10 m altitude.
"""

from typing import Any, Final

from laco.language import call

from .._experiments import ExperimentSpec
from .._scene import (
    CandidateGrid,
    Emitter,
    PathlossModel,
    Scenario,
    meander_sensor_array,
    random_sensor_array,
)
from .._solver import SolverConfig

__all__ = [
    "fig1",
    "fig2",
    "fig3",
    "fig3_geometry",
    "fig4",
    "fig5",
    "fig6",
    "field",
]

EMITTERS: Final = ((24.0, 41.0), (19.3, 20.1), (36.4, 12.8))


def _grid() -> Any:
    return call(CandidateGrid)(nx=50, ny=50, spacing=1.0)


def _model(exponent: float = 3.5) -> Any:
    return call(PathlossModel)(n=exponent, r0=1.0, k_ref=1.0)


def _scenario(
    emitters: tuple[tuple[tuple[float, float], float], ...] = tuple(
        (p, 1.0) for p in EMITTERS
    ),
    sensors: Any = None,
) -> Any:
    return call(Scenario)(
        grid=_grid(),
        sensors=(
            call(meander_sensor_array)(count=30, altitude=10.0)
            if sensors is None
            else sensors
        ),
        model=_model(),
        sigma_db=3.0,
        true_emitters=[call(Emitter)(position=p, power=w) for p, w in emitters],
    )


# Three unit emitters, 500 noisy recoveries
fig1: Final = call(ExperimentSpec)(scenario=_scenario(), trials=500)

# As fig1, but the solver assumes n = 2.5
fig2: Final = call(ExperimentSpec)(
    scenario=_scenario(), trials=500, exponent_override=2.5
)


def fig3_geometry(count: int, seed: int = 0) -> Any:
    """Scenario with ``count`` sensors at random positions, as in the sweep."""
    return _scenario(
        sensors=call(random_sensor_array)(count=count, altitude=10.0, seed=seed)
    )


# Analytic against simulated resolution over sensor counts and noise levels
fig3: Final = call(ExperimentSpec)(
    scenario=_scenario(),
    trials=10_000,
    anchor=(24.5, 41.5),
    target=(19.5, 20.5),
    sweep_counts=(10, 20, 30),
    sweep_sigmas=(1.0, 2.0, 3.0, 4.0, 5.0),
)

# Resolution field around the first emitter
fig4: Final = call(ExperimentSpec)(scenario=_scenario(), anchor=(24.0, 41.0))

# Second emitter moved next to the first
fig5: Final = call(ExperimentSpec)(
    scenario=_scenario(
        (((24.0, 41.0), 1.0), ((19.0, 36.0), 1.0), ((36.4, 12.8), 1.0))
    ),
    trials=500,
)

# Second emitter at half power
fig6: Final = call(ExperimentSpec)(
    scenario=_scenario(
        (((24.0, 41.0), 1.0), ((19.3, 20.1), 0.5), ((36.4, 12.8), 1.0))
    ),
    trials=500,
    anchor=(19.3, 20.1),
)

# Single emitter observed by 15 ground receivers
field: Final = call(ExperimentSpec)(
    scenario=call(Scenario)(
        grid=_grid(),
        sensors=call(random_sensor_array)(count=15, altitude=0.7, seed=925),
        model=_model(3.45),
        sigma_db=2.0,
        true_emitters=[call(Emitter)(position=(12.4, 17.5), power=1.0)],
    ),
    trials=1,
    solver=call(SolverConfig)(
        max_sparsity=12, band_exclusion=0.98, termination_c=0.5, sigma_db=2.0
    ),
)
