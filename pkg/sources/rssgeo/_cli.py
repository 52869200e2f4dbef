r"""
CLI
===
A command line interface for the rssgeo experiments.

Every command writes its artifacts and a ``manifest.json`` to ``--out`` and prints
the written paths. Exit codes: ``0`` on success, ``1`` when some trials or cells
failed, ``2`` for missing files and invalid input.
"""

import argparse
import inspect
import json
import logging
import os
import pathlib
import sys
import types
import warnings
from collections.abc import Callable, Sequence
from functools import partial
from typing import Any, Final

import regex

from ._errors import RssgeoError

logger = logging.getLogger(__name__)

LOGLEVEL_ENV: Final = "RSSGEO_LOGLEVEL"
CONFIGS_MODULE: Final = "rssgeo.scenarios.configs"

_NUMBER: Final = r"\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*"
_PAIR: Final = regex.compile(rf"^{_NUMBER},{_NUMBER}$")
_QUAD: Final = regex.compile(rf"^{_NUMBER},{_NUMBER},{_NUMBER},{_NUMBER}$")
_CONFIG_NAME: Final = regex.compile(r"^[\p{L}_]\w*$")


class cli:
    """Decorator for CLI commands with automatic argument binding."""

    registry: dict[str, Callable[..., Any]] = {}

    def __new__(cls, fn: Callable[..., Any]) -> Callable[..., int]:
        command = fn.__name__.replace("_", "-")
        cls.registry[command] = fn
        return partial(cls.main, command)

    @classmethod
    def main(
        cls, command: str | None = None, argv: Sequence[str] | None = None
    ) -> int:
        """Configure argparse and execute registered commands."""
        level = os.environ.get(LOGLEVEL_ENV, "WARNING").upper()
        if level not in logging.getLevelNamesMapping():
            sys.stderr.write(f"error: invalid {LOGLEVEL_ENV} {level!r}\n")
            return 2
        logging.basicConfig(
            level=level, format="%(levelname)s %(name)s: %(message)s"
        )
        parser = argparse.ArgumentParser(prog="rssgeo", description="rssgeo CLI")
        subparsers = parser.add_subparsers(title="commands", required=True)

        for name, func in cls.registry.items():
            if command is not None and command != name:
                continue
            cmd_parser = subparsers.add_parser(name, help=func.__doc__)
            cls._add_parser(cmd_parser, func)
            cmd_parser.set_defaults(_command=func)

        argv = list(sys.argv[1:] if argv is None else argv)
        if command is not None:
            argv.insert(0, command)

        args = parser.parse_args(argv)
        cmd_args, cmd_kwargs = cls._bind_arguments(args)
        try:
            status = args._command(*cmd_args, **cmd_kwargs)
        except FileNotFoundError as err:
            sys.stderr.write(f"error: {err}\n")
            return 2
        except RssgeoError as err:
            sys.stderr.write(f"error: {type(err).__name__}: {err}\n")
            return 2
        return int(status or 0)

    @staticmethod
    def _get_arg_name(param) -> str:
        return param.name.replace("_", "-")

    @staticmethod
    def _get_arg_type(param) -> Any:
        arg_type = param.annotation if param.annotation != param.empty else str
        if isinstance(arg_type, types.UnionType):
            members = [t for t in arg_type.__args__ if t is not type(None)]
            arg_type = members[0] if len(members) == 1 else str
        if not isinstance(arg_type, type):
            warnings.warn(f"Invalid type annotation: {arg_type}", stacklevel=2)
            arg_type = str
        return arg_type

    @staticmethod
    def _get_arg_default(param) -> Any:
        return param.default if param.default is not param.empty else None

    @classmethod
    def _add_parser(
        cls, parser: argparse.ArgumentParser, func: Callable[..., Any]
    ) -> None:
        """Add arguments to parser based on function signature."""
        sig = inspect.signature(func)
        args_pos = []
        args_flag = []
        for param in sig.parameters.values():
            arg_type = cls._get_arg_type(param)
            match param.kind:
                case param.POSITIONAL_ONLY:
                    args_pos.append(
                        partial(
                            parser.add_argument,
                            param.name,
                            metavar=param.name.upper(),
                            type=arg_type,
                            help=f"{param.name} {arg_type.__name__.lower()}",
                        )
                    )
                case param.KEYWORD_ONLY if arg_type is bool:
                    args_flag.append(
                        partial(
                            parser.add_argument,
                            f"--{cls._get_arg_name(param)}",
                            dest=param.name,
                            action="store_false"
                            if param.default is True
                            else "store_true",
                            default=bool(cls._get_arg_default(param)),
                        )
                    )
                case param.KEYWORD_ONLY:
                    args_flag.append(
                        partial(
                            parser.add_argument,
                            f"--{cls._get_arg_name(param)}",
                            type=arg_type,
                            dest=param.name,
                            metavar=param.name.upper(),
                            required=param.default is param.empty,
                            default=cls._get_arg_default(param),
                            help=arg_type.__name__,
                        )
                    )
                case unsupported_kind:
                    msg = f"Cannot add {param.name} ({unsupported_kind}) to parser."
                    raise NotImplementedError(msg)

        # First add flags, then positionals
        for arg in args_flag:
            arg()
        for arg in args_pos:
            arg()

    @classmethod
    def _bind_arguments(
        cls, args: argparse.Namespace
    ) -> tuple[tuple[Any, ...], dict[str, Any]]:
        """Extract relevant arguments from namespace."""

        args_pos = []
        args_key = {}
        for param in inspect.signature(args._command).parameters.values():
            arg_type = cls._get_arg_type(param)
            arg_value = getattr(args, param.name)
            if arg_value is not None:
                arg_value = arg_type(arg_value)
            match param.kind:
                case param.POSITIONAL_ONLY | param.POSITIONAL_OR_KEYWORD:
                    args_pos.append(arg_value)
                case param.KEYWORD_ONLY:
                    args_key[param.name] = arg_value
                case unknown_kind:
                    msg = f"Unknown parameter kind {unknown_kind}"
                    raise RuntimeError(msg)
        return tuple(args_pos), args_key


def _parse_numbers(
    text: str | None, pattern: regex.Pattern[str], name: str
) -> tuple[float, ...] | None:
    if text is None:
        return None
    match = pattern.match(text)
    if match is None:
        msg = f"Cannot parse --{name} {text!r}."
        raise RssgeoError(msg)
    return tuple(float(v) for v in match.groups())


def _load_spec(scenario: str, *, unsafe: bool, **overrides: Any):
    r"""
    Resolve ``--scenario``: a bundled config name, a ``module:attr`` reference or a
    JSON scenario file.
    """
    from ._experiments import ExperimentSpec
    from ._io import load_config, load_scenario
    from ._scene import Scenario

    if ":" in scenario:
        loaded = load_config(scenario, unsafe=unsafe)
    elif _CONFIG_NAME.match(scenario) and not pathlib.Path(scenario).exists():
        loaded = load_config(f"{CONFIGS_MODULE}:{scenario}")
    else:
        loaded = load_scenario(scenario)

    if isinstance(loaded, Scenario):
        loaded = ExperimentSpec(scenario=loaded)
    if not isinstance(loaded, ExperimentSpec):
        msg = f"{scenario!r} is neither a scenario nor an experiment config."
        raise RssgeoError(msg)
    spec = loaded.replace(**overrides)
    logger.info("Loaded %s with %d trials", scenario, spec.trials)
    return spec


def _prepare(out: pathlib.Path) -> pathlib.Path:
    out = out.resolve()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(*paths: pathlib.Path) -> None:
    for path in paths:
        sys.stdout.write(str(path) + "\n")


def _manifest(command: str, spec, **kwargs: Any):
    from ._io import RunManifest

    return RunManifest.start(command, spec.to_dict(), **kwargs)


@cli
def version() -> None:
    """Print the version of the rssgeo library."""
    from . import __version__

    sys.stdout.write(f"rssgeo v{__version__}\n")


@cli
def moments(sigma_db: float, /, *, norm: float = 1.0, c: float = 0.25) -> None:
    """Print noise moments, the residual bound factor and the stopping tolerance."""
    from ._noise import noise_moments, termination_epsilon

    m = noise_moments(sigma_db)
    report = {
        "sigma_db": sigma_db,
        "mu0": m.mu0,
        "sigma0_sq": m.sigma0_sq,
        "bound_factor": m.bound_factor,
        "epsilon": termination_epsilon([norm], sigma_db, c),
    }
    json.dump(report, sys.stdout, indent=4, sort_keys=True)
    sys.stdout.write("\n")


@cli
def simulate_recover(
    *,
    scenario: str = "fig1",
    trials: int | None = None,
    seed: int | None = None,
    out: pathlib.Path = pathlib.Path("out"),
    epsilon: float | None = None,
    exponent_override: float | None = None,
    workers: int | None = None,
    export_matrix: bool = False,
    unsafe: bool = False,
) -> int:
    r"""
    Recover emitters from repeated noisy simulations and average the power maps.

    ``--export-matrix`` also writes the measurement matrix used for recovery.
    """
    from ._experiments import run_simulate_recover
    from ._io import (
        save_arrays,
        write_field_csv,
        write_json,
        write_matrix_csv,
        write_pgm,
    )

    spec = _load_spec(
        scenario,
        unsafe=unsafe,
        trials=trials,
        seed=seed,
        epsilon=epsilon,
        exponent_override=exponent_override,
    )
    out = _prepare(out)
    manifest = _manifest("simulate-recover", spec, seed=spec.seed, trials=spec.trials)
    run = run_simulate_recover(spec, workers=workers)
    manifest.finish(run.failed)

    grid = spec.scenario.grid
    rows = [[*grid.point(i), v] for i, v in enumerate(run.mean_power)]
    summary = run.to_dict() | {
        "emitters_m": [list(e.position) for e in spec.scenario.true_emitters]
    }
    solutions = [
        None if s is None else s.to_dict(grid) for s in run.solutions
    ]
    _emit(
        write_field_csv(out / "mean_power.csv", rows),
        write_pgm(out / "mean_power.pgm", run.image()),
        write_json(out / "summary.json", summary),
        write_json(out / "solutions.json", {"trials": solutions}),
        manifest.write(out),
    )
    save_arrays(
        {
            "mean_power": run.mean_power,
            "emitter_power": run.emitter_power,
            "detection_rate": run.detection_rate,
        },
        out / "recovery.safetensors",
        meta=manifest.to_meta(),
    )
    _emit(out / "recovery.safetensors")
    if export_matrix:
        matrix = spec.scenario.measurement_matrix(spec.exponent_override)
        _emit(write_matrix_csv(out / "measurement_matrix.csv", matrix))
    if run.failed:
        sys.stderr.write(f"failed trials: {list(run.failed)}\n")
        return 1
    return 0


@cli
def resolution(
    *,
    scenario: str = "fig4",
    anchor: str | None = None,
    target: str | None = None,
    trials: int | None = None,
    seed: int | None = None,
    out: pathlib.Path = pathlib.Path("out"),
    workers: int | None = None,
    unsafe: bool = False,
) -> int:
    r"""
    Resolution probability: a sweep table when a target is set, otherwise the field
    around the anchor.
    """
    import math

    from ._experiments import run_resolution_field, run_resolution_sweep
    from ._io import (
        save_arrays,
        write_field_csv,
        write_json,
        write_pgm,
        write_table_csv,
    )

    spec = _load_spec(
        scenario,
        unsafe=unsafe,
        trials=trials,
        seed=seed,
        anchor=_parse_numbers(anchor, _PAIR, "anchor"),
        target=_parse_numbers(target, _PAIR, "target"),
    )
    out = _prepare(out)

    if spec.target is not None:
        manifest = _manifest("resolution", spec, seed=spec.seed, trials=spec.trials)
        rows = run_resolution_sweep(spec, workers=workers)
        flagged = [k for k, row in enumerate(rows) if row.flag]
        manifest.finish(flagged)
        header = ("sigma_db", "sensors", "p_analytic", "p_monte_carlo", "flag")
        _emit(
            write_table_csv(
                out / "resolution.csv", header, (r.as_tuple() for r in rows)
            ),
            manifest.write(out),
        )
        return 1 if flagged else 0

    manifest = _manifest("resolution", spec)
    field = run_resolution_field(spec, workers=workers)
    failed = [i for i, v in enumerate(field.values) if math.isnan(v)]
    manifest.finish(failed)
    _emit(
        write_field_csv(out / "resolution.csv", field.rows()),
        write_pgm(out / "resolution.pgm", field.image()),
        write_json(out / "resolution.json", field.to_dict(), digits=None),
        manifest.write(out),
    )
    save_arrays(
        {"values": field.values},
        out / "resolution.safetensors",
        meta=manifest.to_meta(),
    )
    _emit(out / "resolution.safetensors")
    return 1 if failed else 0


@cli
def clearance(
    *,
    scenario: str = "fig1",
    epsilon: float | None = None,
    anchor: str | None = None,
    region: str | None = None,
    exponent_override: float | None = None,
    out: pathlib.Path = pathlib.Path("out"),
    unsafe: bool = False,
) -> int:
    r"""
    Weakest detectable emitter power per grid point of a region
    (``--region xmin,xmax,ymin,ymax``).
    """
    from ._experiments import run_clearance
    from ._io import write_field_csv, write_json, write_pgm

    spec = _load_spec(
        scenario,
        unsafe=unsafe,
        epsilon=epsilon,
        anchor=_parse_numbers(anchor, _PAIR, "anchor"),
        region=_parse_numbers(region, _QUAD, "region"),
        exponent_override=exponent_override,
    )
    out = _prepare(out)
    manifest = _manifest("clearance", spec)
    report, summary = run_clearance(spec)
    manifest.finish()
    grid = spec.scenario.grid
    pairs = zip(report.region, report.thresholds, strict=True)
    rows = [[*grid.point(i), t] for i, t in pairs]
    _emit(
        write_json(out / "clearance.json", summary),
        write_field_csv(out / "clearance.csv", rows, header="x_m,y_m,threshold"),
        write_pgm(
            out / "clearance.pgm",
            report.image(grid),
            vmax=report.maximum if report.maximum > 0 else 1.0,
        ),
        manifest.write(out),
    )
    return 0


@cli
def fit(
    path: pathlib.Path,
    /,
    *,
    reference_distance: float = 1.0,
    reducer: str = "mean",
    decimation: int = 1,
    out: pathlib.Path = pathlib.Path("out"),
) -> int:
    r"""
    Fit the pathloss exponent and shadowing level to measured RSS.

    ``PATH`` is a combined CSV or a directory of per-sensor streams.
    """
    from ._experiments import run_fit
    from ._ingest import FadingFilter
    from ._io import RunManifest, write_json

    params = FadingFilter(
        reducer=reducer,  # type: ignore[arg-type]
        decimation=decimation,
    )
    out = _prepare(out)
    manifest = RunManifest.start(
        "fit",
        {
            "path": str(path),
            "reference_distance_m": reference_distance,
            "filter": {
                "order": params.order,
                "ripple_db": params.ripple_db,
                "cutoff_ratio": params.cutoff_ratio,
                "reducer": params.reducer,
                "decimation": params.decimation,
            },
        },
    )
    result = run_fit(path, params=params, r0=reference_distance)
    manifest.finish()
    _emit(write_json(out / "fit.json", result.to_dict()), manifest.write(out))
    return 0


@cli
def locate(
    path: pathlib.Path,
    /,
    *,
    scenario: str = "field",
    epsilon: float | None = None,
    exponent_override: float | None = None,
    out: pathlib.Path = pathlib.Path("out"),
    unsafe: bool = False,
) -> int:
    r"""
    Locate emitters from one measured RSS vector
    (CSV with ``sensor_id,x_m,y_m,rss_linear``).
    """
    from ._experiments import run_locate
    from ._io import write_json

    spec = _load_spec(
        scenario, unsafe=unsafe, epsilon=epsilon, exponent_override=exponent_override
    )
    out = _prepare(out)
    manifest = _manifest("locate", spec)
    solution = run_locate(spec, path)
    manifest.finish()
    data = solution.to_dict(spec.scenario.grid, spec.solver_config())
    _emit(write_json(out / "solution.json", data), manifest.write(out))
    return 0
