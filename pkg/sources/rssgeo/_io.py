import dataclasses
import importlib
import json
import math
import pathlib
import time
from collections.abc import Iterable, Mapping, Sequence
from datetime import datetime
from typing import Any, Final, Self, TypeGuard, cast

import numpy as np
import regex
import safetensors
import safetensors.numpy
from numpy.typing import ArrayLike, NDArray

from ._errors import ScenarioError
from ._noise import RNG_IDENTITY
from ._scene import Scenario

__all__ = [
    "ArrayDict",
    "RunManifest",
    "save_arrays",
    "load_arrays",
    "load_meta",
    "save_meta",
    "check_meta",
    "save_scenario",
    "load_scenario",
    "load_config",
    "write_json",
    "write_field_csv",
    "write_table_csv",
    "write_matrix_csv",
    "write_pgm",
]

type PathLike = pathlib.Path | str
type ArrayDict = dict[str, NDArray[Any]]

REPORT_DIGITS: Final = 6
SAFE_PREFIX: Final = "rssgeo."

_CONFIG_REF: Final = regex.compile(
    r"^(?P<module>[\p{L}_][\w.]*):(?P<attr>[\p{L}_]\w*)$"
)


def _parse_path(path: PathLike) -> pathlib.Path:
    return pathlib.Path(path).resolve()


def save_arrays(
    data: Mapping[str, ArrayLike], path: PathLike, *, meta: dict[str, str] | None = None
) -> None:
    r"""
    Save named arrays to a ``.safetensors`` archive with a string metadata header.
    """
    data_path = _parse_path(path)
    data_meta = {"format": "np", "timestamp": datetime.now().isoformat()}
    if meta is not None:
        data_meta.update(meta)
    check_meta(data_meta, raises=True)
    arrays = {k: np.ascontiguousarray(v) for k, v in data.items()}
    safetensors.numpy.save_file(arrays, data_path, data_meta)


def load_arrays(path: PathLike) -> ArrayDict:
    path = _parse_path(path)
    data = cast(object, safetensors.numpy.load_file(path))
    if not check_arrays(data):
        msg = f"Expected a mapping {{str}} -> {{ndarray}} in {path}."
        raise TypeError(msg)
    return data


def check_arrays(data: object) -> TypeGuard[ArrayDict]:
    if not isinstance(data, dict):
        msg = f"Expected arrays to be a dict, got {type(data)}"
        raise TypeError(msg)
    data = cast(dict[Any, Any], data)
    return all(
        isinstance(k, str) and isinstance(v, np.ndarray) for k, v in data.items()
    )


def load_meta(path: PathLike) -> dict[str, str]:
    path = _parse_path(path)
    with safetensors.safe_open(path, framework="np") as st:
        meta = st.metadata()
    if meta is None:
        return {}
    check_meta(meta, raises=True)
    return meta


def check_meta(meta: Any, *, raises=True) -> TypeGuard[dict[str, str]]:
    if not isinstance(meta, dict):
        if raises:
            msg = f"Expected metadata to be a dict, got {type(meta)}"
            raise TypeError(msg)
        return False
    for k, v in meta.items():
        if not isinstance(k, str) or not isinstance(v, str):
            if raises:
                msg = (
                    f"Expected metadata to be a str -> str mapping, got {k}: "
                    f"{type(k)} -> {type(v)}"
                )
                raise TypeError(msg)
            return False
    return True


def save_meta(path: PathLike, meta: dict[str, str]) -> None:
    path = _parse_path(path)
    save_arrays(load_arrays(path), path, meta=meta)


def save_scenario(scenario: Scenario, path: PathLike) -> pathlib.Path:
    """Write a scenario as JSON. Floats keep full precision."""
    path = _parse_path(path)
    path.write_text(json.dumps(scenario.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def load_scenario(path: PathLike) -> Scenario:
    r"""
    Read a scenario written by :func:`save_scenario`.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    ScenarioError
        If the file is not a valid scenario description.
    """
    path = _parse_path(path)
    if not path.is_file():
        msg = f"Scenario file not found: {path}"
        raise FileNotFoundError(msg)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        msg = f"{path}: not valid JSON ({err})"
        raise ScenarioError(msg) from err
    if not isinstance(data, dict):
        msg = f"{path}: expected a JSON object, got {type(data).__name__}."
        raise ScenarioError(msg)
    return Scenario.from_dict(data)


def load_config(ref: str, *, unsafe: bool = False) -> Any:
    r"""
    Import and instantiate a lazy configuration given as ``module:attribute``.

    Only modules under ``rssgeo.`` are imported unless ``unsafe`` is set.
    """
    import laco

    match = _CONFIG_REF.match(ref)
    if match is None:
        msg = f"Expected a config reference of the form module:attribute, got {ref!r}."
        raise ScenarioError(msg)
    cfg_src, cfg_attr = match["module"], match["attr"]

    if not unsafe and not cfg_src.startswith(SAFE_PREFIX):
        msg = f"Refusing to import from {cfg_src}, use --unsafe to override."
        raise ScenarioError(msg)

    cfg_mod = importlib.import_module(cfg_src)
    try:
        cfg = getattr(cfg_mod, cfg_attr)
    except AttributeError as err:
        msg = f"Module {cfg_src} has no config {cfg_attr!r}."
        raise ScenarioError(msg) from err
    return laco.instantiate(cfg)


def _round_floats(value: Any, digits: int) -> Any:
    match value:
        case bool() | None | str():
            return value
        case float() | np.floating():
            value = float(value)
            if not math.isfinite(value):
                return None
            return float(f"{value:.{digits}g}")
        case int() | np.integer():
            return int(value)
        case np.ndarray():
            return _round_floats(value.tolist(), digits)
        case Mapping():
            return {str(k): _round_floats(v, digits) for k, v in value.items()}
        case Sequence():
            return [_round_floats(v, digits) for v in value]
        case _:
            return str(value)


def write_json(
    path: PathLike, data: Mapping[str, Any], *, digits: int | None = REPORT_DIGITS
) -> pathlib.Path:
    r"""
    Write a report as JSON with sorted keys. Floats are rounded to ``digits``
    significant digits and non-finite values become ``null``.
    """
    path = _parse_path(path)
    payload = _round_floats(data, digits if digits is not None else 17)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def write_field_csv(
    path: PathLike, rows: ArrayLike, *, header: str = "x_m,y_m,value"
) -> pathlib.Path:
    """Write ``(x, y, value)`` rows with values rounded to 6 significant digits."""
    path = _parse_path(path)
    np.savetxt(
        path, np.asarray(rows), fmt="%.6g", delimiter=",", header=header, comments=""
    )
    return path


def write_table_csv(
    path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]
) -> pathlib.Path:
    """Write mixed-type rows; floats get 6 significant digits, NaN is empty."""
    path = _parse_path(path)
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for value in row:
            if isinstance(value, float | np.floating):
                cells.append("" if math.isnan(value) else f"{float(value):.6g}")
            else:
                cells.append(str(value))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_matrix_csv(path: PathLike, matrix: ArrayLike) -> pathlib.Path:
    """Write a matrix row-major with round-trip precision."""
    path = _parse_path(path)
    np.savetxt(path, np.atleast_2d(np.asarray(matrix)), fmt="%.17g", delimiter=",")
    return path


def write_pgm(path: PathLike, image: ArrayLike, *, vmax: float = 1.0) -> pathlib.Path:
    r"""
    Write an 8-bit binary PGM where ``0`` is white and ``vmax`` or more is black.

    ``image[j, i]`` holds the value at ``(x_i, y_j)``; the file's top row is the
    largest ``y``. NaN cells are white.
    """
    path = _parse_path(path)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:  # noqa: PLR2004
        msg = f"Expected a 2-D image, got shape {image.shape}."
        raise ValueError(msg)
    if not vmax > 0:
        msg = f"vmax must be > 0, got {vmax!r}."
        raise ValueError(msg)
    level = np.clip(np.nan_to_num(image[::-1], nan=0.0) / vmax, 0.0, 1.0)
    pixels = np.round(255.0 * (1.0 - level)).astype(np.uint8)
    ny, nx = pixels.shape
    path.write_bytes(f"P5\n{nx} {ny}\n255\n".encode("ascii") + pixels.tobytes())
    return path


@dataclasses.dataclass(slots=True)
class RunManifest:
    r"""
    Everything needed to reproduce a command's output.

    ``trial_seeds`` holds one ``[seed, trial]`` spawn key per trial.
    """

    command: str
    config: dict[str, Any]
    seed: int | None = None
    trials: int = 0
    failed_trials: list[int] = dataclasses.field(default_factory=list)
    wall_time_s: float = 0.0
    rng: str = RNG_IDENTITY
    numpy_version: str = np.__version__
    package_version: str = "unknown"
    timestamp: str = dataclasses.field(
        default_factory=lambda: datetime.now().isoformat()
    )
    _started: float = dataclasses.field(default_factory=time.perf_counter, repr=False)

    def __post_init__(self) -> None:
        if self.package_version == "unknown":
            from . import __version__

            self.package_version = str(__version__)

    @classmethod
    def start(cls, command: str, config: dict[str, Any], **kwargs: Any) -> Self:
        return cls(command=command, config=config, **kwargs)

    def finish(self, failed_trials: Sequence[int] = ()) -> Self:
        self.failed_trials = sorted(int(k) for k in failed_trials)
        self.wall_time_s = time.perf_counter() - self._started
        return self

    @property
    def trial_seeds(self) -> list[list[int]]:
        if self.seed is None:
            return []
        return [[self.seed, k] for k in range(self.trials)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "trials": self.trials,
            "trial_seeds": self.trial_seeds,
            "failed_trials": self.failed_trials,
            "wall_time_s": self.wall_time_s,
            "rng": self.rng,
            "numpy_version": self.numpy_version,
            "package_version": self.package_version,
            "timestamp": self.timestamp,
        }

    def to_meta(self) -> dict[str, str]:
        """Manifest as a ``.safetensors`` metadata entry."""
        return {"manifest": json.dumps(self.to_dict(), sort_keys=True)}

    def write(self, directory: PathLike) -> pathlib.Path:
        return write_json(
            _parse_path(directory) / "manifest.json", self.to_dict(), digits=None
        )
