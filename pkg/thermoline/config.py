"""
Declarative experiment configuration, read from a JSON document.

See doc/index.md for the schema and an example per command.
"""

import hashlib
import json
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any, Final

import numpy as np

from thermoline.bounds import MIN_MC_DRAWS
from thermoline.inference import DEFAULT_GRID_SIZE, PriorSpec
from thermoline.measurement import MeasurementModel, ProbeKind
from thermoline.sample_models import ModelKind, SampleModel, TemperatureDomain
from thermoline.simulate import (
    DEFAULT_GAP_CANDIDATES,
    DEFAULT_NU_MAX,
    DEFAULT_NU_POINTS,
    DEFAULT_TRAJECTORIES,
    AdaptivePolicy,
    log_nu_grid,
    snapshot_steps,
)
from thermoline.util import ThermolineError

DEFAULT_OUTPUT: Final = Path("output")

# k_Bθ/ε range and resolution of the geometry tables
DEFAULT_GEOMETRY_RATIOS: Final = (0.1, 5.0, 1000)

_MISSING: Final = object()


class ConfigError(ThermolineError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class Command(StrEnum):
    PRIOR = "prior"
    GEOMETRY = "geometry"
    TRAJECTORY = "trajectory"
    ENSEMBLE = "ensemble"
    BOUNDS = "bounds"
    ADAPTIVE = "adaptive"

    def label(self) -> str:
        match self:
            case self.PRIOR:
                return "smoothed Jeffreys priors"
            case self.GEOMETRY:
                return "QFI and λ-coordinates"
            case self.TRAJECTORY:
                return "single measurement trajectory"
            case self.ENSEMBLE:
                return "prior-averaged ensemble"
            case self.BOUNDS:
                return "Cramér-Rao bound family"
            case self.ADAPTIVE:
                return "adaptive gap ensemble"


@dataclass(kw_only=True, frozen=True)
class ExperimentConfig:
    command: Command
    seed: int
    output_path: Path
    config_hash: str
    model: SampleModel = field(default_factory=SampleModel.spin)
    measurement: MeasurementModel | None = None
    prior: PriorSpec | None = None
    grid_size: int = DEFAULT_GRID_SIZE
    reference: SampleModel | None = None
    nu_grid: tuple[int, ...] = ()
    n_traj: int = DEFAULT_TRAJECTORIES
    nu: int = 0
    true_theta: float | None = None
    n_mc: int = 0
    policy: AdaptivePolicy | None = None
    prior_models: tuple[SampleModel, ...] = ()
    geometry_ratios: tuple[float, float, int] = DEFAULT_GEOMETRY_RATIOS
    snapshot_steps: tuple[int, ...] = ()


def _lookup(data: dict[str, Any], path: str) -> Any:
    node: Any = data
    for key in path.split("."):
        if isinstance(node, list) and key.isdigit() and int(key) < len(node):
            node = node[int(key)]
        elif isinstance(node, dict) and key in node:
            node = node[key]
        else:
            return _MISSING
    return node


def _field[T](
    data: dict[str, Any], path: str, kind: Callable[[Any], T], default: Any = _MISSING
) -> T:
    value = _lookup(data, path)
    if value is _MISSING:
        if default is _MISSING:
            raise ConfigError(f"Missing `{path}` field", field=path)
        return default
    if isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"Invalid `{path}` field: booleans are not numbers", field=path)
    try:
        return kind(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid `{path}` field: {e}", field=path) from e


def _build[T](path: str, factory: Callable[[], T]) -> T:
    """Run a library constructor, reporting its validation errors against `path`."""
    try:
        return factory()
    except ConfigError:
        raise
    except (ThermolineError, ValueError, TypeError) as e:
        raise ConfigError(f"Invalid `{path}` field: {e}", field=path) from e


def _model(data: dict[str, Any], path: str) -> SampleModel:
    kind = _field(data, f"{path}.kind", ModelKind)
    return _build(
        path,
        lambda: SampleModel(
            kind=kind,
            gap=_field(data, f"{path}.gap", float, 1.0),
            capacity_scale=_field(data, f"{path}.capacity_scale", float, 1.0),
        ),
    )


def _measurement(data: dict[str, Any], domain: TemperatureDomain | None) -> MeasurementModel:
    probe = _field(data, "measurement.probe", ProbeKind)
    gap = _field(data, "measurement.gap", float, 1.0)
    match probe:
        case ProbeKind.SPIN_ENERGY:
            batch_size = _field(data, "measurement.batch_size", int, 1)
            return _build("measurement", lambda: MeasurementModel.spin_energy(gap, batch_size))
        case ProbeKind.BOSON_OCCUPATION:
            cutoff = _field(data, "measurement.cutoff", int, None)
            return _build(
                "measurement", lambda: MeasurementModel.boson_occupation(gap, domain, cutoff)
            )


def _prior(data: dict[str, Any], model: SampleModel) -> PriorSpec:
    alpha = _field(data, "prior.alpha", float)
    theta_min = _field(data, "prior.theta_min", float)
    theta_max = _field(data, "prior.theta_max", float)
    domain = _build("prior", lambda: TemperatureDomain.for_model(model, theta_min, theta_max))
    return _build("prior.alpha", lambda: PriorSpec(alpha=alpha, domain=domain))


def _nu_grid(data: dict[str, Any]) -> tuple[int, ...]:
    value = _lookup(data, "nu_grid")
    if value is _MISSING:
        raise ConfigError("Missing `nu_grid` field", field="nu_grid")
    if isinstance(value, dict):
        nu_max = _field(data, "nu_grid.nu_max", int, DEFAULT_NU_MAX)
        points = _field(data, "nu_grid.points", int, DEFAULT_NU_POINTS)
        grid = _build("nu_grid", lambda: log_nu_grid(nu_max, points))
    else:
        grid = _field(data, "nu_grid", lambda v: np.asarray(v, dtype=int))
    if grid.ndim != 1 or grid.size == 0 or np.any(grid < 1):
        raise ConfigError("Invalid `nu_grid` field: expected positive repetition counts", "nu_grid")
    return tuple(int(nu) for nu in np.unique(grid))


def _positive(data: dict[str, Any], path: str, default: Any = _MISSING, minimum: int = 1) -> int:
    value = _field(data, path, int, default)
    if value < minimum:
        raise ConfigError(f"Invalid `{path}` field: must be at least {minimum}", field=path)
    return value


def _policy(data: dict[str, Any], domain: TemperatureDomain) -> AdaptivePolicy:
    reference = (
        _model(data, "reference") if _lookup(data, "reference") is not _MISSING else None
    )
    candidates = _lookup(data, "gap_candidates")
    if isinstance(candidates, list):
        gaps = _field(data, "gap_candidates", lambda v: tuple(float(g) for g in v))
        return _build(
            "gap_candidates",
            lambda: AdaptivePolicy(
                gap_candidates=gaps, reference=reference or SampleModel.reservoir()
            ),
        )
    points = _positive(data, "gap_candidates.points", DEFAULT_GAP_CANDIDATES)
    return _build(
        "gap_candidates", lambda: AdaptivePolicy.for_domain(domain, points, reference)
    )


def config_hash(data: dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of the effective config, output location excluded."""
    canonical = {k: v for k, v in data.items() if k != "output"}
    text = json.dumps(canonical, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(text.encode()).hexdigest()


def parse_config(
    data: Any, seed: int | None = None, output_path: Path | None = None
) -> ExperimentConfig:
    """
    Validate a decoded config document. `seed` and `output_path` override the
    document's `seed` and `output` fields.
    """
    if not isinstance(data, dict):
        raise ConfigError("Config must be a JSON object")
    data = dict(data)
    if seed is not None:
        data["seed"] = seed
    command = _field(data, "command", Command)
    seed = _field(data, "seed", int)
    if not 0 <= seed < 2**64:
        raise ConfigError("Invalid `seed` field: must be an unsigned 64-bit integer", "seed")
    if output_path is None:
        output_path = _field(data, "output", Path, DEFAULT_OUTPUT)

    settings: dict[str, Any] = {
        "command": command,
        "seed": seed,
        "output_path": output_path,
        "config_hash": config_hash(data),
    }
    match command:
        case Command.GEOMETRY:
            settings["model"] = SampleModel.spin(_field(data, "geometry.gap", float, 1.0))
            ratios = (
                _field(data, "geometry.ratio_min", float, DEFAULT_GEOMETRY_RATIOS[0]),
                _field(data, "geometry.ratio_max", float, DEFAULT_GEOMETRY_RATIOS[1]),
                _positive(data, "geometry.points", DEFAULT_GEOMETRY_RATIOS[2], minimum=2),
            )
            if not 0 < ratios[0] < ratios[1]:
                raise ConfigError(
                    "Invalid `geometry` field: need 0 < ratio_min < ratio_max", "geometry"
                )
            settings["geometry_ratios"] = ratios
            return ExperimentConfig(**settings)
        case Command.PRIOR:
            models = _lookup(data, "models")
            if models is _MISSING:
                prior_models = (SampleModel.spin(), SampleModel.reservoir())
            elif isinstance(models, list) and models:
                prior_models = tuple(_model(data, f"models.{i}") for i in range(len(models)))
            else:
                raise ConfigError("Invalid `models` field: expected a non-empty list", "models")
            settings["prior_models"] = prior_models
            settings["model"] = prior_models[0]
            settings["prior"] = _prior(data, prior_models[0])
            settings["grid_size"] = _positive(data, "prior.grid_size", DEFAULT_GRID_SIZE)
            return ExperimentConfig(**settings)

    model = _model(data, "model")
    prior = _prior(data, model)
    settings |= {
        "model": model,
        "prior": prior,
        "grid_size": _positive(data, "prior.grid_size", DEFAULT_GRID_SIZE),
    }
    if _lookup(data, "reference") is not _MISSING:
        settings["reference"] = _model(data, "reference")

    match command:
        case Command.TRAJECTORY:
            settings["measurement"] = _measurement(data, prior.domain)
            settings["nu"] = nu = _positive(data, "nu", minimum=0)
            settings["true_theta"] = _field(data, "true_theta", float)
            if not prior.domain.theta_min < settings["true_theta"] < prior.domain.theta_max:
                raise ConfigError(
                    "Invalid `true_theta` field: must lie strictly inside the prior domain",
                    "true_theta",
                )
            if _lookup(data, "snapshot_steps") is not _MISSING:
                steps = _field(data, "snapshot_steps", lambda v: np.asarray(v, dtype=int))
                if steps.ndim != 1 or steps.size == 0 or np.any((steps < 0) | (steps > nu)):
                    raise ConfigError(
                        f"Invalid `snapshot_steps` field: expected steps in [0, {nu}]",
                        "snapshot_steps",
                    )
            else:
                steps = snapshot_steps(nu)
            settings["snapshot_steps"] = tuple(int(s) for s in np.unique(steps))
        case Command.ENSEMBLE:
            settings["measurement"] = _measurement(data, prior.domain)
            settings["nu_grid"] = _nu_grid(data)
            settings["n_traj"] = _positive(data, "n_traj", DEFAULT_TRAJECTORIES, minimum=2)
        case Command.BOUNDS:
            settings["measurement"] = _measurement(data, prior.domain)
            settings["nu_grid"] = _nu_grid(data)
            settings["n_mc"] = _positive(data, "n_mc", 0, minimum=0)
            if 0 < settings["n_mc"] < MIN_MC_DRAWS:
                raise ConfigError(
                    f"Invalid `n_mc` field: use 0 or at least {MIN_MC_DRAWS} draws", "n_mc"
                )
        case Command.ADAPTIVE:
            settings["nu"] = _positive(data, "nu")
            settings["n_traj"] = _positive(data, "n_traj", DEFAULT_TRAJECTORIES, minimum=2)
            if _lookup(data, "nu_grid") is not _MISSING:
                settings["nu_grid"] = _nu_grid(data)
            else:
                settings["nu_grid"] = tuple(int(nu) for nu in log_nu_grid(settings["nu"]))
            if settings["nu_grid"][-1] > settings["nu"]:
                raise ConfigError("Invalid `nu_grid` field: reaches beyond `nu`", "nu_grid")
            settings["policy"] = _policy(data, prior.domain)
    return ExperimentConfig(**settings)


def load_config(
    path: Path, seed: int | None = None, output_path: Path | None = None
) -> ExperimentConfig:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    return parse_config(data, seed, output_path)
