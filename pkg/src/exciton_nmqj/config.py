"""Configuration loading: runtime settings and scenario files."""

from __future__ import annotations

import json
import math
import os
import sysconfig
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, MutableMapping, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - fallback for older interpreters
    import tomli as tomllib  # type: ignore


SETTINGS_ENV_PREFIX = "NMQJ_"
SETTINGS_VERSION = 1
MIN_SUPPORTED_SETTINGS_VERSION = 1

SCENARIO_VERSION = 1
MIN_SUPPORTED_SCENARIO_VERSION = 1

FMO_DATA_FILE = "fmo_hamiltonian.txt"

# Transport scan ranges (start, stop) per axis.
DEFAULT_SCAN_RANGES: Dict[str, tuple] = {
    "lambda": (5.0, 150.0),
    "temperature": (50.0, 400.0),
    "cutoff": (10.0, 120.0),
}
DEFAULT_SCAN_POINTS = 24

_LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}


def default_data_dir() -> Path:
    """Directory holding bundled data files (repo checkout or installed share/)."""

    repo_path = Path(__file__).resolve().parents[2] / "res"
    data_base = Path(sysconfig.get_path("data") or "").expanduser()
    share_path = data_base / "share" / "exciton_nmqj"
    for path in (repo_path, share_path):
        if path.exists() and path.is_dir():
            return path
    return repo_path


def default_fmo_path() -> Path:
    return default_data_dir() / FMO_DATA_FILE


# --------------------------------------------------------------------------
# Runtime settings
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RunSettings:
    """Process-level settings that never change simulation results."""

    threads: int = 1
    output_dir: Path = Path("results")
    summary_format: str = "table"
    log_level: str = "INFO"
    log_format: str = "plain"
    bath_log_level: Optional[str] = None
    engine_log_level: Optional[str] = None
    write_metrics: bool = True
    settings_version: int = SETTINGS_VERSION

    def __post_init__(self) -> None:
        _validate_settings(self)

    def logging_dict(self) -> Dict[str, Any]:
        """Return a JSON-safe mapping suitable for structured logging."""

        return {
            "threads": self.threads,
            "output_dir": str(self.output_dir),
            "summary_format": self.summary_format,
            "log_level": self.log_level,
            "log_format": self.log_format,
            "bath_log_level": self.bath_log_level,
            "engine_log_level": self.engine_log_level,
            "write_metrics": self.write_metrics,
            "settings_version": self.settings_version,
        }

    @classmethod
    def from_sources(
        cls,
        cli_overrides: Optional[Mapping[str, Any]] = None,
        *,
        settings_path: Optional[Path] = None,
        environ: Optional[Mapping[str, str]] = None,
    ) -> "RunSettings":
        """Load settings from defaults, TOML file, env, and CLI (in that order)."""

        env = os.environ if environ is None else environ
        path = settings_path or _coerce_path(env.get(f"{SETTINGS_ENV_PREFIX}SETTINGS"))
        settings = cls()
        settings = _apply_mapping(settings, _load_settings_file(path))
        settings = _apply_mapping(settings, _load_env_config(SETTINGS_ENV_PREFIX, env))
        settings = _apply_mapping(settings, dict(cli_overrides or {}))
        return settings


def _validate_settings(settings: RunSettings) -> None:
    _validate_version(
        "Settings", settings.settings_version, MIN_SUPPORTED_SETTINGS_VERSION, SETTINGS_VERSION
    )
    _validate_range("threads", settings.threads, 1, 256)
    if settings.summary_format not in {"table", "json", "yaml"}:
        raise ValueError(
            f"summary_format must be one of ['json', 'table', 'yaml']; got {settings.summary_format}."
        )
    if settings.log_format not in {"plain", "json"}:
        raise ValueError(f"log_format must be one of ['json', 'plain']; got {settings.log_format}.")
    for field_name, value in (
        ("log_level", settings.log_level),
        ("bath_log_level", settings.bath_log_level),
        ("engine_log_level", settings.engine_log_level),
    ):
        _validate_log_level_value(value, field_name)


def _validate_version(kind: str, version: int, minimum: int, current: int) -> None:
    if version < minimum:
        raise ValueError(f"{kind} version {version} is too old; minimum supported is {minimum}.")
    if version > current:
        raise ValueError(
            f"{kind} version {version} is newer than supported ({current}); please upgrade exciton-nmqj."
        )


def _validate_range(name: str, value: float, minimum: float, maximum: float) -> None:
    if value < minimum or value > maximum:
        raise ValueError(f"{name} must be between {minimum} and {maximum}; got {value}.")


def _validate_log_level_value(value: Optional[str], name: str) -> None:
    if value is None:
        return
    if value.upper() not in _LOG_LEVELS:
        raise ValueError(f"{name} must be one of {sorted(_LOG_LEVELS)}; got {value}.")


def _load_settings_file(path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        return {}
    if not path.exists():
        raise FileNotFoundError(f"Settings file not found: {path}")
    with path.open("rb") as f:
        parsed = tomllib.load(f)
    if not isinstance(parsed, Mapping):
        raise ValueError("Settings file must contain a TOML table.")
    return {k.replace("-", "_"): v for k, v in parsed.items()}


def _load_env_config(prefix: str, environ: Mapping[str, str]) -> Dict[str, Any]:
    mapping: Dict[str, Any] = {}
    for field in fields(RunSettings):
        env_key = f"{prefix}{field.name}".upper()
        if env_key in environ:
            mapping[field.name] = environ[env_key]
    return mapping


def _apply_mapping(settings: RunSettings, overrides: Mapping[str, Any]) -> RunSettings:
    known = {field.name for field in fields(RunSettings)}
    data: MutableMapping[str, Any] = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in known:
            raise ValueError(f"Unknown setting '{key}'.")
        if key == "output_dir":
            data[key] = _coerce_path(value)
        elif key in {"threads", "settings_version"}:
            data[key] = int(value)
        elif key == "write_metrics":
            data[key] = _coerce_bool(value)
        elif key in {"log_level", "bath_log_level", "engine_log_level"}:
            data[key] = str(value).upper()
        else:
            data[key] = str(value).lower()
    return replace(settings, **data)


def _coerce_path(value: Any) -> Optional[Path]:
    if value is None:
        return None
    return value if isinstance(value, Path) else Path(str(value)).expanduser()


def _coerce_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        return value.strip().lower() in {"1", "true", "yes", "on"}
    return bool(value)


# --------------------------------------------------------------------------
# Scenario configuration
# --------------------------------------------------------------------------


class HamiltonianSpec(BaseModel):
    """Which system Hamiltonian to build."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["dimer", "fmo"] = "dimer"
    coupling: float = 50.0
    epsilon2: float = 100.0
    path: Optional[Path] = None


class BathSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    reorganization: float = Field(default=30.0, ge=0.0)
    cutoff: float = Field(default=30.0, gt=0.0)


class InitialStateSpec(BaseModel):
    """Initial pure state: a site, an exciton, or an explicit site-basis vector."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["site", "exciton", "vector"] = "exciton"
    index: int = Field(default=2, ge=1)
    vector: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_vector(self) -> "InitialStateSpec":
        if self.kind == "vector":
            if not self.vector:
                raise ValueError("initial.vector is required when initial.kind is 'vector'")
            if math.fsum(v * v for v in self.vector) <= 0.0:
                raise ValueError("initial.vector must have nonzero norm")
        return self


class MeasureSpec(BaseModel):
    """Time-averaged population of one target state up to tau."""

    model_config = ConfigDict(extra="forbid")

    target: int = Field(default=1, ge=1)
    tau: float = Field(default=1.0, gt=0.0)
    basis: Literal["exciton", "site"] = "exciton"


class ScanSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    axis: Literal["lambda", "temperature", "cutoff"]
    values: Optional[List[float]] = None
    start: Optional[float] = None
    stop: Optional[float] = None
    points: int = Field(default=DEFAULT_SCAN_POINTS, ge=1)

    @field_validator("values")
    @classmethod
    def _values_positive(cls, values: Optional[List[float]]) -> Optional[List[float]]:
        if values is not None:
            if not values:
                raise ValueError("scan.values must not be empty")
            if any(value <= 0 for value in values):
                raise ValueError("scan.values must all be positive")
        return values

    @model_validator(mode="after")
    def _check_range(self) -> "ScanSpec":
        start, stop = self.bounds()
        if start <= 0 or stop <= 0:
            raise ValueError("scan range must be positive")
        if stop < start:
            raise ValueError("scan.stop must not be smaller than scan.start")
        return self

    def bounds(self) -> tuple:
        default_start, default_stop = DEFAULT_SCAN_RANGES[self.axis]
        start = default_start if self.start is None else self.start
        stop = default_stop if self.stop is None else self.stop
        return start, stop

    def grid(self) -> np.ndarray:
        """Scan values: explicit list, or evenly spaced points over the range."""

        if self.values is not None:
            return np.asarray(self.values, dtype=float)
        start, stop = self.bounds()
        return np.linspace(start, stop, self.points)


class LambShiftSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    compute: bool = False
    propagate: bool = False

    @model_validator(mode="after")
    def _propagate_needs_compute(self) -> "LambShiftSpec":
        if self.propagate and not self.compute:
            raise ValueError("lamb_shift.propagate requires lamb_shift.compute")
        return self


class ScenarioConfig(BaseModel):
    """One simulation run, as read from a scenario file."""

    model_config = ConfigDict(extra="forbid")

    name: str = "scenario"
    config_version: int = SCENARIO_VERSION
    hamiltonian: HamiltonianSpec = Field(default_factory=HamiltonianSpec)
    bath: BathSpec = Field(default_factory=BathSpec)
    temperature: float = Field(default=300.0, gt=0.0)
    temperatures: Optional[List[float]] = None
    initial: InitialStateSpec = Field(default_factory=InitialStateSpec)
    t_final: float = Field(default=1.0, gt=0.0)
    dt: float = Field(default=0.001, gt=0.0)
    engine: Literal["tcl", "nmqj"] = "tcl"
    markovian: bool = False
    trajectories: int = Field(default=10_000, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    measure: Optional[MeasureSpec] = None
    scan: Optional[ScanSpec] = None
    extra_frequencies: List[float] = Field(default_factory=list)
    lamb_shift: LambShiftSpec = Field(default_factory=LambShiftSpec)
    degeneracy_tol: float = Field(default=0.01, ge=0.0)
    probability_cap: float = Field(default=0.1, gt=0.0, le=1.0)
    positivity_tolerance: float = Field(default=1e-9, ge=0.0)
    sample_every: int = Field(default=1, ge=1)

    @field_validator("config_version")
    @classmethod
    def _supported_version(cls, version: int) -> int:
        _validate_version("Scenario", version, MIN_SUPPORTED_SCENARIO_VERSION, SCENARIO_VERSION)
        return version

    @field_validator("temperatures")
    @classmethod
    def _temperatures_positive(cls, values: Optional[List[float]]) -> Optional[List[float]]:
        if values is not None:
            if not values:
                raise ValueError("temperatures must not be empty")
            if any(value <= 0 for value in values):
                raise ValueError("temperatures must all be positive")
        return values

    @model_validator(mode="after")
    def _check_times(self) -> "ScenarioConfig":
        if self.dt > self.t_final:
            raise ValueError(f"dt ({self.dt}) must not exceed t_final ({self.t_final})")
        steps = self.t_final / self.dt
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ValueError(f"t_final ({self.t_final}) must be a whole number of dt ({self.dt}) steps")
        if self.measure is not None and self.measure.tau > self.t_final * (1.0 + 1e-12):
            raise ValueError(
                f"measure.tau ({self.measure.tau}) must not exceed t_final ({self.t_final})"
            )
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def with_overrides(self, overrides: Mapping[str, Any]) -> "ScenarioConfig":
        """Return a re-validated copy with top-level fields replaced."""

        data = self.model_dump()
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in data:
                raise ValueError(f"Unknown scenario field '{key}'.")
            data[key] = value
        return ScenarioConfig.model_validate(data)

    def echo(self) -> Dict[str, Any]:
        """JSON-safe dump for manifests."""

        return self.model_dump(mode="json")


def load_scenario(path: Path) -> ScenarioConfig:
    """Read a JSON or YAML scenario file and validate it.

    A relative Hamiltonian data path is resolved against the file's directory.
    """

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Scenario file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in {".yaml", ".yml"}:
        parsed = yaml.safe_load(text)
    else:
        parsed = json.loads(text)
    if not isinstance(parsed, Mapping):
        raise ValueError("Scenario file must contain a mapping at the top level.")
    config = ScenarioConfig.model_validate(parsed)
    data_path = config.hamiltonian.path
    if data_path is not None and not data_path.is_absolute():
        hamiltonian = config.hamiltonian.model_copy(update={"path": (path.parent / data_path).resolve()})
        config = config.model_copy(update={"hamiltonian": hamiltonian})
    return config
