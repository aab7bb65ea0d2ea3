import os
from datetime import date
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from core.agent import AgentConfig
from core.errors import ConfigurationError
from core.forecast import ForecastConfig
from ingest.calendar import DEFAULT_HOLIDAY_FILE
from market.benchmark import BenchmarkConfig
from market.env import EnvConfig
from market.household import DEFAULT_FLEET, ApplianceSpec

ENV_PREFIX = "CAPDR_"
# environment variable suffix -> dotted config key
ENV_KEYS = {
    "SEED": "seed",
    "OUTPUT_DIR": "paths.output_dir",
    "DATA_DIR": "paths.data_dir",
    "CHECKPOINT_DIR": "paths.checkpoint_dir",
    "RHO": "env.rho",
}


class PathsConfig(BaseModel):
    data_dir: Path = Field(Path("data"), description="Where datasets are read and written")
    dataset: str = Field("dataset.csv", description="Dataset file name inside data_dir")
    output_dir: Path = Field(Path("output"), description="CSV reports and the run registry")
    checkpoint_dir: Path = Field(Path("checkpoints"), description="Model checkpoints")
    holidays: Path = Field(DEFAULT_HOLIDAY_FILE, description="Holiday list, one ISO date per line")

    @property
    def dataset_path(self) -> Path:
        return self.data_dir / self.dataset


class DataConfig(BaseModel):
    start: str = Field("2018-04-01", description="First day of generated data")
    days: int = Field(183, ge=1, description="Days of generated data")
    households: int = Field(3, ge=1, description="Households in generated data")
    noise: float = Field(0.1, ge=0.0, description="Relative noise of generated data")
    test_start: str = Field("2018-07-01", description="First test day")
    test_end: str = Field("2018-07-31", description="Last test day")
    eval_day: str = Field("2018-07-16", description="Representative test day for evaluate and compare")
    max_missing_fraction: float = Field(0.05, ge=0.0, le=1.0, description="Reject data with more missing hours")
    max_gap: int = Field(3, ge=0, description="Longest run of missing hours that is interpolated")

    @field_validator("start", "test_start", "test_end", "eval_day", mode="before")
    @classmethod
    def _iso_date(cls, value):
        # YAML reads unquoted dates as date objects
        return value.isoformat() if isinstance(value, date) else value


class SweepConfig(BaseModel):
    rhos: List[float] = Field([0.1, 0.3, 0.5, 0.7, 0.9], description="Weights swept by sweep-rho")
    episodes: Optional[int] = Field(None, ge=1, description="Episodes per sweep point; defaults to agent.episodes")


class RunConfig(BaseModel):
    seed: int = Field(42, description="Seed for data generation, training and sampling")
    paths: PathsConfig = Field(default_factory=PathsConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    forecast: ForecastConfig = Field(default_factory=ForecastConfig)
    appliances: List[ApplianceSpec] = Field(
        default_factory=lambda: [a.model_copy() for a in DEFAULT_FLEET],
        description="Appliance fleet shared by every household",
    )
    env: EnvConfig = Field(default_factory=EnvConfig)
    agent: AgentConfig = Field(default_factory=AgentConfig)
    benchmark: BenchmarkConfig = Field(default_factory=BenchmarkConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)


def _validate(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration:\n{e}") from e


def load_config(path=None) -> RunConfig:
    """Compiled defaults, then the YAML file at ``path`` if given."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}")
    with path.open("r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigurationError(f"{path}: not valid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return _validate(data)


def dump_config(config: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=False)
    return path


def _set_key(data: Dict[str, Any], key: str, value: Any):
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigurationError(f"Unknown config section in {key!r}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigurationError(f"Unknown config key {key!r}")
    node[parts[-1]] = value


def apply_overrides(config: RunConfig, overrides: Iterable[str]) -> RunConfig:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars or lists."""
    data = config.model_dump(mode="json")
    changed = False
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"Override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Override {item!r}: cannot parse value") from e
        _set_key(data, key.strip(), value)
        changed = True
    return _validate(data) if changed else config


def apply_env(config: RunConfig, environ: Optional[Dict[str, str]] = None, dotenv: bool = True) -> RunConfig:
    """Apply CAPDR_* variables, reading a .env file first when ``dotenv`` is set."""
    if dotenv:
        load_dotenv()
    environ = os.environ if environ is None else environ
    overrides = [
        f"{key}={environ[ENV_PREFIX + suffix]}"
        for suffix, key in ENV_KEYS.items()
        if environ.get(ENV_PREFIX + suffix)
    ]
    return apply_overrides(config, overrides)


def resolve_config(path=None, overrides: Iterable[str] = (), environ=None, dotenv: bool = True) -> RunConfig:
    """Defaults < YAML file < environment < explicit overrides."""
    config = apply_env(load_config(path), environ, dotenv)
    return apply_overrides(config, overrides)


def describe_fields(model=RunConfig, prefix: str = "") -> List[Tuple[str, Any, str]]:
    """(dotted key, default, description) for every config field."""
    rows = []
    for name, info in model.model_fields.items():
        key = f"{prefix}{name}"
        annotation = info.annotation
        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            rows.extend(describe_fields(annotation, key + "."))
            continue
        default = info.get_default(call_default_factory=True)
        if isinstance(default, list) and default and isinstance(default[0], BaseModel):
            default = f"[{', '.join(getattr(d, 'name', type(d).__name__) for d in default)}]"
        rows.append((key, default, info.description or ""))
    return rows


def config_help() -> str:
    lines = ["Configuration keys (override with --set key=value):"]
    for key, default, description in describe_fields():
        lines.append(f"  {key} = {default!s}")
        if description:
            lines.append(f"      {description}")
    return "\n".join(lines)
