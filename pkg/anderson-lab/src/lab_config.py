"""
Lab configuration.

Defaults shared by every subcommand: output directory, thread count,
solver tolerance, grid step, potential cap and path-integration settings.
Values are resolved in the order explicit flag > config file > ``LAB_*``
environment variables (optionally loaded from ``.env``) > built-in default.
"""

import logging
import os
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Mapping, Optional

from dotenv import dotenv_values, load_dotenv

from errors import ConfigError
from feynman_kac import PathConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "LAB_"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
LOG_FORMATS = ("text", "json")


@dataclass
class LabConfig:
    """Resolved lab settings."""
    output_dir: str = "lab_runs"
    threads: int = 1
    tol: float = 1e-6
    grid_step: float = 1.0 / 32
    cap: float = 1e4
    dt: float = 1e-3
    substep_factor: int = 8
    near_pole_radius: float = 0.05
    n_paths: int = 10000
    batch_size: int = 1000
    log_level: str = "INFO"
    log_format: str = "text"

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "LabConfig":
        """Build from string or typed values; unknown keys are a ConfigError."""
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")
        values = {}
        for key, raw in data.items():
            caster = known[key].type
            try:
                values[key] = caster(raw)
            except (TypeError, ValueError):
                raise ConfigError(f"Invalid value for {key}: {raw!r}")
        return cls(**values)

    def validate(self) -> List[str]:
        errors = []
        if not self.output_dir:
            errors.append("output_dir must be a non-empty path")
        if self.threads < 1:
            errors.append("threads must be at least 1")
        if not 0 < self.tol < 1:
            errors.append("tol must lie in (0, 1)")
        if not self.grid_step > 0:
            errors.append("grid_step must be positive")
        if self.log_level.upper() not in LOG_LEVELS:
            errors.append(f"log_level must be one of {', '.join(LOG_LEVELS)}")
        if self.log_format not in LOG_FORMATS:
            errors.append(f"log_format must be one of {', '.join(LOG_FORMATS)}")
        errors.extend(self.path_config().validate())
        return errors

    def path_config(self, n_paths: Optional[int] = None, seed: int = 0) -> PathConfig:
        return PathConfig(dt=self.dt, near_pole_radius=self.near_pole_radius, substep_factor=self.substep_factor,
                          cap=self.cap, n_paths=n_paths or self.n_paths, seed=seed, batch_size=self.batch_size)


def read_config_file(path: str) -> Dict[str, str]:
    """Flat ``key=value`` file; blank lines and ``#`` comments are ignored."""
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    values = dotenv_values(path)
    return {key.strip().lower(): value for key, value in values.items() if value is not None}


def environment_values(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    environ = os.environ if environ is None else environ
    names = {f.name for f in fields(LabConfig)}
    out = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in names:
                out[name] = value
    return out


class ConfigManager:
    """Resolves a LabConfig from defaults, environment, file and flags."""

    def __init__(self, load_env_file: bool = True):
        if load_env_file:
            load_dotenv()

    def resolve(self, config_file: Optional[str] = None, overrides: Optional[Mapping] = None,
                environ: Optional[Mapping[str, str]] = None) -> LabConfig:
        merged: Dict = {}
        merged.update(environment_values(environ))
        if config_file:
            merged.update(read_config_file(config_file))
        if overrides:
            merged.update({k: v for k, v in overrides.items() if v is not None})
        config = LabConfig.from_dict(merged)
        errors = config.validate()
        if errors:
            raise ConfigError("Invalid configuration: " + "; ".join(errors))
        logger.debug(f"Resolved configuration: {config.to_dict()}")
        return config
