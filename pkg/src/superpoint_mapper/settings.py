"""
Configuration loading for spmap

Search order (later overrides earlier):
1. Built-in defaults
2. ~/.config/spmap/config.toml (user global, XDG aware)
3. ./.spmap.toml (local directory)
4. Explicit --config FILE
5. Environment variables (SPMAP_*)
6. CLI arguments (highest priority)

Config files are flat `key = value` TOML; per-class thresholds are tables keyed by
class id. Unknown keys are rejected.
"""

import dataclasses
import logging
import os
import tomllib
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .core import ClassId
from .errors import ConfigError
from .instances import RefinementParams
from .regularizer import EnergyParams
from .segmentation import SegmentationParams
from .superpoints import AssignmentParams, MergePolicyKind

logger = logging.getLogger(__name__)

CONFIG_FILENAME = "config.toml"
LOCAL_CONFIG_FILENAME = ".spmap.toml"

ENV_PREFIX = "SPMAP_"

_PER_CLASS_KEYS = ("theta_d_per_class", "theta_o_per_class", "theta_l_per_class")


def get_config_dir() -> Path:
    """Get user config directory (XDG-compliant)."""
    xdg_config = os.environ.get("XDG_CONFIG_HOME")
    if xdg_config:
        return Path(xdg_config) / "spmap"
    return Path.home() / ".config" / "spmap"


def get_config_paths() -> list[Path]:
    """
    Return config paths to check, lowest precedence first.

    Returns paths that WOULD be checked - caller should verify existence.
    """
    return [get_config_dir() / CONFIG_FILENAME, Path.cwd() / LOCAL_CONFIG_FILENAME]


@dataclass(frozen=True)
class PipelineConfig:
    """
    Every tunable of the mapping and query pipeline.

    Attributes:
        voxel_size: TSDF voxel edge in meters
        truncation: TSDF truncation distance in meters
        theta_merge: Co-observation count a superpoint pair must exceed to merge
        k_c, theta: Pairwise energy scale and bandwidth
        sigma_spatial: Spatial-confidence length scale in meters
        theta_d, theta_o, theta_l: Instance refinement thresholds (overridable per class)
        semantic_consistency, regularization, refinement: Ablation switches
        evaluation_classes: Classes scored by evaluation; empty means all thing classes
    """
    voxel_size: float = 0.01
    truncation: float = 0.04
    block_size: int = 16
    theta_merge: int = 3
    k_c: float = 15.0
    theta: float = 0.5
    eps_prob: float = 1e-6
    max_sweeps: int = 100
    min_overlap_ratio: float = 0.25
    min_overlap_voxels: int = 10
    sigma_spatial: float = 0.05
    coarse_factor: int = 4
    max_hits_per_instance: int = 8
    min_surface_px: int = 20
    min_segment_px: int = 100
    max_concavity_deg: float = 10.0
    max_step_m: float = 0.05
    theta_d: float = 0.3
    theta_o: float = 0.3
    theta_l: float = 0.5
    theta_d_per_class: Mapping[ClassId, float] = field(default_factory=dict)
    theta_o_per_class: Mapping[ClassId, float] = field(default_factory=dict)
    theta_l_per_class: Mapping[ClassId, float] = field(default_factory=dict)
    association_min_ratio: float = 0.25
    workers: int = 2
    queue_capacity: int = 4
    seed: int = 0
    semantic_consistency: bool = True
    regularization: bool = True
    refinement: bool = True
    evaluation_classes: tuple[ClassId, ...] = ()
    transfer_distance: float = 0.03

    def __post_init__(self) -> None:
        positive = ("voxel_size", "truncation", "k_c", "theta", "sigma_spatial", "transfer_distance", "max_step_m")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"Invalid config: {name}={getattr(self, name)} must be positive")
        at_least_one = ("block_size", "min_overlap_voxels", "coarse_factor", "max_hits_per_instance",
                        "min_surface_px", "min_segment_px", "workers", "queue_capacity", "max_sweeps")
        for name in at_least_one:
            if getattr(self, name) < 1:
                raise ConfigError(f"Invalid config: {name}={getattr(self, name)} must be at least 1")
        if self.theta_merge < 0:
            raise ConfigError(f"Invalid config: theta_merge={self.theta_merge} must be non-negative")
        if self.truncation < 2 * self.voxel_size:
            raise ConfigError(f"Invalid config: truncation {self.truncation} below twice the voxel size")
        for name in ("min_overlap_ratio", "association_min_ratio"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigError(f"Invalid config: {name}={getattr(self, name)} outside (0, 1]")
        if not 0.0 < self.eps_prob < 1.0:
            raise ConfigError(f"Invalid config: eps_prob={self.eps_prob} outside (0, 1)")
        if not 0.0 <= self.max_concavity_deg <= 180.0:
            raise ConfigError(f"Invalid config: max_concavity_deg={self.max_concavity_deg} outside [0, 180]")
        thresholds = [self.theta_d, self.theta_o, self.theta_l]
        for name in _PER_CLASS_KEYS:
            thresholds.extend(getattr(self, name).values())
        if any(t < 0 for t in thresholds):
            raise ConfigError("Invalid config: refinement thresholds must be non-negative")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], base: "PipelineConfig | None" = None) -> "PipelineConfig":
        """
        Build a config from loose key/value data on top of `base`.

        Raises:
            ConfigError: On unknown keys or values of the wrong type
        """
        base = base or cls()
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
        values: dict[str, Any] = {}
        for key, raw in data.items():
            current = getattr(base, key)
            try:
                values[key] = _coerce(key, raw, current)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"Invalid value for {key}: {raw!r}") from e
        return dataclasses.replace(base, **values)

    def as_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def segmentation_params(self) -> SegmentationParams:
        return SegmentationParams(self.max_concavity_deg, self.max_step_m, self.min_segment_px)

    def assignment_params(self) -> AssignmentParams:
        return AssignmentParams(self.min_overlap_ratio, self.min_overlap_voxels, self.theta_merge)

    def energy_params(self) -> EnergyParams:
        return EnergyParams(self.k_c, self.theta, self.eps_prob)

    def refinement_params(self) -> RefinementParams:
        return RefinementParams(
            self.theta_d, self.theta_o, self.theta_l,
            dict(self.theta_d_per_class), dict(self.theta_o_per_class), dict(self.theta_l_per_class),
        )

    @property
    def merge_policy(self) -> MergePolicyKind:
        return MergePolicyKind.SEMANTIC if self.semantic_consistency else MergePolicyKind.SPATIAL


def _coerce(key: str, raw: Any, current: Any) -> Any:
    if key in _PER_CLASS_KEYS:
        if not isinstance(raw, Mapping):
            raise TypeError(key)
        return {int(k): float(v) for k, v in raw.items()}
    if key == "evaluation_classes":
        if isinstance(raw, str):
            return tuple(int(x) for x in raw.replace(",", " ").split())
        return tuple(int(x) for x in raw)
    if isinstance(current, bool):
        if isinstance(raw, str):
            return raw.strip().lower() in ("1", "true", "yes")
        return bool(raw)
    if isinstance(current, int):
        if isinstance(raw, float) and not raw.is_integer():
            raise ValueError(key)
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


@dataclass
class LoadedConfig:
    """Resolved config plus the sources that contributed to it"""
    config: PipelineConfig
    config_sources: list[str] = field(default_factory=list)


def read_config_file(path: Path) -> dict[str, Any]:
    """
    Raises:
        ConfigError: If the file is missing or not valid TOML
    """
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid config file {path}: {e}") from e


def _env_overrides() -> dict[str, str]:
    names = {f.name for f in dataclasses.fields(PipelineConfig)} - set(_PER_CLASS_KEYS)
    overrides = {}
    for name in sorted(names):
        value = os.environ.get(f"{ENV_PREFIX}{name.upper()}")
        if value is not None:
            overrides[name] = value
    return overrides


def load_config(
    config_file: Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    search: bool = True,
    use_env: bool = True,
) -> LoadedConfig:
    """
    Load and merge configuration from all sources.

    Args:
        config_file: Explicit config file, applied after the search paths
        overrides: CLI-level values, applied last
        search: Read the user and local config files
        use_env: Apply SPMAP_* environment variables

    Returns:
        Resolved config and the list of contributing sources

    Raises:
        ConfigError: On unknown keys, invalid values or an unreadable explicit file
    """
    loaded = LoadedConfig(PipelineConfig())

    if search:
        for config_path in get_config_paths():
            if config_path.exists():
                loaded.config = PipelineConfig.from_mapping(read_config_file(config_path), loaded.config)
                loaded.config_sources.append(str(config_path))
                logger.debug(f"Loaded config from {config_path}")

    if config_file is not None:
        loaded.config = PipelineConfig.from_mapping(read_config_file(config_file), loaded.config)
        loaded.config_sources.append(str(config_file))
        logger.debug(f"Loaded config from {config_file}")

    if use_env:
        env = _env_overrides()
        if env:
            loaded.config = PipelineConfig.from_mapping(env, loaded.config)
            loaded.config_sources.extend(f"env:{ENV_PREFIX}{name.upper()}" for name in env)

    if overrides:
        loaded.config = PipelineConfig.from_mapping(overrides, loaded.config)
        loaded.config_sources.append("cli")

    return loaded


def ensure_config_dir() -> Path:
    """Ensure user config directory exists and return its path."""
    config_dir = get_config_dir()
    config_dir.mkdir(parents=True, exist_ok=True)
    return config_dir


def get_default_config_content() -> str:
    """Return default config file content as a string."""
    return '''# spmap - User Configuration
# Place this file at: ~/.config/spmap/config.toml
# Or use a local override: ./.spmap.toml

# Map
voxel_size = 0.01          # meters
truncation = 0.04          # meters
block_size = 16            # voxels per block edge

# Superpoints
theta_merge = 3            # merge when co-observations exceed this
min_overlap_ratio = 0.25
min_overlap_voxels = 10

# Segmentation
max_concavity_deg = 10.0
max_step_m = 0.05
min_segment_px = 100
min_surface_px = 20

# Semantic graph and regularization
sigma_spatial = 0.05
k_c = 15.0
theta = 0.5
eps_prob = 1e-6

# Instance refinement
theta_d = 0.3
theta_o = 0.3
theta_l = 0.5

# Pipeline
workers = 2
queue_capacity = 4
seed = 0

# Per-class overrides, keyed by class id
# [theta_d_per_class]
# 3 = 0.4
'''


def init_config(force: bool = False) -> Path | None:
    """
    Initialize user config file with defaults.

    Args:
        force: If True, overwrite existing config.

    Returns:
        Path to created config file, or None if it already exists and force=False.
    """
    config_path = ensure_config_dir() / CONFIG_FILENAME

    if config_path.exists() and not force:
        return None

    config_path.write_text(get_default_config_content())
    return config_path
