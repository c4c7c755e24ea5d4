"""Experiment configuration: one nested document, canonical serialization.

The canonical form is YAML with sorted keys; loading rejects unknown keys
and load -> save is a byte-level fixed point.  Two hashes derive from it:
``fingerprint()`` covers the whole document; ``arch_fingerprint()`` covers
only the sections that determine network/schedule compatibility and is
what checkpoints are stamped with (paths, seed and device can change
without invalidating trained weights).

Environment overrides are limited to seed, device and paths:
AVATEX_SEED, AVATEX_DEVICE, AVATEX_DATA_ROOT, AVATEX_CHECKPOINT_ROOT,
AVATEX_RUNS_ROOT.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass(frozen=True)
class ScheduleSection:
    kind: str = "scaled_linear"
    t_train: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012


@dataclass(frozen=True)
class ModelSection:
    image_size: int = 64
    latent_channels: int = 4
    latent_downsample: int = 8
    unet_channels: tuple = (40, 56, 64)
    cond_dim: int = 48
    temb_dim: int = 96
    ae_channels: tuple = (28, 40, 56)


@dataclass(frozen=True)
class TrainComponent:
    steps: int
    batch_size: int
    lr: float


@dataclass(frozen=True)
class TrainSection:
    autoencoder: TrainComponent = TrainComponent(2400, 16, 2.5e-3)
    image_model: TrainComponent = TrainComponent(3600, 32, 1.5e-3)
    texture_model: TrainComponent = TrainComponent(2000, 32, 1.5e-3)
    pbr_decoders: TrainComponent = TrainComponent(900, 16, 2e-3)
    lambda_weight: float = 1.0
    null_drop: float = 0.15


@dataclass(frozen=True)
class DelightSection:
    steps: int = 20
    exclude_last_k: int = 2
    mask_source: str = "denoise"
    auto_mask_k: int = 6


@dataclass(frozen=True)
class TexgenSection:
    steps_total: int = 200
    steps_guided: int = 90
    omega: float = 7.5
    omega_p: float = 0.1
    omega_e: float = 0.05
    omega_photo: float = 0.4
    omega_lpips: float = 0.6
    edit_omega_p: float = 0.01
    edit_omega_e: float = 0.005
    edit_strength: float = 0.55
    cfg_in_inpaint: bool = True
    normalize_gradients: bool = True


@dataclass(frozen=True)
class SynthSection:
    identities: int = 128
    views: int = 4
    rigs: tuple = ("harsh_specular", "shadow_side")
    tex_size: int = 64
    holdout: int = 16


@dataclass(frozen=True)
class GeometrySection:
    n_lat: int = 24
    n_lon: int = 32
    n_id: int = 8
    n_expr: int = 4
    head_seed: int = 7121
    camera_distance: float = 3.2
    camera_focal: float = 90.0


@dataclass(frozen=True)
class PipelineSection:
    t2i_steps: int = 40
    preview_rigs: tuple = ("soft_front", "harsh_specular", "shadow_side")


@dataclass(frozen=True)
class PathsSection:
    data_root: str = "data/synth"
    checkpoint_root: str = "checkpoints"
    runs_root: str = "runs"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    device: str = "cpu"
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    delight: DelightSection = field(default_factory=DelightSection)
    texgen: TexgenSection = field(default_factory=TexgenSection)
    synth: SynthSection = field(default_factory=SynthSection)
    geometry: GeometrySection = field(default_factory=GeometrySection)
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    paths: PathsSection = field(default_factory=PathsSection)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return _to_plain(self)

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        return _from_plain(ExperimentConfig(), d, path="")

    def canonical_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_yaml().encode()).hexdigest()[:16]

    def arch_fingerprint(self) -> str:
        subset = {
            "schedule": _to_plain(self.schedule),
            "model": _to_plain(self.model),
            "geometry": _to_plain(self.geometry),
        }
        text = yaml.safe_dump(subset, sort_keys=True, default_flow_style=False)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(x) for x in obj]
    return obj


def _from_plain(defaults, d, path: str):
    """Rebuild a dataclass from a plain dict, using ``defaults`` (an instance
    of the same class) for types and missing values; rejects unknown keys."""
    if not isinstance(d, dict):
        raise ConfigError(f"expected a mapping at '{path or 'top level'}', got {type(d).__name__}")
    cls = type(defaults)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown config key(s) at '{path or 'top level'}': {sorted(unknown)}")
    kwargs = {}
    for name in names:
        default = getattr(defaults, name)
        if name not in d:
            kwargs[name] = default
            continue
        value = d[name]
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _from_plain(default, value, sub)
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"'{sub}' must be a list")
            kwargs[name] = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"'{sub}' must be a boolean")
            kwargs[name] = value
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"'{sub}' must be an integer")
            kwargs[name] = value
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"'{sub}' must be a number")
            kwargs[name] = float(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path) -> "ExperimentConfig":
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed config file {path}: {e}") from e
    if raw is None:
        raw = {}
    return ExperimentConfig.from_dict(raw)


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(config.canonical_yaml())


def apply_env_overrides(config: ExperimentConfig, environ) -> ExperimentConfig:
    changes = {}
    if "AVATEX_SEED" in environ:
        try:
            changes["seed"] = int(environ["AVATEX_SEED"])
        except ValueError:
            raise ConfigError("AVATEX_SEED must be an integer") from None
    if "AVATEX_DEVICE" in environ:
        changes["device"] = environ["AVATEX_DEVICE"]
    paths = {}
    for env, key in (("AVATEX_DATA_ROOT", "data_root"),
                     ("AVATEX_CHECKPOINT_ROOT", "checkpoint_root"),
                     ("AVATEX_RUNS_ROOT", "runs_root")):
        if env in environ:
            paths[key] = environ[env]
    if paths:
        changes["paths"] = dataclasses.replace(config.paths, **paths)
    return dataclasses.replace(config, **changes) if changes else config
