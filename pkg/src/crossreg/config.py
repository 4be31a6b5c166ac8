"""Run configuration with TOML round-trip serialization.

Defaults are desk scale (64x128 images, 2048 points, 64 superpoints); the
full-scale settings used on KITTI remain reachable via ``paper_preset``.
Unknown keys in a config file are rejected rather than ignored.
"""

import dataclasses
import sys
from dataclasses import dataclass, field

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class DataConfig:
    source: str = "synthetic"          # "synthetic" | "kitti" | "scene-dir"
    scene_dir: str = ""
    kitti_root: str = ""
    split: str = "test"
    n_scenes: int = 16
    n_points: int = 2048
    image_width: int = 128
    image_height: int = 64
    n_primitives: int = 4
    rotation_jitter_deg: float = 10.0
    translation_jitter: float = 0.5
    frame_stride: int = 1


@dataclass
class ModelConfig:
    coarse_channels: int = 64
    fine_channels: int = 32
    blocks: int = 2
    n_superpoints: int = 64
    group_radius: float = 0.6
    patch_window: int = 16
    node_points: int = 4
    use_intensity: bool = True
    cross_value_source: str = "query_side"   # paper form; "key_side" for ablation
    frustum_threshold: float = 0.5
    mutual_check: bool = False


@dataclass
class LossSettings:
    delta_pos: float = 0.2
    delta_neg: float = 1.8
    gamma: float = 10.0
    safe_radius: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    n_fine_samples: int = 64
    printed_form: bool = False
    fine_margin_space: str = "printed"


@dataclass
class OptimConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class RansacSettings:
    inlier_threshold: float = 3.0
    max_iterations: int = 1000
    confidence: float = 0.999


@dataclass
class AblationConfig:
    disable_self_attention: bool = False
    disable_cross_attention: bool = False
    coarse_only: bool = False
    fine_only: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/latest"
    ir_tau: float = 2.0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossSettings = field(default_factory=LossSettings)
    optim: OptimConfig = field(default_factory=OptimConfig)
    ransac: RansacSettings = field(default_factory=RansacSettings)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    @staticmethod
    def paper_preset():
        """Full-scale settings: 160x512 images, 20480 points, 25 epochs."""
        cfg = RunConfig()
        cfg.data.image_width = 512
        cfg.data.image_height = 160
        cfg.data.n_points = 20480
        cfg.model.n_superpoints = 256
        cfg.model.group_radius = 2.0
        cfg.model.patch_window = 8
        cfg.optim.epochs = 25
        cfg.optim.lr_decay = 0.25
        cfg.optim.lr_decay_every = 5
        return cfg


def _to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    return obj


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, float):
        text = repr(value)
        return text if any(c in text for c in ".eE") else text + ".0"
    return str(value)


def dump_toml(tree: dict, _prefix="") -> str:
    """Serialize a nested dict of simple values to TOML text."""
    lines = []
    nested = []
    for key, value in tree.items():
        if isinstance(value, dict):
            nested.append((key, value))
        else:
            lines.append(f"{key} = {_format_value(value)}")
    out = "\n".join(lines)
    for key, sub in nested:
        name = f"{_prefix}{key}"
        out += f"\n\n[{name}]\n" + dump_toml(sub, _prefix=f"{name}.")
    return out.strip() + "\n"


def _apply(obj, tree, path=""):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in tree.items():
        where = f"{path}{key}"
        if key not in fields:
            raise ConfigError(f"unknown config key '{where}'")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a table")
            _apply(current, value, path=f"{where}.")
        else:
            expected = type(current)
            if expected is float and isinstance(value, int):
                value = float(value)
            if not isinstance(value, expected):
                raise ConfigError(f"'{where}' expects {expected.__name__}, got {type(value).__name__}")
            setattr(obj, key, value)
    return obj


def to_toml(cfg: RunConfig) -> str:
    return dump_toml(_to_dict(cfg))


def from_toml(text: str) -> RunConfig:
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return _apply(RunConfig(), tree)


def save_config(path, cfg: RunConfig):
    with open(path, "w") as fh:
        fh.write(to_toml(cfg))


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return from_toml(fh.read())
