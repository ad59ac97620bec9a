"""Training configuration: dataclass groups plus a flat dotted-key loader.

Config files are YAML mappings whose keys are dotted paths into the
TrainConfig tree (``optim.lr_position: 1.6e-4``). Unknown keys are a hard
error and every offender is reported at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass

import yaml

from .core import InvalidParameterError


@dataclass
class OptimSettings:
    iterations: int = 5000
    lr_position: float = 1.6e-4
    # exponential position-lr decay, final multiplier at the last iteration
    lr_position_final: float = 0.01
    lr_rotation: float = 1e-3
    lr_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_sh: float = 2.5e-3
    lr_field: float = 1e-3
    densify_interval: int = 100  # 0 disables density control entirely
    densify_start: int = 500
    densify_stop: int = -1  # -1 resolves to iterations // 2
    grad_threshold: float = 2e-4
    opacity_prune_threshold: float = 0.005
    scale_split_threshold: float = 0.02
    opacity_reset: bool = True
    opacity_reset_interval: int = 3000
    max_gaussians: int = 20000


@dataclass
class SciSettings:
    compression_ratio: int = 8
    overlap_ratio: float = 0.25
    noise_sigma: float = 0.0


@dataclass
class FilterSettings:
    enabled: bool = True
    gamma: float = 0.2
    recompute_interval: int = 100


@dataclass
class FieldSettings:
    embed_levels: int = 6
    depth: int = 8
    width: int = 512
    detach_base_positions: bool = False


@dataclass
class LossSettings:
    lambda_dssim: float = 0.2


@dataclass
class ImageSettings:
    width: int = 64
    height: int = 64


@dataclass
class CamSettings:
    focal: float = 70.0
    distance: float = 4.0
    jitter: float = 0.05


@dataclass
class SceneSettings:
    init_points: int = 400
    bounds_min: tuple = (-1.2, -1.2, -0.5)
    bounds_max: tuple = (1.2, 1.2, 0.5)


@dataclass
class IoSettings:
    checkpoint_every: int = 1000  # 0 keeps only the final checkpoint


@dataclass
class TrainConfig:
    seed: int = 0
    optim: OptimSettings = field(default_factory=OptimSettings)
    sci: SciSettings = field(default_factory=SciSettings)
    filter: FilterSettings = field(default_factory=FilterSettings)
    field_: FieldSettings = field(default_factory=FieldSettings)
    loss: LossSettings = field(default_factory=LossSettings)
    image: ImageSettings = field(default_factory=ImageSettings)
    cam: CamSettings = field(default_factory=CamSettings)
    scene: SceneSettings = field(default_factory=SceneSettings)
    io: IoSettings = field(default_factory=IoSettings)

    def densify_window(self):
        """(start, stop) with the -1 sentinel resolved."""
        stop = self.optim.densify_stop
        if stop < 0:
            stop = self.optim.iterations // 2
        return self.optim.densify_start, stop

    def validate(self):
        problems = []
        o = self.optim
        if o.iterations < 0:
            problems.append("optim.iterations must be >= 0")
        start, stop = self.densify_window()
        if o.densify_interval > 0 and o.iterations > 0 and not (
            start < stop <= o.iterations
        ):
            problems.append(
                "densification window requires densify_start < densify_stop"
                " <= iterations"
            )
        if self.sci.compression_ratio < 1:
            problems.append("sci.compression_ratio must be >= 1")
        if not 0.0 <= self.sci.overlap_ratio <= 1.0:
            problems.append("sci.overlap_ratio must be in [0, 1]")
        if self.filter.gamma <= 0.0:
            problems.append("filter.gamma must be positive")
        if self.filter.recompute_interval < 1:
            problems.append("filter.recompute_interval must be >= 1")
        if not 0.0 <= self.loss.lambda_dssim <= 1.0:
            problems.append("loss.lambda_dssim must be in [0, 1]")
        if self.image.width < 1 or self.image.height < 1:
            problems.append("image dimensions must be positive")
        if self.scene.init_points < 1:
            problems.append("scene.init_points must be >= 1")
        f = self.field_
        if f.embed_levels < 1 or f.depth < 1 or f.width < 1:
            problems.append("field dimensions must be >= 1")
        bmin = tuple(self.scene.bounds_min)
        bmax = tuple(self.scene.bounds_max)
        if len(bmin) != 3 or len(bmax) != 3 or any(
            lo >= hi for lo, hi in zip(bmin, bmax)
        ):
            problems.append("scene bounds must satisfy bounds_min < bounds_max")
        if problems:
            raise InvalidParameterError("invalid config: " + "; ".join(problems))
        return self


# dotted-key group name -> dataclass field ("field" is a reserved-ish name
# in this codebase, stored as field_)
_GROUPS = {
    "optim": "optim",
    "sci": "sci",
    "filter": "filter",
    "field": "field_",
    "loss": "loss",
    "image": "image",
    "cam": "cam",
    "scene": "scene",
    "io": "io",
}


def _coerce(name, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidParameterError(f"{name}: expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidParameterError(f"{name}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidParameterError(f"{name}: expected a number")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise InvalidParameterError(
                f"{name}: expected a list of {len(default)} numbers"
            )
        return tuple(float(v) for v in value)
    return value


def _flatten_groups(mapping):
    # accept nested YAML sections alongside dotted keys
    flat = {}
    for key, value in mapping.items():
        if isinstance(value, dict) and "." not in str(key):
            for sub, sv in value.items():
                dotted = f"{key}.{sub}"
                if dotted in mapping:
                    raise InvalidParameterError(
                        f"config sets {dotted} both nested and dotted"
                    )
                flat[dotted] = sv
        else:
            flat[key] = value
    return flat


def from_flat(mapping) -> TrainConfig:
    """Build a TrainConfig from a mapping of dotted keys, nested group
    sections, or a mix.

    Every unknown key is collected and reported in one error.
    """
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise InvalidParameterError("config must be a key/value mapping")
    mapping = _flatten_groups(mapping)
    cfg = TrainConfig()
    unknown = []
    bad_types = []
    for key in sorted(mapping):
        value = mapping[key]
        if key == "seed":
            target, attr, default = cfg, "seed", cfg.seed
        else:
            head, _, tail = key.partition(".")
            group_attr = _GROUPS.get(head)
            if group_attr is None or not tail:
                unknown.append(key)
                continue
            group = getattr(cfg, group_attr)
            if tail not in {f.name for f in fields(group)}:
                unknown.append(key)
                continue
            target, attr, default = group, tail, getattr(group, tail)
        try:
            setattr(target, attr, _coerce(key, default, value))
        except InvalidParameterError as err:
            bad_types.append(str(err))
    problems = []
    if unknown:
        problems.append("unknown config keys: " + ", ".join(sorted(unknown)))
    if bad_types:
        problems.append("bad value types: " + "; ".join(bad_types))
    if problems:
        raise InvalidParameterError("; ".join(problems))
    return cfg.validate()


def to_flat(cfg: TrainConfig) -> dict:
    """Inverse of from_flat (bounds tuples become lists for YAML)."""
    out = {"seed": cfg.seed}
    reverse = {attr: dotted for dotted, attr in _GROUPS.items()}
    for f in fields(cfg):
        if not is_dataclass(getattr(cfg, f.name)):
            continue
        group = getattr(cfg, f.name)
        prefix = reverse[f.name]
        for gf in fields(group):
            value = getattr(group, gf.name)
            if isinstance(value, tuple):
                value = list(value)
            out[f"{prefix}.{gf.name}"] = value
    return out


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return from_flat(data)


def dump_config(cfg: TrainConfig) -> str:
    return yaml.safe_dump(to_flat(cfg), sort_keys=True)


def config_from_yaml(text: str) -> TrainConfig:
    return from_flat(yaml.safe_load(text))


def replace(cfg: TrainConfig, **updates) -> TrainConfig:
    """Copy with dotted-key updates, e.g. replace(cfg, **{"optim.iterations": 10})."""
    flat = to_flat(cfg)
    for key, value in updates.items():
        if key not in flat:
            raise InvalidParameterError(f"unknown config keys: {key}")
        flat[key] = value
    return from_flat(flat)
