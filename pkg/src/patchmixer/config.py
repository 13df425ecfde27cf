"""Run configuration: dataclasses plus an INI reader/writer.

INI files have sections ``[model]``, ``[train]``, ``[data]`` and ``[eval]``;
unknown sections or keys are rejected so typos never silently fall back to
defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import json
from dataclasses import dataclass, field
from typing import Optional

from .geometry import AugmentConfig

TOKEN_MIXERS = ("attentive", "vanilla", "none")
TASKS = ("classification", "segmentation")
POSITIONAL_WIDTH = 7


class ConfigError(ValueError):
    pass


@dataclass
class BackboneConfig:
    num_points: int = 1024           # V
    num_patches: int = 256           # P
    num_samples: int = 128           # S
    radius: Optional[float] = 0.3    # R (ball query)
    k: Optional[int] = None          # kNN neighbourhood, replaces radius
    features: int = 1024             # F
    token_hidden: int = 512          # F_T
    channel_hidden: int = 512        # F_C
    depth: int = 1                   # D
    embed_channels: tuple = (16, 32, 64, 128, 1024)
    mask_rate: float = 0.3
    token_mixer: str = "attentive"

    def __post_init__(self):
        self.embed_channels = tuple(int(c) for c in self.embed_channels)
        if not self.embed_channels or self.embed_channels[-1] != self.features:
            raise ConfigError(
                f"last embedding width {self.embed_channels[-1:]} must equal features={self.features}"
            )
        if self.depth < 1 or self.token_hidden < 1 or self.channel_hidden < 1:
            raise ConfigError("depth, token_hidden and channel_hidden must be >= 1")
        if (self.radius is None) == (self.k is None):
            raise ConfigError("set exactly one of radius or k")
        if self.token_mixer not in TOKEN_MIXERS:
            raise ConfigError(f"token_mixer must be one of {TOKEN_MIXERS}")
        if not 0 <= self.mask_rate < 1:
            raise ConfigError("mask_rate must lie in [0, 1)")
        if self.num_patches > self.num_points:
            raise ConfigError("num_patches cannot exceed num_points")

    @classmethod
    def desk(cls, **overrides) -> "BackboneConfig":
        """Small configuration used by the synthetic benchmark."""
        base = dict(
            num_points=256, num_patches=32, num_samples=32, radius=0.3, features=128,
            token_hidden=64, channel_hidden=64, depth=1, embed_channels=(16, 32, 64, 128, 128),
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def segmentation(cls, **overrides) -> "BackboneConfig":
        base = dict(num_points=2048, num_samples=64, radius=None, k=64, token_hidden=64, channel_hidden=64, depth=4)
        base.update(overrides)
        return cls(**base)


@dataclass
class HeadConfig:
    num_classes: int = 10
    hidden: tuple = (512, 256, 128)
    dropout: float = 0.5

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr_max: float = 1e-2
    lr_min: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 1e-5
    seed: int = 0
    task: str = "classification"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        bb = BackboneConfig(**d.pop("backbone"))
        head = HeadConfig(**d.pop("head"))
        aug = dict(d.pop("augment"))
        if aug.get("scale_range") is not None:
            aug["scale_range"] = tuple(aug["scale_range"])
        return cls(backbone=bb, head=head, augment=AugmentConfig(**aug), **d)

    def replace(self, **changes) -> "TrainConfig":
        """Copy with top-level or dotted (``backbone.depth``) fields changed."""
        d = self.to_dict()
        for key, value in changes.items():
            target = d
            parts = key.split(".")
            for part in parts[:-1]:
                target = target[part]
            if parts[-1] not in target:
                raise ConfigError(f"unknown config field {key!r}")
            target[parts[-1]] = value
        return TrainConfig.from_dict(d)


@dataclass
class RunConfig:
    """Everything a CLI run needs, as resolved from INI file plus flags."""

    train: TrainConfig = field(default_factory=TrainConfig)
    data: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)


# -- INI mapping ---------------------------------------------------------------

_MODEL_KEYS = {
    "num_points": ("backbone", int),
    "num_patches": ("backbone", int),
    "num_samples": ("backbone", int),
    "radius": ("backbone", "optfloat"),
    "k": ("backbone", "optint"),
    "features": ("backbone", int),
    "token_hidden": ("backbone", int),
    "channel_hidden": ("backbone", int),
    "depth": ("backbone", int),
    "embed_channels": ("backbone", "intlist"),
    "mask_rate": ("backbone", float),
    "token_mixer": ("backbone", str),
    "num_classes": ("head", int),
    "head_hidden": ("head", "intlist"),
    "dropout": ("head", float),
}
_TRAIN_KEYS = {
    "epochs": int, "batch_size": int, "lr_max": float, "lr_min": float, "momentum": float,
    "weight_decay": float, "seed": int, "task": str,
    "jitter_sigma": float, "rotate": "bool", "scale_min": "optfloat", "scale_max": "optfloat",
    "translate": "optfloat",
}
_DATA_KEYS = {"root": str, "train": str, "test": str}
_EVAL_KEYS = {"dump_embeddings": "bool"}


def _parse(value: str, kind):
    value = value.strip()
    if kind == "optfloat":
        return None if value.lower() in ("", "none") else float(value)
    if kind == "optint":
        return None if value.lower() in ("", "none") else int(value)
    if kind == "intlist":
        return tuple(int(v) for v in value.replace(",", " ").split())
    if kind == "bool":
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return kind(value)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_ini(text: str, base: Optional[TrainConfig] = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    unknown_sections = set(cp.sections()) - {"model", "train", "data", "eval"}
    if unknown_sections:
        raise ConfigError(f"unknown config sections: {sorted(unknown_sections)}")

    cfg = (base or TrainConfig()).to_dict()
    if "model" in cp:
        # k and radius are alternatives; naming one clears the other
        if "k" in cp["model"] and "radius" not in cp["model"]:
            cfg["backbone"]["radius"] = None
        if "radius" in cp["model"] and "k" not in cp["model"]:
            cfg["backbone"]["k"] = None
        for key, raw in cp["model"].items():
            if key not in _MODEL_KEYS:
                raise ConfigError(f"unknown key [model] {key}")
            group, kind = _MODEL_KEYS[key]
            name = "hidden" if key == "head_hidden" else key
            cfg[group][name] = _parse_checked("model", key, raw, kind)
    if "train" in cp:
        for key, raw in cp["train"].items():
            if key not in _TRAIN_KEYS:
                raise ConfigError(f"unknown key [train] {key}")
            val = _parse_checked("train", key, raw, _TRAIN_KEYS[key])
            if key in ("jitter_sigma", "rotate", "translate"):
                cfg["augment"][key] = val
            elif key in ("scale_min", "scale_max"):
                lo, hi = cfg["augment"]["scale_range"] or (None, None)
                lo, hi = (val, hi) if key == "scale_min" else (lo, val)
                cfg["augment"]["scale_range"] = None if lo is None or hi is None else (lo, hi)
            else:
                cfg[key] = val
    sections = {}
    for name, keys in (("data", _DATA_KEYS), ("eval", _EVAL_KEYS)):
        sections[name] = {}
        if name in cp:
            for key, raw in cp[name].items():
                if key not in keys:
                    raise ConfigError(f"unknown key [{name}] {key}")
                sections[name][key] = _parse_checked(name, key, raw, keys[key])
    try:
        train = TrainConfig.from_dict(cfg)
    except (TypeError, ConfigError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(train=train, data=sections["data"], eval=sections["eval"])


def _parse_checked(section, key, raw, kind):
    try:
        return _parse(raw, kind)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def load_ini(path, base: Optional[TrainConfig] = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_ini(fh.read(), base)


def dump_ini(run: RunConfig) -> str:
    t = run.train
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    bb, head, aug = t.backbone, t.head, t.augment
    cp["model"] = {
        "num_points": _fmt(bb.num_points), "num_patches": _fmt(bb.num_patches),
        "num_samples": _fmt(bb.num_samples), "radius": _fmt(bb.radius), "k": _fmt(bb.k),
        "features": _fmt(bb.features), "token_hidden": _fmt(bb.token_hidden),
        "channel_hidden": _fmt(bb.channel_hidden), "depth": _fmt(bb.depth),
        "embed_channels": _fmt(bb.embed_channels), "mask_rate": _fmt(bb.mask_rate),
        "token_mixer": bb.token_mixer, "num_classes": _fmt(head.num_classes),
        "head_hidden": _fmt(head.hidden), "dropout": _fmt(head.dropout),
    }
    scale = aug.scale_range or (None, None)
    cp["train"] = {
        "epochs": _fmt(t.epochs), "batch_size": _fmt(t.batch_size), "lr_max": repr(t.lr_max),
        "lr_min": repr(t.lr_min), "momentum": repr(t.momentum), "weight_decay": repr(t.weight_decay),
        "seed": _fmt(t.seed), "task": t.task, "jitter_sigma": repr(aug.jitter_sigma),
        "rotate": _fmt(aug.rotate), "scale_min": _fmt(scale[0]), "scale_max": _fmt(scale[1]),
        "translate": _fmt(aug.translate),
    }
    cp["data"] = {k: _fmt(v) for k, v in run.data.items()}
    cp["eval"] = {k: _fmt(v) for k, v in run.eval.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
