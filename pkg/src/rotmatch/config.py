"""Dotted-key configuration: UTF-8 text files with `section.key = value`
lines mirroring the config dataclasses; every default printable.
"""

import json
from dataclasses import dataclass, fields

from .backbone import BackboneConfig
from .matcher import MatcherConfig


@dataclass
class TrainSettings:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 2
    steps: int = 1500
    val_interval: int = 250
    lambda_fine: float = 1.0
    seed: int = 0
    keep_top: int = 5         # retained best checkpoints
    lr_scale_with_batch: bool = True


@dataclass
class EvalSettings:
    ransac_thresh_px: float = 3.0
    ransac_confidence: float = 0.995
    ransac_max_iter: int = 2000
    ransac_seed: int = 0
    thresholds: tuple = (3.0, 5.0, 10.0)


@dataclass
class Config:
    backbone: BackboneConfig
    matcher: MatcherConfig
    train: TrainSettings
    eval: EvalSettings

    @classmethod
    def default(cls):
        return cls(backbone=BackboneConfig(), matcher=MatcherConfig(),
                   train=TrainSettings(), eval=EvalSettings())

    def validate(self):
        self.backbone.validate()
        self.matcher.validate()
        if self.train.steps <= 0:
            raise ValueError("train.steps must be positive")
        if self.train.lr <= 0:
            raise ValueError("train.lr must be positive")
        return self

    def sections(self):
        return {"backbone": self.backbone, "matcher": self.matcher,
                "train": self.train, "eval": self.eval}

    def to_text(self):
        lines = []
        for sec_name, sec in self.sections().items():
            for f in fields(sec):
                val = getattr(sec, f.name)
                if isinstance(val, tuple):
                    val = list(val)
                lines.append(f"{sec_name}.{f.name} = {json.dumps(val)}")
        return "\n".join(lines) + "\n"

    def hash(self):
        import hashlib
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


def parse_value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text   # bare strings (e.g. variant names) need no quotes


def load_config(path=None, overrides=None):
    """Config from defaults, an optional file, and optional key=value overrides."""
    cfg = Config.default()
    entries = []
    if path:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'section.key = value'")
                key, val = line.split("=", 1)
                entries.append((key.strip(), val))
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override {item!r}: expected 'section.key=value'")
        key, val = item.split("=", 1)
        entries.append((key.strip(), val))
    secs = cfg.sections()
    for key, val in entries:
        if "." not in key:
            raise ValueError(f"config key {key!r} must be 'section.key'")
        sec_name, field_name = key.split(".", 1)
        if sec_name not in secs:
            raise ValueError(f"unknown config section {sec_name!r}")
        sec = secs[sec_name]
        if not hasattr(sec, field_name):
            raise ValueError(f"unknown config key {key!r}")
        current = getattr(sec, field_name)
        parsed = parse_value(val)
        if isinstance(current, tuple) and isinstance(parsed, list):
            parsed = tuple(parsed)
        if isinstance(current, bool):
            parsed = bool(parsed)
        elif isinstance(current, int) and not isinstance(parsed, bool) \
                and isinstance(parsed, (int, float)):
            parsed = int(parsed)
        elif isinstance(current, float) and isinstance(parsed, (int, float)):
            parsed = float(parsed)
        setattr(sec, field_name, parsed)
    return cfg.validate()
