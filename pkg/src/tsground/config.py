"""Experiment configuration: model sizes, grounding, optimizer, data, ablations."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

STREAMS = ("appearance", "motion", "threed")

# (target, source) pairs of the associator's six guidance directions.
GUIDANCE = (
    ("threed", "appearance"), ("threed", "motion"),
    ("appearance", "threed"), ("appearance", "motion"),
    ("motion", "threed"), ("motion", "appearance"),
)


class ConfigError(ValueError):
    """Invalid or unknown configuration values."""


@dataclass
class ExperimentConfig:
    # model dims
    T: int = 32
    K: int = 4
    D: int = 64
    D_in: int = 32
    D_w: int = 32
    heads: int = 4
    hidden: int = 32
    max_words: int = 8
    graph_layers: int = 1
    # grounding
    widths: list = field(default_factory=lambda: [4, 8, 16, 24, 32])
    stride: int = 1
    pos_threshold: float = 0.55
    alpha: float = 0.005
    nms_threshold: float = 0.5
    readout: str = "span"
    # optimizer
    lr: float = 2e-3
    batch_size: int = 16
    epochs: int = 30
    clip_norm: float = 1.0
    patience: int = 10
    seed: int = 0
    dtype: str = "float32"
    # data
    train_count: int = 2000
    test_count: int = 500
    object_vocab: int = 8
    pattern_vocab: int = 8
    filler_vocab: int = 8
    noise: float = 0.05
    signal: float = 2.0
    threed_clip: int = 8
    # ablation flags
    use_appearance: bool = True
    use_motion: bool = True
    use_threed: bool = True
    use_associator: bool = True
    use_graph: bool = True
    use_gate: bool = True
    guide_threed_appearance: bool = True
    guide_threed_motion: bool = True
    guide_appearance_threed: bool = True
    guide_appearance_motion: bool = True
    guide_motion_threed: bool = True
    guide_motion_appearance: bool = True

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        self.validate()

    def validate(self) -> None:
        counts = dict(T=self.T, K=self.K, D=self.D, D_in=self.D_in, D_w=self.D_w,
                      heads=self.heads, hidden=self.hidden, max_words=self.max_words,
                      stride=self.stride, batch_size=self.batch_size,
                      train_count=self.train_count, test_count=self.test_count,
                      patience=self.patience, graph_layers=self.graph_layers,
                      threed_clip=self.threed_clip)
        for k, v in counts.items():
            if int(v) < 1:
                raise ConfigError(f"{k} must be >= 1, got {v}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.D % self.heads:
            raise ConfigError(f"D={self.D} not divisible by heads={self.heads}")
        if self.D % 4 or (self.D // 4) % 2:
            raise ConfigError(f"D={self.D}: position encodings need D/4 even")
        if not 0.0 < self.pos_threshold < 1.0:
            raise ConfigError("pos_threshold must lie in (0, 1)")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if not self.widths or min(self.widths) < 1:
            raise ConfigError("widths must be a non-empty list of positive ints")
        if self.readout not in ("span", "start"):
            raise ConfigError(f"unknown readout {self.readout!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unknown dtype {self.dtype!r}")
        if self.lr < 0 or self.clip_norm <= 0:
            raise ConfigError("lr must be >= 0 and clip_norm > 0")
        if not self.enabled_streams:
            raise ConfigError("at least one stream must be enabled")

    # -- derived ------------------------------------------------------------
    @property
    def enabled_streams(self) -> tuple:
        return tuple(s for s in STREAMS if getattr(self, f"use_{s}"))

    def guidance_enabled(self, target: str, source: str) -> bool:
        return (self.use_associator and getattr(self, f"use_{source}")
                and getattr(self, f"guide_{target}_{source}"))

    @property
    def pos_dim(self) -> int:
        return self.D // 4

    # -- serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), **changes})

    def disable(self, flags) -> "ExperimentConfig":
        """Variant with the named ablation flags switched off.

        Flag names are the boolean field names without their ``use_`` prefix
        (``appearance``, ``associator``, ``graph``, ...) or ``guide_*`` names.
        """
        changes = {}
        for flag in flags:
            flag = flag.strip()
            if not flag:
                continue
            key = flag if flag.startswith("guide_") else f"use_{flag}"
            if not hasattr(self, key) or not isinstance(getattr(self, key), bool):
                raise ConfigError(f"unknown ablation flag {flag!r}")
            changes[key] = False
        return self.replace(**changes)


def full_scale_config() -> ExperimentConfig:
    """Full-scale sizes and optimizer settings of the benchmark experiments.

    Widths are a choice: {4, 32, 64, 128} at stride 1 gives 800 anchors on
    T=256, the per-video proposal count used for the shorter-video benchmarks.
    """
    return ExperimentConfig(T=256, K=20, D=1024, D_in=1024, D_w=300, heads=8, hidden=512,
                            max_words=32, alpha=0.005, pos_threshold=0.55, batch_size=16,
                            lr=4e-4, clip_norm=1.0, epochs=100,
                            widths=[4, 32, 64, 128], stride=1)


def tiny_config(**overrides) -> ExperimentConfig:
    """Small double-precision setup used for finite-difference verification."""
    base = dict(T=8, K=3, D=16, D_in=8, D_w=8, heads=2, hidden=8, max_words=5,
                widths=[2, 4], dtype="float64", train_count=4, test_count=4,
                object_vocab=2, pattern_vocab=2, filler_vocab=2, batch_size=2)
    base.update(overrides)
    return ExperimentConfig(**base)
