"""Experiment configuration: one JSON file with sections synth, tsr, enc,
head, train, eval. Every key has a default; the defaults are sized so a
full two-step training run finishes in minutes on a laptop CPU."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from .recognizer import HeadConfig
from .synthdata import SynthConfig
from .tsrnet import TsrConfig


@dataclass
class EncConfig:
    hidden: int = 2048


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch: int = 2           # realized as gradient accumulation
    epochs: int = 20
    milestones: tuple[int, ...] = (10, 15)
    lr_decay: float = 0.2
    seed: int = 0


@dataclass
class EvalConfig:
    beam_width: int = 10
    factors: tuple[int, ...] = (1, 2, 4, 8)
    reconstructors: tuple[str, ...] = ("tsrnet", "nearest", "linear")


def _default_tsr():
    # Desk-scale generator dims; TsrConfig's own defaults mirror the
    # full-size architecture and stay available through the config file.
    return TsrConfig(c1=64, c2=128, c3=128, m=1, k=1)


@dataclass
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    tsr: TsrConfig = field(default_factory=_default_tsr)
    enc: EncConfig = field(default_factory=EncConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.head.vocab_size != self.synth.vocab_size:
            raise ValueError("head.vocab_size must match synth.vocab_size")

    def to_dict(self):
        return {k: asdict(getattr(self, k)) for k in
                ("synth", "tsr", "enc", "head", "train", "eval")}

    def fingerprint(self) -> bytes:
        """16-byte digest of the model-shape-relevant sections."""
        shape = {k: self.to_dict()[k] for k in ("synth", "tsr", "enc", "head")}
        blob = json.dumps(shape, sort_keys=True).encode()
        return hashlib.sha256(blob).digest()[:16]


_SECTIONS = {
    "synth": SynthConfig,
    "tsr": TsrConfig,
    "enc": EncConfig,
    "head": HeadConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}

_TUPLE_KEYS = {"sentence_len", "word_duration", "milestones", "factors", "reconstructors"}


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Build a config from defaults, an optional JSON file, and optional
    {"section.key": value} overrides (applied last)."""
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
    sections = {}
    for name, cls in _SECTIONS.items():
        kwargs = dict(asdict(cls()) if name != "tsr" else asdict(_default_tsr()))
        for key, val in raw.get(name, {}).items():
            if key not in kwargs:
                raise ValueError(f"unknown config key {name}.{key}")
            kwargs[key] = val
        sections[name] = kwargs
    for dotted, val in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        if sec not in sections or key not in sections[sec]:
            raise ValueError(f"unknown config key {dotted}")
        sections[sec][key] = val
    for name, kwargs in sections.items():
        for key in list(kwargs):
            if key in _TUPLE_KEYS and isinstance(kwargs[key], list):
                kwargs[key] = tuple(kwargs[key])
    return ExperimentConfig(**{name: cls(**sections[name])
                               for name, cls in _SECTIONS.items()})


def save_config(path, cfg: ExperimentConfig):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
