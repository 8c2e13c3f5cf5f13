"""Synthetic continuous-gesture dataset.

Each vocabulary word gets a fixed random unit prototype vector; a sentence
concatenates word segments of random duration with linear cross-fades
between adjacent prototypes, plus Gaussian noise. This reproduces the
statistical structure the reconstruction method exploits: adjacent frames
are highly similar and each word occupies a contiguous temporal segment.
In the noise-free limit the generative process is invertible (a
nearest-prototype frame classifier followed by the collapse mapping
recovers the label), which makes the recognition task well-posed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class DatasetFormatError(ValueError):
    """Malformed dataset file."""


_MAGIC = b"TSD1"
_VERSION = 1


@dataclass
class SynthConfig:
    vocab_size: int = 20
    sentence_len: tuple[int, int] = (3, 8)
    word_duration: tuple[int, int] = (8, 16)
    obs_dim: int = 64
    ramp: int = 3          # cross-fade width in frames
    noise: float = 0.1     # expected noise-to-signal norm ratio per frame
    n_train: int = 400
    n_dev: int = 50
    n_test: int = 50
    seed: int = 1234

    def __post_init__(self):
        if self.vocab_size < 1 or self.obs_dim < 1:
            raise ValueError("vocab_size and obs_dim must be >= 1")
        if self.sentence_len[0] < 1 or self.sentence_len[0] > self.sentence_len[1]:
            raise ValueError("bad sentence length range")
        if self.word_duration[0] < 2 or self.word_duration[0] > self.word_duration[1]:
            raise ValueError("word duration must be >= 2 and a valid range")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.ramp >= self.word_duration[0]:
            raise ValueError("ramp must be shorter than the minimum word duration")


@dataclass
class LabeledSequence:
    raw: np.ndarray        # (obs_dim, T) float32
    label: list[int]       # gloss ids in 1..vocab_size (blank 0 excluded)


@dataclass
class Dataset:
    vocab_size: int
    obs_dim: int
    train: list[LabeledSequence] = field(default_factory=list)
    dev: list[LabeledSequence] = field(default_factory=list)
    test: list[LabeledSequence] = field(default_factory=list)

    def splits(self):
        return {"train": self.train, "dev": self.dev, "test": self.test}


def word_prototypes(cfg: SynthConfig) -> np.ndarray:
    """(vocab_size, obs_dim) unit prototype vectors, row w-1 for word id w."""
    rng = np.random.default_rng(cfg.seed)
    protos = rng.standard_normal((cfg.vocab_size, cfg.obs_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    return protos


def _sample_sentence(cfg, protos, rng) -> LabeledSequence:
    lmin, lmax = cfg.sentence_len
    length = int(rng.integers(lmin, lmax + 1))
    words = []
    for _ in range(length):
        w = int(rng.integers(1, cfg.vocab_size + 1))
        # adjacent repeats would collapse and make the label unrecoverable
        while words and w == words[-1] and cfg.vocab_size > 1:
            w = int(rng.integers(1, cfg.vocab_size + 1))
        words.append(w)
    dmin, dmax = cfg.word_duration
    durations = rng.integers(dmin, dmax + 1, size=length)
    frames = np.concatenate([np.repeat(protos[w - 1][None, :], d, axis=0)
                             for w, d in zip(words, durations)], axis=0)
    # cross-fade over the `ramp` frames ending at each word boundary
    bound = 0
    for i in range(length - 1):
        bound += int(durations[i])
        a = protos[words[i] - 1]
        b = protos[words[i + 1] - 1]
        for o in range(cfg.ramp):
            alpha = (o + 1.0) / (cfg.ramp + 1.0)
            frames[bound - cfg.ramp + o + (cfg.ramp // 2)] = (1 - alpha) * a + alpha * b
    if cfg.noise > 0:
        frames = frames + rng.normal(0.0, cfg.noise / np.sqrt(cfg.obs_dim), size=frames.shape)
    return LabeledSequence(raw=frames.T.astype(np.float32), label=words)


def generate_dataset(cfg: SynthConfig) -> Dataset:
    """Deterministic function of the config; splits are independent draws
    over the shared vocabulary."""
    protos = word_prototypes(cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    ds = Dataset(vocab_size=cfg.vocab_size, obs_dim=cfg.obs_dim)
    for split, count in (("train", cfg.n_train), ("dev", cfg.n_dev), ("test", cfg.n_test)):
        seqs = [_sample_sentence(cfg, protos, rng) for _ in range(count)]
        getattr(ds, split).extend(seqs)
    return ds


def save_dataset(path, ds: Dataset):
    """Binary dataset file: magic TSD1, version byte, vocab size, split
    counts, then per-sequence records (T, obs_dim, label length, label ids
    as u16, frames as f32 channel-major), all little-endian."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<B", _VERSION))
        fh.write(struct.pack("<IIIII", ds.vocab_size, ds.obs_dim,
                             len(ds.train), len(ds.dev), len(ds.test)))
        for seqs in (ds.train, ds.dev, ds.test):
            for seq in seqs:
                c, t = seq.raw.shape
                fh.write(struct.pack("<III", t, c, len(seq.label)))
                fh.write(struct.pack(f"<{len(seq.label)}H", *seq.label))
                fh.write(np.ascontiguousarray(seq.raw, dtype="<f4").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise DatasetFormatError("bad dataset magic")
    off = 4

    def take(n):
        nonlocal off
        if off + n > len(data):
            raise DatasetFormatError("truncated dataset file")
        chunk = data[off:off + n]
        off += n
        return chunk

    (version,) = struct.unpack("<B", take(1))
    if version != _VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    vocab, obs_dim, n_train, n_dev, n_test = struct.unpack("<IIIII", take(20))
    ds = Dataset(vocab_size=vocab, obs_dim=obs_dim)
    for split, count in (("train", n_train), ("dev", n_dev), ("test", n_test)):
        for _ in range(count):
            t, c, llen = struct.unpack("<III", take(12))
            label = list(struct.unpack(f"<{llen}H", take(2 * llen)))
            raw = np.frombuffer(take(4 * c * t), dtype="<f4").reshape(c, t).copy()
            getattr(ds, split).append(LabeledSequence(raw=raw, label=label))
    if off != len(data):
        raise DatasetFormatError("trailing bytes in dataset file")
    return ds
