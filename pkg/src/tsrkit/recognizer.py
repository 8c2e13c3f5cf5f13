"""Per-frame feature encoder and temporal classification heads.

The encoder maps raw observation vectors to feature vectors independently
at every frame (a K=1 conv stack), so it commutes exactly with index-based
temporal downsampling. That commutation is what allows moving the
downsampling step in front of the encoder at test time. The temporal heads
mix information across frames with same-padded convolutions and emit a
(T, V+1) log-probability lattice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import BatchNorm1d, Conv1d, DimensionError, Module, _count_flops

HEAD_VARIANTS = ("tconv-small", "tconv-large")


@dataclass
class HeadConfig:
    variant: str = "tconv-small"
    vocab_size: int = 20
    hidden: int = 256
    kernel_size: int = 5

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if self.variant not in HEAD_VARIANTS:
            raise ValueError(f"unknown head variant {self.variant!r}")
        if self.kernel_size % 2 != 1:
            raise ValueError("head kernel size must be odd")


class FrameEncoder(Module):
    """Per-frame map obs_dim -> c1: one hidden relu layer, linear, relu.

    No temporal mixing: each output frame depends only on its input frame.
    The final relu makes the feature sequence non-negative, matching what
    a relu-terminated frame backbone produces; the reconstruction network
    relies on this (its own output relu is then lossless on the rough
    branch).
    """

    def __init__(self, obs_dim, c1, hidden=512, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.c1 = c1
        self.lin1 = Conv1d(obs_dim, hidden, 1, rng=rng, dtype=dtype)
        self.lin2 = Conv1d(hidden, c1, 1, rng=rng, dtype=dtype)

    def forward(self, x, tape=None, mode="train"):
        h = self.lin1.forward(x, tape, mode)
        hr = np.maximum(h, 0.0)
        _count_flops(h.size)
        if tape is not None:
            mask = h > 0
            tape.record(lambda gy: gy * mask)
        y = self.lin2.forward(hr, tape, mode)
        yr = np.maximum(y, 0.0)
        _count_flops(y.size)
        if tape is not None:
            mask2 = y > 0
            tape.record(lambda gy: gy * mask2)
        return yr

    def cost(self, c_in, t_in):
        f1, m1, c, t = self.lin1.cost(c_in, t_in)
        f1 += c * t
        m1 += 2 * c * t
        f2, m2, c, t = self.lin2.cost(c, t)
        f2 += c * t
        m2 += 2 * c * t
        return f1 + f2, m1 + m2, c, t


class LogSoftmaxT(Module):
    """Transpose (V+1, T) logits to a (T, V+1) lattice of log-probabilities."""

    def forward(self, x, tape=None, mode="train"):
        z = x.T
        mx = z.max(axis=1, keepdims=True)
        lse = mx + np.log(np.exp(z - mx).sum(axis=1, keepdims=True))
        y = z - lse
        _count_flops(5 * z.size)
        if tape is not None:
            soft = np.exp(y)
            def bwd(gy):
                gz = gy - soft * gy.sum(axis=1, keepdims=True)
                return gz.T
            tape.record(bwd)
        return y

    def cost(self, c_in, t_in):
        return 5 * c_in * t_in, 2 * c_in * t_in, c_in, t_in


class TemporalHead(Module):
    """conv+BN+relu stack plus a pointwise projection to vocab+blank logits.

    tconv-small uses 2 conv layers, tconv-large 4; both keep the time
    length with same padding, so the lattice has one row per input frame.
    """

    def __init__(self, cfg: HeadConfig, c1, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.c1 = c1
        depth = 2 if cfg.variant == "tconv-small" else 4
        k = cfg.kernel_size
        self.convs = []
        self.bns = []
        c_in = c1
        for _ in range(depth):
            self.convs.append(Conv1d(c_in, cfg.hidden, k, padding=k // 2, rng=rng, dtype=dtype))
            self.bns.append(BatchNorm1d(cfg.hidden, dtype=dtype))
            c_in = cfg.hidden
        self.proj = Conv1d(c_in, cfg.vocab_size + 1, 1, rng=rng, dtype=dtype)
        self.logsoftmax = LogSoftmaxT()

    def forward(self, x, tape=None, mode="train"):
        if x.shape[0] != self.c1:
            raise DimensionError(f"expected {self.c1} channels, got {x.shape[0]}")
        h = x
        for conv, bn in zip(self.convs, self.bns):
            h = conv.forward(h, tape, mode)
            h = bn.forward(h, tape, mode)
            hr = np.maximum(h, 0.0)
            _count_flops(h.size)
            if tape is not None:
                mask = h > 0
                tape.record(lambda gy, mask=mask: gy * mask)
            h = hr
        logits = self.proj.forward(h, tape, mode)
        return self.logsoftmax.forward(logits, tape, mode)

    def cost(self, c_in, t_in):
        flops = mem = 0
        c, t = c_in, t_in
        for conv, bn in zip(self.convs, self.bns):
            f, m, c, t = conv.cost(c, t)
            flops, mem = flops + f, mem + m
            f, m, c, t = bn.cost(c, t)
            flops, mem = flops + f, mem + m
            flops += c * t
            mem += 2 * c * t
        f, m, c, t = self.proj.cost(c, t)
        flops, mem = flops + f, mem + m
        f, m, c, t = self.logsoftmax.cost(c, t)
        return flops + f, mem + m, c, t
