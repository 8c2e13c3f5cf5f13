"""Temporal super-resolution generator.

Two branches reconstruct a dense (C, n*T1) feature sequence from a sparse
(C, T1) one: a learned detail branch (channel raise, residual blocks,
transposed-conv upsampling, channel restore) and a parameter-free rough
branch that repeats each time step n times. The fused output goes through
a final relu, so it is elementwise non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (
    BatchNorm1d,
    Conv1d,
    DepthwiseConv1d,
    DimensionError,
    Module,
    Tape,
    TransposedConv1d,
    _count_flops,
)

RESBLOCK_VARIANTS = ("A", "B", "C", "D")


@dataclass
class TsrConfig:
    """Architecture knobs for the super-resolution generator.

    c1 is the input/output channel count, c2 the raised channel count of
    the pre-upsample stage, c3 the channel count after the transposed
    conv. m and k are the residual-block counts before and after
    upsampling, n the upsampling factor. The channel-mixing boundary convs
    are pointwise (K=1) by default; the transposed conv uses K=n so the
    output length is exactly n*T1.
    """

    c1: int = 512
    c2: int = 1024
    c3: int = 1024
    m: int = 2
    k: int = 2
    n: int = 2
    resblock_variant: str = "C"
    dw_kernel: int = 3
    raise_kernel: int = 1
    reduce_kernel: int = 1
    up_kernel: int | None = None  # defaults to n (non-overlapping)

    def __post_init__(self):
        if self.n < 1 or self.m < 0 or self.k < 0:
            raise ValueError("n must be >= 1 and m, k >= 0")
        if min(self.c1, self.c2, self.c3) < 1:
            raise ValueError("channel counts must be >= 1")
        if self.resblock_variant not in RESBLOCK_VARIANTS:
            raise ValueError(f"unknown resblock variant {self.resblock_variant!r}")
        if self.raise_kernel % 2 != 1 or self.reduce_kernel % 2 != 1 or self.dw_kernel % 2 != 1:
            raise ValueError("conv kernels must be odd so time length is preserved")

    @property
    def effective_up_kernel(self):
        return self.n if self.up_kernel is None else self.up_kernel


class ResBlock(Module):
    """1D residual block, four variants.

    C (default): y = relu(BN(dw(x) + x)) with depthwise conv.
    D:           y = x + relu(BN(dw(x))).
    A / B:       like C but with a full convolution, K=5 / K=3.
    All variants preserve both channel count and time length.
    """

    def __init__(self, channels, variant="C", dw_kernel=3, rng=None, dtype=np.float32):
        if variant not in RESBLOCK_VARIANTS:
            raise ValueError(f"unknown resblock variant {variant!r}")
        self.variant = variant
        self.channels = channels
        if variant == "A":
            self.conv = Conv1d(channels, channels, 5, padding=2, rng=rng, dtype=dtype)
        elif variant == "B":
            self.conv = Conv1d(channels, channels, 3, padding=1, rng=rng, dtype=dtype)
        else:
            self.conv = DepthwiseConv1d(channels, dw_kernel, rng=rng, dtype=dtype)
        self.bn = BatchNorm1d(channels, dtype=dtype)

    def forward(self, x, tape=None, mode="train"):
        if x.shape[0] != self.channels:
            raise DimensionError(f"expected {self.channels} channels, got {x.shape[0]}")
        conv_tape = Tape() if tape is not None else None
        bn_tape = Tape() if tape is not None else None
        h = self.conv.forward(x, conv_tape, mode)
        if self.variant == "D":
            b = self.bn.forward(h, bn_tape, mode)
            r = np.maximum(b, 0.0)
            y = x + r
            _count_flops(r.size + y.size)
            if tape is not None:
                mask = b > 0
                def bwd(gy):
                    g = bn_tape.backward(gy * mask)
                    return gy + conv_tape.backward(g)
                tape.record(bwd)
        else:
            s = h + x
            b = self.bn.forward(s, bn_tape, mode)
            y = np.maximum(b, 0.0)
            _count_flops(s.size + y.size)
            if tape is not None:
                mask = b > 0
                def bwd(gy):
                    g = bn_tape.backward(gy * mask)
                    return g + conv_tape.backward(g)
                tape.record(bwd)
        return y

    def cost(self, c_in, t_in):
        f, m, _, _ = self.conv.cost(c_in, t_in)
        fb, mb, _, _ = self.bn.cost(c_in, t_in)
        # residual add + relu
        extra = 2 * c_in * t_in
        return f + fb + extra, m + mb + 2 * c_in * t_in, c_in, t_in


def rough_upsample(x, n):
    """Nearest-neighbor repeat upsampling: out[c, t] = x[c, t // n]."""
    if n < 1:
        raise ValueError("upsampling factor must be >= 1")
    return np.repeat(x, n, axis=1)


class TSRNet(Module):
    """The full generator: detail descriptor fused with the rough branch."""

    def __init__(self, cfg: TsrConfig, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        n = cfg.n
        self.raise_conv = Conv1d(cfg.c1, cfg.c2, cfg.raise_kernel,
                                 padding=cfg.raise_kernel // 2, rng=rng, dtype=dtype)
        self.raise_bn = BatchNorm1d(cfg.c2, dtype=dtype)
        self.pre_blocks = [ResBlock(cfg.c2, cfg.resblock_variant, cfg.dw_kernel, rng, dtype)
                           for _ in range(cfg.m)]
        self.up = TransposedConv1d(cfg.c2, cfg.c3, cfg.effective_up_kernel, stride=n,
                                   rng=rng, dtype=dtype)
        self.post_blocks = [ResBlock(cfg.c3, cfg.resblock_variant, cfg.dw_kernel, rng, dtype)
                            for _ in range(cfg.k)]
        self.reduce_conv = Conv1d(cfg.c3, cfg.c1, cfg.reduce_kernel,
                                  padding=cfg.reduce_kernel // 2, rng=rng, dtype=dtype)
        self.reduce_bn = BatchNorm1d(cfg.c1, dtype=dtype)
        # zero-gain final normalization: the detail branch starts silent, so
        # an untrained network reproduces the rough (nearest-repeat) branch
        # exactly and training can only improve on it
        self.reduce_bn.gamma.value[...] = 0.0

    def detail_forward(self, x, tape=None, mode="train"):
        """Detail descriptor: (c1, T1) -> (c1, n*T1)."""
        h = self.raise_conv.forward(x, tape, mode)
        h = self.raise_bn.forward(h, tape, mode)
        hr = np.maximum(h, 0.0)
        _count_flops(h.size)
        if tape is not None:
            mask = h > 0
            tape.record(lambda gy: gy * mask)
        h = hr
        for blk in self.pre_blocks:
            h = blk.forward(h, tape, mode)
        t_target = x.shape[1] * self.cfg.n
        h = self.up.forward(h, tape, mode)
        if h.shape[1] > t_target:
            # overlapping up-kernel (K > n): trim the tail back to n*T1
            extra = h.shape[1] - t_target
            h = h[:, :t_target]
            if tape is not None:
                tape.record(lambda gy: np.pad(gy, ((0, 0), (0, extra))))
        for blk in self.post_blocks:
            h = blk.forward(h, tape, mode)
        h = self.reduce_conv.forward(h, tape, mode)
        h = self.reduce_bn.forward(h, tape, mode)
        return h

    def forward(self, x, tape=None, mode="train"):
        if x.shape[0] != self.cfg.c1:
            raise DimensionError(f"expected {self.cfg.c1} channels, got {x.shape[0]}")
        n = self.cfg.n
        rough = rough_upsample(x, n)
        detail_tape = Tape() if tape is not None else None
        detail = self.detail_forward(x, detail_tape, mode)
        if detail.shape != rough.shape:
            raise DimensionError(f"branch shape mismatch: {detail.shape} vs {rough.shape}")
        s = rough + detail
        y = np.maximum(s, 0.0)
        _count_flops(2 * s.size)
        if tape is not None:
            mask = s > 0
            c, t1 = x.shape
            def bwd(gy):
                g = gy * mask
                g_detail = detail_tape.backward(g)
                g_rough = g.reshape(c, t1, n).sum(axis=2)
                return g_detail + g_rough
            tape.record(bwd)
        return y

    def cost(self, c_in, t_in):
        """(flops, memory elements, c_out, t_out) for input length t_in."""
        flops = mem = 0
        c, t = c_in, t_in
        for layer in [self.raise_conv, self.raise_bn]:
            f, m, c, t = layer.cost(c, t)
            flops, mem = flops + f, mem + m
        flops += c * t  # relu after the raise stage
        mem += 2 * c * t
        for blk in self.pre_blocks:
            f, m, c, t = blk.cost(c, t)
            flops, mem = flops + f, mem + m
        f, m, c, t = self.up.cost(c, t)
        flops, mem = flops + f, mem + m
        t = min(t, t_in * self.cfg.n)
        for blk in self.post_blocks:
            f, m, c, t = blk.cost(c, t)
            flops, mem = flops + f, mem + m
        for layer in [self.reduce_conv, self.reduce_bn]:
            f, m, c, t = layer.cost(c, t)
            flops, mem = flops + f, mem + m
        # fusion add + final relu
        flops += 2 * c * t
        mem += 2 * c * t
        return flops, mem, c, t
