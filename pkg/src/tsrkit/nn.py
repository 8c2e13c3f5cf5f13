"""Differentiable 1D layer primitives on numpy arrays.

Feature sequences are plain float arrays of shape (channels, time). Every
layer implements an explicit forward pass and records a backward closure on
a Tape, so reverse-mode gradients are exact without a general autodiff
engine. Gradients accumulate (+=) into parameter buffers, which makes
batch-by-accumulation training work with repeated forward/backward calls
before an optimizer step.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterator

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes are incompatible with a layer contract."""


class UninitializedStatsError(RuntimeError):
    """Eval-mode batchnorm called before any train-mode statistics exist."""


class FormatError(ValueError):
    """Raised on malformed checkpoint files."""


DEFAULT_DTYPE = np.float32

_EPS_BN = 1e-5
_MOMENTUM_BN = 0.1

# Global FLOP counter, incremented inside each layer's forward when enabled.
# Used by the accounting module to cross-check its analytic formulas.
flop_counter_enabled = False
flop_counter = 0


def _count_flops(n):
    global flop_counter
    if flop_counter_enabled:
        flop_counter += n


def reset_flop_counter():
    global flop_counter
    flop_counter = 0


def check_sequence(x, name="input"):
    """Validate a (C, T) feature sequence: 2-D, non-empty, finite."""
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise DimensionError(f"{name} must be a (C, T) matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DimensionError(f"{name} contains non-finite values")


class Param:
    """A learnable tensor with paired gradient and Adam moment buffers."""

    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Ordered record of backward closures for one forward pass.

    Each closure maps the gradient of the loss w.r.t. a layer's output to
    the gradient w.r.t. its input, accumulating parameter gradients as a
    side effect. ``backward`` replays the closures in reverse.
    """

    def __init__(self):
        self._entries: list[Callable[[np.ndarray], np.ndarray]] = []

    def record(self, fn):
        self._entries.append(fn)

    def backward(self, output_grad: np.ndarray) -> np.ndarray:
        g = output_grad
        for fn in reversed(self._entries):
            g = fn(g)
        return g


class Module:
    """Base class: parameter/buffer traversal and checkpoint state dicts.

    Submodules are discovered from instance attributes (including lists of
    modules), leaf parameters from Param-valued attributes. Attribute
    definition order fixes the traversal order, so state dicts are stable.
    """

    def named_params(self, prefix="") -> Iterator[tuple[str, Param]]:
        for key, val in self.__dict__.items():
            name = f"{prefix}{key}"
            if isinstance(val, Param):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_params(f"{name}.")
            elif isinstance(val, list) and val and all(isinstance(v, Module) for v in val):
                for i, sub in enumerate(val):
                    yield from sub.named_params(f"{name}.{i}.")

    def named_buffers(self, prefix="") -> Iterator[tuple[str, np.ndarray]]:
        for key, val in self.__dict__.items():
            name = f"{prefix}{key}"
            if isinstance(val, Module):
                yield from val.named_buffers(f"{name}.")
            elif isinstance(val, list) and val and all(isinstance(v, Module) for v in val):
                for i, sub in enumerate(val):
                    yield from sub.named_buffers(f"{name}.{i}.")
            elif key.startswith("rb_") and isinstance(val, np.ndarray):
                yield name, val

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def param_count(self) -> int:
        return sum(p.value.size for p in self.params())

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0.0

    def state_dict(self) -> dict[str, np.ndarray]:
        d = {name: p.value for name, p in self.named_params()}
        d.update({name: b for name, b in self.named_buffers()})
        return d

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = {name: p.value for name, p in self.named_params()}
        own.update(dict(self.named_buffers()))
        if set(own) != set(state):
            missing = set(own) - set(state)
            extra = set(state) - set(own)
            raise FormatError(f"state dict mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
        for name, arr in state.items():
            if own[name].shape != arr.shape:
                raise FormatError(f"shape mismatch for {name}: {own[name].shape} vs {arr.shape}")
            own[name][...] = arr

    def forward(self, x, tape=None, mode="train"):
        raise NotImplementedError


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def relu(x):
    return np.maximum(x, 0.0)


class ReLU(Module):
    def forward(self, x, tape=None, mode="train"):
        y = np.maximum(x, 0.0)
        _count_flops(x.size)
        if tape is not None:
            mask = x > 0
            tape.record(lambda gy: gy * mask)
        return y

    def cost(self, c_in, t_in):
        return c_in * t_in, 2 * c_in * t_in, c_in, t_in


class Conv1d(Module):
    """1D cross-correlation: y[o,t] = b[o] + sum_{i,j} w[o,i,j] x_pad[gi, t*stride+j].

    Weight shape is (out_channels, in_channels // groups, kernel). Zero
    padding on both sides.
    """

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 groups=1, rng=None, dtype=DEFAULT_DTYPE):
        if in_channels % groups != 0 or out_channels % groups != 0:
            raise DimensionError("channel counts must be divisible by groups")
        if padding < 0 or kernel_size < 1 or stride < 1:
            raise DimensionError("kernel_size/stride must be >= 1 and padding >= 0")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.groups = groups
        rng = rng or np.random.default_rng(0)
        fan_in = (in_channels // groups) * kernel_size
        self.weight = Param(_kaiming_uniform(rng, (out_channels, in_channels // groups, kernel_size), fan_in, dtype))
        self.bias = Param(np.zeros(out_channels, dtype=dtype))

    def out_length(self, t_in):
        t_out = (t_in + 2 * self.padding - self.kernel_size) // self.stride + 1
        if t_out < 1:
            raise DimensionError(f"non-positive output length for T={t_in}")
        return t_out

    def _im2col(self, xp, t_out):
        # (C, K, T_out) windows of the padded input
        idx = self.stride * np.arange(t_out)
        return np.stack([xp[:, idx + j] for j in range(self.kernel_size)], axis=1)

    def forward(self, x, tape=None, mode="train"):
        check_sequence(x)
        if x.shape[0] != self.in_channels:
            raise DimensionError(f"expected {self.in_channels} channels, got {x.shape[0]}")
        c_in, t_in = x.shape
        t_out = self.out_length(t_in)
        g = self.groups
        cig = c_in // g
        cog = self.out_channels // g
        k = self.kernel_size
        xp = np.pad(x, ((0, 0), (self.padding, self.padding))) if self.padding else x
        cols = self._im2col(xp, t_out)                       # (C, K, T_out)
        cols_g = cols.reshape(g, cig * k, t_out)
        w_g = self.weight.value.reshape(g, cog, cig * k)
        y = np.einsum("gok,gkt->got", w_g, cols_g).reshape(self.out_channels, t_out)
        y = y + self.bias.value[:, None]
        _count_flops(self.flops(t_in)[0])
        if tape is not None:
            def bwd(gy):
                if gy.shape != y.shape:
                    raise DimensionError(f"output grad shape {gy.shape} != {y.shape}")
                gy_g = gy.reshape(g, cog, t_out)
                self.weight.grad += np.einsum("got,gkt->gok", gy_g, cols_g).reshape(self.weight.shape)
                self.bias.grad += gy.sum(axis=1)
                gcols = np.einsum("gok,got->gkt", w_g, gy_g).reshape(c_in, k, t_out)
                gxp = np.zeros_like(xp)
                idx = self.stride * np.arange(t_out)
                for j in range(k):
                    np.add.at(gxp, (slice(None), idx + j), gcols[:, j, :])
                return gxp[:, self.padding:self.padding + t_in] if self.padding else gxp
            tape.record(bwd)
        return y

    def flops(self, t_in):
        t_out = self.out_length(t_in)
        macs = self.kernel_size * (self.in_channels // self.groups) * self.out_channels * t_out
        return 2 * macs + self.out_channels * t_out, t_out

    def cost(self, c_in, t_in):
        f, t_out = self.flops(t_in)
        mem = c_in * t_in + self.out_channels * t_out + self.param_count()
        return f, mem, self.out_channels, t_out


class DepthwiseConv1d(Conv1d):
    """One kernel per channel (groups == channels); channel count preserved."""

    def __init__(self, channels, kernel_size, padding=None, rng=None, dtype=DEFAULT_DTYPE):
        if padding is None:
            padding = kernel_size // 2
        super().__init__(channels, channels, kernel_size, stride=1, padding=padding,
                         groups=channels, rng=rng, dtype=dtype)


class TransposedConv1d(Module):
    """Scatter-accumulate adjoint of a strided conv.

    y[o, t*stride + j] += sum_i w[i, o, j] x[i, t]; weight shape is
    (in_channels, out_channels, kernel). Output length (T-1)*stride + K,
    which is exactly T*stride when K == stride.
    """

    def __init__(self, in_channels, out_channels, kernel_size, stride,
                 rng=None, dtype=DEFAULT_DTYPE):
        if kernel_size < 1 or stride < 1:
            raise DimensionError("kernel_size and stride must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel_size
        self.weight = Param(_kaiming_uniform(rng, (in_channels, out_channels, kernel_size), fan_in, dtype))
        self.bias = Param(np.zeros(out_channels, dtype=dtype))

    def out_length(self, t_in):
        return (t_in - 1) * self.stride + self.kernel_size

    def forward(self, x, tape=None, mode="train"):
        check_sequence(x)
        if x.shape[0] != self.in_channels:
            raise DimensionError(f"expected {self.in_channels} channels, got {x.shape[0]}")
        t_in = x.shape[1]
        t_out = self.out_length(t_in)
        w = self.weight.value
        y = np.zeros((self.out_channels, t_out), dtype=x.dtype)
        pos = self.stride * np.arange(t_in)
        for j in range(self.kernel_size):
            np.add.at(y, (slice(None), pos + j), np.einsum("io,it->ot", w[:, :, j], x))
        y += self.bias.value[:, None]
        _count_flops(self.flops(t_in)[0])
        if tape is not None:
            def bwd(gy):
                if gy.shape != y.shape:
                    raise DimensionError(f"output grad shape {gy.shape} != {y.shape}")
                self.bias.grad += gy.sum(axis=1)
                for j in range(self.kernel_size):
                    gslice = gy[:, pos + j]                      # (Cout, T_in)
                    self.weight.grad[:, :, j] += x @ gslice.T
                gx = np.zeros_like(x)
                for j in range(self.kernel_size):
                    gx += np.einsum("io,ot->it", w[:, :, j], gy[:, pos + j])
                return gx
            tape.record(bwd)
        return y

    def flops(self, t_in):
        t_out = self.out_length(t_in)
        macs = self.kernel_size * self.in_channels * self.out_channels * t_in
        return 2 * macs + self.out_channels * t_out, t_out

    def cost(self, c_in, t_in):
        f, t_out = self.flops(t_in)
        mem = c_in * t_in + self.out_channels * t_out + self.param_count()
        return f, mem, self.out_channels, t_out


class BatchNorm1d(Module):
    """Per-channel normalization over the time axis of a single sequence.

    Statistics are per sequence (not pooled across a padded batch); running
    statistics use momentum 0.1 and serve eval mode.
    """

    def __init__(self, channels, dtype=DEFAULT_DTYPE):
        self.channels = channels
        self.gamma = Param(np.ones(channels, dtype=dtype))
        self.beta = Param(np.zeros(channels, dtype=dtype))
        self.rb_running_mean = np.zeros(channels, dtype=dtype)
        self.rb_running_var = np.ones(channels, dtype=dtype)
        self.rb_num_batches = np.zeros(1, dtype=dtype)

    def forward(self, x, tape=None, mode="train"):
        check_sequence(x)
        if x.shape[0] != self.channels:
            raise DimensionError(f"expected {self.channels} channels, got {x.shape[0]}")
        t = x.shape[1]
        if mode == "train":
            mu = x.mean(axis=1)
            var = x.var(axis=1)
            self.rb_running_mean[...] = (1 - _MOMENTUM_BN) * self.rb_running_mean + _MOMENTUM_BN * mu
            self.rb_running_var[...] = (1 - _MOMENTUM_BN) * self.rb_running_var + _MOMENTUM_BN * var
            self.rb_num_batches += 1
        else:
            if self.rb_num_batches[0] == 0:
                raise UninitializedStatsError("eval-mode batchnorm before any train-mode call")
            mu = self.rb_running_mean
            var = self.rb_running_var
        inv_std = 1.0 / np.sqrt(var + _EPS_BN)
        xhat = (x - mu[:, None]) * inv_std[:, None]
        y = self.gamma.value[:, None] * xhat + self.beta.value[:, None]
        _count_flops(2 * x.size)
        if tape is not None:
            def bwd(gy):
                if gy.shape != y.shape:
                    raise DimensionError(f"output grad shape {gy.shape} != {y.shape}")
                self.beta.grad += gy.sum(axis=1)
                self.gamma.grad += (gy * xhat).sum(axis=1)
                gxhat = gy * self.gamma.value[:, None]
                if mode == "train":
                    gx = inv_std[:, None] * (
                        gxhat
                        - gxhat.mean(axis=1, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=1, keepdims=True)
                    )
                else:
                    gx = gxhat * inv_std[:, None]
                return gx
            tape.record(bwd)
        return y

    def cost(self, c_in, t_in):
        return 2 * c_in * t_in, 2 * c_in * t_in + self.param_count(), c_in, t_in


class Sequential(Module):
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, tape=None, mode="train"):
        for layer in self.layers:
            x = layer.forward(x, tape, mode)
        return x

    def cost(self, c_in, t_in):
        flops = mem = 0
        for layer in self.layers:
            f, m, c_in, t_in = layer.cost(c_in, t_in)
            flops += f
            mem += m
        return flops, mem, c_in, t_in


class Adam:
    """Bias-corrected Adam with decoupled weight decay.

    ``step`` applies one update from the accumulated gradients and zeroes
    the gradient buffers afterward.
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p in self.params:
            g = p.grad
            p.m[...] = b1 * p.m + (1 - b1) * g
            p.v[...] = b2 * p.v + (1 - b2) * g * g
            m_hat = p.m / bc1
            v_hat = p.v / bc2
            p.value -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.value)
            p.grad[...] = 0.0


def grad_check(loss_and_grad, params, h=1e-5, max_entries=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grad()`` must return the scalar loss and leave analytic
    gradients in the Param buffers. Requires 64-bit parameters for the
    stated tolerances. ``max_entries`` subsamples large tensors.
    """
    params = list(params)
    for p in params:
        p.grad[...] = 0.0
    base_loss = loss_and_grad()
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.grad[...] = 0.0

    rng = rng or np.random.default_rng(0)
    max_err = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            idxs = rng.choice(n, size=max_entries, replace=False)
        else:
            idxs = range(n)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_and_grad()
            flat[i] = orig - h
            lm = loss_and_grad()
            flat[i] = orig
            for q in params:
                q.grad[...] = 0.0
            num = (lp - lm) / (2 * h)
            ana = a.reshape(-1)[i]
            err = abs(ana - num) / max(1.0, abs(ana), abs(num))
            max_err = max(max_err, err)
    return max_err, base_loss


def nudge_away_from_zero(x, delta=1e-3):
    """Shift entries near 0 past the relu kink so finite differences are clean."""
    y = x.copy()
    small = np.abs(y) < delta
    y[small] = np.where(y[small] >= 0, delta, -delta)
    return y


# ---------------------------------------------------------------------------
# Checkpoint serialization: magic "TSR1", u32 tensor count, then per-tensor
# records of (u32 name length, UTF-8 name, u32 rank, u32 dims, f32 values),
# all little-endian.
# ---------------------------------------------------------------------------

_MAGIC = b"TSR1"


def save_tensors(path, tensors: dict[str, np.ndarray]):
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise FormatError("bad checkpoint magic")
    off = 4

    def take(n):
        nonlocal off
        if off + n > len(data):
            raise FormatError("truncated checkpoint file")
        chunk = data[off:off + n]
        off += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).copy()
        out[name] = arr
    if off != len(data):
        raise FormatError("trailing bytes in checkpoint file")
    return out
