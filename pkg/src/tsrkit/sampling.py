"""Temporal downsampling strategies and interpolation baselines.

All sequences are channel-major (C, T) arrays. When T is not a multiple of
the factor n, the sequence is right-padded by repeating its final frame up
to the next multiple; reconstructions are trimmed back to the original T
by the caller (see pipeline).
"""

from __future__ import annotations

import numpy as np

DOWNSAMPLE_METHODS = ("equal", "proportional_random", "random")
INTERP_METHODS = ("nearest", "linear")


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def pad_to_multiple(x, n):
    """Right-pad (C, T) by repeating the last frame so n divides T."""
    t = x.shape[1]
    rem = t % n
    if rem == 0:
        return x
    pad = n - rem
    return np.concatenate([x, np.repeat(x[:, -1:], pad, axis=1)], axis=1)


def downsample(x, n, method="equal", rng=None):
    """Pick T/n frames from a (C, T) sequence; returns (sparse, indices).

    equal: the first frame of every width-n segment (offset 0).
    proportional_random: one uniform frame per contiguous width-n segment.
    random: T/n frames uniform without replacement over the whole range,
    sorted.
    """
    if n < 1:
        raise ValueError("downsampling factor must be >= 1")
    if method not in DOWNSAMPLE_METHODS:
        raise ValueError(f"unknown downsampling method {method!r}")
    xp = pad_to_multiple(x, n)
    t = xp.shape[1]
    segments = t // n
    if method == "equal":
        idx = n * np.arange(segments)
    elif method == "proportional_random":
        r = _as_rng(rng)
        idx = n * np.arange(segments) + r.integers(0, n, size=segments)
    else:
        r = _as_rng(rng)
        idx = np.sort(r.choice(t, size=segments, replace=False))
    return xp[:, idx], idx


def interp_upsample(x, n, method="nearest"):
    """Upsample a (C, T1) sequence n times in the time axis.

    nearest repeats each vector n times. linear uses the half-sample-offset
    convention: output position t reads source coordinate (t + 0.5)/n - 0.5
    clamped to [0, T1-1], blending the two neighbors.
    """
    if n < 1:
        raise ValueError("upsampling factor must be >= 1")
    if method not in INTERP_METHODS:
        raise ValueError(f"unknown interpolation method {method!r}")
    if n == 1:
        return x.copy()
    t1 = x.shape[1]
    if method == "nearest":
        return np.repeat(x, n, axis=1)
    coords = np.clip((np.arange(n * t1) + 0.5) / n - 0.5, 0.0, t1 - 1)
    lo = np.floor(coords).astype(int)
    hi = np.minimum(lo + 1, t1 - 1)
    frac = (coords - lo).astype(x.dtype)
    return x[:, lo] * (1.0 - frac) + x[:, hi] * frac


def temporal_augment(x, rng):
    """Randomly stretch or shrink the time axis within +-20%.

    The new length is uniform in [0.8T, 1.2T]; frames are resampled by
    nearest index, so the index map is monotone and labels are unchanged.
    """
    t = x.shape[1]
    if t < 2:
        raise ValueError("sequence too short to augment")
    r = _as_rng(rng)
    lo = int(round(0.8 * t))
    hi = int(round(1.2 * t))
    t_new = int(r.integers(lo, hi + 1))
    idx = np.floor(np.arange(t_new) * (t / t_new)).astype(int)
    return x[:, idx]
