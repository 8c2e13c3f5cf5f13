"""Connectionist temporal classification: loss, decoders, and a path oracle.

Lattices are (T, V+1) arrays of per-frame log-probabilities with the blank
symbol fixed at column 0; label sequences use ids 1..V. The loss is the
standard forward-backward recursion over the blank-interleaved label in log
space, with an exact gradient with respect to the lattice entries. The
brute-force path enumerator realizes the defining sum over all paths and
serves as the independent oracle for both the loss and the decoders.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

BLANK = 0

NEG_INF = -np.inf


def _logaddexp(a, b):
    """Scalar log(exp(a) + exp(b)); much faster than the numpy ufunc on
    Python floats, which the beam-search inner loop calls constantly."""
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


class InfeasibleLabelError(ValueError):
    """Label cannot be emitted in T frames (probability is exactly zero)."""


class LatticeSizeError(ValueError):
    """Brute-force enumeration guard exceeded."""


def check_lattice(logp, tol=1e-5):
    logp = np.asarray(logp, dtype=np.float64)
    if logp.ndim != 2 or logp.shape[1] < 2:
        raise ValueError(f"lattice must be (T, V+1) with V >= 1, got {logp.shape}")
    rows = np.logaddexp.reduce(logp, axis=1)
    if np.max(np.abs(rows)) > tol:
        raise ValueError("lattice rows must be normalized log-distributions")
    return logp


def collapse(path) -> list[int]:
    """The many-to-one mapping B: merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for sym in path:
        if sym != prev:
            if sym != BLANK:
                out.append(int(sym))
            prev = sym
    return out


def _extended_label(label):
    ext = [BLANK]
    for s in label:
        if s == BLANK:
            raise ValueError("label may not contain the blank id")
        ext.extend([int(s), BLANK])
    return ext


def min_frames(label):
    """Minimum T with nonzero probability: L plus adjacent equal pairs."""
    pairs = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + pairs


def ctc_loss(logp, label):
    """Negative log-likelihood of the label and its exact lattice gradient.

    Returns (loss, grad) where grad[t, k] = d loss / d logp[t, k] treating
    the lattice entries as free variables.
    """
    logp = np.asarray(logp, dtype=np.float64)
    t_len = logp.shape[0]
    label = list(label)
    if t_len < min_frames(label):
        raise InfeasibleLabelError(
            f"label needs at least {min_frames(label)} frames, lattice has {t_len}")
    ext = _extended_label(label)
    s_len = len(ext)

    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = logp[0, BLANK]
    if s_len > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, t_len):
        for s in range(s_len):
            a = alpha[t - 1, s]
            if s >= 1:
                a = np.logaddexp(a, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != BLANK and ext[s] != ext[s - 2]:
                a = np.logaddexp(a, alpha[t - 1, s - 2])
            alpha[t, s] = a + logp[t, ext[s]]

    log_p = np.logaddexp(alpha[-1, -1], alpha[-1, -2] if s_len > 1 else NEG_INF)
    loss = -log_p

    beta = np.full((t_len, s_len), NEG_INF)
    beta[-1, -1] = 0.0
    if s_len > 1:
        beta[-1, -2] = 0.0
    for t in range(t_len - 2, -1, -1):
        for s in range(s_len):
            b = beta[t + 1, s] + logp[t + 1, ext[s]]
            if s + 1 < s_len:
                b = np.logaddexp(b, beta[t + 1, s + 1] + logp[t + 1, ext[s + 1]])
            if s + 2 < s_len and ext[s + 2] != BLANK and ext[s + 2] != ext[s]:
                b = np.logaddexp(b, beta[t + 1, s + 2] + logp[t + 1, ext[s + 2]])
            beta[t, s] = b

    # grad[t, k] = -(1/P) * sum_{s: ext[s]=k} alpha[t,s] * beta[t,s]
    grad = np.zeros_like(logp)
    gamma = alpha + beta  # log of path mass through state s at time t
    for s in range(s_len):
        k = ext[s]
        grad[:, k] += np.exp(gamma[:, s] - log_p) if np.isfinite(log_p) else 0.0
    grad = -grad
    return loss, grad


def label_log_prob(logp, label):
    """Forward-only log p(label | lattice); -inf for infeasible labels."""
    try:
        loss, _ = ctc_loss(logp, label)
    except InfeasibleLabelError:
        return NEG_INF
    return -loss


def brute_force_prob(logp, label, guard=10 ** 6):
    """Sum of path probabilities over all paths collapsing to the label.

    Enumerates all (V+1)^T paths; the oracle realization of the defining
    sum, guarded to desk scale.
    """
    logp = np.asarray(logp, dtype=np.float64)
    t_len, n_sym = logp.shape
    if n_sym ** t_len > guard:
        raise LatticeSizeError(f"{n_sym}^{t_len} paths exceeds the enumeration guard")
    label = list(label)
    total = 0.0
    for path in itertools.product(range(n_sym), repeat=t_len):
        if collapse(path) == label:
            total += math.exp(sum(logp[t, sym] for t, sym in enumerate(path)))
    return total


def greedy_decode(logp) -> list[int]:
    """Best-path decoding: per-frame argmax (ties toward the lowest index),
    then collapse."""
    logp = np.asarray(logp)
    return collapse(np.argmax(logp, axis=1))


def _beam_key(prefix, lp):
    # Higher probability first; ties broken shorter-then-lexicographic.
    return (-lp, len(prefix), prefix)


def beam_decode(logp, width=10) -> list[int]:
    """CTC prefix beam search over labelings.

    Maintains per-prefix blank/non-blank ending log-probabilities; with a
    width covering all reachable prefixes the result is the exact maximum
    probability labeling. The final choice is additionally rescored against
    the best-path (greedy) labeling, so a narrow beam never returns a
    labeling worse than greedy decoding.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    logp = np.asarray(logp, dtype=np.float64)
    t_len, n_sym = logp.shape
    beams = {(): (0.0, NEG_INF)}  # prefix -> (log p ending blank, ending non-blank)
    for t in range(t_len):
        # plain-float frame: the inner loop is pure scalar work and numpy
        # scalar indexing would dominate the decode time
        frame = logp[t].tolist()
        f_blank = frame[BLANK]
        nxt: dict[tuple, list[float]] = {}

        for prefix, (pb, pnb) in beams.items():
            total = _logaddexp(pb, pnb)
            cur = nxt.get(prefix)
            if cur is None:
                cur = nxt[prefix] = [NEG_INF, NEG_INF]
            cur[0] = _logaddexp(cur[0], total + f_blank)
            last = prefix[-1] if prefix else BLANK
            if prefix:
                cur[1] = _logaddexp(cur[1], pnb + frame[last])
            for c in range(1, n_sym):
                nb = (pb if c == last else total) + frame[c]
                ext = prefix + (c,)
                cur_ext = nxt.get(ext)
                if cur_ext is None:
                    nxt[ext] = [NEG_INF, nb]
                else:
                    cur_ext[1] = _logaddexp(cur_ext[1], nb)

        scored = sorted(nxt.items(),
                        key=lambda kv: _beam_key(kv[0], _logaddexp(kv[1][0], kv[1][1])))
        beams = {prefix: (b, nb) for prefix, (b, nb) in scored[:width]}

    final = {prefix: _logaddexp(b, nb) for prefix, (b, nb) in beams.items()}
    greedy = tuple(greedy_decode(logp))
    # exact rescore: the beam may have pruned part of this labeling's mass
    final[greedy] = max(final.get(greedy, NEG_INF),
                        label_log_prob(logp, list(greedy)))
    best = min(final.items(), key=lambda kv: _beam_key(kv[0], kv[1]))
    return list(best[0])
