"""Recognition metrics: word error rate, its deviation score, and the
frame-similarity matrix used to visualize temporal redundancy."""

from __future__ import annotations

import numpy as np


class EmptyReferenceError(ValueError):
    """WER is undefined for an empty reference."""


class DegenerateFrameError(ValueError):
    """A frame vector with zero norm has no cosine similarity."""


def wer(hyp, ref):
    """Word error rate of hyp against ref, with the edit decomposition.

    Returns (wer_percent, ins, del, sub) from a unit-cost Levenshtein
    alignment. ins counts hyp tokens absent from ref, del counts ref
    tokens missing in hyp. Among cost-equal alignments the one minimizing
    substitutions, then insertions, is reported.
    """
    ref = list(ref)
    hyp = list(hyp)
    if not ref:
        raise EmptyReferenceError("reference sequence is empty")
    n, m = len(ref), len(hyp)
    # dp[i][j] = (cost, subs, ins) for ref[:i] vs hyp[:j], lexicographic min
    dp = [[None] * (m + 1) for _ in range(n + 1)]
    dp[0][0] = (0, 0, 0)
    for j in range(1, m + 1):
        c, s, i = dp[0][j - 1]
        dp[0][j] = (c + 1, s, i + 1)  # insertion: extra hyp token
    for i in range(1, n + 1):
        c, s, ins = dp[i - 1][0]
        dp[i][0] = (c + 1, s, ins)    # deletion: missing ref token
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            c, s, ins = dp[i - 1][j - 1]
            if ref[i - 1] == hyp[j - 1]:
                best = (c, s, ins)
            else:
                best = (c + 1, s + 1, ins)
            c, s, ins = dp[i - 1][j]
            best = min(best, (c + 1, s, ins))
            c, s, ins = dp[i][j - 1]
            best = min(best, (c + 1, s, ins + 1))
            dp[i][j] = best
    cost, subs, ins = dp[n][m]
    dels = cost - subs - ins
    return 100.0 * cost / n, ins, dels, subs


def werd(wer_e, wer_r):
    """Deviation of an estimated WER from its reference WER, in percent.

    A bounded sigmoidal transform of the difference (both arguments in
    percentage points): 100 * (1 - 1.1^-d) / (1 + 1.1^-d) with
    d = wer_e - wer_r. Unclamped, so negative when the estimate beats the
    reference.
    """
    d = float(wer_e) - float(wer_r)
    z = 1.1 ** (-d)
    return 100.0 * (1.0 - z) / (1.0 + z)


def autocorrelation_matrix(f):
    """T x T matrix of cosine similarities between frame vectors.

    f is a (C, T) sequence; frames are its columns.
    """
    f = np.asarray(f, dtype=np.float64)
    norms = np.linalg.norm(f, axis=0)
    if np.any(norms == 0):
        raise DegenerateFrameError("zero-norm frame vector")
    fn = f / norms
    return fn.T @ fn


def autocorrelation_csv(matrix) -> str:
    """Row-major CSV rendering with 6 significant digits, for plotting."""
    lines = [",".join(f"{v:.6g}" for v in row) for row in np.asarray(matrix)]
    return "\n".join(lines) + "\n"
