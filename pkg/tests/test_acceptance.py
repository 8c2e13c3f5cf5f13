"""End-to-end acceptance suite.

Runs the full default-configuration experiment via session fixtures (see
conftest.py) and checks one criterion per test; each test records a
PASS/FAIL line printed in the terminal summary. Reference WER/WERD tables
from the published evaluation are frozen below for the arithmetic check.
"""

import itertools

import numpy as np
import pytest

from tsrkit import accounting, ctc, metrics, pipeline, sampling
from tsrkit.nn import Tape, grad_check
from tsrkit.recognizer import FrameEncoder, HeadConfig, TemporalHead
from tsrkit.tsrnet import TSRNet, TsrConfig

# ---------------------------------------------------------------------------
# Published reference tables (WER %, WERD %) for the WERD arithmetic check.
# Dataset R: per factor, per method, (dev WER, test WER, dev WERD, test WERD);
# reference WERs are the factor-1 row (20.3 dev / 21.4 test). The dev-WERD
# cell of (factor 8, linear) is malformed in the source ("89.9.4") and
# excluded. Dataset C: per factor, per method, (WER, WERD); reference 0.7.
# ---------------------------------------------------------------------------

R_REF = (20.3, 21.4)
R_TABLE = {
    2: {"tsrnet": (20.7, 21.5, 1.9, 0.5), "nearest": (21.8, 22.3, 7.0, 4.3), "linear": (22.9, 23.4, 12.3, 9.5)},
    3: {"tsrnet": (21.1, 22.2, 3.8, 3.8), "nearest": (24.8, 25.5, 21.1, 19.3), "linear": (26.2, 26.4, 27.4, 23.4)},
    4: {"tsrnet": (23.4, 24.7, 14.7, 15.6), "nearest": (26.3, 27.4, 27.8, 27.8), "linear": (29.5, 30.3, 41.2, 40.0)},
    5: {"tsrnet": (25.4, 25.3, 23.8, 18.4), "nearest": (30.5, 30.2, 45.1, 39.6), "linear": (33.9, 33.5, 57.0, 52.0)},
    6: {"tsrnet": (28.2, 28.9, 36.0, 34.3), "nearest": (33.5, 33.9, 55.7, 53.4), "linear": (38.3, 38.4, 69.5, 67.0)},
    7: {"tsrnet": (31.1, 31.5, 47.4, 44.7), "nearest": (38.5, 38.9, 70.0, 68.3), "linear": (44.4, 44.0, 81.7, 79.2)},
    8: {"tsrnet": (35.3, 34.9, 61.4, 56.7), "nearest": (43.8, 43.4, None, 78.1), "linear": (51.1, 50.3, None, 88.0)},
}
# (factor 8, nearest, dev) is fine in the source (80.8); only the linear dev
# cell is malformed. Re-enable the nearest value here:
R_TABLE[8]["nearest"] = (43.8, 43.4, 80.8, 78.1)

C_REF = 0.7
C_TABLE = {
    2: {"tsrnet": (0.7, 0.0), "nearest": (0.7, 0.0), "linear": (0.7, 0.0)},
    3: {"tsrnet": (0.7, 0.0), "nearest": (0.8, 0.5), "linear": (0.8, 0.5)},
    4: {"tsrnet": (0.7, 0.0), "nearest": (0.9, 1.0), "linear": (0.9, 1.0)},
    5: {"tsrnet": (0.7, 0.0), "nearest": (0.9, 1.0), "linear": (1.0, 1.4)},
    6: {"tsrnet": (0.8, 0.5), "nearest": (1.3, 2.9), "linear": (1.4, 3.3)},
    7: {"tsrnet": (0.9, 1.0), "nearest": (1.8, 5.2), "linear": (2.1, 6.7)},
    8: {"tsrnet": (1.1, 1.9), "nearest": (2.6, 9.0), "linear": (3.1, 11.4)},
    9: {"tsrnet": (1.5, 3.8), "nearest": (3.6, 13.7), "linear": (4.6, 18.4)},
    10: {"tsrnet": (1.9, 5.7), "nearest": (5.4, 22.0), "linear": (6.9, 28.7)},
    11: {"tsrnet": (2.5, 8.6), "nearest": (7.9, 32.6), "linear": (10.0, 41.6)},
    12: {"tsrnet": (3.8, 14.7), "nearest": (11.1, 45.9), "linear": (13.6, 54.7)},
    13: {"tsrnet": (5.1, 20.7), "nearest": (14.4, 57.4), "linear": (17.0, 65.1)},
    14: {"tsrnet": (6.9, 28.7), "nearest": (17.6, 66.7), "linear": (21.3, 75.4)},
    15: {"tsrnet": (8.4, 35.1), "nearest": (20.4, 73.5), "linear": (24.0, 80.3)},
    16: {"tsrnet": (10.3, 42.8), "nearest": (24.0, 80.3), "linear": (28.3, 86.6)},
}


def test_a0_werd_arithmetic(criterion):
    """Recomputed WERD matches the printed reference tables.

    The published WER columns are rounded to 0.1, which propagates to about
    +/-0.5 in recomputed WERD (the WERD slope is ~4.8 near zero). The
    method-under-test columns (16 dev/test pairs per table) reproduce within
    +/-0.1; the interpolation-baseline columns are checked at the
    rounding-aware +/-0.5.
    """
    worst_tsr = worst_other = 0.0
    for factor, row in R_TABLE.items():
        for method, (dev_w, test_w, dev_d, test_d) in row.items():
            for wer, ref, printed in ((dev_w, R_REF[0], dev_d), (test_w, R_REF[1], test_d)):
                if printed is None:
                    continue
                err = abs(metrics.werd(wer, ref) - printed)
                if method == "tsrnet":
                    worst_tsr = max(worst_tsr, err)
                else:
                    worst_other = max(worst_other, err)
    for factor, row in C_TABLE.items():
        for method, (wer, printed) in row.items():
            err = abs(metrics.werd(wer, C_REF) - printed)
            if method == "tsrnet":
                worst_tsr = max(worst_tsr, err)
            else:
                worst_other = max(worst_other, err)
    criterion("A0", worst_tsr <= 0.1 and worst_other <= 0.5,
              f"WERD recomputation: max error {worst_tsr:.3f} on the 32 "
              f"method pairs (<=0.1), {worst_other:.3f} on baseline columns (<=0.5)")


def test_a1_base_training(criterion, acc_base, acc_cfg):
    wer = acc_base.best_dev_wer
    criterion("A1", wer < 10.0,
              f"base recognizer dev WER {wer:.2f}% after "
              f"{acc_cfg.train.epochs} epochs (target < 10%)")


def test_a2_reconstruction_beats_baselines(criterion, acc_dev_wer):
    ok = True
    parts = []
    for n in (4, 8):
        t, nn_, li = (acc_dev_wer[(n, r)] for r in ("tsrnet", "nearest", "linear"))
        ok &= t <= nn_ <= li
        parts.append(f"n={n}: tsrnet {t:.2f} <= nearest {nn_:.2f} <= linear {li:.2f}")
    margin = acc_dev_wer[(8, "linear")] - acc_dev_wer[(8, "tsrnet")]
    ok &= margin >= 2.0
    criterion("A2", ok, "; ".join(parts) + f"; margin at n=8: {margin:.2f} (>= 2)")


def test_a3_ctc_oracle(criterion):
    rng = np.random.default_rng(0)
    worst = 0.0
    checked = 0
    for _ in range(250):
        v = int(rng.integers(1, 4))
        t = int(rng.integers(1, 6))
        logits = rng.standard_normal((t, v + 1))
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        label = list(rng.integers(1, v + 1, size=rng.integers(1, t + 1)))
        if ctc.min_frames(label) > t:
            continue
        loss, _ = ctc.ctc_loss(logp, label)
        worst = max(worst, abs(np.exp(-loss) - ctc.brute_force_prob(logp, label)))
        checked += 1
    criterion("A3", checked >= 100 and worst < 1e-10,
              f"exp(-ctc_loss) vs brute force: max |diff| {worst:.2e} "
              f"over {checked} lattices (< 1e-10)")


def test_a4_full_stack_gradients(criterion):
    rng = np.random.default_rng(1)
    tsr = TSRNet(TsrConfig(c1=4, c2=6, c3=6, m=1, k=1, n=2), rng=rng,
                 dtype=np.float64)
    tsr.reduce_bn.gamma.value[...] = 1.0  # activate the detail branch
    head = TemporalHead(HeadConfig(vocab_size=3, hidden=6, kernel_size=3),
                        c1=4, rng=rng, dtype=np.float64)
    x = np.abs(rng.standard_normal((4, 5))) + 0.2
    label = [1, 2]

    def loss_and_grad():
        tape = Tape()
        recon = tsr.forward(x, tape, mode="train")
        lattice = head.forward(recon, tape, mode="train")
        loss, grad = ctc.ctc_loss(lattice, label)
        tape.backward(grad)
        return loss

    err, _ = grad_check(loss_and_grad, tsr.params() + head.params(),
                        max_entries=60)
    criterion("A4", err < 1e-4,
              f"reconstructor+head+CTC gradients: max relative error "
              f"{err:.2e} (< 1e-4)")


def test_a5_compute_scaling(criterion, acc_cfg):
    enc = FrameEncoder(acc_cfg.synth.obs_dim, acc_cfg.tsr.c1,
                       acc_cfg.enc.hidden)
    head = TemporalHead(acc_cfg.head, acc_cfg.tsr.c1)
    t_full = 840  # divisible by every factor in 2..8
    full = enc.cost(acc_cfg.synth.obs_dim, t_full)[0]
    exact = all(enc.cost(acc_cfg.synth.obs_dim, t_full // n)[0] * n == full
                for n in range(2, 9))
    tsr_flops = []
    for n in range(2, 9):
        tsr = TSRNet(TsrConfig(**{**acc_cfg.tsr.__dict__, "n": n}))
        tsr_flops.append(tsr.cost(acc_cfg.tsr.c1, t_full // n)[0])
    variation = (max(tsr_flops) - min(tsr_flops)) / min(tsr_flops)

    raw = np.random.default_rng(2).standard_normal(
        (acc_cfg.synth.obs_dim, 200)).astype(np.float32)
    head.forward(enc.forward(raw), mode="train")  # warm running stats
    tsr4 = TSRNet(TsrConfig(**{**acc_cfg.tsr.__dict__, "n": 4}))
    tsr4.forward(np.zeros((acc_cfg.tsr.c1, 50), dtype=np.float32), mode="train")

    def forward(factor, tsr):
        sparse = (sampling.downsample(raw, factor, "equal")[0]
                  if factor > 1 else raw)
        feats = enc.forward(sparse, mode="eval")
        dense = pipeline.reconstruct(feats, factor,
                                     "tsrnet" if tsr else "nearest",
                                     tsr, mode="eval")
        head.forward(dense[:, :200], mode="eval")

    ms1, _ = accounting.measure_runtime(lambda: forward(1, None))
    ms4, _ = accounting.measure_runtime(lambda: forward(4, tsr4))
    criterion("A5", exact and variation < 0.15 and ms4 < ms1,
              f"frame-part FLOPs follow the exact 1/n law ({exact}); "
              f"reconstructor FLOPs vary {100 * variation:.1f}% over factors "
              f"2-8 (< 15%); model forward {ms4:.1f} ms at n=4 vs {ms1:.1f} "
              f"ms at n=1 on T=200")


def test_a6_monotone_degradation(criterion, acc_dev_wer):
    ok = True
    parts = []
    for rec in ("tsrnet", "nearest", "linear"):
        seq = [acc_dev_wer[(n, rec)] for n in (1, 2, 4, 8)]
        mono = all(b >= a - 0.5 for a, b in zip(seq, seq[1:]))
        ok &= mono
        parts.append(rec + ": " + " -> ".join(f"{w:.2f}" for w in seq))
    criterion("A6", ok, "dev WER over n=1,2,4,8 (0.5 tolerance): " + "; ".join(parts))


def test_a7_training_method_ablation(criterion, acc_tsr, acc_l2):
    ctc_wer = acc_tsr[4].best_dev_wer
    l2_wer = acc_l2.best_dev_wer
    criterion("A7", ctc_wer <= l2_wer,
              f"self-generating training dev WER {ctc_wer:.2f}% <= "
              f"L2-trained {l2_wer:.2f}% at n=4")


def test_a8_freeze_and_commutation(criterion, acc_base, acc_frozen_snapshot,
                                   acc_tsr):
    enc_snap, head_snap = acc_frozen_snapshot
    frozen = all(np.array_equal(acc_base.models.encoder.state_dict()[k], v)
                 for k, v in enc_snap.items())
    frozen &= all(np.array_equal(acc_base.models.head.state_dict()[k], v)
                  for k, v in head_snap.items())

    rng = np.random.default_rng(3)
    enc = acc_base.models.encoder
    commute = True
    for _ in range(100):
        x = rng.standard_normal((enc.obs_dim,
                                 int(rng.integers(8, 60)))).astype(np.float32)
        n = int(rng.choice([2, 3, 4]))
        sparse, idx = sampling.downsample(x, n, "equal")
        commute &= np.array_equal(enc.forward(sparse, mode="eval"),
                                  enc.forward(x, mode="eval")[:, idx])
    criterion("A8", frozen and commute,
              f"base parameters bit-identical after step-2 training "
              f"({frozen}); encode/downsample commute exactly on 100 "
              f"sequences ({commute})")


def test_a9_decoder_correctness(criterion):
    rng = np.random.default_rng(4)
    exact = True
    for _ in range(200):
        v = int(rng.integers(1, 3))
        t = int(rng.integers(1, 5))
        logits = rng.standard_normal((t, v + 1))
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        # exhaustive beam: more beams than reachable prefixes
        hyp = ctc.beam_decode(logp, width=64)
        best = max(
            (list(lab) for ln in range(t + 1)
             for lab in itertools.product(range(1, v + 1), repeat=ln)
             if ctc.min_frames(list(lab)) <= t),
            key=lambda lab: ctc.label_log_prob(logp, lab))
        exact &= abs(ctc.label_log_prob(logp, hyp)
                     - ctc.label_log_prob(logp, best)) < 1e-10

    beats_greedy = True
    for _ in range(100):
        logits = rng.standard_normal((int(rng.integers(2, 10)), 5))
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        b = ctc.label_log_prob(logp, ctc.beam_decode(logp, width=10))
        g = ctc.label_log_prob(logp, ctc.greedy_decode(logp))
        beats_greedy &= b >= g - 1e-12
    criterion("A9", exact and beats_greedy,
              f"exhaustive beam equals brute-force argmax on 200 instances "
              f"({exact}); width-10 beam never scores below greedy "
              f"({beats_greedy})")


def test_a10_metric_properties(criterion):
    def edit_oracle(ref, hyp):
        if not ref:
            return len(hyp)
        if not hyp:
            return len(ref)
        return min(edit_oracle(ref[1:], hyp[1:]) + (ref[0] != hyp[0]),
                   edit_oracle(ref[1:], hyp) + 1,
                   edit_oracle(ref, hyp[1:]) + 1)

    rng = np.random.default_rng(5)
    wer_ok = True
    for _ in range(1000):
        ref = list(rng.integers(1, 5, size=rng.integers(1, 7)))
        hyp = list(rng.integers(1, 5, size=rng.integers(0, 7)))
        w, ins, dels, subs = metrics.wer(hyp, ref)
        wer_ok &= ins + dels + subs == edit_oracle(ref, hyp)
        wer_ok &= abs(w - 100.0 * (ins + dels + subs) / len(ref)) < 1e-12

    zero_ok = metrics.werd(37.2, 37.2) == 0.0
    grid = [metrics.werd(w, 25.0) for w in np.linspace(0.0, 99.0, 100)]
    increasing = all(b > a for a, b in zip(grid, grid[1:]))
    criterion("A10", wer_ok and zero_ok and increasing,
              f"WER matches the recursive oracle on 1000 pairs ({wer_ok}); "
              f"WERD zero at equality ({zero_ok}) and strictly increasing "
              f"on a 100-point grid ({increasing})")
