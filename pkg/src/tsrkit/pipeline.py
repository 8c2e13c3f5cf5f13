"""Training protocol, evaluation, factor sweeps, and checkpointing.

Training is two-step: first the recognizer (frame encoder + temporal head)
is trained with CTC at full frame rate; then its parameters are frozen and
only the reconstruction network is trained through it, again with CTC
against the phrase labels (the self-generating regime). A conventional
L2-regression variant of step 2 is provided for the ablation. Evaluation
mirrors deployment: raw sequences are downsampled first (deterministic
equal spacing), then encoded, reconstructed, and beam-decoded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ctc, metrics, sampling
from .config import ExperimentConfig
from .nn import Adam, FormatError, Tape, load_tensors, save_tensors
from .recognizer import FrameEncoder, TemporalHead
from .synthdata import Dataset, LabeledSequence
from .tsrnet import TSRNet, TsrConfig


class TrainingError(RuntimeError):
    """Loss diverged (NaN/Inf)."""


class CompatibilityError(RuntimeError):
    """Checkpoint does not match the current configuration."""


@dataclass
class Models:
    encoder: FrameEncoder
    head: TemporalHead
    tsrnet: TSRNet | None = None


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_wer: float


@dataclass
class TrainResult:
    models: Models
    history: list[EpochStats] = field(default_factory=list)
    best_dev_wer: float = float("inf")
    best_epoch: int = -1


def build_models(cfg: ExperimentConfig, with_tsrnet=False, factor=None,
                 dtype=np.float32) -> Models:
    rng = np.random.default_rng(cfg.train.seed)
    encoder = FrameEncoder(cfg.synth.obs_dim, cfg.tsr.c1, cfg.enc.hidden,
                           rng=rng, dtype=dtype)
    head = TemporalHead(cfg.head, cfg.tsr.c1, rng=rng, dtype=dtype)
    tsr = None
    if with_tsrnet:
        tcfg_kwargs = {**cfg.tsr.__dict__}
        if factor is not None:
            tcfg_kwargs["n"] = factor
        tsr = TSRNet(TsrConfig(**tcfg_kwargs), rng=rng, dtype=dtype)
    return Models(encoder=encoder, head=head, tsrnet=tsr)


def _check_finite(loss):
    if not np.isfinite(loss):
        raise TrainingError(f"training loss diverged (loss={loss})")


def _snapshot(module):
    return {name: arr.copy() for name, arr in module.state_dict().items()}


def _restore(module, snap):
    module.load_state_dict(snap)


def reconstruct(features, factor, reconstructor, tsrnet=None, mode="eval", tape=None):
    """Upsample a sparse (C, T1) feature sequence by `factor`.

    reconstructor is "tsrnet", "nearest", or "linear"; the caller trims the
    result back to the original T.
    """
    if factor == 1:
        return features
    if reconstructor == "tsrnet":
        if tsrnet is None:
            raise CompatibilityError("tsrnet reconstructor requested but no model given")
        return tsrnet.forward(features, tape, mode)
    return sampling.interp_upsample(features, factor, reconstructor)


def recognize(raw, models: Models, factor=1, reconstructor="tsrnet", beam_width=10):
    """Test-time path for one raw sequence: downsample, encode, reconstruct,
    decode. With factor 1 the reconstructor is skipped entirely."""
    t_orig = raw.shape[1]
    if factor > 1:
        sparse_raw, _ = sampling.downsample(raw, factor, "equal")
    else:
        sparse_raw = raw
    feats = models.encoder.forward(sparse_raw, mode="eval")
    dense = reconstruct(feats, factor, reconstructor, models.tsrnet, mode="eval")
    dense = dense[:, :t_orig]
    lattice = models.head.forward(dense, mode="eval")
    return ctc.beam_decode(lattice, beam_width)


def evaluate(models: Models, seqs: list[LabeledSequence], factor=1,
             reconstructor="tsrnet", beam_width=10):
    """Corpus WER (percent) over a split, plus total edit counts."""
    edits = ref_words = 0
    for seq in seqs:
        hyp = recognize(seq.raw, models, factor, reconstructor, beam_width)
        w, ins, dels, subs = metrics.wer(hyp, seq.label)
        edits += ins + dels + subs
        ref_words += len(seq.label)
    return 100.0 * edits / ref_words


def train_base(dataset: Dataset, cfg: ExperimentConfig, log=None) -> TrainResult:
    """Step 1: train encoder + head with CTC at factor 1.

    Adam with the configured learning rate and decoupled weight decay,
    gradient accumulation over `batch` sequences, the milestone learning
    rate decay, and per-sequence temporal augmentation. Keeps the
    best-dev-WER parameters.
    """
    tcfg = cfg.train
    models = build_models(cfg)
    params = models.encoder.params() + models.head.params()
    opt = Adam(params, tcfg.lr, weight_decay=tcfg.weight_decay)
    result = TrainResult(models=models)
    best = None
    rng = np.random.default_rng(tcfg.seed)
    order = np.arange(len(dataset.train))
    for epoch in range(1, tcfg.epochs + 1):
        if epoch in tcfg.milestones:
            opt.lr *= tcfg.lr_decay
        rng.shuffle(order)
        total_loss = 0.0
        pending = 0
        for idx in order:
            seq = dataset.train[idx]
            raw = sampling.temporal_augment(seq.raw, rng)
            tape = Tape()
            feats = models.encoder.forward(raw, tape, mode="train")
            lattice = models.head.forward(feats, tape, mode="train")
            try:
                loss, grad = ctc.ctc_loss(lattice, seq.label)
            except ctc.InfeasibleLabelError:
                continue
            _check_finite(loss)
            total_loss += loss
            tape.backward((grad / tcfg.batch).astype(lattice.dtype))
            pending += 1
            if pending == tcfg.batch:
                opt.step()
                pending = 0
        if pending:
            opt.step()
        dev_wer = evaluate(models, dataset.dev, factor=1,
                           beam_width=cfg.eval.beam_width)
        result.history.append(EpochStats(epoch, total_loss / len(order), dev_wer))
        if log:
            log(f"[base] epoch {epoch:2d} loss {total_loss / len(order):8.3f} dev WER {dev_wer:6.2f}%")
        if dev_wer < result.best_dev_wer:
            result.best_dev_wer = dev_wer
            result.best_epoch = epoch
            best = (_snapshot(models.encoder), _snapshot(models.head))
    if best is not None:
        _restore(models.encoder, best[0])
        _restore(models.head, best[1])
    return result


def train_tsrnet(dataset: Dataset, base: Models, factor: int,
                 cfg: ExperimentConfig, loss_kind="ctc", log=None) -> TrainResult:
    """Step 2: freeze the recognizer, train only the reconstruction network.

    Per sequence: encode all frames, downsample the features with
    proportional random sampling at `factor`, reconstruct, trim to the
    original length, and apply the loss. loss_kind "ctc" runs the frozen
    head and trains against the phrase label (self-generating regime);
    "l2" regresses the reconstruction onto the reference dense features.
    """
    if loss_kind not in ("ctc", "l2"):
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    tcfg = cfg.train
    tsr_rng = np.random.default_rng(tcfg.seed + 10_000 + factor)
    tcfg_kwargs = {**cfg.tsr.__dict__, "n": factor}
    tsr = TSRNet(TsrConfig(**tcfg_kwargs), rng=tsr_rng,
                 dtype=base.encoder.lin1.weight.value.dtype)
    models = Models(encoder=base.encoder, head=base.head, tsrnet=tsr)
    opt = Adam(tsr.params(), tcfg.lr, weight_decay=tcfg.weight_decay)
    result = TrainResult(models=models)
    best = None
    rng = np.random.default_rng(tcfg.seed + factor)
    order = np.arange(len(dataset.train))
    for epoch in range(1, tcfg.epochs + 1):
        if epoch in tcfg.milestones:
            opt.lr *= tcfg.lr_decay
        rng.shuffle(order)
        total_loss = 0.0
        pending = 0
        for idx in order:
            seq = dataset.train[idx]
            raw = sampling.temporal_augment(seq.raw, rng)
            t_orig = raw.shape[1]
            dense_feats = models.encoder.forward(raw, mode="eval")
            sparse, _ = sampling.downsample(dense_feats, factor,
                                            "proportional_random", rng)
            tape = Tape()
            recon = tsr.forward(sparse, tape, mode="train")
            trimmed = recon[:, :t_orig]
            pad = recon.shape[1] - t_orig
            if loss_kind == "ctc":
                head_tape = Tape()
                lattice = models.head.forward(trimmed, head_tape, mode="eval")
                try:
                    loss, grad = ctc.ctc_loss(lattice, seq.label)
                except ctc.InfeasibleLabelError:
                    continue
                g_recon = head_tape.backward((grad / tcfg.batch).astype(lattice.dtype))
            else:
                diff = trimmed - dense_feats
                loss = float(np.mean(diff ** 2))
                g_recon = (2.0 * diff / (diff.size * tcfg.batch)).astype(recon.dtype)
            _check_finite(loss)
            total_loss += loss
            if pad:
                g_recon = np.pad(g_recon, ((0, 0), (0, pad)))
            tape.backward(g_recon)
            pending += 1
            if pending == tcfg.batch:
                opt.step()
                _discard_frozen_grads(models)
                pending = 0
        if pending:
            opt.step()
            _discard_frozen_grads(models)
        dev_wer = evaluate(models, dataset.dev, factor=factor,
                           reconstructor="tsrnet", beam_width=cfg.eval.beam_width)
        result.history.append(EpochStats(epoch, total_loss / len(order), dev_wer))
        if log:
            log(f"[tsr n={factor} {loss_kind}] epoch {epoch:2d} loss "
                f"{total_loss / len(order):10.4f} dev WER {dev_wer:6.2f}%")
        if dev_wer < result.best_dev_wer:
            result.best_dev_wer = dev_wer
            result.best_epoch = epoch
            best = _snapshot(tsr)
    if best is not None:
        _restore(tsr, best)
    return result


def _discard_frozen_grads(models: Models):
    # CTC backward through the frozen head also fills its gradient buffers;
    # they are never stepped, but must not grow without bound.
    models.head.zero_grad()
    models.encoder.zero_grad()


def sweep(dataset: Dataset, base: Models, tsr_by_factor: dict[int, TSRNet],
          cfg: ExperimentConfig, split="dev", factors=None, reconstructors=None):
    """WER/WERD grid over (factor, reconstructor); rows of
    (factor, reconstructor, wer, werd). The WERD reference is the same
    recognizer evaluated at factor 1."""
    factors = list(factors or cfg.eval.factors)
    reconstructors = list(reconstructors or cfg.eval.reconstructors)
    seqs = dataset.splits()[split]
    ref_wer = evaluate(base, seqs, factor=1, beam_width=cfg.eval.beam_width)
    rows = []
    for n in factors:
        for rec in reconstructors:
            if n == 1:
                w = ref_wer
            else:
                models = Models(base.encoder, base.head,
                                tsr_by_factor.get(n) if rec == "tsrnet" else None)
                w = evaluate(models, seqs, factor=n, reconstructor=rec,
                             beam_width=cfg.eval.beam_width)
            rows.append((n, rec, w, metrics.werd(w, ref_wer)))
    return rows


def sweep_csv(rows) -> str:
    lines = ["factor,reconstructor,wer,werd"]
    for n, rec, w, d in rows:
        lines.append(f"{n},{rec},{w:.4f},{d:.4f}")
    return "\n".join(lines) + "\n"


def sweep_text(rows) -> str:
    lines = [f"{'factor':>6} {'reconstructor':<14}{'WER(%)':>8}{'WERD(%)':>9}"]
    for n, rec, w, d in rows:
        lines.append(f"{n:>6} {rec:<14}{w:>8.2f}{d:>9.2f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Checkpoints: the nn-core tensor container plus a config fingerprint.
# ---------------------------------------------------------------------------

_FP_KEY = "__fingerprint__"


def save_checkpoint(path, module, cfg: ExperimentConfig):
    tensors = dict(module.state_dict())
    tensors[_FP_KEY] = np.frombuffer(cfg.fingerprint(), dtype=np.uint8).astype(np.float32)
    save_tensors(path, tensors)


def load_checkpoint(path, module, cfg: ExperimentConfig):
    tensors = load_tensors(path)
    fp = tensors.pop(_FP_KEY, None)
    expect = np.frombuffer(cfg.fingerprint(), dtype=np.uint8).astype(np.float32)
    if fp is None or fp.shape != expect.shape or not np.array_equal(fp, expect):
        raise CompatibilityError("checkpoint fingerprint does not match the configuration")
    try:
        module.load_state_dict(tensors)
    except FormatError as exc:
        raise CompatibilityError(str(exc)) from exc
    return module
