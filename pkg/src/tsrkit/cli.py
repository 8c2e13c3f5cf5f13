"""Command-line entry point.

Subcommands: gen-data, train-base, train-tsrnet, eval, sweep, account,
gradcheck, autocorr. Exit codes: 0 success, 1 usage error, 2 runtime
error. Tables go to stdout human-readable and to --out as CSV.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import accounting, metrics, pipeline, sampling, synthdata
from .config import load_config
from .nn import Tape, grad_check
from .tsrnet import TSRNet, TsrConfig


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(sub):
    sub.add_argument("--config", help="experiment config JSON")
    sub.add_argument("--seed", type=int, help="override train.seed and synth.seed")
    sub.add_argument("--out", help="output path (file or directory, per subcommand)")


def build_parser():
    p = _Parser(prog="tsrkit", description="temporal super-resolution sequence recognition toolkit")
    subs = p.add_subparsers(dest="command", required=True)

    sp = subs.add_parser("gen-data", parents=[], help="generate the synthetic dataset")
    _add_common(sp)

    sp = subs.add_parser("train-base", help="step 1: train the recognizer at factor 1")
    _add_common(sp)
    sp.add_argument("--data", help="dataset file (default: regenerate from config)")

    sp = subs.add_parser("train-tsrnet", help="step 2: train the reconstruction network")
    _add_common(sp)
    sp.add_argument("--data", help="dataset file")
    sp.add_argument("--base", required=True, help="base checkpoint from train-base")
    sp.add_argument("--factor", type=int, default=4)
    sp.add_argument("--loss", choices=["ctc", "l2"], default="ctc")

    sp = subs.add_parser("eval", help="evaluate WER/WERD on a split")
    _add_common(sp)
    sp.add_argument("--data", help="dataset file")
    sp.add_argument("--base", required=True)
    sp.add_argument("--tsr", help="reconstructor checkpoint (required for tsrnet)")
    sp.add_argument("--factor", type=int, default=1)
    sp.add_argument("--reconstructor", default="tsrnet",
                    choices=["tsrnet", "nearest", "linear"])
    sp.add_argument("--split", default="dev", choices=["train", "dev", "test"])

    sp = subs.add_parser("sweep", help="WER/WERD grid over factors and reconstructors")
    _add_common(sp)
    sp.add_argument("--data", help="dataset file")
    sp.add_argument("--base", required=True)
    sp.add_argument("--ckpt-dir", required=True,
                    help="directory with tsr_n{factor}.ckpt files; missing ones are trained")
    sp.add_argument("--split", default="dev", choices=["train", "dev", "test"])

    sp = subs.add_parser("account", help="params/FLOPs/memory/runtime report")
    _add_common(sp)
    sp.add_argument("--factor", type=int, default=1)
    sp.add_argument("--length", type=int, default=200, help="input length T")

    sp = subs.add_parser("gradcheck", help="finite-difference gradient check")
    _add_common(sp)
    sp.add_argument("--tolerance", type=float, default=1e-4)

    sp = subs.add_parser("autocorr", help="frame autocorrelation matrix as CSV")
    _add_common(sp)
    sp.add_argument("--index", type=int, default=0, help="dev-split sequence index")
    sp.add_argument("--data", help="dataset file")
    return p


def _load_cfg(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = args.seed
        overrides["synth.seed"] = args.seed
    return load_config(args.config, overrides)


def _load_dataset(args, cfg):
    if getattr(args, "data", None):
        return synthdata.load_dataset(args.data)
    return synthdata.generate_dataset(cfg.synth)


def _base_models(cfg, path):
    models = pipeline.build_models(cfg)
    pipeline.load_checkpoint(path, models.encoder, cfg)
    pipeline.load_checkpoint(path + ".head", models.head, cfg)
    return models


def _save_base(models, cfg, path):
    pipeline.save_checkpoint(path, models.encoder, cfg)
    pipeline.save_checkpoint(path + ".head", models.head, cfg)


def _tsr_model(cfg, factor, path):
    tsr = TSRNet(TsrConfig(**{**cfg.tsr.__dict__, "n": factor}))
    pipeline.load_checkpoint(path, tsr, cfg)
    return tsr


def _emit(text, csv_text, out):
    sys.stdout.write(text)
    if out:
        with open(out, "w") as fh:
            fh.write(csv_text)


def run(args) -> int:
    cfg = _load_cfg(args)
    cmd = args.command

    if cmd == "gen-data":
        ds = synthdata.generate_dataset(cfg.synth)
        out = args.out or "dataset.tsd"
        if os.path.isdir(out):
            out = os.path.join(out, "dataset.tsd")
        synthdata.save_dataset(out, ds)
        print(f"wrote {out}: {len(ds.train)}/{len(ds.dev)}/{len(ds.test)} "
              f"train/dev/test sequences, |V|={ds.vocab_size}, c0={ds.obs_dim}")
        return 0

    if cmd == "train-base":
        ds = _load_dataset(args, cfg)
        result = pipeline.train_base(ds, cfg, log=print)
        out = args.out or "base.ckpt"
        _save_base(result.models, cfg, out)
        print(f"best dev WER {result.best_dev_wer:.2f}% (epoch {result.best_epoch}); wrote {out}")
        return 0

    if cmd == "train-tsrnet":
        ds = _load_dataset(args, cfg)
        base = _base_models(cfg, args.base)
        result = pipeline.train_tsrnet(ds, base, args.factor, cfg,
                                       loss_kind=args.loss, log=print)
        out = args.out or f"tsr_n{args.factor}.ckpt"
        pipeline.save_checkpoint(out, result.models.tsrnet, cfg)
        print(f"best dev WER {result.best_dev_wer:.2f}% (epoch {result.best_epoch}); wrote {out}")
        return 0

    if cmd == "eval":
        ds = _load_dataset(args, cfg)
        base = _base_models(cfg, args.base)
        if args.factor > 1 and args.reconstructor == "tsrnet":
            if not args.tsr:
                raise pipeline.CompatibilityError("--tsr checkpoint required for the tsrnet reconstructor")
            base.tsrnet = _tsr_model(cfg, args.factor, args.tsr)
        seqs = ds.splits()[args.split]
        ref = pipeline.evaluate(base, seqs, factor=1, beam_width=cfg.eval.beam_width)
        w = (ref if args.factor == 1 else
             pipeline.evaluate(base, seqs, factor=args.factor,
                               reconstructor=args.reconstructor,
                               beam_width=cfg.eval.beam_width))
        d = metrics.werd(w, ref)
        rows = [(args.factor, args.reconstructor if args.factor > 1 else "none", w, d)]
        _emit(pipeline.sweep_text(rows), pipeline.sweep_csv(rows), args.out)
        return 0

    if cmd == "sweep":
        ds = _load_dataset(args, cfg)
        base = _base_models(cfg, args.base)
        tsr_by_factor = {}
        for n in cfg.eval.factors:
            if n == 1:
                continue
            path = os.path.join(args.ckpt_dir, f"tsr_n{n}.ckpt")
            if os.path.exists(path):
                tsr_by_factor[n] = _tsr_model(cfg, n, path)
            else:
                print(f"training reconstructor for factor {n} ...")
                result = pipeline.train_tsrnet(ds, base, n, cfg, log=print)
                pipeline.save_checkpoint(path, result.models.tsrnet, cfg)
                tsr_by_factor[n] = result.models.tsrnet
        rows = pipeline.sweep(ds, base, tsr_by_factor, cfg, split=args.split)
        _emit(pipeline.sweep_text(rows), pipeline.sweep_csv(rows), args.out)
        if args.out:
            acc_lines = ["factor,part,params,flops,mem_rw_bytes"]
            t = 200 * max(cfg.eval.factors)  # divisible by every factor
            for n in cfg.eval.factors:
                rep = accounting.build_report(base.encoder, base.head,
                                              tsr_by_factor.get(n), t, n)
                for part in rep.rows():
                    acc_lines.append(f"{n},{part.name},{part.params},{part.flops},{part.mem_rw_bytes}")
            with open(args.out + ".accounting.csv", "w") as fh:
                fh.write("\n".join(acc_lines) + "\n")
        return 0

    if cmd == "account":
        t = args.length
        if t % args.factor:
            t += args.factor - t % args.factor
        models = pipeline.build_models(cfg, with_tsrnet=args.factor > 1, factor=args.factor)
        rep = accounting.build_report(models.encoder, models.head, models.tsrnet, t, args.factor)
        raw = np.zeros((cfg.synth.obs_dim, t), dtype=np.float32)
        # warm the batchnorm statistics so the eval-mode timing path works
        models.head.forward(models.encoder.forward(raw), mode="train")
        if models.tsrnet is not None:
            models.tsrnet.forward(np.zeros((cfg.tsr.c1, t // args.factor), dtype=np.float32),
                                  mode="train")
        def model_forward():
            # network part only; CTC beam decoding is not part of the model
            sparse = (sampling.downsample(raw, args.factor, "equal")[0]
                      if args.factor > 1 else raw)
            feats = models.encoder.forward(sparse, mode="eval")
            dense = pipeline.reconstruct(feats, args.factor,
                                         "tsrnet" if models.tsrnet else "nearest",
                                         models.tsrnet, mode="eval")
            models.head.forward(dense[:, :t], mode="eval")

        mean, var = accounting.measure_runtime(model_forward)
        rep.parts[-1].runtime_ms = mean
        rep.parts[-1].runtime_var = var
        text = rep.as_text() + f"model forward: {mean:.2f} ms (variance {var:.3f}) over 5 runs\n"
        _emit(text, rep.as_csv(), args.out)
        return 0

    if cmd == "gradcheck":
        cfg_small = TsrConfig(c1=4, c2=6, c3=6, m=1, k=1, n=2)
        tsr = TSRNet(cfg_small, rng=np.random.default_rng(0), dtype=np.float64)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 6))

        def loss_and_grad():
            tape = Tape()
            y = tsr.forward(x, tape, mode="train")
            loss = float(np.sum(y * w_probe))
            tape.backward(w_probe)
            return loss

        w_probe = rng.standard_normal((4, 12))
        err, _ = grad_check(loss_and_grad, tsr.params())
        ok = err < args.tolerance
        print(f"max relative gradient error: {err:.3e} "
              f"({'PASS' if ok else 'FAIL'} at {args.tolerance:g})")
        return 0 if ok else 2

    if cmd == "autocorr":
        ds = _load_dataset(args, cfg)
        seq = ds.dev[args.index]
        mat = metrics.autocorrelation_matrix(seq.raw)
        csv_text = metrics.autocorrelation_csv(mat)
        off = np.abs(np.subtract.outer(np.arange(mat.shape[0]), np.arange(mat.shape[0])))
        print(f"T={mat.shape[0]} adjacent mean {mat[off == 1].mean():.4f} "
              f"far (|i-j|>=10) mean {mat[off >= 10].mean():.4f}")
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(csv_text)
        return 0

    raise AssertionError(f"unhandled command {cmd}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return run(args)
    except (KeyboardInterrupt, BrokenPipeError):
        return 2
    except Exception as exc:  # runtime errors map to exit code 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
