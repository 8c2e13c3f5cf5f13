"""Shared fixtures for the acceptance suite plus its PASS/FAIL summary.

The session-scoped fixtures run the full default-configuration experiment
(base training, one reconstruction network per factor, the L2 ablation) so
the individual acceptance tests can share one training run.
"""

import numpy as np
import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance-criterion verdict and assert it."""

    def _check(name, ok, detail):
        line = f"{name}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return _check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(set(ACCEPTANCE_LINES)):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acc_cfg():
    from tsrkit.config import load_config
    return load_config()


@pytest.fixture(scope="session")
def acc_dataset(acc_cfg):
    from tsrkit import synthdata
    return synthdata.generate_dataset(acc_cfg.synth)


@pytest.fixture(scope="session")
def acc_base(acc_cfg, acc_dataset):
    from tsrkit import pipeline
    return pipeline.train_base(acc_dataset, acc_cfg)


@pytest.fixture(scope="session")
def acc_frozen_snapshot(acc_base):
    """Bitwise copy of the base parameters before any step-2 training."""
    return (
        {k: v.copy() for k, v in acc_base.models.encoder.state_dict().items()},
        {k: v.copy() for k, v in acc_base.models.head.state_dict().items()},
    )


@pytest.fixture(scope="session")
def acc_tsr(acc_cfg, acc_dataset, acc_base, acc_frozen_snapshot):
    """Factor -> TrainResult of the self-generating (CTC) training."""
    from tsrkit import pipeline
    return {n: pipeline.train_tsrnet(acc_dataset, acc_base.models, n, acc_cfg)
            for n in (2, 4, 8)}


@pytest.fixture(scope="session")
def acc_l2(acc_cfg, acc_dataset, acc_base, acc_tsr):
    from tsrkit import pipeline
    return pipeline.train_tsrnet(acc_dataset, acc_base.models, 4, acc_cfg,
                                 loss_kind="l2")


@pytest.fixture(scope="session")
def acc_dev_wer(acc_cfg, acc_dataset, acc_base, acc_tsr):
    """Dev WER grid: (factor, reconstructor) -> percent."""
    from tsrkit import pipeline
    from tsrkit.pipeline import Models
    grid = {}
    base = acc_base.models
    for n in (1, 2, 4, 8):
        for rec in ("tsrnet", "nearest", "linear"):
            if n == 1:
                models = base
            else:
                tsr = acc_tsr[n].models.tsrnet if rec == "tsrnet" else None
                models = Models(base.encoder, base.head, tsr)
            grid[(n, rec)] = pipeline.evaluate(
                models, acc_dataset.dev, factor=n, reconstructor=rec,
                beam_width=acc_cfg.eval.beam_width)
    return grid
