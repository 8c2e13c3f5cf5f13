"""Analytic compute accounting plus wall-clock measurement.

Conventions (documented, self-consistent with the instrumented in-layer
counter): 1 multiply-accumulate = 2 FLOPs, bias add and relu 1 FLOP per
element, normalization 2 FLOPs per element, log-softmax 5 per element.
Memory traffic is estimated as (input + output + parameter elements) * 4
bytes per layer. At downsampling factor n the frame encoder sees T/n
frames, the reconstructor upsamples back to T, and the temporal head sees
T frames.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

BYTES_PER_ELEM = 4


@dataclass
class PartReport:
    name: str
    params: int
    flops: int
    mem_rw_bytes: int
    runtime_ms: float | None = None
    runtime_var: float | None = None


@dataclass
class AccountingReport:
    factor: int
    t: int
    parts: list[PartReport]

    @property
    def total(self) -> PartReport:
        return PartReport(
            name="total",
            params=sum(p.params for p in self.parts),
            flops=sum(p.flops for p in self.parts),
            mem_rw_bytes=sum(p.mem_rw_bytes for p in self.parts),
            runtime_ms=(sum(p.runtime_ms for p in self.parts)
                        if all(p.runtime_ms is not None for p in self.parts) else None),
        )

    def rows(self):
        return self.parts + [self.total]

    def as_text(self) -> str:
        header = f"{'part':<16}{'params':>12}{'flops':>16}{'mem_rw_bytes':>16}{'runtime_ms':>12}"
        lines = [f"factor={self.factor} T={self.t}", header]
        for p in self.rows():
            rt = f"{p.runtime_ms:.3f}" if p.runtime_ms is not None else "-"
            lines.append(f"{p.name:<16}{p.params:>12}{p.flops:>16}{p.mem_rw_bytes:>16}{rt:>12}")
        return "\n".join(lines) + "\n"

    def as_csv(self) -> str:
        lines = ["part,params,flops,mem_rw_bytes,runtime_ms"]
        for p in self.rows():
            rt = f"{p.runtime_ms:.6f}" if p.runtime_ms is not None else ""
            lines.append(f"{p.name},{p.params},{p.flops},{p.mem_rw_bytes},{rt}")
        return "\n".join(lines) + "\n"


def count_params(module) -> int:
    """Learnable element count; running statistics are excluded."""
    return module.param_count()


def module_cost(module, c_in, t_in):
    """(flops, mem_rw_bytes) of one forward pass at input length t_in."""
    flops, mem_elems, _, _ = module.cost(c_in, t_in)
    return flops, mem_elems * BYTES_PER_ELEM


def build_report(encoder, head, tsrnet, t, factor) -> AccountingReport:
    """Table-style accounting of the test-time pipeline at one factor.

    At factor 1 the reconstructor is skipped and its rows are zero.
    """
    if t % factor != 0:
        raise ValueError("T must be divisible by the factor for exact accounting")
    t_sparse = t // factor
    parts = []
    f, m = module_cost(encoder, encoder.obs_dim, t_sparse)
    parts.append(PartReport("frame_encoder", count_params(encoder), f, m))
    if factor > 1 and tsrnet is not None:
        f, m = module_cost(tsrnet, tsrnet.cfg.c1, t_sparse)
        parts.append(PartReport("tsrnet", count_params(tsrnet), f, m))
    else:
        parts.append(PartReport("tsrnet", 0, 0, 0))
    f, m = module_cost(head, head.c1, t)
    parts.append(PartReport("temporal_head", count_params(head), f, m))
    return AccountingReport(factor=factor, t=t, parts=parts)


def measure_runtime(fn, repeats=5):
    """Mean and variance of wall time (ms) over `repeats` calls, after one
    warm-up run."""
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1000.0)
    mean = sum(times) / len(times)
    var = sum((x - mean) ** 2 for x in times) / len(times)
    return mean, var
