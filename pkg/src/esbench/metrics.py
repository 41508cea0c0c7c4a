"""Latency, tail latency and throughput aggregation over request samples.

Percentiles use the exact nearest-rank definition: for ``n`` sorted values
the p-th percentile is the value at 1-based rank ``ceil(p/100 * n)``. The
rank is computed in rational arithmetic so ``p=99.9`` never picks a
neighbouring element because of float rounding.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import PreconditionError

TOTAL = "total"
COMMUNICATION = "communication"
MODULES = ("recommender", "searcher")
FIG_B_SCOPES = ("planer", "recommender", "searcher", "ranker", "product_db", COMMUNICATION)
FIG_C_SCOPES = ("recommender.query_parse", "recommender.user_db", "recommender.classify", "recommender.serving")


class LatencyDistribution:
    """Sorted latency values (microseconds)."""

    def __init__(self, values: Iterable[int | float]):
        self.values = np.sort(np.asarray(list(values)))

    @property
    def count(self) -> int:
        return len(self.values)

    def __len__(self):
        return self.count

    def percentile(self, p: float):
        return percentile(self, p)


def nearest_rank(p: float, n: int) -> int:
    """1-based rank ``ceil(p/100 * n)``, exact for decimal ``p``."""
    if not 0 < p <= 100:
        raise ValueError(f"percentile must lie in (0, 100], got {p}")
    q = Fraction(str(p)) * n / 100
    return max(1, math.ceil(q))


def percentile(distribution: LatencyDistribution | Sequence, p: float):
    if not isinstance(distribution, LatencyDistribution):
        distribution = LatencyDistribution(distribution)
    if distribution.count == 0:
        raise PreconditionError("percentile of an empty distribution")
    v = distribution.values[nearest_rank(p, distribution.count) - 1]
    return v.item() if hasattr(v, "item") else v


@dataclass
class ScopeStats:
    count: int
    average_ms: float
    p90_ms: float
    p99_ms: float
    min_ms: float
    max_ms: float

    @classmethod
    def from_us(cls, values_us: Sequence[int]) -> "ScopeStats":
        dist = LatencyDistribution(values_us)
        # Python ints sum exactly, so the average is independent of sample order.
        avg = sum(int(v) for v in values_us) / len(values_us)
        return cls(
            count=dist.count,
            average_ms=avg / 1000.0,
            p90_ms=percentile(dist, 90) / 1000.0,
            p99_ms=percentile(dist, 99) / 1000.0,
            min_ms=dist.values[0].item() / 1000.0,
            max_ms=dist.values[-1].item() / 1000.0,
        )


@dataclass
class BenchReport:
    scopes: dict[str, ScopeStats]
    throughput_rps: float
    measured_count: int
    failure_count: int
    window_s: float
    communication_ms: float
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scopes"] = {k: asdict(v) for k, v in sorted(self.scopes.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        rows = ["(a) Total latency", _table([TOTAL], self.scopes),
                "", "(b) Per-module latency", _table(FIG_B_SCOPES, self.scopes),
                "", "(c) Recommender breakdown", _table(FIG_C_SCOPES, self.scopes),
                "", f"throughput: {self.throughput_rps:.2f} req/s over {self.window_s:.2f} s",
                f"measured requests: {self.measured_count}  failures: {self.failure_count}"]
        return "\n".join(rows) + "\n"


def _table(names, scopes) -> str:
    out = [f"{'scope':<26}{'avg ms':>10}{'p90 ms':>10}{'p99 ms':>10}"]
    for name in names:
        s = scopes.get(name)
        if s is None:
            continue
        out.append(f"{name:<26}{s.average_ms:>10.3f}{s.p90_ms:>10.3f}{s.p99_ms:>10.3f}")
    return "\n".join(out)


def scope_values(samples: Sequence) -> dict[str, list[int]]:
    """Per-scope duration lists (us) over successful samples.

    Beyond the raw stage names this adds module scopes that sum their
    sub-stages (``recommender``, ``searcher``) and the communication
    residual: total latency minus the sum of all stage durations.
    """
    values: dict[str, list[int]] = {TOTAL: []}
    comm = []
    for s in samples:
        values[TOTAL].append(int(s.latency_us))
        module_sums = dict.fromkeys(MODULES, 0)
        for stage, dur in s.stages.items():
            values.setdefault(stage, []).append(int(dur))
            prefix = stage.split(".", 1)[0]
            if prefix in module_sums and "." in stage:
                module_sums[prefix] += int(dur)
        for m in MODULES:
            if any(st.startswith(m + ".") for st in s.stages):
                values.setdefault(m, []).append(module_sums[m])
        comm.append(int(s.latency_us) - sum(int(d) for d in s.stages.values()))
    values[COMMUNICATION] = comm
    return values


def build_report(samples: Iterable, meta: dict | None = None) -> BenchReport:
    measured = [s for s in samples if not s.in_warmup]
    ok = [s for s in measured if s.success]
    if not ok:
        raise PreconditionError("no successful measured samples to report on")
    scopes = {name: ScopeStats.from_us(vals) for name, vals in scope_values(ok).items() if vals}
    start = min(s.send_us for s in measured)
    end = max(s.recv_us for s in measured)
    window_s = (end - start) / 1e6
    return BenchReport(
        scopes=scopes,
        throughput_rps=len(measured) / window_s if window_s > 0 else 0.0,
        measured_count=len(measured),
        failure_count=len(measured) - len(ok),
        window_s=window_s,
        communication_ms=scopes[COMMUNICATION].average_ms,
        meta=dict(meta or {}),
    )


def write_report(report: BenchReport, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "report.txt").write_text(report.to_text())


def export_scope_csv(samples: Iterable, scope: str, path: str | Path) -> int:
    """Write one ``latency_us`` row per successful measured sample for ``scope``."""
    ok = [s for s in samples if s.success and not s.in_warmup]
    vals = scope_values(ok).get(scope, [])
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([scope + "_us"])
        w.writerows([v] for v in vals)
    return len(vals)
