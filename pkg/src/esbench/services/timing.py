from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass

STAGES = (
    "planer",
    "recommender.query_parse",
    "recommender.user_db",
    "recommender.classify",
    "recommender.serving",
    "searcher.high",
    "searcher.medium",
    "searcher.low",
    "ranker",
    "product_db",
)


def now_us() -> int:
    return time.monotonic_ns() // 1000


@dataclass
class StageTiming:
    stage: str
    start_us: int
    duration_us: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StageTiming":
        return cls(d["stage"], int(d["start_us"]), int(d["duration_us"]))


class StageRecorder:
    """Collects stage timings on this process's monotonic clock."""

    def __init__(self):
        self.timings: list[StageTiming] = []

    @contextmanager
    def stage(self, name: str):
        start = time.monotonic_ns()
        try:
            yield
        finally:
            end = time.monotonic_ns()
            self.timings.append(StageTiming(name, start // 1000, (end - start) // 1000))

    def add(self, name: str, start_ns: int, end_ns: int) -> None:
        self.timings.append(StageTiming(name, start_ns // 1000, max(0, end_ns - start_ns) // 1000))

    def to_list(self) -> list[dict]:
        return [t.to_dict() for t in self.timings]
