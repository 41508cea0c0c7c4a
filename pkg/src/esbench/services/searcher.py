"""Searcher: tiered inverted-index lookup with predicted-category priority."""

from __future__ import annotations

import threading
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from ..index import DEFAULT_LIMIT, TIERS, IndexSet, load_snapshot, tier_search, tokenize
from .timing import StageRecorder
from .transport import ServiceApp


def category_priority(product_ids: Sequence[int], category_of: dict[int, int], category_probs) -> list[int]:
    """Stable re-sort putting products of the most probable category first."""
    if category_probs is None or len(category_probs) == 0:
        return list(product_ids)
    top = int(np.argmax(category_probs))
    return sorted(product_ids, key=lambda pid: category_of[pid] != top)


class Searcher(ServiceApp):
    role = "searcher"

    def __init__(self, indexes: IndexSet):
        super().__init__()
        self.indexes = indexes
        self._lock = threading.Lock()
        self.probes = dict.fromkeys(TIERS, 0)
        self.queries = 0
        self.routes[("POST", "/query")] = lambda b: self.query(
            b.get("tokens") or [], b.get("category_probs"), int(b.get("limit") or DEFAULT_LIMIT))
        self.routes[("POST", "/install")] = lambda b: self.install(load_snapshot(Path(b["path"])))

    def install(self, indexes: IndexSet) -> dict:
        # Single reference assignment: a query sees either the old or the new set.
        self.indexes = indexes
        return {"checksum": indexes.checksum, "doc_counts": indexes.doc_counts()}

    def query(self, tokens, category_probs=None, limit: int = DEFAULT_LIMIT) -> dict:
        indexes = self.indexes
        trace: list = []
        ids = tier_search(indexes, tokenize(tokens), limit, trace=trace)
        ids = category_priority(ids, indexes.category, category_probs)
        rec = StageRecorder()
        probed = {tier: (t0, t1) for tier, t0, t1 in trace}
        end = trace[-1][2] if trace else time.monotonic_ns()
        for tier in TIERS:
            t0, t1 = probed.get(tier, (end, end))
            rec.add(f"searcher.{tier.lower()}", t0, t1)
        with self._lock:
            self.queries += 1
            for tier in probed:
                self.probes[tier] += 1
        return {"product_ids": ids, "timings": rec.to_list(), "probed": [t for t in TIERS if t in probed]}

    def stats(self) -> dict:
        with self._lock:
            return {
                "role": self.role,
                "queries": self.queries,
                "probes": dict(self.probes),
                "doc_counts": self.indexes.doc_counts(),
                "index_checksum": self.indexes.checksum,
            }
