"""Tiered inverted indexes plus the two forward indexes (rank, summary)."""

from __future__ import annotations

import hashlib
import json
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import (
    HASHED_SLOTS,
    PREFERENCE_DIM,
    TIER_HIGH,
    TIER_LOW,
    TIER_MEDIUM,
    ProductRecord,
    TierAssignment,
)
from .exceptions import IndexBuildError, NotFoundError
from .hashing import bucket

TIERS = (TIER_HIGH, TIER_MEDIUM, TIER_LOW)
DEFAULT_LIMIT = 100
SNAPSHOT_MAGIC = b"ESBIDX1\n"


def tokenize(text: str | Sequence[str]) -> list[str]:
    if not isinstance(text, str):
        text = " ".join(text)
    return text.lower().split()


@dataclass(frozen=True)
class PostingList:
    token: str
    postings: tuple[tuple[int, int], ...] = ()

    def __len__(self):
        return len(self.postings)

    def product_ids(self) -> list[int]:
        return [pid for pid, _ in self.postings]


@dataclass
class InvertedIndex:
    tier: str
    lists: dict[str, PostingList]
    doc_count: int

    def lookup(self, token: str) -> PostingList:
        return self.lists.get(token) or PostingList(token)


@dataclass
class ForwardIndex:
    kind: str  # "Rank" or "Summary"
    rows: dict[int, object]

    def __contains__(self, pid):
        return pid in self.rows

    def __len__(self):
        return len(self.rows)

    def get(self, pid: int):
        try:
            return self.rows[pid]
        except KeyError:
            raise NotFoundError(f"unknown product id {pid}") from None


@dataclass
class IndexSet:
    inverted: dict[str, InvertedIndex]
    rank: ForwardIndex
    summary: ForwardIndex
    popularity: dict[int, float]
    category: dict[int, int]
    checksum: str = field(default="")

    def doc_counts(self) -> dict[str, int]:
        return {t: idx.doc_count for t, idx in self.inverted.items()}


def _check_tiers(catalog: Sequence[ProductRecord], tiers: TierAssignment) -> None:
    ids = {p.product_id for p in catalog}
    if len(ids) != len(catalog):
        raise IndexBuildError("duplicate product ids in catalog")
    if tiers.medium & tiers.low:
        raise IndexBuildError("Medium and Low tiers overlap")
    if not tiers.high <= tiers.medium:
        raise IndexBuildError("High tier is not a subset of Medium")
    if (tiers.medium | tiers.low) != ids:
        raise IndexBuildError("tier assignment does not cover exactly the catalog")


def rank_vector(product: ProductRecord, max_price: float) -> np.ndarray:
    vec = np.zeros(PREFERENCE_DIM)
    vec[0] = product.price / max_price if max_price > 0 else 0.0
    vec[1] = product.popularity
    vec[2 + bucket(product.brand, HASHED_SLOTS)] = 1.0
    vec[2 + HASHED_SLOTS + bucket(product.color, HASHED_SLOTS)] = 1.0
    return vec


def summary_fields(product: ProductRecord) -> dict:
    d = {
        "product_id": product.product_id,
        "title": " ".join(product.title),
        "category_id": product.category_id,
        "brand": product.brand,
        "color": product.color,
        "price": product.price,
    }
    d.update(product.extra_fields)
    return d


def _build_inverted(tier: str, products: Sequence[ProductRecord]) -> InvertedIndex:
    acc: dict[str, list[tuple[float, int, int]]] = {}
    for p in products:
        for tok, tf in Counter(p.tokens()).items():
            acc.setdefault(tok, []).append((p.popularity, p.product_id, tf))
    lists = {}
    for tok, entries in acc.items():
        entries.sort(key=lambda e: (-e[0], e[1]))
        lists[tok] = PostingList(tok, tuple((pid, tf) for _, pid, tf in entries))
    return InvertedIndex(tier, lists, len(products))


def build_indexes(catalog: Sequence[ProductRecord], tiers: TierAssignment) -> IndexSet:
    _check_tiers(catalog, tiers)
    by_tier = {t: [p for p in catalog if p.product_id in tiers.members(t)] for t in TIERS}
    inverted = {t: _build_inverted(t, by_tier[t]) for t in TIERS}
    max_price = max((p.price for p in catalog), default=0.0)
    rank = ForwardIndex("Rank", {p.product_id: rank_vector(p, max_price) for p in catalog})
    summary = ForwardIndex("Summary", {p.product_id: summary_fields(p) for p in catalog})
    indexes = IndexSet(
        inverted=inverted,
        rank=rank,
        summary=summary,
        popularity={p.product_id: p.popularity for p in catalog},
        category={p.product_id: p.category_id for p in catalog},
    )
    indexes.checksum = index_checksum(indexes)
    return indexes


def _search_tier(index: InvertedIndex, tokens: set[str], exclude: set[int],
                 popularity: dict[int, float]) -> list[int]:
    matches: Counter[int] = Counter()
    for tok in tokens:
        for pid, _ in index.lookup(tok).postings:
            if pid not in exclude:
                matches[pid] += 1
    return sorted(matches, key=lambda pid: (-matches[pid], -popularity[pid], pid))


def tier_search(indexes: IndexSet, tokens: Sequence[str], limit: int | None = DEFAULT_LIMIT,
                trace: list | None = None) -> list[int]:
    """Search High, then Medium, then Low until at least ``limit`` products match.

    A product matches if it contains any query token; within a tier results
    are ordered by number of distinct matched tokens, then popularity, then
    id. ``limit=None`` searches every tier. If ``trace`` is given, one
    ``(tier, start_ns, end_ns)`` tuple is appended per probed tier.
    """
    if limit is not None and limit < 1:
        raise ValueError("limit must be >= 1")
    query = set(tokenize(tokens))
    if not query:
        return []
    found: list[int] = []
    seen: set[int] = set()
    for tier in TIERS:
        t0 = time.monotonic_ns()
        hits = _search_tier(indexes.inverted[tier], query, seen, indexes.popularity)
        found.extend(hits)
        seen.update(hits)
        if trace is not None:
            trace.append((tier, t0, time.monotonic_ns()))
        if limit is not None and len(found) >= limit:
            break
    return found if limit is None else found[:limit]


def rank_features(forward_rank: ForwardIndex, product_ids: Sequence[int]) -> list[np.ndarray]:
    return [forward_rank.get(pid) for pid in product_ids]


# -- snapshots ---------------------------------------------------------------

def _to_jsonable(indexes: IndexSet) -> dict:
    return {
        "version": 1,
        "inverted": {
            t: {
                "doc_count": idx.doc_count,
                "lists": {tok: [list(p) for p in pl.postings] for tok, pl in sorted(idx.lists.items())},
            }
            for t, idx in indexes.inverted.items()
        },
        "rank": {str(pid): [float(x) for x in v] for pid, v in sorted(indexes.rank.rows.items())},
        "summary": {str(pid): v for pid, v in sorted(indexes.summary.rows.items())},
        "popularity": {str(pid): v for pid, v in sorted(indexes.popularity.items())},
        "category": {str(pid): v for pid, v in sorted(indexes.category.items())},
    }


def index_checksum(indexes: IndexSet) -> str:
    blob = json.dumps(_to_jsonable(indexes), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_snapshot(indexes: IndexSet, path: str | Path) -> None:
    with open(path, "wb") as f:
        f.write(SNAPSHOT_MAGIC)
        f.write(json.dumps(_to_jsonable(indexes), sort_keys=True, separators=(",", ":")).encode())


def load_snapshot(path: str | Path) -> IndexSet:
    with open(path, "rb") as f:
        magic = f.read(len(SNAPSHOT_MAGIC))
        if magic != SNAPSHOT_MAGIC:
            raise IndexBuildError(f"{path}: not an index snapshot (bad magic)")
        d = json.loads(f.read())
    inverted = {
        t: InvertedIndex(
            t,
            {tok: PostingList(tok, tuple((int(a), int(b)) for a, b in pl)) for tok, pl in v["lists"].items()},
            v["doc_count"],
        )
        for t, v in d["inverted"].items()
    }
    indexes = IndexSet(
        inverted=inverted,
        rank=ForwardIndex("Rank", {int(k): np.array(v) for k, v in d["rank"].items()}),
        summary=ForwardIndex("Summary", {int(k): v for k, v in d["summary"].items()}),
        popularity={int(k): v for k, v in d["popularity"].items()},
        category={int(k): v for k, v in d["category"].items()},
    )
    indexes.checksum = index_checksum(indexes)
    return indexes
