"""Ranker: preference-weighted scoring of searched products."""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Sequence

import numpy as np

from ..exceptions import NotFoundError, StageError
from ..index import ForwardIndex, load_snapshot, rank_features
from ..models.kernels import dense, relu
from .timing import StageRecorder
from .transport import ServiceApp


def score_products(forward_rank: ForwardIndex, product_ids: Sequence[int], weights,
                   extra_layers: Sequence[tuple[np.ndarray, np.ndarray]] = ()) -> list[tuple[int, float]]:
    """``(product_id, score)`` sorted by score descending, then id ascending.

    The score is ``weights . features``. With ``extra_layers`` the
    element-wise product ``weights * features`` is instead passed through
    ReLU dense layers ending in a single output unit.
    """
    if len(product_ids) == 0:
        return []
    feats = np.stack(rank_features(forward_rank, product_ids))
    w = np.asarray(weights, dtype=np.float64)
    if extra_layers:
        h = feats * w
        for i, (W, b) in enumerate(extra_layers):
            h = dense(h, W, b)
            if i < len(extra_layers) - 1:
                h = relu(h)
        scores = h[:, 0]
    else:
        scores = feats @ w
    pairs = [(int(pid), float(s)) for pid, s in zip(product_ids, scores)]
    pairs.sort(key=lambda p: (-p[1], p[0]))
    return pairs


class Ranker(ServiceApp):
    role = "ranker"

    def __init__(self, forward_rank: ForwardIndex, extra_layers=()):
        super().__init__()
        self.forward_rank = forward_rank
        self.extra_layers = list(extra_layers)
        self._lock = threading.Lock()
        self.requests = 0
        self.routes[("POST", "/rank")] = lambda b: self.rank(b["product_ids"], b["preference_weights"])
        self.routes[("POST", "/install")] = lambda b: self.install(load_snapshot(Path(b["path"])).rank)

    def install(self, forward_rank: ForwardIndex) -> dict:
        self.forward_rank = forward_rank
        return {"products": len(forward_rank)}

    def rank(self, product_ids, preference_weights) -> dict:
        rec = StageRecorder()
        try:
            with rec.stage("ranker"):
                ranking = score_products(self.forward_rank, product_ids, preference_weights, self.extra_layers)
        except NotFoundError as e:
            raise StageError("ranker", str(e), status=404, timings=rec.to_list()) from None
        with self._lock:
            self.requests += 1
        return {"ranking": [[pid, s] for pid, s in ranking], "timings": rec.to_list()}

    def stats(self) -> dict:
        with self._lock:
            return {"role": self.role, "requests": self.requests, "products": len(self.forward_rank)}
