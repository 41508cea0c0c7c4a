"""Search planer: the entry service that drives the serving sequence.

Sequence per request: recommender (category probabilities and preference
weights), searcher (product ids, given the predicted categories), ranker
(scores, given the weights), product database (summaries), response.
"""

from __future__ import annotations

import http.client
import time

from ..exceptions import StageError
from ..index import DEFAULT_LIMIT, ForwardIndex
from .timing import StageRecorder, StageTiming
from .transport import RemoteError, ServiceApp


def _call(client, stage: str, path: str, body: dict, timings: list) -> dict:
    try:
        return client.post(path, body)
    except RemoteError as e:
        raise StageError(e.body.get("stage", stage), e.body.get("error", str(e)), status=e.status,
                         timings=timings + e.body.get("timings", [])) from None
    except TimeoutError as e:
        raise StageError(stage, f"timed out: {e}", status=504, timings=timings) from None
    except (OSError, http.client.HTTPException) as e:
        raise StageError(stage, f"unreachable: {e}", status=502, timings=timings) from None


class Planer(ServiceApp):
    role = "planer"

    def __init__(self, recommender, searcher, ranker, summary: ForwardIndex, default_limit: int = DEFAULT_LIMIT):
        super().__init__()
        self.recommender = recommender
        self.searcher = searcher
        self.ranker = ranker
        self.summary = summary
        self.default_limit = default_limit
        self.routes[("POST", "/search")] = self.search

    def install(self, summary: ForwardIndex) -> None:
        self.summary = summary

    def search(self, request: dict) -> dict:
        start = time.monotonic_ns()
        request_id = str(request["request_id"])
        user_id = int(request["user_id"])
        query_text = request["query_text"]
        if not isinstance(query_text, str):
            query_text = " ".join(query_text)
        limit = int(request.get("limit") or self.default_limit)
        timings: list[dict] = []

        t0 = time.monotonic_ns()
        rec = _call(self.recommender, "recommender", "/recommend",
                    {"user_id": user_id, "query_text": query_text}, timings)
        t1 = time.monotonic_ns()
        timings += rec["timings"]
        found = _call(self.searcher, "searcher", "/query",
                      {"tokens": query_text.split(), "category_probs": rec["category_probs"], "limit": limit},
                      timings)
        t2 = time.monotonic_ns()
        timings += found["timings"]
        ranked = _call(self.ranker, "ranker", "/rank",
                       {"product_ids": found["product_ids"], "preference_weights": rec["preference_weights"]},
                       timings)
        t3 = time.monotonic_ns()
        timings += ranked["timings"]
        downstream_ns = t3 - t0

        db = StageRecorder()
        summary = self.summary
        with db.stage("product_db"):
            products = [summary.get(pid) for pid, _ in ranked["ranking"]]
        end = time.monotonic_ns()
        # Planer's own work excludes the downstream round trips and the product fetch.
        own_us = (end - start) // 1000 - downstream_ns // 1000 - db.timings[0].duration_us
        timings.append(StageTiming("planer", start // 1000, max(0, own_us)).to_dict())
        timings += db.to_list()
        return {
            "request_id": request_id,
            "products": products,
            "scores": [s for _, s in ranked["ranking"]],
            "timings": timings,
            "model_version": rec["model_version"],
            "elapsed_us": (end - start) // 1000,
            "downstream_us": {"recommender": (t1 - t0) // 1000, "searcher": (t2 - t1) // 1000,
                              "ranker": (t3 - t2) // 1000},
        }
