"""Recommender: query normalization, user lookup, category prediction, preference inference."""

from __future__ import annotations

import base64
import json
import threading
from pathlib import Path
from typing import Iterable

import numpy as np

from ..datagen import UserRecord, user_features
from ..exceptions import CorruptArtifactError, NotFoundError, StageError, StaleArtifactError
from ..models.artifact import KIND_CLASSIFIER, KIND_PREFERENCE, ModelArtifact, deserialize
from ..models.preference import predict_weights
from ..models.text import classify
from .timing import StageRecorder
from .transport import ServiceApp


def normalize_query(text: str) -> list[str]:
    """Lowercase, trim and collapse whitespace, then spell-correct (identity)."""
    return correct_spelling(text.lower().split())


def correct_spelling(tokens: list[str]) -> list[str]:
    return tokens


class ModelSlot:
    """Holds one ``(version, model)`` pair; readers take the pair in a single load."""

    def __init__(self, kind: str, model=None, version: int = 0):
        self.kind = kind
        self._current = (version, model)
        self._lock = threading.Lock()

    def get(self):
        return self._current

    @property
    def version(self) -> int:
        return self._current[0]

    def swap(self, version: int, model) -> None:
        with self._lock:
            if version <= self._current[0]:
                raise StaleArtifactError(
                    f"{self.kind} version {version} is not newer than current {self._current[0]}")
            self._current = (version, model)


class UserStore:
    """In-memory keyed store of serialized user records; reads decode on access."""

    def __init__(self, users: Iterable[UserRecord]):
        self._rows = {u.user_id: json.dumps(u.to_dict()) for u in users}

    def __len__(self):
        return len(self._rows)

    def features(self, user_id: int) -> np.ndarray:
        try:
            raw = self._rows[user_id]
        except KeyError:
            raise NotFoundError(f"unknown user {user_id}") from None
        return user_features(json.loads(raw)["profile_fields"])


class Recommender(ServiceApp):
    role = "recommender"

    def __init__(self, users: Iterable[UserRecord], classifier=None, preference=None,
                 classifier_version: int = 0, preference_version: int = 0, serving_slots: int = 1):
        super().__init__()
        self.users = UserStore(users)
        self.models = {
            KIND_CLASSIFIER: ModelSlot(KIND_CLASSIFIER, classifier, classifier_version),
            KIND_PREFERENCE: ModelSlot(KIND_PREFERENCE, preference, preference_version),
        }
        # Bounded inference concurrency, like a model server with a fixed worker pool.
        self._serving = threading.BoundedSemaphore(serving_slots)
        self._lock = threading.Lock()
        self.requests = 0
        self.rejected_reloads = 0
        self.routes[("POST", "/recommend")] = lambda b: self.recommend(int(b["user_id"]), b["query_text"])
        self.routes[("POST", "/reload")] = self._reload_route

    def recommend(self, user_id: int, query_text) -> dict:
        rec = StageRecorder()
        if not isinstance(query_text, str):
            query_text = " ".join(query_text)
        with rec.stage("recommender.query_parse"):
            tokens = normalize_query(query_text)
        try:
            with rec.stage("recommender.user_db"):
                user_vec = self.users.features(user_id)
        except NotFoundError as e:
            raise StageError("recommender.user_db", str(e), status=404, timings=rec.to_list()) from None
        clf_version, clf = self.models[KIND_CLASSIFIER].get()
        pref_version, pref = self.models[KIND_PREFERENCE].get()
        with rec.stage("recommender.classify"):
            probs = classify(clf, tokens)
        with rec.stage("recommender.serving"):
            with self._serving:
                weights = predict_weights(pref, user_vec, probs)
        with self._lock:
            self.requests += 1
        return {
            "category_probs": probs.tolist(),
            "preference_weights": weights.tolist(),
            "timings": rec.to_list(),
            "model_version": {KIND_CLASSIFIER: clf_version, KIND_PREFERENCE: pref_version},
        }

    def reload_model(self, artifact: ModelArtifact | bytes) -> dict:
        """Validate and atomically install an artifact; stale or corrupt ones are rejected."""
        try:
            if not isinstance(artifact, ModelArtifact):
                artifact = ModelArtifact.from_bytes(bytes(artifact))
            slot = self.models[artifact.kind]
            if artifact.version <= slot.version:
                raise StaleArtifactError(
                    f"{artifact.kind} version {artifact.version} is not newer than current {slot.version}")
            model = deserialize(artifact)
            slot.swap(artifact.version, model)
        except (StaleArtifactError, CorruptArtifactError):
            with self._lock:
                self.rejected_reloads += 1
            raise
        return {"accepted": True, "kind": artifact.kind, "version": artifact.version}

    def _reload_route(self, body: dict) -> dict:
        if "artifact_b64" in body:
            data = base64.b64decode(body["artifact_b64"])
        else:
            data = Path(body["path"]).read_bytes()
        return self.reload_model(data)

    def model_versions(self) -> dict:
        return {kind: slot.version for kind, slot in self.models.items()}

    def stats(self) -> dict:
        with self._lock:
            return {
                "role": self.role,
                "requests": self.requests,
                "rejected_reloads": self.rejected_reloads,
                "users": len(self.users),
                "model_version": self.model_versions(),
            }
