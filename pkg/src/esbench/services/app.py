"""Wiring: build the four services from a run directory and expose them.

The same handler objects back every deployment; only the client used by
the planer differs (in-process :class:`LocalClient` or :class:`HttpClient`).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..datagen import UserRecord, read_ndjson
from ..index import IndexSet, load_snapshot
from ..models.artifact import ModelArtifact, deserialize
from .planer import Planer
from .ranker import Ranker
from .recommender import Recommender
from .searcher import Searcher
from .transport import HttpClient, HttpService, LocalClient, serve_http

ROLES = ("planer", "recommender", "searcher", "ranker")

CATALOG_FILE = "catalog.ndjson"
USERS_FILE = "users.ndjson"
LOGS_FILE = "logs.ndjson"
TIERS_FILE = "tiers.csv"
INDEX_FILE = "indexes.esbidx"
CLASSIFIER_FILE = "classifier.esbm"
PREFERENCE_FILE = "preference.esbm"


@dataclass
class RunFiles:
    root: Path

    def __getattr__(self, name):
        files = {"catalog": CATALOG_FILE, "users": USERS_FILE, "logs": LOGS_FILE, "tiers": TIERS_FILE,
                 "index": INDEX_FILE, "classifier": CLASSIFIER_FILE, "preference": PREFERENCE_FILE}
        if name in files:
            return self.root / files[name]
        raise AttributeError(name)


def make_recommender(users, classifier_artifact: ModelArtifact, preference_artifact: ModelArtifact,
                     serving_slots: int = 1) -> Recommender:
    return Recommender(
        users,
        classifier=deserialize(classifier_artifact),
        preference=deserialize(preference_artifact),
        classifier_version=classifier_artifact.version,
        preference_version=preference_artifact.version,
        serving_slots=serving_slots,
    )


def build_role(role: str, run_dir: str | Path, services_cfg, indexes: IndexSet | None = None,
               clients: dict | None = None):
    files = RunFiles(Path(run_dir))
    if role == "recommender":
        return make_recommender(read_ndjson(files.users, UserRecord), ModelArtifact.load(files.classifier),
                                ModelArtifact.load(files.preference), services_cfg.serving_slots)
    indexes = indexes or load_snapshot(files.index)
    if role == "searcher":
        return Searcher(indexes)
    if role == "ranker":
        return Ranker(indexes.rank)
    if role == "planer":
        if clients is None:
            clients = {r: HttpClient(services_cfg.url(r), timeout=services_cfg.timeout_s, name=r)
                       for r in ("recommender", "searcher", "ranker")}
        return Planer(clients["recommender"], clients["searcher"], clients["ranker"], indexes.summary,
                      services_cfg.search_limit)
    raise ValueError(f"unknown role {role!r}")


def local_cluster(run_dir: str | Path, services_cfg) -> dict:
    """All four services in-process, planer calling the others through :class:`LocalClient`."""
    files = RunFiles(Path(run_dir))
    indexes = load_snapshot(files.index)
    apps = {r: build_role(r, run_dir, services_cfg, indexes) for r in ("recommender", "searcher", "ranker")}
    apps["planer"] = build_role("planer", run_dir, services_cfg, indexes,
                                clients={r: LocalClient(a) for r, a in apps.items()})
    return apps


def serve_roles(roles, run_dir: str | Path, services_cfg, ports: dict | None = None) -> dict[str, HttpService]:
    """Start HTTP services for ``roles`` in this process; the planer reaches peers over HTTP."""
    ports = ports or services_cfg.ports
    indexes = None
    if any(r != "recommender" for r in roles):
        indexes = load_snapshot(RunFiles(Path(run_dir)).index)
    started: dict[str, HttpService] = {}
    try:
        for role in ("recommender", "searcher", "ranker", "planer"):
            if role in roles:
                app = build_role(role, run_dir, services_cfg, indexes)
                started[role] = serve_http(app, services_cfg.host, ports[role])
    except Exception:
        for svc in started.values():
            svc.stop()
        raise
    return started
