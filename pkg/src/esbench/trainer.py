"""Offline analyzer: scheduled retraining, artifact publication, index builds.

Two schedules exist. ``batch`` retrains from scratch on the full corpus at a
long interval; ``streaming`` retrains every few seconds on a sliding window
of the newest log entries, warm-starting from the previous parameters.
Intervals are divided by ``time_scale`` so desk runs finish in minutes.
"""

from __future__ import annotations

import base64
import http.client
import itertools
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .datagen import ProductRecord, TierAssignment
from .exceptions import (
    ConfigurationError,
    CorruptArtifactError,
    IndexBuildError,
    StaleArtifactError,
)
from .index import IndexSet, build_indexes, save_snapshot
from .models.artifact import KIND_CLASSIFIER, KIND_PREFERENCE, ModelArtifact, serialize
from .models.preference import train_preference
from .models.text import train_classifier
from .services.planer import Planer
from .services.ranker import Ranker
from .services.searcher import Searcher
from .services.transport import RemoteError

logger = logging.getLogger(__name__)

BATCH = "batch"
STREAMING = "streaming"

OUTCOME_PUBLISHED = "published"
OUTCOME_REJECTED = "rejected"
OUTCOME_TRAIN_FAILED = "train_failed"
OUTCOME_PUBLISH_FAILED = "publish_failed"


@dataclass(frozen=True)
class Schedule:
    mode: str = STREAMING
    interval: float | None = None
    time_scale: float = 1.0
    window: int = 10_000

    @property
    def effective_interval(self) -> float:
        base = self.interval if self.interval is not None else (3600.0 if self.mode == BATCH else 10.0)
        return base / self.time_scale

    def validate(self) -> "Schedule":
        if self.mode not in (BATCH, STREAMING):
            raise ConfigurationError("mode", f"must be {BATCH!r} or {STREAMING!r}")
        if not self.time_scale > 0:
            raise ConfigurationError("time_scale", "must be > 0")
        if self.mode == STREAMING and self.effective_interval < 1.0:
            raise ConfigurationError("interval", "interval / time_scale must be >= 1 s in streaming mode")
        if self.window < 1:
            raise ConfigurationError("window", "must be >= 1")
        return self


@dataclass
class TrainingJob:
    job_id: int
    kind: str
    snapshot_size: int
    tick_time: float
    hyperparams: dict = field(default_factory=dict)
    version: int | None = None
    wall_time_ms: float = 0.0
    outcome: str = ""
    detail: str = ""

    def log_line(self) -> str:
        return (f"{self.tick_time:.3f}\t{self.kind}\t{self.snapshot_size}\t{self.wall_time_ms:.1f}\t"
                f"{self.version if self.version is not None else '-'}\t{self.outcome}")


class LogSource:
    """Append-only, thread-safe query log with a per-reader cursor for streaming ticks."""

    def __init__(self, entries: Sequence = ()):
        self._entries = list(entries)
        self._lock = threading.Lock()

    def append(self, *entries) -> None:
        with self._lock:
            self._entries.extend(entries)

    def __len__(self):
        with self._lock:
            return len(self._entries)

    def since(self, cursor: int) -> tuple[list, int]:
        with self._lock:
            return self._entries[cursor:], len(self._entries)

    def all(self) -> list:
        with self._lock:
            return list(self._entries)


class VersionCounter:
    """Strictly increasing artifact versions, shared by all publishers of a deployment."""

    def __init__(self, start: int = 0):
        self._next = itertools.count(start + 1)
        self._lock = threading.Lock()

    def next(self) -> int:
        with self._lock:
            return next(self._next)


class LocalPublisher:
    """Publishes straight into an in-process recommender."""

    def __init__(self, recommender):
        self.recommender = recommender

    def publish(self, artifact: ModelArtifact) -> dict:
        return self.recommender.reload_model(artifact)


class HttpPublisher:
    """Publishes to a recommender's ``POST /reload`` endpoint."""

    def __init__(self, client):
        self.client = client

    def publish(self, artifact: ModelArtifact) -> dict:
        body = {"artifact_b64": base64.b64encode(artifact.to_bytes()).decode("ascii")}
        try:
            return self.client.post("/reload", body)
        except RemoteError as e:
            if e.status == 409:
                raise StaleArtifactError(e.body.get("detail", "stale")) from None
            if e.status == 422:
                raise CorruptArtifactError(e.body.get("detail", "corrupt")) from None
            raise


class ModelScheduler:
    """One actor per model kind: ticks, snapshots data, trains, serializes and publishes."""

    def __init__(self, kind: str, schedule: Schedule, data_source: LogSource, publisher,
                 versions: VersionCounter, users=(), catalog=(), hyperparams: dict | None = None,
                 pad_to: int = 0, retries: int = 3, backoff_s: float = 0.2,
                 on_job: Callable[[TrainingJob], None] | None = None,
                 version_override: Callable[[int], int] | None = None):
        if kind not in (KIND_CLASSIFIER, KIND_PREFERENCE):
            raise ConfigurationError("kind", f"unknown model kind {kind!r}")
        self.kind = kind
        self.schedule = schedule.validate()
        self.source = data_source
        self.publisher = publisher
        self.versions = versions
        self.users = list(users)
        self.catalog = list(catalog)
        self.hyperparams = dict(hyperparams or {})
        self.pad_to = pad_to
        self.retries = retries
        self.backoff_s = backoff_s
        self.on_job = on_job
        self.version_override = version_override
        self.history: list[TrainingJob] = []
        self.model = None
        self._window: deque = deque(maxlen=schedule.window)
        self._cursor = 0
        self._ids = itertools.count(1)

    def snapshot(self) -> list:
        if self.schedule.mode == BATCH:
            return self.source.all()
        new, self._cursor = self.source.since(self._cursor)
        self._window.extend(new)
        return list(self._window)

    def _train(self, logs):
        warm = self.model if self.schedule.mode == STREAMING else None
        if self.kind == KIND_CLASSIFIER:
            return train_classifier(logs, self.hyperparams, init=warm)
        return train_preference(self.users, logs, self.catalog, self.hyperparams, init=warm)

    def _publish(self, artifact: ModelArtifact) -> dict:
        delay = self.backoff_s
        for attempt in range(self.retries + 1):
            try:
                return self.publisher.publish(artifact)
            except (StaleArtifactError, CorruptArtifactError):
                raise
            except (OSError, http.client.HTTPException, RemoteError):
                if attempt == self.retries:
                    raise
                time.sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")

    def tick(self, tick_time: float = 0.0) -> TrainingJob:
        logs = self.snapshot()
        job = TrainingJob(next(self._ids), self.kind, len(logs), tick_time, dict(self.hyperparams))
        t0 = time.perf_counter()
        try:
            model = self._train(logs)
        except Exception as e:
            job.outcome, job.detail = OUTCOME_TRAIN_FAILED, repr(e)
        else:
            self.model = model
            version = self.versions.next()
            if self.version_override is not None:
                version = self.version_override(version)
            job.version = version
            try:
                self._publish(serialize(model, pad_to=self.pad_to, version=version))
                job.outcome = OUTCOME_PUBLISHED
            except (StaleArtifactError, CorruptArtifactError) as e:
                job.outcome, job.detail = OUTCOME_REJECTED, str(e)
                logger.warning("publish of %s v%s rejected: %s", self.kind, version, e)
            except Exception as e:
                job.outcome, job.detail = OUTCOME_PUBLISH_FAILED, repr(e)
        job.wall_time_ms = (time.perf_counter() - t0) * 1000.0
        self.history.append(job)
        if self.on_job is not None:
            self.on_job(job)
        return job

    def run(self, duration_s: float | None = None, stop: threading.Event | None = None) -> list[TrainingJob]:
        """Tick every interval until ``duration_s`` elapses or ``stop`` is set.

        Ticks are on a fixed grid from the start time; a tick whose slot has
        already passed because a job ran long is skipped, not queued.
        """
        stop = stop or threading.Event()
        interval = self.schedule.effective_interval
        start = time.monotonic()
        n = 1
        while True:
            due = start + n * interval
            if duration_s is not None and due > start + duration_s + 1e-9:
                break
            if stop.wait(max(0.0, due - time.monotonic())):
                break
            self.tick(time.monotonic() - start)
            n = max(n + 1, int((time.monotonic() - start) // interval) + 1)
        return self.history


def run_scheduler(schedule: Schedule, data_source: LogSource, publish_target, kinds=(KIND_CLASSIFIER,),
                  duration_s: float | None = None, stop: threading.Event | None = None,
                  versions: VersionCounter | None = None, jobs_log: str | Path | None = None,
                  **kwargs) -> list[TrainingJob]:
    """Run one scheduler thread per model kind and return the merged job history."""
    versions = versions or VersionCounter()
    log_lock = threading.Lock()

    def write_job(job):
        if jobs_log is None:
            return
        with log_lock, open(jobs_log, "a") as f:
            f.write(job.log_line() + "\n")

    schedulers = [ModelScheduler(kind, schedule, data_source, publish_target, versions, on_job=write_job, **kwargs)
                  for kind in kinds]
    threads = [threading.Thread(target=s.run, args=(duration_s, stop), name=f"sched-{s.kind}") for s in schedulers]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return sorted((j for s in schedulers for j in s.history), key=lambda j: (j.tick_time, j.kind))


@dataclass
class IndexAck:
    checksum: str
    doc_counts: dict
    installed: list


def build_and_publish_indexes(catalog: Sequence[ProductRecord], tiers: TierAssignment,
                              searcher_targets: Sequence, snapshot_path: str | Path | None = None) -> IndexAck:
    """Build all index kinds and install them in every target.

    Targets are in-process services (anything with ``install``) or clients,
    in which case the snapshot is written to ``snapshot_path`` and each
    service is told to load it via ``POST /install``. A build error leaves
    every service on its previous indexes.
    """
    indexes: IndexSet = build_indexes(catalog, tiers)
    installed = []
    if any(not hasattr(t, "install") for t in searcher_targets):
        if snapshot_path is None:
            raise IndexBuildError("snapshot_path is required to publish to remote services")
        save_snapshot(indexes, snapshot_path)
    for target in searcher_targets:
        if isinstance(target, Searcher):
            target.install(indexes)
        elif isinstance(target, Ranker):
            target.install(indexes.rank)
        elif isinstance(target, Planer):
            target.install(indexes.summary)
        else:
            target.post("/install", {"path": str(Path(snapshot_path).resolve())})
        installed.append(getattr(target, "role", getattr(target, "name", "?")))
    return IndexAck(indexes.checksum, indexes.doc_counts(), installed)
