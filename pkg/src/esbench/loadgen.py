"""Closed-loop load generator.

Each virtual user is a thread that repeatedly thinks, sends one search
request, and waits for the answer, so a user never has more than one request
outstanding. Think times are exponential by default (Poisson arrivals per
user). Requests sent during the warm-up window are recorded but flagged; the
run stops once ``total_requests`` post-warm-up requests have completed.
"""

from __future__ import annotations

import csv
import http.client
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .exceptions import ConfigurationError, EsbenchError
from .services.transport import HttpClient, RemoteError

EXPONENTIAL = "exponential"
FIXED = "fixed"
SAMPLES_HEADER = ["request_id", "send_us", "recv_us", "latency_us", "success", "in_warmup",
                  "stage", "stage_duration_us"]


class StartupError(EsbenchError):
    pass


@dataclass(frozen=True)
class LoadProfile:
    virtual_users: int = 8
    mean_think_time: float = 1.0
    think_distribution: str = EXPONENTIAL
    warmup: float = 5.0
    total_requests: int = 2000
    seed: int = 0
    limit: int | None = None

    def validate(self) -> "LoadProfile":
        if self.virtual_users < 1:
            raise ConfigurationError("virtual_users", "must be >= 1")
        if self.total_requests < 1:
            raise ConfigurationError("total_requests", "must be >= 1")
        if self.think_distribution not in (EXPONENTIAL, FIXED):
            raise ConfigurationError("think_distribution", f"must be {EXPONENTIAL!r} or {FIXED!r}")
        if self.think_distribution == EXPONENTIAL and not self.mean_think_time > 0:
            raise ConfigurationError("mean_think_time", "must be > 0 for exponential think time")
        if self.mean_think_time < 0:
            raise ConfigurationError("mean_think_time", "must be >= 0")
        if self.warmup < 0:
            raise ConfigurationError("warmup", "must be >= 0")
        return self


@dataclass
class RequestSample:
    request_id: str
    send_us: int
    recv_us: int
    latency_us: int
    success: bool
    in_warmup: bool
    stages: dict[str, int] = field(default_factory=dict)
    error: str | None = None


def sample_think_time(distribution: str, mean: float, rng: np.random.Generator) -> float:
    if distribution == FIXED:
        if mean < 0:
            raise ConfigurationError("mean_think_time", "must be >= 0")
        return float(mean)
    if distribution != EXPONENTIAL:
        raise ConfigurationError("think_distribution", f"unknown distribution {distribution!r}")
    if not mean > 0:
        raise ConfigurationError("mean_think_time", "must be > 0")
    u = 1.0 - rng.random()  # uniform on (0, 1]
    return exponential_from_uniform(u, mean)


def exponential_from_uniform(u: float, mean: float) -> float:
    """Inverse-CDF transform; ``u = 1`` maps to 0."""
    return -mean * math.log(u) if u < 1.0 else 0.0


def _think_rng(seed: int, user_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, user_index]))


def think_schedule(profile: LoadProfile, user_index: int, n: int) -> list[float]:
    """First ``n`` think times of one virtual user; independent of thread scheduling."""
    rng = _think_rng(profile.seed, user_index)
    return [sample_think_time(profile.think_distribution, profile.mean_think_time, rng) for _ in range(n)]


class QueryReplay:
    """Per-user cursors over logged queries: user ``u`` replays entries ``u, u+V, u+2V, ...``."""

    def __init__(self, logs: Sequence, virtual_users: int):
        if not logs:
            raise ConfigurationError("query_source", "must be non-empty")
        self.logs = logs
        self.stride = virtual_users

    def next_for(self, user_index: int, k: int) -> tuple[int, str]:
        n = len(self.logs)
        entry = self.logs[(user_index + k * self.stride) % n]
        text = entry.query_text if isinstance(entry.query_text, str) else " ".join(entry.query_text)
        return entry.user_id, text


def _as_target(target) -> Callable[[dict], dict]:
    if isinstance(target, str):
        client = HttpClient(target, timeout=10.0, name="planer")
        return lambda body: client.post("/search", body)
    if hasattr(target, "post"):
        return lambda body: target.post("/search", body)
    return target


def _health(target) -> bool:
    if isinstance(target, str):
        client = HttpClient(target, timeout=2.0)
        try:
            return client.get("/health").get("status") == "ok"
        except (OSError, RemoteError, http.client.HTTPException):
            return False
        finally:
            client.close()
    if hasattr(target, "get"):
        try:
            return target.get("/health").get("status") == "ok"
        except Exception:
            return False
    return True


class _Run:
    def __init__(self, profile: LoadProfile):
        self.profile = profile
        self.lock = threading.Lock()
        self.stop = threading.Event()
        self.samples: list[RequestSample] = []
        self.measured_slots = profile.total_requests
        self.in_flight = 0
        self.max_in_flight = 0
        self.start_ns = time.monotonic_ns()
        self.warmup_end_ns = self.start_ns + int(profile.warmup * 1e9)

    def us(self, t_ns: int) -> int:
        return (t_ns - self.start_ns) // 1000

    def reserve(self, send_ns: int) -> bool | None:
        """Classify a send: True if warm-up, False if measured, None if the run is full."""
        with self.lock:
            if send_ns < self.warmup_end_ns:
                warm = True
            elif self.measured_slots > 0:
                self.measured_slots -= 1
                warm = False
            else:
                self.stop.set()
                return None
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            return warm

    def record(self, sample: RequestSample) -> None:
        with self.lock:
            self.in_flight -= 1
            self.samples.append(sample)
            if not sample.in_warmup and self.measured_slots == 0:
                measured = sum(1 for s in self.samples if not s.in_warmup)
                if measured == self.profile.total_requests:
                    self.stop.set()


def _virtual_user(run: _Run, index: int, send: Callable[[dict], dict], queries: QueryReplay) -> None:
    profile = run.profile
    rng = _think_rng(profile.seed, index)
    k = 0
    while not run.stop.is_set():
        think = sample_think_time(profile.think_distribution, profile.mean_think_time, rng)
        if think > 0 and run.stop.wait(think):
            return
        user_id, text = queries.next_for(index, k)
        request_id = f"u{index}-{k}"
        k += 1
        body = {"request_id": request_id, "user_id": user_id, "query_text": text}
        if profile.limit:
            body["limit"] = profile.limit
        send_ns = time.monotonic_ns()
        warm = run.reserve(send_ns)
        if warm is None:
            return
        stages: dict[str, int] = {}
        error = None
        try:
            resp = send(body)
            for t in resp.get("timings", []):
                stages[t["stage"]] = stages.get(t["stage"], 0) + int(t["duration_us"])
            ok = resp.get("request_id") == request_id
            if not ok:
                error = "mismatched request_id"
        except RemoteError as e:
            ok, error = False, f"{e.status}:{e.body.get('stage', '')}:{e.body.get('error', '')}"
        except Exception as e:
            ok, error = False, repr(e)
        recv_ns = time.monotonic_ns()
        run.record(RequestSample(
            request_id=request_id,
            send_us=run.us(send_ns),
            recv_us=run.us(recv_ns),
            latency_us=(recv_ns - send_ns) // 1000,
            success=ok,
            in_warmup=warm,
            stages=stages if ok else {},
            error=error,
        ))


@dataclass
class LoadResult:
    samples: list[RequestSample]
    max_in_flight: int
    duration_s: float


def run_load(profile: LoadProfile, target_endpoint, query_source: Sequence) -> LoadResult:
    """Drive ``target_endpoint`` (URL, client, or callable) with closed-loop virtual users."""
    profile.validate()
    if not _health(target_endpoint):
        raise StartupError(f"target {target_endpoint!r} is not healthy")
    queries = QueryReplay(query_source, profile.virtual_users)
    send = _as_target(target_endpoint)
    run = _Run(profile)
    threads = [threading.Thread(target=_virtual_user, args=(run, i, send, queries), name=f"vu-{i}", daemon=True)
               for i in range(profile.virtual_users)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return LoadResult(run.samples, run.max_in_flight, (time.monotonic_ns() - run.start_ns) / 1e9)


# -- samples.csv -------------------------------------------------------------

def write_samples(path: str | Path, samples: Sequence[RequestSample]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SAMPLES_HEADER)
        for s in samples:
            common = [s.request_id, s.send_us, s.recv_us, s.latency_us, int(s.success), int(s.in_warmup)]
            for stage, dur in s.stages.items():
                w.writerow(common + [stage, dur])
            w.writerow(common + ["total", s.latency_us])


def read_samples(path: str | Path) -> list[RequestSample]:
    by_id: dict[str, RequestSample] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != SAMPLES_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            rid = row["request_id"]
            s = by_id.get(rid)
            if s is None:
                s = by_id[rid] = RequestSample(
                    request_id=rid,
                    send_us=int(row["send_us"]),
                    recv_us=int(row["recv_us"]),
                    latency_us=int(row["latency_us"]),
                    success=row["success"] == "1",
                    in_warmup=row["in_warmup"] == "1",
                )
            if row["stage"] != "total":
                s.stages[row["stage"]] = int(row["stage_duration_us"])
    return list(by_id.values())
