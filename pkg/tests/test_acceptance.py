"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The two desk-scale experiments (smoke run and model-size sweep) drive the
real CLI in subprocesses; everything else runs in-process against
independent oracles.
"""

import base64
import json
import math
import random
import shutil
import subprocess
import sys
import threading
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from esbench import datagen
from esbench.datagen import CatalogConfig, ProductRecord
from esbench.index import build_indexes, tier_search
from esbench.loadgen import sample_think_time
from esbench.metrics import percentile
from esbench.models import kernels
from esbench.models import preference as pref
from esbench.models import text
from esbench.models.artifact import KIND_CLASSIFIER, KIND_PREFERENCE, serialize
from esbench.models.kernels import KERNELS
from esbench.services import STAGES
from esbench.services.recommender import Recommender
from esbench.services.searcher import Searcher
from esbench.services.transport import HttpClient, serve_http
from esbench.trainer import (
    OUTCOME_PUBLISHED,
    OUTCOME_REJECTED,
    HttpPublisher,
    LogSource,
    ModelScheduler,
    Schedule,
    VersionCounter,
)

from conftest import free_ports
from test_index import scan_oracle
from test_models import dense_oracle, numeric_grad, rel_err, relu_oracle, sigmoid_oracle, softmax_oracle

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk.yaml"
WIDTHS = (64, 256, 1024)
# Short think time so the recommender sees steady concurrent traffic.
SWEEP_LOAD = {"virtual_users": 8, "mean_think_time": 0.05, "warmup": 2.0, "total_requests": 4000}


def esbench(*args):
    return subprocess.run([sys.executable, "-m", "esbench.cli", *map(str, args)], capture_output=True,
                          text=True, timeout=900, cwd=ROOT)


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    t0 = time.monotonic()
    steps = {}
    for cmd in ("datagen", "index", "train", "bench"):
        r = esbench(cmd, "--config", DESK_CONFIG, "--out", out)
        steps[cmd] = r
        if r.returncode != 0:
            break
    return out, time.monotonic() - t0, steps


@pytest.mark.criterion(1, "end-to-end smoke on the desk config")
def test_end_to_end_smoke(desk_run):
    out, elapsed, steps = desk_run
    for cmd, r in steps.items():
        assert r.returncode == 0, f"{cmd} failed: {r.stderr[-2000:]}"
    print(f"desk pipeline took {elapsed:.1f} s")
    assert elapsed < 600
    report = json.loads((out / "report.json").read_text())
    assert {"total", *STAGES} <= set(report["scopes"])
    assert report["measured_count"] == 2000
    assert report["failure_count"] == 0
    assert (out / "report.txt").exists() and (out / "samples.csv").exists()


@pytest.mark.criterion(2, "recommender dominates searcher and ranker latency")
def test_breakdown_ordering(desk_run):
    out, _, _ = desk_run
    scopes = json.loads((out / "report.json").read_text())["scopes"]
    rec = scopes["recommender"]
    print({k: (round(scopes[k]["average_ms"], 3), scopes[k]["p99_ms"]) for k in ("recommender", "searcher", "ranker")})
    for other in ("searcher", "ranker"):
        assert rec["average_ms"] > scopes[other]["average_ms"]
        assert rec["p99_ms"] > scopes[other]["p99_ms"]


@pytest.mark.criterion(3, "larger preference model raises serving latency and its tail")
def test_model_size_sweep(desk_run, tmp_path):
    desk, _, steps = desk_run
    assert all(r.returncode == 0 for r in steps.values()), "desk run failed"
    t0 = time.monotonic()
    catalog = datagen.read_ndjson(desk / "catalog.ndjson", ProductRecord)
    users = datagen.read_ndjson(desk / "users.ndjson", datagen.UserRecord)
    logs = datagen.read_ndjson(desk / "logs.ndjson", datagen.QueryLogEntry)
    base = yaml.safe_load(DESK_CONFIG.read_text())
    results = {}
    for width in WIDTHS:
        run = tmp_path / f"w{width}"
        run.mkdir()
        for name in ("users.ndjson", "logs.ndjson", "indexes.esbidx", "classifier.esbm"):
            shutil.copy(desk / name, run / name)
        # Latency depends on the architecture only, so one epoch suffices.
        net = pref.train_preference(users, logs, catalog, {**base["preference"], "epochs": 1,
                                                           "hidden_layer_sizes": (width, width)})
        serialize(net, version=1).save(run / "preference.esbm")
        cfg = {**base, "out_dir": str(run), "load": {**base["load"], **SWEEP_LOAD},
               "bench": {"launch": "distributed"},
               "services": {**base["services"], "ports": dict(zip(("planer", "recommender", "searcher", "ranker"),
                                                                  free_ports(4)))}}
        (run / "config.yaml").write_text(yaml.safe_dump(cfg))
        r = esbench("bench", "--config", run / "config.yaml")
        assert r.returncode == 0, r.stderr[-2000:]
        results[width] = json.loads((run / "report.json").read_text())["scopes"]["recommender.serving"]
    elapsed = time.monotonic() - t0
    for w, s in results.items():
        print(f"width {w:>5}: avg {s['average_ms']:.3f} ms  p99 {s['p99_ms']:.3f} ms  "
              f"p99/avg {s['p99_ms'] / s['average_ms']:.2f}")
    print(f"sweep took {elapsed:.1f} s")
    avg = [results[w]["average_ms"] for w in WIDTHS]
    p99 = [results[w]["p99_ms"] for w in WIDTHS]
    assert avg[0] < avg[1] < avg[2]
    assert p99[0] < p99[1] < p99[2]
    ratio = {w: results[w]["p99_ms"] / results[w]["average_ms"] for w in WIDTHS}
    assert ratio[1024] > ratio[64]
    assert elapsed < 900


@pytest.mark.criterion(4, "nearest-rank percentile equals the full-sort oracle")
def test_percentile_oracle():
    rng = random.Random(2024)
    for _ in range(1000):
        n = rng.randint(1, 10_007)
        values = [rng.randint(0, 10**6) for _ in range(n)]
        ordered = sorted(values)
        for p in (50, 90, 99, 99.9):
            # Smallest 1-based rank r with r/n >= p/100, in integers.
            tenths = round(p * 10)
            r = -(-tenths * n // 1000)
            assert percentile(values, p) == ordered[r - 1]


@pytest.mark.criterion(5, "tier sizes follow the floor rule; saturated High stops the search")
def test_tiers_and_early_exit():
    for n in (1, 10, 100, 1000):
        cfg = CatalogConfig(product_count=n, category_count=1, user_count=1, vocabulary_size=50, seed=n)
        tiers = datagen.assign_tiers(datagen.generate_catalog(cfg))
        assert (len(tiers.high), len(tiers.medium), len(tiers.low)) == \
               (math.floor(0.15 * n), math.floor(0.5 * n), n - math.floor(0.5 * n))
    catalog = datagen.generate_catalog(CatalogConfig(product_count=1000, category_count=5, user_count=1,
                                                     vocabulary_size=200, seed=1))
    tiers = datagen.assign_tiers(catalog)
    indexes = build_indexes(catalog, tiers)
    searcher = Searcher(indexes)
    high_counts = {}
    for p in catalog:
        if p.product_id in tiers.high:
            for tok in set(p.tokens()):
                high_counts[tok] = high_counts.get(tok, 0) + 1
    token, count = max(high_counts.items(), key=lambda kv: kv[1])
    resp = searcher.query([token], limit=count)
    assert resp["probed"] == ["High"]
    assert len(resp["product_ids"]) == count
    assert searcher.stats()["probes"] == {"High": 1, "Medium": 0, "Low": 0}


@pytest.mark.criterion(6, "tier_search equals the linear-scan oracle")
def test_search_oracle():
    catalog = datagen.generate_catalog(CatalogConfig(product_count=200, category_count=6, user_count=1,
                                                     vocabulary_size=120, seed=6))
    tiers = datagen.assign_tiers(catalog)
    indexes = build_indexes(catalog, tiers)
    vocab = sorted({t for p in catalog for t in p.tokens()})
    rng = random.Random(6)
    for _ in range(500):
        query = rng.sample(vocab, rng.randint(1, 4))
        limit = rng.choice([1, 3, 10, 30, 100])
        assert tier_search(indexes, query, limit) == scan_oracle(catalog, tiers, query, limit)


@pytest.mark.criterion(7, "analytic gradients match finite differences; softmax sums to one")
def test_gradient_checks():
    rng = np.random.default_rng(7)
    E = rng.standard_normal((20, 5))
    W = rng.standard_normal((5, 4))
    samples = [(rng.integers(0, 20, size=rng.integers(1, 6)), int(rng.integers(0, 4))) for _ in range(8)]
    _, dE, dW = text.loss_and_grads(E, W, samples)
    f = lambda: text.loss_and_grads(E, W, samples)[0]
    assert rel_err(dE, numeric_grad(f, E)).max() < 1e-4
    assert rel_err(dW, numeric_grad(f, W)).max() < 1e-4

    sizes = (6, 7, 5, 3)
    coefs = [rng.standard_normal((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    intercepts = [rng.standard_normal(b) * 0.1 for b in sizes[1:]]
    X, Y = rng.standard_normal((9, 6)), rng.uniform(0, 1, (9, 3))
    _, gW, gb = pref.loss_and_grads(coefs, intercepts, X, Y)
    g = lambda: pref.loss_and_grads(coefs, intercepts, X, Y)[0]
    for param, grad in zip(coefs + intercepts, gW + gb):
        assert rel_err(grad, numeric_grad(g, param)).max() < 1e-4

    logits = rng.standard_normal((10_000, 16)) * rng.uniform(0.01, 100, size=(10_000, 1))
    assert np.max(np.abs(kernels.softmax(logits, axis=1).sum(axis=1) - 1.0)) < 1e-6


@pytest.mark.criterion(8, "classifier reaches 0.95 held-out accuracy on a separable corpus")
def test_classifier_quality():
    cfg = CatalogConfig(product_count=2000, category_count=10, user_count=50, seed=8)
    catalog = datagen.generate_catalog(cfg)
    users = datagen.generate_users(cfg)
    train = datagen.generate_query_logs(catalog, users, 10_000, seed=8, noise_rate=0.0)
    held_out = datagen.generate_query_logs(catalog, users, 2_000, seed=9, noise_rate=0.0)
    t0 = time.monotonic()
    clf = text.train_classifier(train, {"n_classes": 10})
    elapsed = time.monotonic() - t0
    pred = clf.predict([e.query_text for e in held_out])
    acc = float(np.mean(pred == [e.clicked_category_id for e in held_out]))
    print(f"held-out accuracy {acc:.4f}, training {elapsed:.1f} s")
    assert acc >= 0.95
    assert elapsed < 60


N_SENTINEL_CLASSES = 64


def sentinel_classifier(version):
    clf = text.HashedNgramClassifier(n_buckets=16, embedding_dim=2, n_classes=N_SENTINEL_CLASSES)
    clf.embeddings_ = np.ones((16, 2), dtype=np.float32)
    clf.output_weights_ = np.zeros((2, N_SENTINEL_CLASSES), dtype=np.float32)
    clf.output_weights_[:, version % N_SENTINEL_CLASSES] = 5.0
    clf.classes_ = np.arange(N_SENTINEL_CLASSES)
    clf.n_classes_ = N_SENTINEL_CLASSES
    return clf


def sentinel_preference(version):
    n_in = datagen.USER_FEATURE_DIM + N_SENTINEL_CLASSES
    net = pref.PreferenceNet(hidden_layer_sizes=(2,))
    net.coefs_ = [np.zeros((n_in, 2), np.float32), np.zeros((2, 10), np.float32)]
    target = version / 1000.0
    net.intercepts_ = [np.zeros(2, np.float32), np.full(10, math.log(target / (1 - target)), np.float32)]
    net.layer_sizes_ = [n_in, 2, 10]
    net.n_features_in_, net.n_outputs_ = n_in, 10
    return net


@pytest.mark.criterion(9, "hot reload under load never mixes versions")
def test_hot_reload_atomicity():
    users = datagen.generate_users(CatalogConfig(user_count=10))
    rec = Recommender(users, sentinel_classifier(1), sentinel_preference(1), 1, 1)
    svc = serve_http(rec)
    stop = threading.Event()
    problems, counts = [], []

    def reader(i):
        client = HttpClient(svc.url, timeout=10)
        last = {KIND_CLASSIFIER: 0, KIND_PREFERENCE: 0}
        n = 0
        while not stop.is_set():
            r = client.post("/recommend", {"user_id": i % 10, "query_text": "any words"})
            v = r["model_version"]
            if int(np.argmax(r["category_probs"])) != v[KIND_CLASSIFIER] % N_SENTINEL_CLASSES:
                problems.append(("classifier", v, int(np.argmax(r["category_probs"]))))
            if not np.allclose(r["preference_weights"], v[KIND_PREFERENCE] / 1000.0, atol=1e-5):
                problems.append(("preference", v, r["preference_weights"][0]))
            for kind in last:
                if v[kind] < last[kind]:
                    problems.append(("non-monotone", kind, last[kind], v[kind]))
                last[kind] = v[kind]
            n += 1
        counts.append(n)

    threads = [threading.Thread(target=reader, args=(i,)) for i in range(6)]
    for t in threads:
        t.start()
    try:
        publisher = HttpPublisher(HttpClient(svc.url, timeout=10))
        time.sleep(0.2)
        for i in range(50):
            version = 2 + i // 2
            model = sentinel_classifier(version) if i % 2 == 0 else sentinel_preference(version)
            assert publisher.publish(serialize(model, version=version))["accepted"]
        time.sleep(0.2)
    finally:
        stop.set()
        for t in threads:
            t.join()
        svc.stop()
    print(f"{sum(counts)} responses checked during 50 reloads")
    assert rec.model_versions() == {KIND_CLASSIFIER: 26, KIND_PREFERENCE: 26}
    assert sum(counts) > 50
    assert problems == []


@pytest.mark.criterion(10, "exponential think time matches its mean, variance and CDF")
def test_think_time_statistics():
    rng = np.random.default_rng(10)
    mean = 1.0
    draws = np.array([sample_think_time("exponential", mean, rng) for _ in range(100_000)])
    assert abs(draws.mean() - mean) / mean <= 0.02
    assert abs(draws.var() - mean**2) / mean**2 <= 0.05
    draws.sort()
    n = len(draws)
    cdf = 1.0 - np.exp(-draws / mean)
    dev = max(np.max(np.arange(1, n + 1) / n - cdf), np.max(cdf - np.arange(n) / n))
    print(f"max CDF deviation {dev:.5f}")
    assert dev < 0.01


@pytest.mark.criterion(11, "streaming scheduler ticks every 5 s and survives a stale publish")
def test_streaming_scheduler():
    cfg = CatalogConfig(product_count=500, category_count=10, user_count=20, seed=11)
    catalog = datagen.generate_catalog(cfg)
    users = datagen.generate_users(cfg)
    logs = datagen.generate_query_logs(catalog, users, 3000, seed=11)
    params = {"n_buckets": 4096, "embedding_dim": 8, "n_classes": 10, "epochs": 1}
    rec = Recommender(users, text.train_classifier(logs, params), None, 1, 0)
    svc = serve_http(rec)
    source = LogSource(logs[:1000])
    feeder_stop = threading.Event()

    def feed():
        # New logs keep arriving while the scheduler runs.
        for start in range(1000, 3000, 100):
            if feeder_stop.wait(1.5):
                return
            source.append(*logs[start:start + 100])

    feeder = threading.Thread(target=feed)
    feeder.start()
    try:
        scheduler = ModelScheduler(KIND_CLASSIFIER, Schedule("streaming", interval=5.0, window=1500), source,
                                   HttpPublisher(HttpClient(svc.url, timeout=30)), VersionCounter(1),
                                   hyperparams=params,
                                   version_override=lambda v: 1 if v == 4 else v)
        jobs = scheduler.run(duration_s=30.0)
    finally:
        feeder_stop.set()
        feeder.join()
        svc.stop()
    for j in jobs:
        print(j.log_line())
    completed = [j for j in jobs if j.outcome in (OUTCOME_PUBLISHED, OUTCOME_REJECTED)]
    assert 5 <= len(completed) <= 6
    assert [j.outcome for j in jobs].count(OUTCOME_REJECTED) == 1
    published = [j.version for j in jobs if j.outcome == OUTCOME_PUBLISHED]
    assert published == sorted(set(published))
    # The schedule kept going after the rejection.
    assert jobs[-1].outcome == OUTCOME_PUBLISHED and jobs.index(
        next(j for j in jobs if j.outcome == OUTCOME_REJECTED)) < len(jobs) - 1
    assert rec.model_versions()[KIND_CLASSIFIER] == published[-1]


@pytest.mark.criterion(12, "micro-bench kernels match straight-loop oracles")
def test_kernel_oracles():
    rng = np.random.default_rng(12)
    dense = KERNELS["dense"]
    for m in range(1, 33):
        for k in range(1, 33):
            x = rng.standard_normal((m, k))
            x_rows = x.tolist()
            for n in range(1, 33):
                w = rng.standard_normal((k, n))
                b = rng.standard_normal(n)
                got = dense(x, w, b)
                cols = w.T.tolist()
                bl = b.tolist()
                # Triple loop: rows, columns, and the inner sum over k.
                for i in range(m):
                    row = x_rows[i]
                    for j in range(n):
                        col = cols[j]
                        acc = 0.0
                        for t in range(k):
                            acc += row[t] * col[t]
                        assert abs(got[i, j] - (acc + bl[j])) <= 1e-6
    np.testing.assert_allclose(dense(x, w, b), dense_oracle(x, w, b), atol=1e-6)
    for shape in [(1,), (7,), (32, 32), (4, 9)]:
        a = rng.standard_normal(shape) * 20
        c = rng.standard_normal(shape) * 20
        np.testing.assert_array_equal(KERNELS["relu"](a), relu_oracle(a))
        np.testing.assert_array_equal(KERNELS["elementwise_multiply"](a, c),
                                      np.array([p * q for p, q in zip(a.ravel(), c.ravel())]).reshape(shape))
        assert np.max(np.abs(KERNELS["sigmoid"](a) - sigmoid_oracle(a))) <= 1e-6
        rows = a.reshape(-1, shape[-1])
        sm = KERNELS["softmax"](rows, axis=-1)
        for got_row, row in zip(sm, rows):
            assert max(abs(g - o) for g, o in zip(got_row, softmax_oracle(row.tolist()))) <= 1e-6
