"""Command line entry point.

    esbench datagen|index|train|serve|bench|report|micro [--config PATH] [--out DIR] [--seed N]

Each subcommand reads and writes files in the run directory (``--out`` or
``out_dir`` in the config). Failures exit nonzero after printing one JSON
line ``{"status": "error", ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import socket
import subprocess
import sys
import threading
import time
from dataclasses import asdict
from pathlib import Path

from . import datagen
from .config import ROLES, RunConfig, load_config
from .exceptions import ConfigurationError, EsbenchError, PreconditionError
from .index import build_indexes, save_snapshot
from .loadgen import read_samples, run_load, write_samples
from .metrics import build_report, export_scope_csv, write_report
from .models.artifact import KIND_CLASSIFIER, KIND_PREFERENCE, serialize
from .models.microbench import micro_bench
from .models.preference import train_preference
from .models.text import train_classifier
from .services.app import RunFiles, serve_roles
from .services.transport import HttpClient, wait_healthy
from .trainer import HttpPublisher, LogSource, VersionCounter, run_scheduler

logger = logging.getLogger("esbench")

SERVE_ROLES = ("all", *ROLES, "trainer")


class CommandError(EsbenchError):
    def __init__(self, code: str, message: str, **extra):
        self.code = code
        self.extra = extra
        super().__init__(message)


def _require(*paths: Path) -> None:
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise CommandError("missing_input", f"required file(s) not found: {', '.join(missing)}", files=missing)


# -- subcommands -------------------------------------------------------------

def cmd_datagen(cfg: RunConfig) -> dict:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    catalog = datagen.generate_catalog(cfg.catalog)
    users = datagen.generate_users(cfg.catalog)
    logs = datagen.generate_query_logs(catalog, users, cfg.logs.count, cfg.seed, cfg.logs.noise_rate)
    tiers = datagen.assign_tiers(catalog)
    files = RunFiles(out)
    datagen.write_ndjson(files.catalog, catalog)
    datagen.write_ndjson(files.users, users)
    datagen.write_ndjson(files.logs, logs)
    datagen.write_tiers(files.tiers, tiers)
    return {"products": len(catalog), "users": len(users), "logs": len(logs),
            "tiers": {"High": len(tiers.high), "Medium": len(tiers.medium), "Low": len(tiers.low)}}


def cmd_index(cfg: RunConfig) -> dict:
    files = RunFiles(cfg.out)
    _require(files.catalog, files.tiers)
    catalog = datagen.read_ndjson(files.catalog, datagen.ProductRecord)
    indexes = build_indexes(catalog, datagen.read_tiers(files.tiers))
    save_snapshot(indexes, files.index)
    return {"checksum": indexes.checksum, "doc_counts": indexes.doc_counts()}


def cmd_train(cfg: RunConfig) -> dict:
    files = RunFiles(cfg.out)
    _require(files.catalog, files.users, files.logs)
    catalog = datagen.read_ndjson(files.catalog, datagen.ProductRecord)
    users = datagen.read_ndjson(files.users, datagen.UserRecord)
    logs = datagen.read_ndjson(files.logs, datagen.QueryLogEntry)
    t0 = time.perf_counter()
    clf = train_classifier(logs, cfg.classifier_params())
    t1 = time.perf_counter()
    pref = train_preference(users, logs, catalog, cfg.preference_params())
    t2 = time.perf_counter()
    a = serialize(clf, pad_to=cfg.trainer.classifier_pad_to, version=1)
    b = serialize(pref, pad_to=cfg.trainer.preference_pad_to, version=1)
    a.save(files.classifier)
    b.save(files.preference)
    return {
        "classifier": {"loss_curve": clf.loss_curve_, "seconds": t1 - t0, "bytes": a.size},
        "preference": {"loss_curve": pref.loss_curve_, "seconds": t2 - t1, "bytes": b.size},
    }


def _wait_for_signal() -> None:
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    while not stop.wait(0.5):
        pass


def cmd_serve(cfg: RunConfig, role: str, block: bool = True):
    if role not in SERVE_ROLES:
        raise ConfigurationError("role", f"must be one of {', '.join(SERVE_ROLES)}")
    files = RunFiles(cfg.out)
    if role == "trainer":
        return _serve_trainer(cfg, files, block)
    roles = ROLES if role == "all" else (role,)
    needed = [files.index] if any(r != "recommender" for r in roles) else []
    if "recommender" in roles:
        needed += [files.users, files.classifier, files.preference]
    _require(*needed)
    started = serve_roles(roles, cfg.out, cfg.services)
    logger.info("serving %s", ", ".join(f"{r}={s.url}" for r, s in started.items()))
    print(json.dumps({"status": "serving", "roles": {r: s.url for r, s in started.items()}}), flush=True)
    if not block:
        return started
    try:
        _wait_for_signal()
    finally:
        for svc in started.values():
            svc.stop()
    return None


def _serve_trainer(cfg: RunConfig, files: RunFiles, block: bool):
    _require(files.catalog, files.users, files.logs)
    catalog = datagen.read_ndjson(files.catalog, datagen.ProductRecord)
    users = datagen.read_ndjson(files.users, datagen.UserRecord)
    logs = datagen.read_ndjson(files.logs, datagen.QueryLogEntry)
    client = HttpClient(cfg.services.url("recommender"), timeout=30.0, name="recommender")
    current = client.get("/stats").get("model_version", {})
    versions = VersionCounter(max(current.values(), default=1))
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    hyper = {KIND_CLASSIFIER: cfg.classifier_params(), KIND_PREFERENCE: cfg.preference_params()}
    kinds = [k for k in cfg.trainer.kinds if k in hyper]
    threads = []
    for kind in kinds:
        params = {**hyper[kind], "epochs": cfg.trainer.streaming_epochs} if cfg.schedule.mode == "streaming" else hyper[kind]
        pad = cfg.trainer.classifier_pad_to if kind == KIND_CLASSIFIER else cfg.trainer.preference_pad_to
        t = threading.Thread(target=run_scheduler, kwargs=dict(
            schedule=cfg.schedule, data_source=LogSource(logs), publish_target=HttpPublisher(client),
            kinds=(kind,), stop=stop, versions=versions, jobs_log=cfg.out / "jobs.log",
            users=users, catalog=catalog, hyperparams=params, pad_to=pad))
        t.start()
        threads.append(t)
    if not block:
        return stop, threads
    for t in threads:
        t.join()
    return None


def _port_free(host: str, port: int) -> bool:
    with socket.socket() as s:
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            s.bind((host, port))
        except OSError:
            return False
    return True


def _spawn(cfg: RunConfig, config_path: str | None, role: str, log_path: Path) -> subprocess.Popen:
    cmd = [sys.executable, "-m", "esbench.cli", "serve", "--role", role, "--out", str(cfg.out),
           "--seed", str(cfg.seed)]
    if config_path:
        cmd += ["--config", str(config_path)]
    log = open(log_path, "ab")
    return subprocess.Popen(cmd, stdout=log, stderr=subprocess.STDOUT, env={**os.environ, "PYTHONUNBUFFERED": "1"})


def cmd_bench(cfg: RunConfig, config_path: str | None = None) -> dict:
    files = RunFiles(cfg.out)
    _require(files.logs)
    mode = cfg.bench.launch
    procs: list[subprocess.Popen] = []
    if mode != "external":
        _require(files.users, files.index, files.classifier, files.preference)
        for role in ROLES:
            port = cfg.services.ports[role]
            if not _port_free(cfg.services.host, port):
                raise CommandError("port_in_use", f"port {port} ({role}) is already in use", port=port)
    endpoint = cfg.bench.endpoint or cfg.services.url("planer")
    try:
        if mode == "all":
            procs.append(_spawn(cfg, config_path, "all", cfg.out / "serve.log"))
        elif mode == "distributed":
            for role in ("recommender", "searcher", "ranker", "planer"):
                procs.append(_spawn(cfg, config_path, role, cfg.out / f"serve-{role}.log"))
        urls = [endpoint] if mode == "external" else [cfg.services.url(r) for r in ROLES]
        deadline = time.monotonic() + cfg.bench.startup_timeout_s
        for url in urls:
            client = HttpClient(url, timeout=2.0)
            while not wait_healthy(client, attempts=1):
                dead = [p for p in procs if p.poll() is not None]
                if dead or time.monotonic() > deadline:
                    raise CommandError("startup", f"service at {url} did not become healthy", url=url)
                time.sleep(0.1)
            client.close()
        logs = datagen.read_ndjson(files.logs, datagen.QueryLogEntry)
        result = run_load(cfg.load, endpoint, logs)
    finally:
        for p in procs:
            p.terminate()
        for p in procs:
            try:
                p.wait(timeout=10)
            except subprocess.TimeoutExpired:
                p.kill()
    write_samples(cfg.out / "samples.csv", result.samples)
    report = build_report(result.samples, meta={"load": asdict(cfg.load), "launch": mode,
                                                "preference_hidden": list(cfg.preference_params()["hidden_layer_sizes"]),
                                                "duration_s": result.duration_s})
    write_report(report, cfg.out)
    return {"measured": report.measured_count, "failures": report.failure_count,
            "throughput_rps": report.throughput_rps, "total_p99_ms": report.scopes["total"].p99_ms}


def cmd_report(samples_path: str, out_dir: str | None = None, csv_scopes=()) -> dict:
    path = Path(samples_path)
    _require(path)
    samples = read_samples(path)
    if not samples:
        raise CommandError("empty_input", f"{path} contains no samples", file=str(path))
    report = build_report(samples)
    out = Path(out_dir) if out_dir else path.parent
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out)
    for scope in csv_scopes:
        export_scope_csv(samples, scope, out / f"scope_{scope}.csv")
    sys.stdout.write(report.to_text())
    return {"measured": report.measured_count, "failures": report.failure_count}


def cmd_micro(kernel: str, shape: str, reps: int) -> dict:
    dims = [int(x) for x in shape.lower().split("x") if x]
    return asdict(micro_bench(kernel, dims, reps))


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults if omitted)")
    common.add_argument("--out", help="run directory; overrides out_dir")
    common.add_argument("--seed", type=int, help="run seed; overrides seed")
    parser = argparse.ArgumentParser(prog="esbench", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("datagen", parents=[common], help="generate catalog, users, logs and tiers")
    sub.add_parser("index", parents=[common], help="build the index snapshot")
    sub.add_parser("train", parents=[common], help="train both in-path models and write artifacts")
    p = sub.add_parser("serve", parents=[common], help="run services until interrupted")
    p.add_argument("--role", default="all", choices=SERVE_ROLES)
    sub.add_parser("bench", parents=[common], help="launch services, run the load, write samples and report")
    p = sub.add_parser("report", parents=[common], help="aggregate a samples.csv file")
    p.add_argument("samples_path")
    p.add_argument("--csv", action="append", default=[], metavar="SCOPE", help="also export one scope as CSV")
    p = sub.add_parser("micro", parents=[common], help="time one kernel")
    p.add_argument("kernel")
    p.add_argument("shape", help="e.g. 64x64x64 for dense, 128x256 otherwise")
    p.add_argument("reps", nargs="?", type=int, default=1000)
    return parser


def run(argv=None) -> dict | None:
    args = build_parser().parse_args(argv)
    if args.command == "micro":
        return cmd_micro(args.kernel, args.shape, args.reps)
    if args.command == "report":
        return cmd_report(args.samples_path, args.out, args.csv)
    cfg = load_config(args.config).with_overrides(out_dir=args.out, seed=args.seed).validate()
    if args.command == "datagen":
        return cmd_datagen(cfg)
    if args.command == "index":
        return cmd_index(cfg)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "serve":
        return cmd_serve(cfg, args.role)
    if args.command == "bench":
        return cmd_bench(cfg, args.config)
    raise AssertionError(args.command)


def _error_line(code: str, message: str, **extra) -> None:
    sys.stderr.write(json.dumps({"status": "error", "code": code, "message": message, **extra}) + "\n")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        result = run(argv)
    except ConfigurationError as e:
        _error_line("config", str(e), field=e.field)
        return 2
    except CommandError as e:
        _error_line(e.code, str(e), **e.extra)
        return 1
    except PreconditionError as e:
        _error_line("precondition", str(e))
        return 1
    except EsbenchError as e:
        _error_line(type(e).__name__, str(e))
        return 1
    if result is not None:
        print(json.dumps(result, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
