import threading

import pytest

from esbench import datagen
from esbench.exceptions import ConfigurationError, IndexBuildError
from esbench.models.artifact import KIND_CLASSIFIER, KIND_PREFERENCE, ModelArtifact
from esbench.services.app import RunFiles, build_role
from esbench.services.searcher import Searcher
from esbench.services.transport import HttpClient, serve_http
from esbench.trainer import (
    OUTCOME_PUBLISHED,
    OUTCOME_REJECTED,
    OUTCOME_TRAIN_FAILED,
    HttpPublisher,
    LocalPublisher,
    LogSource,
    ModelScheduler,
    Schedule,
    VersionCounter,
    build_and_publish_indexes,
    run_scheduler,
)

CLF = {"n_buckets": 512, "embedding_dim": 4, "epochs": 1}


class RecordingPublisher:
    def __init__(self):
        self.versions = []

    def publish(self, artifact):
        self.versions.append(artifact.version)
        return {"accepted": True}


class TestSchedule:
    def test_defaults(self):
        assert Schedule("batch").effective_interval == 3600
        assert Schedule("streaming").effective_interval == 10
        assert Schedule("batch", time_scale=3600).effective_interval == 1

    @pytest.mark.parametrize("kw", [{"mode": "online"}, {"interval": 0.5}, {"time_scale": 0},
                                    {"window": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            Schedule(**kw).validate()


class TestScheduler:
    def test_streaming_window_and_warm_start(self, small_logs):
        source = LogSource(small_logs[:100])
        s = ModelScheduler(KIND_CLASSIFIER, Schedule(window=150), source, RecordingPublisher(), VersionCounter(),
                           hyperparams=CLF)
        assert s.tick().snapshot_size == 100
        first = s.model
        source.append(*small_logs[100:300])
        job = s.tick()
        assert job.snapshot_size == 150
        assert s.model is first  # refined in place
        assert job.outcome == OUTCOME_PUBLISHED and job.version == 2

    def test_batch_uses_everything(self, small_logs):
        source = LogSource(small_logs[:100])
        s = ModelScheduler(KIND_CLASSIFIER, Schedule("batch", window=10), source, RecordingPublisher(),
                           VersionCounter(), hyperparams=CLF)
        s.tick()
        source.append(*small_logs[100:120])
        assert s.tick().snapshot_size == 120

    def test_training_failure_keeps_schedule(self):
        s = ModelScheduler(KIND_CLASSIFIER, Schedule(), LogSource(), RecordingPublisher(), VersionCounter())
        assert s.tick().outcome == OUTCOME_TRAIN_FAILED

    def test_run_ticks_on_grid(self, small_logs):
        pub = RecordingPublisher()
        jobs = ModelScheduler(KIND_CLASSIFIER, Schedule(interval=1.0), LogSource(small_logs[:50]), pub,
                              VersionCounter(), hyperparams=CLF).run(duration_s=3.0)
        assert len(jobs) == 3
        assert [round(j.tick_time) for j in jobs] == [1, 2, 3]
        assert pub.versions == [1, 2, 3]

    def test_stop_event(self, small_logs):
        stop = threading.Event()
        stop.set()
        jobs = ModelScheduler(KIND_CLASSIFIER, Schedule(interval=1.0), LogSource(small_logs), RecordingPublisher(),
                              VersionCounter(), hyperparams=CLF).run(stop=stop)
        assert jobs == []

    def test_jobs_log_and_shared_versions(self, tmp_path, small_logs, small_users, small_catalog):
        log = tmp_path / "jobs.log"
        pub = RecordingPublisher()
        jobs = run_scheduler(Schedule(interval=1.0), LogSource(small_logs[:200]), pub,
                             kinds=(KIND_CLASSIFIER, KIND_PREFERENCE), duration_s=2.0, jobs_log=log,
                             users=small_users, catalog=small_catalog,
                             hyperparams={"epochs": 1})
        assert len(jobs) == 4
        assert sorted(pub.versions) == [1, 2, 3, 4]
        lines = log.read_text().splitlines()
        assert len(lines) == 4 and all(len(l.split("\t")) == 6 for l in lines)


class TestPublishing:
    def test_stale_rejected_over_http(self, run_dir):
        rec = build_role("recommender", run_dir.out, run_dir.services)
        svc = serve_http(rec)
        try:
            logs = datagen.read_ndjson(RunFiles(run_dir.out).logs, datagen.QueryLogEntry)
            s = ModelScheduler(KIND_CLASSIFIER, Schedule(), LogSource(logs[:200]),
                               HttpPublisher(HttpClient(svc.url, timeout=30)), VersionCounter(1),
                               hyperparams={**run_dir.classifier_params(), "epochs": 1},
                               version_override=lambda v: 1 if v == 3 else v)
            outcomes = [(j.version, j.outcome) for j in (s.tick(), s.tick(), s.tick(), s.tick())]
            assert outcomes == [(2, OUTCOME_PUBLISHED), (1, OUTCOME_REJECTED), (4, OUTCOME_PUBLISHED),
                                (5, OUTCOME_PUBLISHED)]
            assert rec.model_versions()[KIND_CLASSIFIER] == 5
        finally:
            svc.stop()

    def test_local_publisher(self, run_dir):
        rec = build_role("recommender", run_dir.out, run_dir.services)
        art = ModelArtifact.load(RunFiles(run_dir.out).preference)
        LocalPublisher(rec).publish(ModelArtifact(9, art.kind, art.payload, 0, art.checksum))
        assert rec.model_versions()[KIND_PREFERENCE] == 9


class TestIndexPublication:
    def test_installs_everywhere(self, tmp_path, small_catalog, small_tiers, small_indexes, run_dir):
        searcher = Searcher(small_indexes)
        remote = build_role("searcher", run_dir.out, run_dir.services)
        svc = serve_http(remote)
        try:
            ack = build_and_publish_indexes(small_catalog, small_tiers, [searcher, HttpClient(svc.url, name="s2")],
                                            tmp_path / "idx")
            assert ack.checksum == small_indexes.checksum
            assert remote.indexes.checksum == small_indexes.checksum
            assert ack.doc_counts == small_indexes.doc_counts()
        finally:
            svc.stop()

    def test_failed_build_keeps_old_indexes(self, small_catalog, small_tiers, small_indexes):
        searcher = Searcher(small_indexes)
        broken = datagen.TierAssignment(small_tiers.high, small_tiers.medium, frozenset())
        with pytest.raises(IndexBuildError):
            build_and_publish_indexes(small_catalog, broken, [searcher])
        assert searcher.indexes is small_indexes
