"""Run configuration: one YAML document holding every module's settings.

Unknown keys are rejected so that typos fail before any side effect.
See ``configs/desk.yaml`` for the documented schema with defaults.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .datagen import CatalogConfig
from .exceptions import ConfigurationError
from .loadgen import LoadProfile
from .trainer import Schedule

ROLES = ("planer", "recommender", "searcher", "ranker")
LAUNCH_MODES = ("all", "distributed", "external")


@dataclass(frozen=True)
class LogsConfig:
    count: int = 20_000
    noise_rate: float = 0.1


@dataclass(frozen=True)
class ServicesConfig:
    host: str = "127.0.0.1"
    ports: dict = field(default_factory=lambda: {"planer": 8600, "recommender": 8601,
                                                 "searcher": 8602, "ranker": 8603})
    timeout_s: float = 2.0
    search_limit: int = 100
    serving_slots: int = 1

    def url(self, role: str) -> str:
        return f"http://{self.host}:{self.ports[role]}"


@dataclass(frozen=True)
class TrainerConfig:
    kinds: tuple = ("Classifier", "Preference")
    streaming_epochs: int = 1
    classifier_pad_to: int = 0
    preference_pad_to: int = 0


@dataclass(frozen=True)
class BenchConfig:
    launch: str = "all"
    endpoint: str | None = None
    startup_timeout_s: float = 120.0


@dataclass(frozen=True)
class RunConfig:
    out_dir: str = "runs/desk"
    seed: int = 0
    catalog: CatalogConfig = CatalogConfig()
    logs: LogsConfig = LogsConfig()
    classifier: dict = field(default_factory=lambda: {"n_buckets": 2**18, "embedding_dim": 16,
                                                      "ngram_order": 2, "learning_rate": 0.2, "epochs": 5})
    preference: dict = field(default_factory=lambda: {"hidden_layer_sizes": [128, 128], "learning_rate": 0.05,
                                                      "momentum": 0.9, "epochs": 10, "batch_size": 32})
    services: ServicesConfig = ServicesConfig()
    load: LoadProfile = LoadProfile()
    schedule: Schedule = Schedule()
    trainer: TrainerConfig = TrainerConfig()
    bench: BenchConfig = BenchConfig()

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    def with_overrides(self, out_dir: str | None = None, seed: int | None = None) -> "RunConfig":
        cfg = self
        if out_dir is not None:
            cfg = replace(cfg, out_dir=str(out_dir))
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        # The run seed drives every generator.
        return replace(cfg, catalog=replace(cfg.catalog, seed=cfg.seed), load=replace(cfg.load, seed=cfg.seed))

    def classifier_params(self) -> dict:
        return {**self.classifier, "n_classes": self.catalog.category_count, "random_state": self.seed}

    def preference_params(self) -> dict:
        p = dict(self.preference)
        p["hidden_layer_sizes"] = tuple(p.get("hidden_layer_sizes", (128, 128)))
        return {**p, "random_state": self.seed}

    def validate(self) -> "RunConfig":
        self.catalog.validate()
        self.load.validate()
        self.schedule.validate()
        ports = [self.services.ports.get(r) for r in ROLES]
        if None in ports:
            raise ConfigurationError("services.ports", f"must define a port for each of {', '.join(ROLES)}")
        if len(set(ports)) != len(ports):
            raise ConfigurationError("services.ports", "ports must be distinct")
        if self.bench.launch not in LAUNCH_MODES:
            raise ConfigurationError("bench.launch", f"must be one of {', '.join(LAUNCH_MODES)}")
        if self.bench.launch == "external" and not self.bench.endpoint:
            raise ConfigurationError("bench.endpoint", "required when bench.launch is 'external'")
        if not 0 <= self.logs.noise_rate <= 1:
            raise ConfigurationError("logs.noise_rate", "must lie in [0, 1]")
        if self.logs.count < 1:
            raise ConfigurationError("logs.count", "must be >= 1")
        if self.services.timeout_s <= 0:
            raise ConfigurationError("services.timeout_s", "must be > 0")
        return self


_SECTIONS = {
    "catalog": CatalogConfig,
    "logs": LogsConfig,
    "services": ServicesConfig,
    "load": LoadProfile,
    "schedule": Schedule,
    "trainer": TrainerConfig,
    "bench": BenchConfig,
}
_DICT_SECTIONS = ("classifier", "preference")


def _section(cls, data: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"{name}.{sorted(unknown)[0]}", "unknown key")
    data = dict(data)
    if cls is TrainerConfig and "kinds" in data:
        data["kinds"] = tuple(data["kinds"])
    if cls is ServicesConfig and "ports" in data:
        data["ports"] = {**ServicesConfig().ports, **data["ports"]}
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigurationError(name, str(e)) from e


def config_from_dict(data: dict | None) -> RunConfig:
    data = copy.deepcopy(data or {})
    if not isinstance(data, dict):
        raise ConfigurationError("config", "top level must be a mapping")
    base = RunConfig()
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigurationError(key, "must be a mapping")
            kwargs[key] = _section(_SECTIONS[key], value, key)
        elif key in _DICT_SECTIONS:
            if not isinstance(value, dict):
                raise ConfigurationError(key, "must be a mapping")
            kwargs[key] = {**getattr(base, key), **value}
        elif key in ("out_dir", "seed"):
            kwargs[key] = value
        else:
            raise ConfigurationError(key, "unknown key")
    cfg = replace(base, **kwargs)
    return cfg.with_overrides()


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig().with_overrides()
    p = Path(path)
    if not p.exists():
        raise ConfigurationError("config", f"file not found: {p}")
    with open(p) as f:
        return config_from_dict(yaml.safe_load(f))
