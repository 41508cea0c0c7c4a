import socket

import pytest
from hypothesis import settings

from esbench import datagen
from esbench.index import build_indexes

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def free_ports(n):
    socks = []
    for _ in range(n):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        socks.append(s)
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


@pytest.fixture(scope="session")
def small_config():
    return datagen.CatalogConfig(product_count=300, user_count=20, category_count=8,
                                 vocabulary_size=400, seed=3)


@pytest.fixture(scope="session")
def small_catalog(small_config):
    return datagen.generate_catalog(small_config)


@pytest.fixture(scope="session")
def small_users(small_config):
    return datagen.generate_users(small_config)


@pytest.fixture(scope="session")
def small_logs(small_catalog, small_users):
    return datagen.generate_query_logs(small_catalog, small_users, 1500, seed=3)


@pytest.fixture(scope="session")
def small_tiers(small_catalog):
    return datagen.assign_tiers(small_catalog)


@pytest.fixture(scope="session")
def small_indexes(small_catalog, small_tiers):
    return build_indexes(small_catalog, small_tiers)


def small_run_config(out_dir, **load):
    from dataclasses import replace

    from esbench.config import RunConfig, ServicesConfig
    from esbench.loadgen import LoadProfile

    ports = dict(zip(("planer", "recommender", "searcher", "ranker"), free_ports(4)))
    cfg = RunConfig(
        out_dir=str(out_dir),
        catalog=datagen.CatalogConfig(product_count=400, user_count=25, category_count=8, vocabulary_size=400),
        logs=replace(RunConfig().logs, count=1500),
        classifier={**RunConfig().classifier, "n_buckets": 4096, "epochs": 3},
        preference={**RunConfig().preference, "hidden_layer_sizes": [16, 16], "epochs": 3},
        services=ServicesConfig(ports=ports),
        load=LoadProfile(**{"virtual_users": 3, "mean_think_time": 0.005, "warmup": 0.1,
                            "total_requests": 60, **load}),
    )
    return cfg.with_overrides().validate()


@pytest.fixture(scope="session")
def run_dir(tmp_path_factory):
    """A run directory holding generated data, an index snapshot and trained artifacts."""
    from esbench import cli

    cfg = small_run_config(tmp_path_factory.mktemp("run"))
    cli.cmd_datagen(cfg)
    cli.cmd_index(cfg)
    cli.cmd_train(cfg)
    return cfg


_criteria: dict = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    # The call phase decides the outcome; a failing setup counts as a failure too.
    if marker is None or not (report.when == "call" or report.failed):
        return
    n, title = marker
    _criteria[n] = (title, "FAIL" if report.failed else "PASS")
    print(f"\nCRITERION {n:>2} {_criteria[n][1]}: {title}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, status = _criteria[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {title}")
