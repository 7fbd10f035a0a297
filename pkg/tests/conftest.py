import time

import pytest

from magswarm.magnetics import CoilSpec
from magswarm.surrogate import (
    TrainConfig,
    allocation_dataset,
    geometry_dataset,
    train_allocation_surrogate,
    train_geometry_surrogate,
)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])


@pytest.fixture(scope="session")
def build_seconds():
    return {}


@pytest.fixture(scope="session")
def geometry_data(build_seconds):
    t0 = time.perf_counter()
    data = geometry_dataset(16_000, seed=0)
    build_seconds["geometry_data"] = time.perf_counter() - t0
    return data


@pytest.fixture(scope="session")
def geometry_surrogate(geometry_data, build_seconds):
    """Default-architecture model trained once per session (about a minute)."""
    t0 = time.perf_counter()
    sur = train_geometry_surrogate(geometry_data, TrainConfig())
    build_seconds["geometry_surrogate"] = time.perf_counter() - t0
    return sur


@pytest.fixture(scope="session")
def allocation_surrogate():
    data = allocation_dataset(600, CoilSpec(120, 0.075), (0.4, 0.8), seed=1, starts=1)
    return train_allocation_surrogate(data, TrainConfig(hidden=(64, 64, 64), epochs=300)), data
