import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from avatarfit.engine import Engine, build_catalog
from avatarfit.schema import default_schema

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def catalog(schema):
    return build_catalog(schema)


@pytest.fixture(scope="session")
def engine(schema, catalog):
    return Engine(schema, catalog, size=32)


@pytest.fixture(scope="session")
def engine64(schema, catalog):
    return Engine(schema, catalog, size=64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
