import json
from pathlib import Path

import pytest

from ruinlevy.fluctuation import renewal_table
from ruinlevy.model import build_model

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def load(name):
    with open(CONFIGS / f"{name}.json") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def m0():
    return build_model(load("m0"))


@pytest.fixture(scope="session")
def m1():
    return build_model(load("m1"))


@pytest.fixture(scope="session")
def t0(m0):
    return renewal_table(m0)


@pytest.fixture(scope="session")
def t1(m1):
    return renewal_table(m1)


@pytest.fixture(scope="session")
def config_dir():
    return CONFIGS


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
