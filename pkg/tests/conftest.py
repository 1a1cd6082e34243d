import time

import numpy as np
import pytest

from torusflow.config import parse_config_dict
from torusflow.pipelines import flow_pipeline, harnack_pipeline
from torusflow.presets import preset

ACCEPTANCE_LINES = []


def record_acceptance(number, title, passed, detail):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


def _timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def heat_rc():
    return parse_config_dict(preset("heat_baseline"))


@pytest.fixture(scope="session")
def heat_run(heat_rc):
    """(FlowReport, seconds) for the heat baseline preset."""
    return _timed(flow_pipeline, heat_rc, False)


@pytest.fixture(scope="session")
def manufactured_rc():
    return parse_config_dict(preset("manufactured_sigma2"))


@pytest.fixture(scope="session")
def manufactured_run(manufactured_rc):
    """(FlowReport, seconds) for the manufactured preset, Harnack stage excluded."""
    return _timed(flow_pipeline, manufactured_rc, False)


@pytest.fixture(scope="session")
def harnack_rc():
    return parse_config_dict(preset("harnack_heat_bump"))


@pytest.fixture(scope="session")
def harnack_run(harnack_rc):
    """(HarnackOutcome, seconds) for the standalone heat-bump preset."""
    return _timed(harnack_pipeline, harnack_rc)


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)
