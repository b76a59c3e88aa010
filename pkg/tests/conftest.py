import numpy as np
import pytest

from amodalkit import synth
from amodalkit.config import PipelineConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def config():
    return PipelineConfig()


@pytest.fixture(scope="session")
def sample():
    return synth.gen_scene(synth.SceneSpec("rect", 1, (0.4, 0.6)), seed=3)


# ---------------------------------------------------------------- acceptance summary

_ACCEPTANCE_TITLES: dict[str, str] = {}
_ACCEPTANCE_OUTCOMES: dict[str, str] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        if item.get_closest_marker("criterion"):
            number, title = item.get_closest_marker("criterion").args
            _ACCEPTANCE_TITLES[item.nodeid] = f"{number:>2}. {title}"


def pytest_runtest_logreport(report):
    if report.nodeid not in _ACCEPTANCE_TITLES:
        return
    if report.failed:
        _ACCEPTANCE_OUTCOMES[report.nodeid] = "FAIL"
    elif report.when == "call" and report.passed:
        _ACCEPTANCE_OUTCOMES.setdefault(report.nodeid, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, title in sorted(_ACCEPTANCE_TITLES.items(), key=lambda kv: kv[1]):
        if nodeid in _ACCEPTANCE_OUTCOMES:
            terminalreporter.line(f"{_ACCEPTANCE_OUTCOMES[nodeid]}  {title}")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
