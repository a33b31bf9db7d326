import time
from pathlib import Path

import numpy as np
import pytest

from torusmaf import lab
from torusmaf.scenario import load_scenario

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


class _Runs:
    """Runs each preset at most once per session and hands back its output directory."""

    def __init__(self, root: Path):
        self.root = root
        self.cache: dict[str, tuple[int, Path, float]] = {}

    def __call__(self, name: str):
        if name not in self.cache:
            out = self.root / name
            t0 = time.perf_counter()
            status = lab.run_scenario(load_scenario(name), out)
            self.cache[name] = (status, out, time.perf_counter() - t0)
        return self.cache[name]


@pytest.fixture(scope="session")
def preset_run(tmp_path_factory):
    return _Runs(tmp_path_factory.mktemp("presets"))


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
