import functools

import numpy as np
import pytest
from hypothesis import settings

from dhm.sim import default_scene, simulate

settings.register_profile("dhm", deadline=None, max_examples=60)
settings.load_profile("dhm")

ACCEPTANCE_LINES = []


@functools.lru_cache(maxsize=None)
def _default_frames(seed: int):
    return tuple(simulate(default_scene(seed=seed)).frames)


@pytest.fixture(scope="session")
def default_frames():
    """Frames of the default 2D scene, cached per seed."""
    return lambda seed=0: list(_default_frames(seed))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
