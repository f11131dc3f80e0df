import logging

import numpy as np
import pytest

from doaloc.frames import FrameTransform, random_rotation
from doaloc.measurement import synthesize_set


def generic_scenario(rng: np.random.Generator, K: int = 6, box: float = 500.0):
    """Random truth with both agents scattered in a few-km box (generic with probability 1)."""
    truth = FrameTransform(random_rotation(rng), rng.uniform(-box, box, 3))
    pa = rng.uniform([-1000, -1000, 200], [1000, 1000, 600], (K, 3))
    pb_global = rng.uniform([-1000, -1000, 200], [1000, 1000, 600], (K, 3)) + [1500, 0, 0]
    pb_ins = pb_global @ truth.rotation.T + truth.translation
    return truth, synthesize_set(truth, pa, pb_ins)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_solver_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="doaloc")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
