import math

import numpy as np
import pytest

from duonav.world import Obstacle, SensorConfig, Target, flat_world


@pytest.fixture
def box_world():
    """100 m flat square with one 30 m box over [0,10]x[0,10]."""
    return flat_world(100.0, [Obstacle(0.0, 0.0, 10.0, 10.0, 30.0)])


@pytest.fixture
def sensor():
    return SensorConfig()


def open_world(size=400.0, targets=()):
    return flat_world(size, targets=targets, cell=size / 10)


def straight_target(x, y, tid=0, category="car", tags=("red", "open_plaza")):
    return Target(tid, category, (x, y, 1.0), tags)


def wrap(a):
    return math.atan2(math.sin(a), math.cos(a))


def rng(seed=0):
    return np.random.default_rng(seed)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion."""
    def record(name: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
