import numpy as np
import pytest

from myoshift.model import init_model
from myoshift.signal import Recording, Sequence


def make_recording(data, subject=1, session=1, trial=1, gesture=0, rate_hz=1000.0):
    return Recording(subject, session, trial, gesture, rate_hz, np.asarray(data, dtype=float))


def random_sequences(rng, n, T, f, G):
    return [Sequence(rng.normal(size=(T, f)), int(rng.integers(G)), (0, 0, 0, k)) for k in range(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    return init_model(4, 8, 3, 2, seed=7, head_units=6)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, name: str, passed: bool, detail: str = "") -> bool:
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
