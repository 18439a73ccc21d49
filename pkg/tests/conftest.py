import numpy as np
import pytest

from attrcrit.attributions import AttributionMap
from attrcrit.synthetic import max_model

# attribution scores for x1, x2, x3 of the three-feature example
MAX_MAPS = {
    "A1": (1 / 6, 1 / 3, 1 / 2),
    "A2": (2 / 3, 0.0, 1 / 3),
    "A3": (2 / 3, 1 / 3, 0.0),
}


def fixed_map(scores, name="fixed"):
    """Method callable returning the same scores for any input (harness injection hook)."""
    arr = np.asarray(scores, dtype=float)

    def method(model, x, c, cfg):
        shape = model.input_shape[1:] if len(model.input_shape) == 3 else model.input_shape
        return AttributionMap(arr.reshape(shape), name, c)

    return method


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mmodel():
    return max_model()


@pytest.fixture
def ones3():
    return np.ones((1, 1, 3))


@pytest.fixture
def max_map_methods():
    return {name: fixed_map(s, name) for name, s in MAX_MAPS.items()}


# (criterion, passed, detail) lines recorded by the acceptance suite
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n:>2}: {detail}")
