from pathlib import Path

import numpy as np
import pytest

from hcf import kernels
from hcf.features import FeatureMatrix
from hcf.grid_io import read_grid_case

DATA = Path(__file__).parent / "data"


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    """Run the test once per available kernel backend."""
    prev = kernels.BACKEND
    kernels.use(request.param)
    yield request.param
    kernels.use(prev)


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def two_bus():
    return read_grid_case(DATA / "two_bus.case.csv")


@pytest.fixture
def triangle():
    return read_grid_case(DATA / "triangle.case.csv")


def make_features(x, line_ids=None):
    """FeatureMatrix from a raw (n, n, d) array."""
    x = np.array(x, dtype=float)
    n, _, d = x.shape
    ids = tuple(line_ids) if line_ids is not None else tuple(range(1, n + 1))
    x[np.arange(n), np.arange(n)] = 0.0
    return FeatureMatrix(ids, tuple(f"f{k}" for k in range(d)), x)


def random_features(rng, n, d):
    return make_features(rng.uniform(-1, 1, (n, n, d)))


ACCEPTANCE = {}


@pytest.fixture
def record():
    """Store one pass/fail line per acceptance criterion for the summary."""
    def _record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
