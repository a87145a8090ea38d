import numpy as np
import pytest

from bagkernel import _backend
from bagkernel.bags import EmbeddingBag, make_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(_backend.BACKENDS))
def backend(request, monkeypatch):
    """Run a test once per available row-sum backend."""
    monkeypatch.setattr(_backend, "kernel_rowsums", _backend.BACKENDS[request.param])
    return request.param


def random_bags(rng, count, d=4, n_range=(3, 12), prefix="b", shift=None):
    bags = []
    for i in range(count):
        n = int(rng.integers(*n_range))
        v = rng.normal(size=(n, d))
        if shift is not None:
            v = v + shift[i]
        bags.append(EmbeddingBag(f"{prefix}{i}", f"p{i}", v))
    return bags


@pytest.fixture
def small_dataset(rng):
    return make_dataset(random_bags(rng, 6))


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE = {}
N_CRITERIA = 13


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""
    def record(number, title, passed, detail):
        line = f"[{number:02d}] {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(ACCEPTANCE.get(n, f"[{n:02d}] FAIL  no result recorded (test errored or was skipped)"))
