import numpy as np
import pytest

from sldl.dataset import serialize_dataset
from sldl.synthetic import clustered_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_clusters():
    return clustered_dataset(n=60, clusters=3, q=8, seed=3)


@pytest.fixture
def tiny_files(tmp_path, small_clusters):
    """10-instance train file and 5-instance test file on disk."""
    train = small_clusters.subset(np.arange(10))
    test = small_clusters.subset(np.arange(10, 15))
    tr, te = tmp_path / "train.txt", tmp_path / "test.txt"
    tr.write_text(serialize_dataset(train))
    te.write_text(serialize_dataset(test))
    return tr, te


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _CRITERIA.append(line)
        print(line)
        assert ok, line

    def skip(name, reason):
        line = f"SKIP  {name}: {reason}"
        _CRITERIA.append(line)
        print(line)
        pytest.skip(reason)

    record.skip = skip
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
