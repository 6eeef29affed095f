import numpy as np
import pytest

from fairdro.dataset import LabeledDataset

_ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    """Collect one pass/fail line per acceptance criterion for the terminal summary."""

    def record(name, passed, detail=""):
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        _ACCEPTANCE_LINES.append(f"{status}  {name}  {detail}".rstrip())
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(pairs, num_classes=2, num_groups=2, d=3, seed=0):
    pairs = np.asarray(pairs)
    x = np.random.default_rng(seed).standard_normal((len(pairs), d))
    return LabeledDataset(x, pairs[:, 0], pairs[:, 1], num_classes, num_groups)


def cell_dataset(counts, d=3, seed=0):
    counts = np.asarray(counts)
    pairs = [(y, a) for y in range(counts.shape[0]) for a in range(counts.shape[1])
             for _ in range(counts[y, a])]
    return make_dataset(pairs, counts.shape[0], counts.shape[1], d, seed)
