from pathlib import Path

import numpy as np
import pytest

from tsselect.matrix import PerformanceTensor
from tsselect.space import canonical_space

ROOT = Path(__file__).resolve().parents[1]
DESK = ROOT / "fixtures" / "desk"
DATA = Path(__file__).resolve().parent / "data"


@pytest.fixture(scope="session")
def space():
    return canonical_space()


def make_tensor(entries, fit_seconds=None, dataset_ids=None, checksum="test"):
    """Wrap an (n, m) or (T, n, m) array as a PerformanceTensor."""
    e = np.asarray(entries, dtype=np.float64)
    if e.ndim == 2:
        e = e[None]
    f = np.zeros_like(e) if fit_seconds is None else np.broadcast_to(
        np.asarray(fit_seconds, dtype=np.float64), e.shape).copy()
    ids = tuple(dataset_ids) if dataset_ids is not None else tuple(f"d{i}" for i in range(e.shape[1]))
    return PerformanceTensor(e.copy(), f, ids, checksum)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
