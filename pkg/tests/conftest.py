import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ransomguard.dataset import FeatureTable, PositiveClass  # noqa: E402

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture
def record_criterion():
    """Log an acceptance criterion outcome for the end-of-run summary."""

    def record(name, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        if passed is None:
            status = "SKIP"
        _ACCEPTANCE.append((status, name, detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{status}] {name}" + (f" -- {detail}" if detail else ""))


def synthetic_table(n=1200, seed=0, positive_class=PositiveClass.LEGITIMATE):
    """Small PE-like table: a few informative columns, a constant one and two collinear ones."""
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.3).astype(np.int8)
    signal = np.where(y == 1, 1.0, -1.0)
    cols = {
        "SizeOfOptionalHeader": 224 + 16 * (rng.random(n) < 0.2 + 0.5 * y),
        "MajorLinkerVersion": np.round(9 + 2 * signal + rng.normal(0, 2, n)),
        "AddressOfEntryPoint": rng.exponential(5e4, n) * (1 + 0.5 * y),
        "SectionsMaxEntropy": np.clip(6.5 - 0.8 * signal + rng.normal(0, 0.6, n), 0, 8),
        "SectionsMeanRawsize": rng.exponential(2e4, n),
        "LoaderFlags": np.zeros(n),
        "SizeOfHeaders": 1024 + 512 * (rng.random(n) < 0.1),
    }
    cols["SectionMaxRawsize"] = cols["SectionsMeanRawsize"] * 2.5 + rng.normal(0, 3e3, n)
    names = tuple(cols)
    return FeatureTable(names, np.column_stack([cols[c] for c in names]), y, positive_class)


@pytest.fixture
def small_table():
    return synthetic_table()
