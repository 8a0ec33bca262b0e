import os
from pathlib import Path

import numpy as np
import pytest

from relpatch.data import CIFAR_DIRNAME, DATA_ENV

# one line per acceptance criterion, filled by test_acceptance.report()
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def cifar_root() -> Path | None:
    candidates = [os.environ.get(DATA_ENV), str(Path.home() / "data")]
    for c in candidates:
        if c and (Path(c) / CIFAR_DIRNAME / "data_batch_1.bin").is_file():
            return Path(c)
    return None


@pytest.fixture(scope="session")
def cifar_dir():
    root = cifar_root()
    if root is None:
        pytest.skip(f"CIFAR-10 binaries not found (set ${DATA_ENV})")
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:2d}. {name}: {detail}")
