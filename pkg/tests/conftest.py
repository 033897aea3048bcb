import os

import numpy as np
import pytest

from brwlab.offspring import binary_gaussian, one_child, poisson_gaussian
from brwlab.rw import derive_walk

CRITERIA: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])


@pytest.fixture(autouse=True)
def _single_worker(monkeypatch):
    monkeypatch.delenv("BRWLAB_WORKERS", raising=False)


@pytest.fixture(scope="session")
def bg():
    return binary_gaussian()


@pytest.fixture(scope="session")
def pg():
    return poisson_gaussian()


@pytest.fixture(scope="session")
def oc0():
    return one_child("0")


@pytest.fixture(scope="session")
def bg_walk(bg):
    return derive_walk(bg)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def tmp_out(tmp_path):
    d = tmp_path / "out"
    return os.fspath(d)
