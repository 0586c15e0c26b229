import os
import time

import numpy as np
import pytest

from gvarsv import oracle

# Results recorded by tests/test_acceptance.py, printed once at the end of the run.
_RESULTS: dict[str, tuple[bool, str]] = {}
_STATE = {"start": None, "elapsed": None}
RUNTIME_BUDGET_S = 30 * 60


def pytest_sessionstart(session):
    _STATE["start"] = time.perf_counter()


@pytest.hookimpl(tryfirst=True)
def pytest_sessionfinish(session, exitstatus):
    _STATE["elapsed"] = time.perf_counter() - _STATE["start"]
    if "AC8" in _RESULTS:
        ok, detail = _RESULTS["AC8"]
        fast = _STATE["elapsed"] < RUNTIME_BUDGET_S
        _RESULTS["AC8"] = (ok and fast, f"{detail}; suite runtime {_STATE['elapsed'] / 60:.1f} min "
                                        f"on {os.cpu_count()} core(s), budget 30 min")
        if not fast and session.exitstatus == 0:
            session.exitstatus = pytest.ExitCode.TESTS_FAILED


def pytest_terminal_summary(terminalreporter):
    collected = getattr(terminalreporter.config, "_acceptance_collected", False)
    if not (_RESULTS or collected):
        return
    terminalreporter.section("acceptance")
    for n in range(1, 9):
        name = f"AC{n}"
        ok, detail = _RESULTS.get(name, (False, "not run"))
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_collection_modifyitems(config, items):
    config._acceptance_collected = any(i.module.__name__.endswith("test_acceptance") for i in items)


@pytest.fixture(scope="session")
def acceptance():
    """Record a criterion outcome; a criterion checked by several tests fails if any part fails."""
    def record(name: str, passed: bool, detail: str) -> None:
        prev = _RESULTS.get(name)
        if prev is not None:
            passed, detail = prev[0] and passed, f"{prev[1]}; {detail}"
        _RESULTS[name] = (bool(passed), detail)
        print(f"{name} {'PASS' if passed else 'FAIL'}  {detail}")
    return record


@pytest.fixture(scope="session")
def desk_world():
    return oracle.canonical_world()


@pytest.fixture(scope="session")
def desk_truth(desk_world):
    return oracle.generate(desk_world)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
