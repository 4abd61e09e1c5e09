from __future__ import annotations

import numpy as np
import pytest

from freeflight.error_analysis import solve_case
from freeflight.windfield import CASES, WindField


def make_field(name: str) -> WindField:
    if name == "zero":
        return WindField.zero()
    return CASES[name]()


@pytest.fixture(scope="session")
def solved():
    """Memoized ``solve_case`` keyed by (field name, n, scheme)."""
    cache = {}

    def get(name: str, n: int, scheme: str = "jacobi"):
        key = (name, n, scheme)
        if key not in cache:
            cache[key] = solve_case(make_field(name), n, scheme=scheme)
        return cache[key]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


REFERENCE_N = 1001


@pytest.fixture(scope="session")
def reference_mesh():
    from freeflight.trimesh import build_mesh

    return build_mesh(REFERENCE_N)


@pytest.fixture(scope="session")
def reference(reference_mesh):
    """Memoized fine-grid solves sharing one mesh."""
    cache = {}

    def get(name: str):
        if name not in cache:
            cache[name] = solve_case(make_field(name), REFERENCE_N, mesh=reference_mesh)
        return cache[name]

    return get


# ----------------------------------------------------------------------
# one pass/fail line per acceptance criterion

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    entry = _criteria.setdefault(marker.args[0], {"passed": 0, "failed": [], "notes": []})
    if call.excinfo is not None and not call.excinfo.errisinstance(pytest.skip.Exception):
        entry["failed"].append(item.name)
    elif call.when == "call":
        entry["passed"] += 1
        entry["notes"] += [v for k, v in item.user_properties if k == "summary"]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_criteria):
        e = _criteria[k]
        status = "FAIL" if e["failed"] else "PASS"
        detail = "; ".join(e["notes"])
        if e["failed"]:
            detail = "failed: " + ", ".join(e["failed"]) + (f"; {detail}" if detail else "")
        terminalreporter.write_line(f"criterion {k}: {status} ({e['passed']} passed) {detail}".rstrip())
