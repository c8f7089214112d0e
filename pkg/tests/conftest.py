import numpy as np
import pytest

from spatmca.tps import LocationSet, roughness_matrix


def principal_angles(a, b):
    """Largest principal angle (radians) between column spans of ``a`` and ``b``."""
    qa, _ = np.linalg.qr(a)
    qb, _ = np.linalg.qr(b)
    s = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return float(np.arccos(np.clip(s.min(), -1.0, 1.0)))


def jittered_sites(rng, p, dim):
    """Well-separated random sites in the unit cube."""
    if dim == 1:
        return ((np.arange(p) + rng.uniform(0.2, 0.8, p)) / p)[:, None]
    return rng.uniform(0, 1, (p, dim))


def random_problem(seed, p1=10, p2=8, n=200, dim=1):
    rng = np.random.default_rng(seed)
    locs1 = LocationSet(jittered_sites(rng, p1, dim))
    locs2 = LocationSet(jittered_sites(rng, p2, dim))
    y1 = rng.standard_normal((n, p1))
    y2 = 0.5 * y1[:, :p2] @ rng.standard_normal((p2, p2)) / np.sqrt(p2) + rng.standard_normal((n, p2))
    s12 = y1.T @ y2 / n
    return s12, locs1, locs2, roughness_matrix(locs1), roughness_matrix(locs2)


@pytest.fixture
def problem():
    return random_problem(0)


# ---- one pass/fail line per acceptance criterion

CRITERIA = {
    1: "unpenalised solve reproduces SVD",
    2: "desk-scale loss comparison",
    3: "rank selection picks K=1",
    4: "roughness matrix oracle",
    5: "ADMM feasibility and orthonormality",
    6: "d-hat grid optimality",
    7: "sparsity monotone in tau2u",
    8: "CV machinery",
    9: "spline prediction",
}
_outcomes: dict = {}


def _criterion(nodeid):
    if "test_acceptance.py::test_criterion_" not in nodeid:
        return None
    return int(nodeid.split("test_criterion_", 1)[1].split("_", 1)[0])


def pytest_runtest_logreport(report):
    c = _criterion(report.nodeid)
    if c is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        prev = _outcomes.get(c, True)
        _outcomes[c] = prev and report.outcome == "passed"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(CRITERIA):
        if c not in _outcomes:
            continue
        status = "PASS" if _outcomes[c] else "FAIL"
        terminalreporter.write_line(f"criterion {c}: {status}  {CRITERIA[c]}")
