import math

import pytest

from qdlab.balayage import auto_grid, partial_balayage
from qdlab.measures import Measure

BALL_MASS = 4 * math.pi / 9

_criteria: dict[int, list[tuple[str, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    _criteria.setdefault(mark.args[0], []).append((item.name, rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        rows = _criteria[n]
        ok = all(o == "passed" for _, o in rows)
        bad = [name for name, o in rows if o != "passed"]
        tail = "" if ok else "  (failing: " + ", ".join(bad) + ")"
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}{tail}")


@pytest.fixture(scope="session")
def ball_run():
    """(4π/9)δ₀ swept to density 1 on the whole plane at h = 1/128."""
    mu = Measure.point(0.0, 0.0, BALL_MASS)
    h = 1 / 128
    return partial_balayage(mu, None, 1.0, auto_grid(mu, h))


@pytest.fixture(scope="session")
def three_point():
    from qdlab.multiphase import PhaseProblem, construct_via_disjoint_one_phase

    mus = [Measure.point(x, 0.0, BALL_MASS) for x in (-1.0, 0.0, 1.0)]
    spec = auto_grid(mus[0] + mus[1] + mus[2], 1 / 128)
    problem = PhaseProblem(mus, spec)
    return construct_via_disjoint_one_phase(problem), problem


@pytest.fixture(scope="session")
def three_point_coarse():
    from qdlab.multiphase import PhaseProblem, minimize_Sm

    mus = [Measure.point(x, 0.0, BALL_MASS) for x in (-1.0, 0.0, 1.0)]
    spec = auto_grid(mus[0] + mus[1] + mus[2], 1 / 32)
    problem = PhaseProblem(mus, spec)
    return minimize_Sm(problem), problem
