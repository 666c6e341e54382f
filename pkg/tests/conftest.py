import functools

import pytest

from covert_uav.psca import PenaltySchedule, psca_solve
from covert_uav.scenario import reference_scenario
from covert_uav.shaf import build_initial_iterate, shaf_trajectory

_ACCEPTANCE = {}


@functools.lru_cache(maxsize=None)
def solved(period_s=240.0, covert_eps=0.03, rho_db=-60.0, benchmark=False):
    """Cached end-to-end solve on the four-user layout (shared across test modules)."""
    sc = reference_scenario(period_s=period_s, covert_eps=covert_eps, rho_db=rho_db)
    traj, info = shaf_trajectory(sc)
    init = build_initial_iterate(sc, traj)
    rep = psca_solve(sc, init, PenaltySchedule(), fixed_trajectory=benchmark)
    return sc, init, rep


@pytest.fixture
def reference():
    return reference_scenario()


@pytest.fixture
def acceptance_report(request):
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(label, passed, detail=""):
        line = f"{label}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        _ACCEPTANCE[label] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(_ACCEPTANCE[key])
