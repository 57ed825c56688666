"""Shared fixtures and scenario helpers."""

from __future__ import annotations

import numpy as np
import pytest

from fhe_alloc.model import y1
from fhe_alloc.scenario_io import generate_scenario
from fhe_alloc import stage1
from fhe_alloc.errors import InfeasibleError


@pytest.fixture(scope="session")
def default_scenario():
    return generate_scenario(0)


@pytest.fixture(scope="session")
def small_scenario():
    return generate_scenario(3, n_devices=2)


def server_cycles(scn, lam):
    """Server cycles per device, written out from the cost model."""
    fit = scn.fit
    lam = np.asarray(lam, float)
    y3 = fit.c3 * lam + fit.c4
    y4 = fit.c5 * lam + fit.c6
    return (y3 * scn.a + y4 * scn.m + scn.c_other + scn.c_upd) * scn.D


def random_bnb_scenario(rng, n):
    """Scenario whose server budget sits between the all-smallest and all-largest
    degree demands, with a random privacy weight, so the budget can bind."""
    seed = int(rng.integers(1 << 31))
    scn = generate_scenario(seed, n_devices=n, omega=float(rng.uniform(0.0, 10.0)))
    lo = server_cycles(scn, scn.lambda_options[0]).sum() / scn.t_max_server
    hi = server_cycles(scn, scn.lambda_options[-1]).sum() / scn.t_max_server
    scn = scn.with_(f_total=float(rng.uniform(lo * 1.001, hi * 1.1)))
    p = scn.p_max * rng.uniform(0.05, 1.0, n)
    b = scn.b_total / n * rng.uniform(0.5, 1.0, n)
    return scn, p, b


def encryption_time(scn, lam, g):
    return y1(scn.fit, lam) * scn.D * scn.s / g


def feasible_context(scn, p, b):
    """Stage 1 context, or None when the fixed radio point is infeasible."""
    try:
        return stage1.build_context(scn, p, b)
    except InfeasibleError:
        return None


# ---------------------------------------------------------------------------
# acceptance report: one line per criterion, printed after the test summary
# ---------------------------------------------------------------------------

ACCEPTANCE_LINES = []


def report(criterion, ok, detail=""):
    """Record and print one acceptance line; returns ``ok``."""
    line = f"{'PASS' if ok else 'FAIL'}  {criterion}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
