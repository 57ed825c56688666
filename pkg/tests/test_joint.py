import numpy as np
import pytest

from fhe_alloc import joint, oracle
from fhe_alloc.errors import InfeasibleError
from fhe_alloc.joint import SolveOptions, convergence_metric, rebalance_split, solve
from fhe_alloc.model import Allocation, breakdown, check_feasibility, total_objective
from fhe_alloc.scenario_io import generate_scenario


def test_solve_options_validation():
    assert (SolveOptions().max_outer, SolveOptions().max_inner, SolveOptions().eps) == (50, 20, 1e-4)
    for bad in ({"max_outer": 0}, {"max_inner": 0}, {"eps": 0.0}, {"eps": 1.5}):
        with pytest.raises(ValueError):
            SolveOptions(**bad)


def test_convergence_metric_by_hand():
    a = Allocation(f=[2.0], g=[0.5], p=[1.0], b=[10.0], lam=[4.0])
    b = a.replace(f=[3.0], g=[0.6])
    # |3-2|/2 = 0.5 dominates |0.6-0.5|/max(0.5, 1) = 0.1
    assert convergence_metric(a, b) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        convergence_metric(a, Allocation(f=[1, 1], g=[1, 1], p=[1, 1], b=[1, 1], lam=[1, 1]))


def test_default_solve(default_scenario):
    scn = default_scenario
    alloc, trace = solve(scn)
    assert trace.converged
    assert check_feasibility(scn, alloc).feasible
    obj = trace.objectives
    assert all(y <= x for x, y in zip(obj, obj[1:]))
    assert obj[-1] == pytest.approx(total_objective(scn, alloc))
    assert set(trace.records[0].timings) == {"stage1", "stage2", "rebalance"}
    # better than every benchmark
    for fn in (oracle.average_allocation, oracle.optimize_compute_only, oracle.optimize_radio_only):
        assert obj[-1] < total_objective(scn, fn(scn))


def test_solve_is_deterministic(small_scenario):
    a, ta = solve(small_scenario)
    b, tb = solve(small_scenario)
    assert np.array_equal(a.vector(), b.vector()) and ta.objectives == tb.objectives


def test_rebalance_minimises_device_energy(default_scenario):
    scn = default_scenario.with_(omega=0.0)
    p, b = joint.initial_point(scn)
    from fhe_alloc import stage1

    s1 = stage1.solve_stage1(scn, p, b)
    alloc = Allocation(f=s1.f, g=s1.g, p=p, b=b, lam=s1.lam)
    new = rebalance_split(scn, alloc)
    assert check_feasibility(scn, new).feasible
    before, after = breakdown(scn, alloc), breakdown(scn, new)
    for i in range(scn.n):
        e_old = before[i].e_en + before[i].e_tr
        e_new = after[i].e_en + after[i].e_tr
        assert e_new <= e_old
        # dense scan over the upload time: nothing beats the chosen split
        cyc = after[i].e_en / (scn.kappa * new.g[i] ** 2)
        t = np.linspace(after[i].t_tr * 0.5, scn.t_max_device - cyc / scn.g_max[i], 4001)[1:-1]
        n0b_h = scn.noise_density * new.b[i] / scn.h[i]
        p_t = np.expm1(scn.d[i] * np.log(2) / (t * new.b[i])) * n0b_h
        g_t = cyc / (scn.t_max_device - t)
        ok = (p_t <= scn.p_max[i]) & (g_t <= scn.g_max[i])
        energy = scn.kappa * cyc * g_t**2 + p_t * t
        assert e_new <= energy[ok].min() * (1 + 1e-9)


def test_plain_loop_keeps_initial_split(default_scenario):
    """Without the rebalance the split set by the initial point survives."""
    scn = default_scenario.with_(omega=0.0)
    plain, ptrace = solve(scn, SolveOptions(rebalance=False))
    full, _ = solve(scn)
    assert total_objective(scn, full) < total_objective(scn, plain)
    # and the plain loop then depends on p_max through the initial power
    hi = scn.with_devices(p_max=1.0)
    plain_hi, _ = solve(hi, SolveOptions(rebalance=False))
    full_hi, _ = solve(hi)
    assert total_objective(hi, plain_hi) > 1.2 * total_objective(scn, plain)
    assert total_objective(hi, full_hi) == pytest.approx(total_objective(scn, full), rel=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_joint_not_worse_than_coarse_grid(seed):
    scn = generate_scenario(seed, n_devices=2)
    alloc, trace = solve(scn)
    _, best = oracle.grid_search(scn, oracle.GridSpec(points_per_axis=20))
    assert trace.objectives[-1] <= best + 1e-9 * abs(best)


def test_infeasible_scenario_raises(default_scenario):
    with pytest.raises(InfeasibleError):
        solve(default_scenario.with_(f_total=1e9))


def test_iteration_limit(default_scenario):
    alloc, trace = solve(default_scenario, SolveOptions(max_outer=2))
    assert trace.iterations == 2 and not trace.converged
    assert len(trace) == 2
