import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from fhe_alloc import oracle, stage1, stage2
from fhe_alloc.errors import InfeasibleError
from fhe_alloc.joint import initial_point
from fhe_alloc.model import shannon_rate
from fhe_alloc.scenario_io import generate_scenario

from conftest import encryption_time


def context_for(scn, lam=None, g=None):
    p, b = initial_point(scn)
    if lam is None:
        res = stage1.solve_stage1(scn, p, b)
        lam, g = res.lam, res.g
    return stage2.build_context(scn, encryption_time(scn, lam, g), p, b), p, b


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-4, 1.0), st.floats(1e4, 1e7), st.floats(1e-14, 1e-8), st.floats(1e5, 1e10))
def test_quadratic_transform_is_tight_at_optimal_auxiliary(p, b, h, d):
    n0 = 10 ** (-20.4)
    r = shannon_rate(b, p, h, n0)
    z = 1.0 / (2 * p * d * r)
    assert (p * d) ** 2 * z + 1 / (4 * r * r * z) == pytest.approx(p * d / r, rel=1e-12)
    # any other z gives a larger value
    for zz in (z * 0.9, z * 1.1):
        assert (p * d) ** 2 * zz + 1 / (4 * r * r * zz) > p * d / r


def test_min_rate_deadline_choice(default_scenario):
    scn = default_scenario
    assert stage2.min_rate(scn, 0, 1000.0) == pytest.approx(scn.d[0] / (scn.t_max_device - 1000.0))
    srv = scn.with_(rate_deadline="server")
    assert stage2.min_rate(srv, 0, 1000.0) == pytest.approx(scn.d[0] / (scn.t_max_server - 1000.0))
    with pytest.raises(InfeasibleError):
        stage2.min_rate(scn, 0, scn.t_max_device)


def test_solution_uses_whole_band_and_meets_rates(default_scenario):
    scn = default_scenario
    ctx, p, b = context_for(scn)
    sol = stage2.solve_power_bandwidth(scn, ctx)
    assert sol.b.sum() == pytest.approx(scn.b_total, rel=1e-8)
    r = shannon_rate(sol.b, sol.p, scn.h, scn.noise_density)
    assert np.all(r >= ctx.r_min * (1 - 1e-9))
    assert np.all(sol.p <= scn.p_max * (1 + 1e-12))
    assert sol.beta > 0 and np.all(sol.gamma >= 0) and np.all(sol.mu >= 0)
    stat, slack = stage2.kkt_residuals(scn, ctx, sol)
    assert stat <= 1e-5 and slack <= 1e-6


def slsqp_reference(scn, ctx):
    """Transformed problem solved by a general-purpose NLP solver (scaled variables)."""
    n = scn.n
    ps, bs = scn.p_max, scn.b_total
    scale = None

    def unpack(u):
        return u[:n] * ps, u[n:] * bs

    def obj(u):
        p, b = unpack(u)
        return stage2.surrogate_objective(scn, ctx, p, b) / scale

    p0, b0 = initial_point(scn)
    u0 = np.concatenate([np.minimum(p0 * 1.5, ps) / ps, b0 / bs])
    scale = stage2.surrogate_objective(scn, ctx, *unpack(u0))
    cons = [{"type": "ineq", "fun": lambda u: 1.0 - u[n:].sum()},
            {"type": "ineq", "fun": lambda u: shannon_rate(np.maximum(unpack(u)[1], 1e-9),
                                                           np.maximum(unpack(u)[0], 0), scn.h,
                                                           scn.noise_density) / ctx.r_min - 1.0}]
    res = minimize(obj, u0, method="SLSQP", constraints=cons,
                   bounds=[(1e-9, 1.0)] * n + [(1e-9, 1.0)] * n,
                   options={"ftol": 1e-15, "maxiter": 2000})
    return res.fun * scale


@pytest.mark.parametrize("seed", range(5))
def test_solve_power_bandwidth_matches_general_solver(seed):
    scn = generate_scenario(seed, n_devices=3, b_total_hz=float(np.random.default_rng(seed).uniform(3e6, 15e6)))
    ctx, _, _ = context_for(scn)
    sol = stage2.solve_power_bandwidth(scn, ctx)
    ref = slsqp_reference(scn, ctx)
    assert sol.objective <= ref * (1 + 1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_solve_power_bandwidth_beats_grid(seed):
    scn = generate_scenario(seed, n_devices=2)
    ctx, _, _ = context_for(scn)
    sol = stage2.solve_power_bandwidth(scn, ctx)
    _, _, best = oracle.p5_grid_search(scn, ctx, points=80)
    assert sol.objective <= best * (1 + 1e-9)


@pytest.mark.parametrize("frac,z_scale,case", [
    (0.5, 1.0, "free"), (0.95, 1.0, "rate"), (0.5, 0.01, "capped"), (0.95, 0.01, "both"),
])
def test_every_kkt_case(frac, z_scale, case):
    # a shared encryption time fraction sets the rate floor; shrinking z
    # rewards power, which drives devices onto the cap
    scn = generate_scenario(2, n_devices=4, p_max_dbm=10.0)
    p, b = initial_point(scn)
    ctx = stage2.build_context(scn, np.full(scn.n, frac * scn.t_max_device), p, b)
    ctx = ctx.with_z(ctx.z * z_scale)
    sol = stage2.solve_power_bandwidth(scn, ctx)
    rate_active, cap_active = np.any(sol.gamma > 0), np.any(sol.mu > 0)
    assert (rate_active, cap_active) == {"free": (False, False), "rate": (True, False),
                                         "capped": (False, True), "both": (True, True)}[case]
    stat, slack = stage2.kkt_residuals(scn, ctx, sol)
    assert stat <= 1e-5 and slack <= 1e-6
    assert sol.objective <= slsqp_reference(scn, ctx) * (1 + 1e-6)


def test_beta_hint_does_not_change_result(default_scenario):
    scn = default_scenario
    ctx, _, _ = context_for(scn)
    a = stage2.solve_power_bandwidth(scn, ctx)
    b = stage2.solve_power_bandwidth(scn, ctx, beta_hint=a.beta * 37.0)
    assert np.allclose(a.p, b.p, rtol=1e-8) and np.allclose(a.b, b.b, rtol=1e-8)


def test_bandwidth_infeasible(default_scenario):
    scn = default_scenario.with_(b_total=1e3)
    ctx, _, _ = context_for(default_scenario)
    with pytest.raises(InfeasibleError) as exc:
        stage2.solve_power_bandwidth(scn, ctx)
    assert exc.value.constraint in ("bandwidth", "rate")


def test_fractional_programming_descends(default_scenario):
    scn = default_scenario
    p, b = initial_point(scn)
    res = stage1.solve_stage1(scn, p, b)
    t_en = encryption_time(scn, res.lam, res.g)
    start = stage2.transmission_energy(scn, p, b)
    fp = stage2.fractional_programming(scn, t_en, p, b, max_iter=50, eps=1e-12)
    seq = [start] + fp.trace
    assert all(y <= x * (1 + 1e-12) for x, y in zip(seq, seq[1:]))
    assert fp.iterations <= 50
    # at convergence one more transformed solve reproduces the same point
    ctx = stage2.build_context(scn, t_en, p, b).with_z(fp.z)
    again = stage2.solve_power_bandwidth(scn, ctx)
    assert np.allclose(again.p, fp.p, rtol=1e-6) and np.allclose(again.b, fp.b, rtol=1e-6)


def test_fractional_programming_arguments(default_scenario):
    with pytest.raises(ValueError):
        stage2.fractional_programming(default_scenario, np.zeros(default_scenario.n),
                                      *initial_point(default_scenario), max_iter=0)


def test_single_device():
    scn = generate_scenario(1, n_devices=1)
    ctx, _, _ = context_for(scn)
    sol = stage2.solve_power_bandwidth(scn, ctx)
    assert sol.b[0] == pytest.approx(scn.b_total, rel=1e-9)
