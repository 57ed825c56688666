"""Stage 1: polynomial degree, server and device frequencies for fixed (p, B).

With transmission fixed, both time budgets are exhausted, so the server
share ``f`` and device frequency ``g`` become functions of ``lam`` alone and
the problem reduces to a separable integer program in ``lam`` with one
coupling constraint (total server capacity). The continuous relaxation is
convex; it is solved by per-device stationarity roots plus a bisection on
the capacity multiplier ``alpha``, and a best-first branch-and-bound
recovers the integer optimum over the option lattice.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import InfeasibleError
from .model import Scenario, _y2, shannon_rate, y1, y5

INTEGRALITY_RTOL = 1e-6  # times lambda_o1
CAPACITY_RTOL = 1e-8


@dataclass(frozen=True)
class Stage1Context:
    """Fixed transmission times and per-device continuous lambda bounds."""

    t_tr: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def n(self):
        return len(self.t_tr)

    def with_bounds(self, lo, hi):
        return Stage1Context(self.t_tr, np.asarray(lo, float), np.asarray(hi, float))


@dataclass(order=True)
class BnbNode:
    sort_key: tuple
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)
    relaxed_solution: np.ndarray = field(compare=False)
    lower_bound: float = field(compare=False)
    depth: int = field(compare=False, default=0)


@dataclass
class BnbResult:
    lam: np.ndarray
    objective: float
    nodes_explored: int
    incumbent_trace: list  # incumbent objective after each explored node


@dataclass
class RelaxedSolution:
    lam: np.ndarray
    alpha: float
    objective: float


# ---------------------------------------------------------------------------
# reduced frequencies and bounds
# ---------------------------------------------------------------------------


def transmission_times(scn: Scenario, p, b) -> np.ndarray:
    r = np.asarray(shannon_rate(np.asarray(b, float), np.asarray(p, float), scn.h, scn.noise_density))
    with np.errstate(divide="ignore"):
        return scn.d / r


def _device_slack(scn, i, t_tr_i):
    slack = scn.t_max_device - t_tr_i
    if not slack > 0:
        raise InfeasibleError(f"device {i}: transmission time {t_tr_i:.6g}s exceeds the device deadline",
                              constraint="device_deadline", device=i)
    return slack


def reduced_frequencies(scn: Scenario, i: int, lam: float, t_tr_i: float):
    """Smallest (f, g) meeting both deadlines for device ``i`` at ``lam``.

    ``g`` is the device encryption frequency, ``f`` the server share used for
    prediction and adapter update.
    """
    slack = _device_slack(scn, i, t_tr_i)
    dev = scn.devices[i]
    g_bar = float(y1(scn.fit, lam)) * dev.samples * dev.params_per_sample / slack
    y2 = float(_y2(scn, np.full(scn.n, lam))[i])
    f_bar = (dev.adapter_update_cycles + y2) * dev.samples / scn.t_max_server
    return f_bar, g_bar


def lambda_upper_bound(scn: Scenario, i: int, t_tr_i: float) -> float:
    """Largest continuous lambda for which the device deadline holds at ``g_max``."""
    slack = _device_slack(scn, i, t_tr_i)
    dev = scn.devices[i]
    fit = scn.fit
    lam_max = math.sqrt(slack * dev.g_max / (fit.c1 * dev.samples * dev.params_per_sample)) - fit.c2
    if lam_max < scn.lambda_options[0]:
        raise InfeasibleError(f"device {i}: even lambda={scn.lambda_options[0]:g} needs more than g_max",
                              constraint="device_frequency", device=i)
    return lam_max


def build_context(scn: Scenario, p, b) -> Stage1Context:
    """Context for Stage 1 given transmit powers and bandwidths."""
    t_tr = transmission_times(scn, p, b)
    opts = scn.lambda_options
    lo = np.full(scn.n, opts[0])
    hi = np.array([min(opts[-1], lambda_upper_bound(scn, i, t)) for i, t in enumerate(t_tr)])
    return Stage1Context(t_tr, lo, hi)


# ---------------------------------------------------------------------------
# single-variable Stage 1 objective and its derivative
# ---------------------------------------------------------------------------


class _Terms:
    """Per-device coefficients of the single-variable objective.

    E_en(lam)  = k_en  * y1(lam)^3          (y1 = c1 (lam + c2)^2)
    E_cmp(lam) = k_cmp * (A lam + Bc)^3     (A lam + Bc = c_n + y2(lam))
    f_bar(lam) = D (A lam + Bc) / T_S
    """

    def __init__(self, scn: Scenario, ctx: Stage1Context):
        fit = scn.fit
        slack = scn.t_max_device - ctx.t_tr
        if np.any(slack <= 0):
            i = int(np.argmax(slack <= 0))
            raise InfeasibleError(f"device {i}: no time left for encryption",
                                  constraint="device_deadline", device=i)
        self.c1, self.c2 = fit.c1, fit.c2
        ds = scn.D * scn.s
        self.k_en = scn.kappa * ds**3 / slack**2
        self.k_cmp = scn.kappa * scn.D**3 / scn.t_max_server**2
        self.A = fit.c3 * scn.a + fit.c5 * scn.m
        self.Bc = fit.c4 * scn.a + fit.c6 * scn.m + scn.c_other + scn.c_upd
        self.f_slope = scn.D * self.A / scn.t_max_server
        self.f_icpt = scn.D * self.Bc / scn.t_max_server
        self.priv = scn.omega * scn.sigma  # weight on y5
        self.c7, self.c8 = fit.c7, fit.c8
        self.lo, self.hi = ctx.lo, ctx.hi
        self.f_total = scn.f_total

    def per_device(self, lam):
        u = lam + self.c2
        y1v = self.c1 * u * u
        w = self.A * lam + self.Bc
        return self.k_en * y1v**3 + self.k_cmp * w**3 - self.priv * (self.c7 * lam + self.c8)

    def objective(self, lam):
        return math.fsum(self.per_device(np.asarray(lam, float)))

    def fbar(self, lam):
        return self.f_slope * lam + self.f_icpt

    def deriv(self, lam, alpha):
        u = lam + self.c2
        w = self.A * lam + self.Bc
        return (6.0 * self.k_en * self.c1**3 * u**5 + 3.0 * self.k_cmp * self.A * w * w
                - self.priv * self.c7 + alpha * self.f_slope)

    def deriv2(self, lam):
        u = lam + self.c2
        w = self.A * lam + self.Bc
        return 30.0 * self.k_en * self.c1**3 * u**4 + 6.0 * self.k_cmp * self.A**2 * w

    def stationary(self, alpha, lo=None, hi=None):
        """Clamped minimiser of each device's Lagrangian term (vectorised).

        The derivative is increasing (the term is convex), so a safeguarded
        Newton iteration inside the bracket converges monotonically.
        """
        lo = self.lo if lo is None else lo
        hi = self.hi if hi is None else hi
        d_lo = self.deriv(lo, alpha)
        d_hi = self.deriv(hi, alpha)
        out = np.where(d_lo >= 0, lo, hi).astype(float)
        interior = (d_lo < 0) & (d_hi > 0)
        if not np.any(interior):
            return out
        a, b = lo[interior].copy(), hi[interior].copy()
        idx = np.flatnonzero(interior)
        x = 0.5 * (a + b)
        sub = _Sub(self, idx)
        for _ in range(100):
            fx = sub.deriv(x, alpha)
            a = np.where(fx < 0, x, a)
            b = np.where(fx > 0, x, b)
            step = fx / sub.deriv2(x)
            xn = x - step
            bad = ~((xn > a) & (xn < b))
            xn = np.where(bad, 0.5 * (a + b), xn)
            done = np.abs(xn - x) <= 1e-13 * np.abs(x) + 1e-300
            x = xn
            if np.all(done | (b - a <= 4e-16 * np.abs(b))):
                break
        out[idx] = x
        return out


class _Sub:
    """Row subset view of :class:`_Terms` used inside the Newton loop."""

    def __init__(self, t: _Terms, idx):
        self.c1, self.c2 = t.c1, t.c2
        self.k_en, self.k_cmp, self.A, self.Bc = t.k_en[idx], t.k_cmp[idx], t.A[idx], t.Bc[idx]
        self.priv, self.c7, self.f_slope = t.priv[idx], t.c7, t.f_slope[idx]

    deriv = _Terms.deriv
    deriv2 = _Terms.deriv2


def p2_objective(scn: Scenario, ctx: Stage1Context, lam_vec) -> float:
    """Objective of the single-variable Stage 1 problem at ``lam_vec``."""
    return _Terms(scn, ctx).objective(np.asarray(lam_vec, float))


def stationarity_root(scn: Scenario, ctx: Stage1Context, i: int, alpha: float) -> float:
    """Minimiser of device ``i``'s term plus ``alpha * f_bar`` over its bounds."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    t = _Terms(scn, ctx)
    return float(t.stationary(alpha)[i])


# ---------------------------------------------------------------------------
# relaxed problem and branch-and-bound
# ---------------------------------------------------------------------------


def _solve_relaxed(t: _Terms, lo, hi) -> RelaxedSolution:
    f_total = t.f_total
    cap_at_lo = math.fsum(t.fbar(lo))
    if cap_at_lo > f_total * (1 + 1e-12):
        raise InfeasibleError(f"server capacity {f_total:.6g} Hz below the minimum demand {cap_at_lo:.6g} Hz",
                              constraint="server_capacity")

    def excess(alpha):
        return math.fsum(t.fbar(t.stationary(alpha, lo, hi))) - f_total

    lam0 = t.stationary(0.0, lo, hi)
    if math.fsum(t.fbar(lam0)) <= f_total:
        return RelaxedSolution(lam0, 0.0, math.fsum(t.per_device(lam0)))

    alpha_hi = 1.0
    while excess(alpha_hi) > 0:
        alpha_hi *= 2.0
        if alpha_hi > 1e300:
            raise InfeasibleError("capacity multiplier diverged", constraint="server_capacity")
    alpha = brentq(excess, 0.0, alpha_hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    # land on the feasible side of the capacity constraint
    step = max(alpha, 1e-300) * 1e-12
    while excess(alpha) > 0 and alpha < alpha_hi:
        alpha = min(alpha + step, alpha_hi)
        step *= 4
    lam = t.stationary(alpha, lo, hi)
    lam = np.minimum(lam0, lam)
    return RelaxedSolution(lam, float(alpha), math.fsum(t.per_device(lam)))


def solve_relaxed(scn: Scenario, ctx: Stage1Context) -> RelaxedSolution:
    """Continuous relaxation: returns ``(lam_hat, alpha_star, objective)``."""
    t = _Terms(scn, ctx)
    return _solve_relaxed(t, ctx.lo, ctx.hi)


def _option_bounds(scn, ctx):
    """Tighten the root bounds to the option lattice (valid for the integer problem)."""
    opts = np.asarray(scn.lambda_options)
    hi = np.empty(ctx.n)
    for i, h in enumerate(ctx.hi):
        allowed = opts[opts <= h * (1 + 1e-12)]
        if allowed.size == 0:
            raise InfeasibleError(f"device {i}: no lambda option within its upper bound",
                                  constraint="device_frequency", device=i)
        hi[i] = allowed[-1]
    lo = np.array([opts[np.searchsorted(opts, l - 1e-9 * opts[0])] for l in ctx.lo])
    return lo, hi


def branch_and_bound(scn: Scenario, ctx: Stage1Context, return_stats: bool = False):
    """Best-first branch-and-bound over the lambda options.

    Nodes are ordered by relaxed lower bound, ties broken by depth (deeper
    first) and then by branching device index. A node is discarded when its
    bound is not better than the incumbent.
    """
    opts = np.asarray(scn.lambda_options)
    tol = INTEGRALITY_RTOL * opts[0]
    t = _Terms(scn, ctx)
    lo, hi = _option_bounds(scn, ctx)

    root = _solve_relaxed(t, lo, hi)
    counter = itertools.count()
    heap = [BnbNode((root.objective, 0, -1, next(counter)), lo, hi, root.lam, root.objective, 0)]
    best_lam, best_obj = None, math.inf
    explored = 0
    trace = []

    while heap:
        node = heapq.heappop(heap)
        if node.lower_bound >= best_obj:
            continue
        explored += 1
        lam = node.relaxed_solution
        nearest = opts[np.abs(lam[:, None] - opts[None, :]).argmin(axis=1)]
        dist = np.abs(lam - nearest)
        if np.all(dist <= tol):
            cap = math.fsum(t.fbar(nearest))
            if cap <= scn.f_total * (1 + 1e-9):
                obj = t.objective(nearest)
                if obj < best_obj:
                    best_obj, best_lam = obj, nearest
            trace.append(best_obj)
            continue

        # most fractional coordinate, normalised by the gap between its neighbours
        below = np.array([opts[opts <= x + tol][-1] for x in lam])
        above = np.array([opts[opts >= x - tol][0] for x in lam])
        gap = np.where(above > below, above - below, 1.0)
        frac = np.where(dist > tol, np.minimum(lam - below, above - lam) / gap, -1.0)
        k = int(np.argmax(frac))

        for child_lo, child_hi in (
            (node.lo, np.where(np.arange(len(lam)) == k, below[k], node.hi)),
            (np.where(np.arange(len(lam)) == k, above[k], node.lo), node.hi),
        ):
            if np.any(child_lo > child_hi):
                continue
            try:
                rel = _solve_relaxed(t, child_lo, child_hi)
            except InfeasibleError:
                continue
            if rel.objective < best_obj:
                heapq.heappush(heap, BnbNode((rel.objective, -(node.depth + 1), k, next(counter)),
                                             child_lo, child_hi, rel.lam, rel.objective, node.depth + 1))
        trace.append(best_obj)

    if best_lam is None:
        raise InfeasibleError("no lambda assignment satisfies the server capacity",
                              constraint="server_capacity")
    if return_stats:
        return BnbResult(best_lam, best_obj, explored, trace)
    return best_lam


def recover_capacities(scn: Scenario, ctx: Stage1Context, lam_star):
    """Deadline-exhausting ``(f, g)`` at the chosen degrees."""
    lam_star = np.asarray(lam_star, float)
    slack = scn.t_max_device - ctx.t_tr
    g = y1(scn.fit, lam_star) * scn.D * scn.s / slack
    f = (scn.c_upd + _y2(scn, lam_star)) * scn.D / scn.t_max_server
    return f, g


@dataclass
class Stage1Result:
    lam: np.ndarray
    f: np.ndarray
    g: np.ndarray
    objective: float
    nodes_explored: int


def solve_stage1(scn: Scenario, p, b) -> Stage1Result:
    ctx = build_context(scn, p, b)
    res = branch_and_bound(scn, ctx, return_stats=True)
    f, g = recover_capacities(scn, ctx, res.lam)
    return Stage1Result(res.lam, f, g, res.objective, res.nodes_explored)


def privacy_level(scn: Scenario, lam) -> float:
    return math.fsum(scn.sigma * y5(scn.fit, lam))
