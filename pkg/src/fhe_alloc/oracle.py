"""Brute-force reference solvers and the benchmark allocators.

Everything here is written to be easy to audit rather than fast. The
vectorised evaluator re-derives the cost model from scratch (it does not
call into :mod:`fhe_alloc.model`), so agreement between the two is a real
cross-check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import stage1, stage2
from .errors import InfeasibleError, SearchSpaceTooLarge
from .model import Allocation, Scenario, check_feasibility, total_objective

MAX_EVALUATIONS = 10**8
AXES = ("p", "b", "f", "g")
P_FLOOR = 1e-6  # lower end of the power axis, as a fraction of p_max


@dataclass(frozen=True)
class GridSpec:
    points_per_axis: int = 50
    axes: tuple = ("p", "b")
    lambda_mode: str = "enumerate"

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if self.points_per_axis < 2:
            raise ValueError("points_per_axis must be >= 2")
        bad = set(self.axes) - set(AXES)
        if bad or len(set(self.axes)) != len(self.axes):
            raise ValueError(f"axes must be distinct members of {AXES}")
        if self.lambda_mode != "enumerate":
            raise ValueError("only lambda_mode='enumerate' is supported")


# ---------------------------------------------------------------------------
# independent vectorised evaluator
# ---------------------------------------------------------------------------


def _device_terms(scn: Scenario, i, lam, f, g, p, b):
    """Per-device objective term and deadline feasibility (broadcasting).

    Returns ``(value, ok)`` where ``value`` is energy minus the weighted
    privacy level and ``ok`` marks points meeting both deadlines.
    """
    dev, fit = scn.devices[i], scn.fit
    y1v = fit.c1 * (lam + fit.c2) ** 2
    y3v, y4v = fit.c3 * lam + fit.c4, fit.c5 * lam + fit.c6
    enc = y1v * dev.samples * dev.params_per_sample
    srv = (y3v * dev.additions_per_sample + y4v * dev.multiplications_per_sample
           + dev.other_cycles + dev.adapter_update_cycles) * dev.samples
    snr = p * dev.channel_gain / (scn.noise_density * b)
    rate = b * np.log2(1.0 + snr)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_tr = dev.tx_data_bits / rate
        t_en = enc / g
        t_cmp = srv / f
    energy = scn.kappa * enc * g**2 + p * t_tr + scn.kappa * srv * f**2
    privacy = dev.privacy_weight * (fit.c7 * lam + fit.c8)
    tol = 1e-9
    ok = ((t_en + t_tr <= scn.t_max_device * (1 + tol)) & (t_cmp <= scn.t_max_server * (1 + tol))
          & (g <= dev.g_max * (1 + tol)) & (p <= dev.p_max * (1 + tol)) & (rate > 0))
    return energy - scn.omega * privacy, ok


def evaluate(scn: Scenario, alloc: Allocation) -> float:
    """Objective of ``alloc`` computed by the oracle's own evaluator."""
    vals = [_device_terms(scn, i, alloc.lam[i], alloc.f[i], alloc.g[i], alloc.p[i], alloc.b[i])[0]
            for i in range(scn.n)]
    return math.fsum(float(v) for v in vals)


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------


def axis_values(scn: Scenario, i: int, axis: str, points: int) -> np.ndarray:
    """Grid for one variable of device ``i``.

    Power is log-spaced on ``[1e-6 p_max, p_max]``; bandwidth, server share
    and device frequency are linear on ``(0, cap]`` (zero excluded).
    """
    if axis == "p":
        pm = scn.p_max[i]
        return np.geomspace(pm * P_FLOOR, pm, points)
    cap = {"b": scn.b_total, "f": scn.f_total, "g": scn.g_max[i]}[axis]
    return np.linspace(cap / points, cap, points)


def search_size(scn: Scenario, grid: GridSpec) -> int:
    return len(scn.lambda_options) ** scn.n * grid.points_per_axis ** (len(grid.axes) * scn.n)


def grid_search(scn: Scenario, grid: GridSpec):
    """Best feasible point of the grid; returns ``(Allocation, value)``.

    Variables not on the grid are set as follows: ``f`` and ``g`` to the
    smallest value meeting their deadline (``g`` given the transmission
    time of the grid point), ``p`` to ``p_max / 2`` and ``B`` to
    ``b_total / N``. The objective is a sum of per-device terms linked only
    through the ``sum f`` and ``sum B`` budgets, so each device's table is
    minimised exactly over the variables that do not enter a budget, and
    the Cartesian product is then enumerated over (lam, B, f) per device.
    This visits the same optimum as a flat loop over every grid point.
    """
    size = search_size(scn, grid)
    if size > MAX_EVALUATIONS:
        raise SearchSpaceTooLarge(f"{size:.3g} grid evaluations exceed the {MAX_EVALUATIONS:.0e} limit")
    k = grid.points_per_axis
    opts = np.asarray(scn.lambda_options)
    tables = []  # per device: list of (value, lam, f, g, p, b)
    for i in range(scn.n):
        dev = scn.devices[i]
        ax = {a: axis_values(scn, i, a, k) for a in grid.axes}
        p = ax.get("p", np.array([scn.p_max[i] / 2]))
        b = ax.get("b", np.array([scn.b_total / scn.n]))
        P, B = np.meshgrid(p, b, indexing="ij")  # (np, nb)
        rate = B * np.log2(1.0 + P * dev.channel_gain / (scn.noise_density * B))
        t_tr = dev.tx_data_bits / rate
        rows = []
        for lam in opts:
            fit = scn.fit
            enc = fit.c1 * (lam + fit.c2) ** 2 * dev.samples * dev.params_per_sample
            srv = ((fit.c3 * lam + fit.c4) * dev.additions_per_sample
                   + (fit.c5 * lam + fit.c6) * dev.multiplications_per_sample
                   + dev.other_cycles + dev.adapter_update_cycles) * dev.samples
            f_vals = ax["f"] if "f" in ax else np.array([srv / scn.t_max_server])
            if "g" in ax:
                g_vals = ax["g"][None, None, :]
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    slack = scn.t_max_device - t_tr
                    g_vals = np.where(slack > 0, enc / slack, np.inf)[:, :, None]
            Pg, Bg = P[:, :, None], B[:, :, None]
            for f in f_vals:
                val, ok = _device_terms(scn, i, lam, f, g_vals, Pg, Bg)
                val = np.where(ok, val, np.inf)
                val = np.broadcast_to(val, np.broadcast_shapes(val.shape, (len(p), len(b), 1)))
                # minimise over p and g for each bandwidth value
                flat = val.transpose(1, 0, 2).reshape(len(b), -1)
                j = flat.argmin(axis=1)
                best = flat[np.arange(len(b)), j]
                for bi in range(len(b)):
                    if np.isfinite(best[bi]):
                        pi, gi = np.unravel_index(j[bi], (len(p), val.shape[2]))
                        g_sel = float(np.broadcast_to(g_vals, val.shape)[pi, bi, gi])
                        rows.append((float(best[bi]), float(lam), float(f), g_sel, float(p[pi]), float(b[bi])))
        if not rows:
            raise InfeasibleError(f"device {i}: no feasible grid point", device=i)
        tables.append(_prune(rows))

    best_val, best_combo = math.inf, None
    for combo in itertools.product(*tables):
        if sum(r[5] for r in combo) > scn.b_total * (1 + 1e-12):
            continue
        if sum(r[2] for r in combo) > scn.f_total * (1 + 1e-12):
            continue
        v = math.fsum(r[0] for r in combo)
        if v < best_val:
            best_val, best_combo = v, combo
    if best_combo is None:
        raise InfeasibleError("no grid point satisfies the shared budgets")
    cols = list(zip(*best_combo))
    alloc = Allocation(f=cols[2], g=cols[3], p=cols[4], b=cols[5], lam=cols[1])
    if not check_feasibility(scn, alloc, rtol=1e-9).feasible:
        raise AssertionError("grid search produced an infeasible allocation")
    return alloc, total_objective(scn, alloc)


def _prune(rows):
    """Drop rows no better in value and using at least as much B and f.

    Such a row can always be swapped for the dominating one without
    breaking a budget, so it can never be the unique optimum.
    """
    rows = sorted(rows, key=lambda r: (r[0], r[5], r[2]))
    kept, kb, kf = [], np.empty(len(rows)), np.empty(len(rows))
    for r in rows:
        m = len(kept)
        if m and np.any((kb[:m] <= r[5]) & (kf[:m] <= r[2])):
            continue
        kb[m], kf[m] = r[5], r[2]
        kept.append(r)
    return kept


# ---------------------------------------------------------------------------
# exhaustive lambda enumeration and Stage 2 grid
# ---------------------------------------------------------------------------


def enumerate_lambdas(scn: Scenario, ctx: stage1.Stage1Context):
    """Exhaustive minimiser of the Stage 1 objective over all degree tuples.

    Uses the model's own (f, g) recovery and energy formulas, not the
    branch-and-bound's derivative machinery. Returns ``(lam, value)``.
    """
    opts = np.asarray(scn.lambda_options)
    fit = scn.fit
    per_dev = []
    for i in range(scn.n):
        dev = scn.devices[i]
        choices = []
        for lam in opts:
            if lam > ctx.hi[i] * (1 + 1e-12) or lam < ctx.lo[i] * (1 - 1e-12):
                continue
            enc = fit.c1 * (lam + fit.c2) ** 2 * dev.samples * dev.params_per_sample
            srv = ((fit.c3 * lam + fit.c4) * dev.additions_per_sample
                   + (fit.c5 * lam + fit.c6) * dev.multiplications_per_sample
                   + dev.other_cycles + dev.adapter_update_cycles) * dev.samples
            g = enc / (scn.t_max_device - ctx.t_tr[i])
            f = srv / scn.t_max_server
            if g > dev.g_max * (1 + 1e-12):
                continue
            value = (scn.kappa * enc * g * g + scn.kappa * srv * f * f
                     - scn.omega * dev.privacy_weight * (fit.c7 * lam + fit.c8))
            choices.append((value, float(lam), f))
        if not choices:
            raise InfeasibleError(f"device {i}: no admissible degree", device=i)
        per_dev.append(choices)
    best, arg = math.inf, None
    for combo in itertools.product(*per_dev):
        if math.fsum(c[2] for c in combo) > scn.f_total * (1 + 1e-9):
            continue
        v = math.fsum(c[0] for c in combo)
        if v < best:
            best, arg = v, combo
    if arg is None:
        raise InfeasibleError("no degree tuple fits the server capacity", constraint="server_capacity")
    return np.array([c[1] for c in arg]), best


def p5_grid_search(scn: Scenario, ctx: stage2.Stage2Context, points: int = 200):
    """Best feasible value of the transformed Stage 2 problem on a grid.

    Each device gets ``points`` log-spaced powers and ``points`` linear
    bandwidths; points violating ``p <= p_max`` or the minimum rate are
    dropped. Returns ``(p, b, value)``.
    """
    n = scn.n
    per_dev = []
    for i in range(n):
        p = axis_values(scn, i, "p", points)[:, None]
        b = axis_values(scn, i, "b", points)[None, :]
        rate = b * np.log2(1.0 + p * scn.h[i] / (scn.noise_density * b))
        z = ctx.z[i]
        val = (p * scn.d[i]) ** 2 * z + 1.0 / (4.0 * rate**2 * z)
        val = np.where(rate >= ctx.r_min[i], val, np.inf)
        j = val.argmin(axis=0)  # best power for each bandwidth
        per_dev.append((val[j, np.arange(points)], p[j, 0], b[0]))
    if n == 1:
        v, p, b = per_dev[0]
        k = int(np.argmin(v))
        if not np.isfinite(v[k]):
            raise InfeasibleError("no feasible grid point")
        return np.array([p[k]]), np.array([b[k]]), float(v[k])
    best, arg = math.inf, None
    for idx in itertools.product(range(points), repeat=n):
        if sum(per_dev[i][2][k] for i, k in enumerate(idx)) > scn.b_total * (1 + 1e-12):
            continue
        v = sum(per_dev[i][0][k] for i, k in enumerate(idx))
        if v < best:
            best, arg = v, idx
    if arg is None:
        raise InfeasibleError("no feasible grid point")
    p = np.array([per_dev[i][1][k] for i, k in enumerate(arg)])
    b = np.array([per_dev[i][2][k] for i, k in enumerate(arg)])
    return p, b, float(best)


# ---------------------------------------------------------------------------
# benchmark allocators
# ---------------------------------------------------------------------------


def average_allocation(scn: Scenario) -> Allocation:
    """Even split of the shared budgets, half of each device cap, smallest degree."""
    n = scn.n
    return Allocation(
        f=np.full(n, scn.f_total / n), g=scn.g_max / 2.0, p=scn.p_max / 2.0,
        b=np.full(n, scn.b_total / n), lam=np.full(n, scn.lambda_options[0]),
    )


def optimize_compute_only(scn: Scenario) -> Allocation:
    """Radio fixed at the midpoints; deadline-exhausting ``f`` and ``g``."""
    base = average_allocation(scn)
    ctx = stage1.build_context(scn, base.p, base.b)
    f, g = stage1.recover_capacities(scn, ctx, base.lam)
    return base.replace(f=f, g=g)


def optimize_radio_only(scn: Scenario, max_inner: int = 200, eps: float = 1e-9) -> Allocation:
    """Compute fixed at the even split; ``p`` and ``B`` from Stage 2."""
    base = average_allocation(scn)
    t_en = stage1.y1(scn.fit, base.lam) * scn.D * scn.s / base.g
    fp = stage2.fractional_programming(scn, t_en, base.p, base.b, max_inner, eps)
    return base.replace(p=fp.p, b=fp.b)
