"""Alternating optimisation of the two variable blocks.

Each outer iteration runs Stage 1 (``lam, f, g`` for fixed ``p, B``), then
Stage 2 (``p, B`` for fixed ``lam, f, g``), then a per-device deadline
rebalance. Both stages exhaust the shared device deadline
``T_en + T_tr <= T_D``, so without the rebalance the encryption/upload split
set by the initial point is never revisited. The rebalance moves that split
for each device (bandwidth fixed) to the point minimising encryption plus
upload energy; it is a convex 1-D problem per device and only lowers the
objective. ``SolveOptions(rebalance=False)`` gives the plain two-stage loop.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import stage1, stage2
from .errors import InfeasibleError
from .model import LN2, Allocation, Scenario, objective_parts, shannon_rate, y1


@dataclass(frozen=True)
class SolveOptions:
    max_outer: int = 50  # J
    max_inner: int = 20  # I, fractional-programming iterations per Stage 2 call
    eps: float = 1e-4  # relative max-norm change between outer iterations
    seed: int = 0  # only used when a scenario is generated on the fly
    rebalance: bool = True

    def __post_init__(self):
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("max_outer and max_inner must be >= 1")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")


@dataclass(frozen=True)
class IterationRecord:
    objective: float
    energy: float
    privacy: float
    allocation: Allocation
    timings: dict  # seconds spent in each stage
    change: float  # convergence metric against the previous iteration


@dataclass
class SolveTrace:
    records: list = field(default_factory=list)
    converged: bool = False

    @property
    def objectives(self):
        return [r.objective for r in self.records]

    @property
    def iterations(self):
        return len(self.records)

    def __len__(self):
        return len(self.records)


def convergence_metric(prev: Allocation, cur: Allocation) -> float:
    """Largest relative change ``|x - x'| / max(|x'|, 1)`` over all variables."""
    a, b = prev.vector(), cur.vector()
    if a.shape != b.shape:
        raise ValueError(f"allocations differ in size: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(b - a) / np.maximum(np.abs(a), 1.0)))


def initial_point(scn: Scenario):
    """``(p_max / 2, b_total / N)``."""
    return scn.p_max / 2.0, np.full(scn.n, scn.b_total / scn.n)


# ---------------------------------------------------------------------------
# deadline rebalance
# ---------------------------------------------------------------------------


def _device_energy(k_en, n0b_h, d_ln2_b, t_dev, t):
    """Encryption plus upload energy when the upload takes ``t`` seconds."""
    return k_en / (t_dev - t) ** 2 + n0b_h * t * math.expm1(d_ln2_b / t)


def rebalance_split(scn: Scenario, alloc: Allocation) -> Allocation:
    """Re-split each device deadline between encryption and upload.

    With ``lam`` and ``B_n`` fixed, choosing the upload time ``t`` fixes both
    the power (the rate must be ``d / t``) and the encryption frequency
    (which must finish in ``T_D - t``). The resulting energy is convex in
    ``t`` and is minimised over the interval allowed by ``p_max`` and
    ``g_max``. A device is left unchanged unless its energy strictly drops.
    """
    t_dev = scn.t_max_device
    cycles = y1(scn.fit, alloc.lam) * scn.D * scn.s
    p_new, g_new = alloc.p.copy(), alloc.g.copy()
    for i in range(scn.n):
        b = alloc.b[i]
        n0b_h = scn.noise_density * b / scn.h[i]
        d_ln2_b = scn.d[i] * LN2 / b
        k_en = scn.kappa * cycles[i] ** 3
        t_lo = scn.d[i] / shannon_rate(b, scn.p_max[i], scn.h[i], scn.noise_density)
        t_hi = t_dev - cycles[i] / scn.g_max[i]
        if not t_lo < t_hi:
            continue
        rate = shannon_rate(b, alloc.p[i], scn.h[i], scn.noise_density)
        current = scn.kappa * cycles[i] * alloc.g[i] ** 2 + alloc.p[i] * scn.d[i] / rate
        res = minimize_scalar(lambda t: _device_energy(k_en, n0b_h, d_ln2_b, t_dev, t),
                              bounds=(t_lo, t_hi), method="bounded",
                              options={"xatol": 1e-10 * t_dev, "maxiter": 500})
        t = float(res.x)
        p = min(math.expm1(d_ln2_b / t) * n0b_h, scn.p_max[i])
        g = min(cycles[i] / (t_dev - t), scn.g_max[i])
        # evaluate exactly as the cost model does before accepting
        r = shannon_rate(b, p, scn.h[i], scn.noise_density)
        t_tr = scn.d[i] / r
        if cycles[i] / g + t_tr > t_dev * (1 + 1e-12):
            continue
        energy = scn.kappa * cycles[i] * g * g + p * t_tr
        if energy < current:
            p_new[i], g_new[i] = p, g
    return alloc.replace(p=p_new, g=g_new)


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------


def _record(scn, alloc, timings, change):
    parts = objective_parts(scn, alloc)
    return IterationRecord(parts.objective, parts.energy, parts.privacy, alloc, timings, change)


def solve(scn: Scenario, opts: SolveOptions | None = None):
    """Run the alternating algorithm; returns ``(Allocation, SolveTrace)``.

    Raises :class:`InfeasibleError` when the scenario is infeasible at the
    initial point or Stage 1 finds no valid degree assignment.
    """
    opts = opts or SolveOptions()
    p, b = initial_point(scn)
    trace = SolveTrace()
    prev = None
    beta = None  # bandwidth price from the last Stage 2 call, seeds the next bracket

    for _ in range(opts.max_outer):
        timings = {}
        t0 = time.perf_counter()
        s1 = stage1.solve_stage1(scn, p, b)
        timings["stage1"] = time.perf_counter() - t0
        alloc = Allocation(f=s1.f, g=s1.g, p=p, b=b, lam=s1.lam)
        best = objective_parts(scn, alloc).objective
        # Stage 1 is exact for fixed (p, B), so the previous point can only
        # win by round-off; keeping it makes the trace exactly non-increasing
        if prev is not None and trace.records[-1].objective < best:
            alloc, best = prev, trace.records[-1].objective

        t0 = time.perf_counter()
        t_en = y1(scn.fit, alloc.lam) * scn.D * scn.s / alloc.g
        fp = stage2.fractional_programming(scn, t_en, p, b, opts.max_inner, opts.eps, beta)
        beta = fp.last.beta
        cand = alloc.replace(p=fp.p, b=fp.b)
        obj = objective_parts(scn, cand).objective
        # the transform is monotone, so this only guards against round-off
        if obj <= best:
            alloc, best = cand, obj
        timings["stage2"] = time.perf_counter() - t0

        if opts.rebalance:
            t0 = time.perf_counter()
            cand = rebalance_split(scn, alloc)
            obj = objective_parts(scn, cand).objective
            if obj <= best:
                alloc, best = cand, obj
            timings["rebalance"] = time.perf_counter() - t0

        change = math.inf if prev is None else convergence_metric(prev, alloc)
        trace.records.append(_record(scn, alloc, timings, change))
        p, b = alloc.p, alloc.b
        prev = alloc
        if change <= opts.eps:
            trace.converged = True
            break

    if not trace.records:
        raise InfeasibleError("no iterations were run")
    return trace.records[-1].allocation, trace
