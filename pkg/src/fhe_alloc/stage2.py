"""Stage 2: transmit power and FDMA bandwidth for fixed (f, g, lam).

Minimises the transmission energy ``sum p d / r`` subject to per-device
minimum rates, power caps and the total bandwidth, using the quadratic
transform of the sum-of-ratios objective. For fixed auxiliaries ``z`` the
transformed problem is convex and is solved through its KKT system:
a per-device response to the bandwidth price ``beta`` (with rate multiplier
``gamma`` and the power cap) and an outer root-find on ``beta`` so that the
bandwidth budget is used exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import InfeasibleError
from .model import LN2, Scenario, shannon_rate

ROOT_RTOL = 1e-12
BETA_RTOL = 1e-9
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class Stage2Context:
    t_en: np.ndarray
    z: np.ndarray
    r_min: np.ndarray

    def with_z(self, z):
        return Stage2Context(self.t_en, np.asarray(z, float), self.r_min)


@dataclass
class Stage2Solution:
    p: np.ndarray
    b: np.ndarray
    beta: float
    gamma: np.ndarray
    mu: np.ndarray  # multipliers of the power caps
    objective: float  # surrogate objective at (p, b) for the context's z


@dataclass
class FPResult:
    p: np.ndarray
    b: np.ndarray
    iterations: int
    trace: list  # transmission energy after each iteration
    z: np.ndarray
    last: Stage2Solution | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# small pieces
# ---------------------------------------------------------------------------


def min_rate(scn: Scenario, i: int, t_en_i: float) -> float:
    """Rate needed to finish the upload before the deadline."""
    deadline = scn.t_max_device if scn.rate_deadline == "device" else scn.t_max_server
    left = deadline - t_en_i
    if not left > 0:
        raise InfeasibleError(f"device {i}: encryption uses the whole deadline",
                              constraint="device_deadline", device=i)
    return scn.devices[i].tx_data_bits / left


def build_context(scn: Scenario, t_en, p0, b0) -> Stage2Context:
    t_en = np.asarray(t_en, float)
    r_min = np.array([min_rate(scn, i, t) for i, t in enumerate(t_en)])
    return Stage2Context(t_en, update_auxiliary(scn, p0, b0), r_min)


def update_auxiliary(scn: Scenario, p, b):
    """``z = 1 / (2 p d r)``, the minimiser of the surrogate in ``z``."""
    p = np.asarray(p, float)
    r = np.asarray(shannon_rate(np.asarray(b, float), p, scn.h, scn.noise_density))
    if np.any(p * r <= 0):
        raise InfeasibleError("zero transmit power or rate", constraint="rate")
    return 1.0 / (2.0 * p * scn.d * r)


def transmission_energy(scn: Scenario, p, b) -> float:
    r = shannon_rate(np.asarray(b, float), np.asarray(p, float), scn.h, scn.noise_density)
    return math.fsum(np.asarray(p) * scn.d / r)


def surrogate_objective(scn: Scenario, ctx: Stage2Context, p_vec, b_vec) -> float:
    p = np.asarray(p_vec, float)
    r = np.asarray(shannon_rate(np.asarray(b_vec, float), p, scn.h, scn.noise_density))
    z = ctx.z
    return math.fsum((p * scn.d) ** 2 * z + 1.0 / (4.0 * r * r * z))


def _log1p_minus(s):
    """``log1p(s) - s / (1 + s)``, accurate for small ``s``."""
    if s < 1e-3:
        return s * s * (0.5 - s * (2.0 / 3.0 - s * (0.75 - s * 0.8)))
    return math.log1p(s) - s / (1.0 + s)


def _rate(b, p, a):
    return b * math.log1p(a * p / b) / LN2


# ---------------------------------------------------------------------------
# per-device KKT response
# ---------------------------------------------------------------------------


class _Device:
    """KKT response of one device to the bandwidth price ``beta``.

    With ``s = a p / B`` (SNR, ``a = h / N0``) the two stationarity
    conditions at ``gamma = 0`` give ``B`` and ``beta`` in closed form as
    functions of ``s``; ``beta(s)`` is increasing, so one bracketed root
    gives the unconstrained response.
    """

    def __init__(self, d, z, a, p_max, r_min):
        self.d, self.z, self.a, self.p_max, self.r_min = d, z, a, p_max, r_min
        self.log_k = math.log(a * a / (4.0 * d * d * z * z * LN2))
        # rate achievable at full power with unlimited bandwidth
        self.r_sup = a * p_max / LN2
        if not r_min < self.r_sup * (1 - 1e-12):
            raise InfeasibleError("minimum rate unreachable at full power", constraint="rate")
        self.b_req = self._bandwidth_for_rate(p_max, r_min)
        self._last_case = None

    def _bandwidth_for_rate(self, p, r):
        a = self.a

        def g(logb):
            return _rate(math.exp(logb), p, a) - r

        lo, hi = math.log(r / 64.0), math.log(r)
        while g(lo) > 0:
            lo -= 2.0
        while g(hi) < 0:
            hi += 2.0
        return math.exp(brentq(g, lo, hi, xtol=1e-15, rtol=ROOT_RTOL))

    # gamma = 0, power cap inactive ----------------------------------------
    def _b_of_s(self, s):
        L = math.log1p(s) / LN2
        return math.exp(0.25 * (self.log_k - math.log(s) - math.log1p(s) - 3.0 * math.log(L)))

    def _log_beta_of_s(self, s):
        L = math.log1p(s) / LN2
        b = self._b_of_s(s)
        q = _log1p_minus(s) / LN2
        return math.log(q) - math.log(2.0 * self.z) - 3.0 * math.log(b * L)

    def _unconstrained(self, beta):
        target = math.log(beta)

        def g(logs):
            return self._log_beta_of_s(math.exp(logs)) - target

        lo, hi = -20.0, 5.0
        while g(lo) > 0:
            lo -= 10.0
        while g(hi) < 0:
            hi += 5.0
        s = math.exp(brentq(g, lo, hi, xtol=1e-14, rtol=ROOT_RTOL))
        b = self._b_of_s(s)
        return s * b / self.a, b

    # gamma = 0, p = p_max ----------------------------------------------------
    def _capped(self, beta):
        a, p, z = self.a, self.p_max, self.z

        def g(logb):
            b = math.exp(logb)
            s = a * p / b
            r = b * math.log1p(s) / LN2
            q = _log1p_minus(s) / LN2
            return math.log(q) - math.log(2.0 * z * r**3) - math.log(beta)

        lo = hi = math.log(self.b_req)
        while g(lo) < 0:
            lo -= 2.0
        while g(hi) > 0:
            hi += 2.0
        return p, math.exp(brentq(g, lo, hi, xtol=1e-14, rtol=ROOT_RTOL))

    # rate constraint active -------------------------------------------------
    def _power_for(self, b):
        return math.expm1(self.r_min * LN2 / b) * b / self.a

    def _rate_bound(self, beta):
        d, z, a = self.d, self.z, self.a
        c = self.r_min * LN2

        def dF(b):
            x = c / b
            p = math.expm1(x) * b / a
            dp = (math.expm1(x) - x * math.exp(x)) / a
            return 2.0 * d * d * z * p * dp + beta

        b_lo = self.b_req
        if dF(b_lo) >= 0:
            return self.p_max, b_lo
        b_hi = 2.0 * b_lo
        while dF(b_hi) < 0:
            b_hi *= 2.0
        b = brentq(dF, b_lo, b_hi, xtol=1e-300, rtol=ROOT_RTOL)
        return min(self._power_for(b), self.p_max), b

    def respond(self, beta):
        """``(p, B, gamma, mu, case)`` for bandwidth price ``beta``.

        The per-device problem is convex, so any point meeting its KKT
        conditions is the answer. The rate-bound case is tried first when it
        was the last case seen (the common situation inside the joint loop)
        and kept if its multipliers come out non-negative.
        """
        if self._last_case == "rate":
            p, b = self._rate_bound(beta)
            gamma, mu = self._raw_multipliers(p, b, beta, "rate")
            if gamma >= 0 and mu >= 0:
                return p, b, gamma, mu, "rate"
        p, b = self._unconstrained(beta)
        case = "free"
        if p > self.p_max:
            p, b = self._capped(beta)
            case = "capped"
        if _rate(b, p, self.a) < self.r_min:
            p, b = self._rate_bound(beta)
            case = "rate"
        self._last_case = case
        gamma, mu = self._raw_multipliers(p, b, beta, case)
        return p, b, max(gamma, 0.0), max(mu, 0.0), case

    def _raw_multipliers(self, p, b, beta, case):
        s = self.a * p / b
        r = self.r_min if case == "rate" else _rate(b, p, self.a)
        w = 1.0 / (2.0 * r**3 * self.z)
        q = _log1p_minus(s) / LN2
        # rate multiplier from B-stationarity, power-cap multiplier from p-stationarity
        gamma = beta / q - w if case == "rate" else 0.0
        dr_dp = self.a / ((1.0 + s) * LN2)
        mu = (w + gamma) * dr_dp - 2.0 * p * self.d**2 * self.z
        if p < self.p_max * (1 - 1e-12):
            mu = 0.0
        return gamma, mu


def solve_power_bandwidth(scn: Scenario, ctx: Stage2Context, beta_hint: float | None = None) -> Stage2Solution:
    """Global solution of the transformed problem for fixed ``z``.

    ``beta_hint`` (e.g. the price from the previous iteration) only seeds
    the bracket for the bandwidth price; the result does not depend on it.
    """
    a = scn.h / scn.noise_density
    devs = []
    for i in range(scn.n):
        try:
            devs.append(_Device(scn.d[i], ctx.z[i], a[i], scn.p_max[i], ctx.r_min[i]))
        except InfeasibleError as exc:
            raise InfeasibleError(f"device {i}: {exc}", constraint="rate", device=i) from None
    b_total = scn.b_total
    if math.fsum(dv.b_req for dv in devs) > b_total:
        raise InfeasibleError("bandwidth too small to meet every minimum rate at full power",
                              constraint="bandwidth")

    def total_b(log_beta):
        beta = math.exp(log_beta)
        return math.fsum(dv.respond(beta)[1] for dv in devs)

    # bracket on log(beta): total bandwidth is decreasing in beta
    if beta_hint is not None and beta_hint > 0:
        lo, width = math.log(beta_hint) - 0.5, 1.0
    else:
        lo, width = math.log(1e-12), 10.0
    while total_b(lo) < b_total:
        lo -= width
        width *= 2.0
    hi = lo + width
    while total_b(hi) > b_total:
        lo, hi = hi, hi + width
        width *= 2.0
    log_beta = brentq(lambda x: total_b(x) - b_total, lo, hi, xtol=1e-15, rtol=4 * _EPS, maxiter=500)
    beta = math.exp(log_beta)
    resp = [dv.respond(beta) for dv in devs]
    p = np.array([r[0] for r in resp])
    b = np.array([r[1] for r in resp])
    # remove the residual mismatch by rescaling only when it is within tolerance
    excess = b.sum() - b_total
    if excess > 0:
        if excess > BETA_RTOL * b_total:
            raise RuntimeError(f"bandwidth root-find failed: excess {excess:g} Hz")
        b = b * (b_total / b.sum())
        p = np.array([min(dv._power_for(bb), dv.p_max) if r[4] == "rate" else r[0]
                      for dv, bb, r in zip(devs, b, resp)])
    gamma = np.array([r[2] for r in resp])
    mu = np.array([r[3] for r in resp])
    return Stage2Solution(p, b, beta, gamma, mu, surrogate_objective(scn, ctx, p, b))


def fractional_programming(scn: Scenario, t_en, init_p, init_b, max_iter: int = 20,
                           eps: float = 1e-9, beta_hint: float | None = None) -> FPResult:
    """Alternate the transformed-problem solve and the auxiliary update.

    Stops after ``max_iter`` iterations or when the relative max-norm change
    of ``z`` is at most ``eps``.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    ctx = build_context(scn, t_en, init_p, init_b)
    z = ctx.z
    p, b = np.asarray(init_p, float), np.asarray(init_b, float)
    trace = []
    sol = None
    it = 0
    for it in range(1, max_iter + 1):
        sol = solve_power_bandwidth(scn, ctx.with_z(z), beta_hint)
        beta_hint = sol.beta
        p, b = sol.p, sol.b
        z_new = update_auxiliary(scn, p, b)
        trace.append(transmission_energy(scn, p, b))
        change = float(np.max(np.abs(z_new - z) / np.abs(z)))
        z = z_new
        if change <= eps:
            break
    return FPResult(p, b, it, trace, z, sol)


def kkt_residuals(scn: Scenario, ctx: Stage2Context, sol: Stage2Solution, rel_step: float = 1e-6):
    """Finite-difference KKT check of a Stage 2 solution.

    Returns ``(stationarity, slackness)``: the largest relative stationarity
    residual over all ``p_n`` and ``B_n`` (central differences of the
    Lagrangian, normalised by the magnitude of its terms) and the largest
    complementary-slackness product normalised by the objective.
    """
    n0, h, d, z = scn.noise_density, scn.h, scn.d, ctx.z
    p, b = sol.p, sol.b

    def parts(pn, bn, i):
        # the two surrogate pieces are differentiated separately so that an
        # interior optimum (where they cancel) is not normalised by itself
        r = _rate(bn, pn, h[i] / n0)
        return (pn * d[i]) ** 2 * z[i], 1.0 / (4.0 * r * r * z[i]), r

    worst = 0.0
    for i in range(scn.n):
        for var in ("p", "b"):
            x = p[i] if var == "p" else b[i]
            step = rel_step * x
            hi = parts(p[i] + step, b[i], i) if var == "p" else parts(p[i], b[i] + step, i)
            lo = parts(p[i] - step, b[i], i) if var == "p" else parts(p[i], b[i] - step, i)
            d_pow = (hi[0] - lo[0]) / (2 * step)
            d_inv = (hi[1] - lo[1]) / (2 * step)
            d_rate = (hi[2] - lo[2]) / (2 * step)
            terms = [d_pow, d_inv, -sol.gamma[i] * d_rate]
            if var == "p":
                terms.append(sol.mu[i])
            else:
                terms.append(sol.beta)
            resid = abs(math.fsum(terms)) / max(sum(abs(t) for t in terms), 1e-300)
            worst = max(worst, resid)
    r = np.asarray(shannon_rate(b, p, h, n0))
    scale = max(abs(sol.objective), 1e-300)
    slack = [abs(sol.beta * (b.sum() - scn.b_total)) / scale]
    slack += list(np.abs(sol.gamma * (ctx.r_min - r)) / scale)
    slack += list(np.abs(sol.mu * (p - scn.p_max)) / scale)
    return worst, float(max(slack))
