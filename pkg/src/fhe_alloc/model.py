"""Cost, rate, privacy and feasibility model.

Units are SI throughout: Hz, W, J, s, bits. dBm/dB values are converted at
the boundary with :func:`dbm_to_watt` and :func:`db_to_linear`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InfeasibleError, InvalidLambdaError

LN2 = math.log(2.0)


def db_to_linear(db):
    out = 10.0 ** (np.asarray(db, dtype=float) / 10.0)
    return float(out) if out.ndim == 0 else out


def dbm_to_watt(dbm):
    return db_to_linear(np.asarray(dbm, dtype=float) - 30.0)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitModel:
    """Fitted constants of the encryption/addition/multiplication/security forms.

    ``y1 = c1 (lam + c2)^2``, ``y3 = c3 lam + c4``, ``y4 = c5 lam + c6`` and
    ``y5 = c7 lam + c8``.
    """

    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    c7: float
    c8: float

    def __post_init__(self):
        for name in ("c1", "c3", "c5", "c7"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def check_domain(self, lambdas: Sequence[float]) -> None:
        """Raise InvalidLambdaError if y3, y4 or y5 is non-positive on ``lambdas``."""
        vals = eval_fitted(self, np.asarray(lambdas, dtype=float))
        for name in ("y3", "y4", "y5"):
            bad = np.asarray(getattr(vals, name)) <= 0
            if np.any(bad):
                lam = np.asarray(lambdas, dtype=float)[bad][0]
                raise InvalidLambdaError(f"{name}({lam:g}) <= 0 outside fitted domain")

    def as_dict(self):
        return {k: getattr(self, k) for k in ("c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8")}


@dataclass(frozen=True)
class DeviceProfile:
    samples: float
    params_per_sample: float
    additions_per_sample: float
    multiplications_per_sample: float
    other_cycles: float
    adapter_update_cycles: float
    tx_data_bits: float
    channel_gain: float
    privacy_weight: float
    g_max: float
    p_max: float

    def __post_init__(self):
        positive = ("samples", "params_per_sample", "other_cycles",
                    "adapter_update_cycles", "tx_data_bits", "channel_gain",
                    "g_max", "p_max")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        # zero workload is allowed (it only removes the y3/y4 terms)
        for name in ("additions_per_sample", "multiplications_per_sample", "privacy_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class Scenario:
    """A full problem instance.

    ``rate_deadline`` selects the deadline used for the minimum rate in the
    power/bandwidth stage: ``"device"`` (T_D, consistent with the device
    deadline constraint) or ``"server"`` (T_S, the literal alternative).
    """

    devices: tuple
    f_total: float
    b_total: float
    noise_density: float
    kappa: float
    t_max_device: float
    t_max_server: float
    omega: float
    lambda_options: tuple
    fit: FitModel
    rate_deadline: str = "device"
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "lambda_options", tuple(float(x) for x in self.lambda_options))
        if not self.devices:
            raise ValueError("scenario needs at least one device")
        opts = self.lambda_options
        if not opts or any(b <= a for a, b in zip(opts, opts[1:])):
            raise ValueError("lambda_options must be non-empty and strictly ascending")
        if any(x <= 0 or x != int(x) for x in opts):
            raise ValueError("lambda_options must be positive integers")
        for name in ("f_total", "b_total", "noise_density", "kappa", "t_max_device", "t_max_server"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.omega < 0:
            raise ValueError("omega must be non-negative")
        if self.rate_deadline not in ("device", "server"):
            raise ValueError("rate_deadline must be 'device' or 'server'")
        self.fit.check_domain(opts)

    @property
    def n(self) -> int:
        return len(self.devices)

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def with_devices(self, **changes) -> "Scenario":
        """Copy with the same field overridden on every device."""
        return replace(self, devices=tuple(replace(d, **changes) for d in self.devices))

    def _col(self, name):
        a = np.array([getattr(d, name) for d in self.devices], dtype=float)
        a.flags.writeable = False
        return a

    # per-device columns, cached; the dataclass is frozen so these never go stale
    D = cached_property(lambda self: self._col("samples"))
    s = cached_property(lambda self: self._col("params_per_sample"))
    a = cached_property(lambda self: self._col("additions_per_sample"))
    m = cached_property(lambda self: self._col("multiplications_per_sample"))
    c_other = cached_property(lambda self: self._col("other_cycles"))
    c_upd = cached_property(lambda self: self._col("adapter_update_cycles"))
    d = cached_property(lambda self: self._col("tx_data_bits"))
    h = cached_property(lambda self: self._col("channel_gain"))
    sigma = cached_property(lambda self: self._col("privacy_weight"))
    g_max = cached_property(lambda self: self._col("g_max"))
    p_max = cached_property(lambda self: self._col("p_max"))


@dataclass(frozen=True)
class Allocation:
    f: np.ndarray
    g: np.ndarray
    p: np.ndarray
    b: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        for name in ("f", "g", "p", "b", "lam"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        shapes = {getattr(self, k).shape for k in ("f", "g", "p", "b", "lam")}
        if len(shapes) != 1:
            raise ValueError(f"allocation vectors differ in shape: {shapes}")

    @property
    def n(self) -> int:
        return self.f.shape[0]

    def vector(self) -> np.ndarray:
        return np.concatenate([self.f, self.g, self.p, self.b, self.lam])

    def replace(self, **changes) -> "Allocation":
        return replace(self, **changes)

    def as_dict(self):
        return {k: getattr(self, k).tolist() for k in ("f", "g", "p", "b", "lam")}


@dataclass(frozen=True)
class CostBreakdown:
    t_en: float
    e_en: float
    t_tr: float
    e_tr: float
    t_cmp: float
    e_cmp: float
    privacy: float
    rate: float

    @property
    def energy(self) -> float:
        return self.e_en + self.e_tr + self.e_cmp


class FittedValues(NamedTuple):
    y1: np.ndarray
    y3: np.ndarray
    y4: np.ndarray
    y5: np.ndarray


class DeviceCosts(NamedTuple):
    t_en: float
    e_en: float
    rate: float
    t_tr: float
    e_tr: float


class ServerCosts(NamedTuple):
    t_cmp: float
    e_cmp: float


# ---------------------------------------------------------------------------
# Closed-form expressions
# ---------------------------------------------------------------------------


def eval_fitted(fit: FitModel, lam) -> FittedValues:
    lam = np.asarray(lam, dtype=float)
    return FittedValues(
        y1=fit.c1 * (lam + fit.c2) ** 2,
        y3=fit.c3 * lam + fit.c4,
        y4=fit.c5 * lam + fit.c6,
        y5=fit.c7 * lam + fit.c8,
    )


def y1(fit, lam):
    return fit.c1 * (np.asarray(lam, dtype=float) + fit.c2) ** 2


def y5(fit, lam):
    return fit.c7 * np.asarray(lam, dtype=float) + fit.c8


def prediction_cycles(fit: FitModel, lam, dev: DeviceProfile):
    """CPU cycles to run the encrypted prediction for one sample."""
    v = eval_fitted(fit, lam)
    if np.any(v.y3 <= 0) or np.any(v.y4 <= 0):
        raise InvalidLambdaError(f"lambda={lam} gives non-positive addition/multiplication cycles")
    return v.y3 * dev.additions_per_sample + v.y4 * dev.multiplications_per_sample + dev.other_cycles


def _y2(scn: Scenario, lam):
    """Vectorised prediction cycles for every device at ``lam`` (length-N)."""
    fit = scn.fit
    lam = np.asarray(lam, dtype=float)
    return (fit.c3 * lam + fit.c4) * scn.a + (fit.c5 * lam + fit.c6) * scn.m + scn.c_other


def shannon_rate(b, p, h, n0):
    """FDMA Shannon rate ``b log2(1 + p h / (n0 b))`` in bits/s.

    At ``b == 0`` the analytic limit ``p h / (n0 ln 2)`` is returned.
    """
    b = np.asarray(b, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(b < 0) or np.any(p < 0) or np.any(np.asarray(h) <= 0) or n0 <= 0:
        raise ValueError("shannon_rate needs b >= 0, p >= 0, h > 0, n0 > 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = p * h / (n0 * b)
        r = b * np.log1p(snr) / LN2
    r = np.where(b == 0, p * h / (n0 * LN2), r)
    return float(r) if r.ndim == 0 else r


def device_costs(scn: Scenario, i: int, g: float, p: float, b: float, lam: float) -> DeviceCosts:
    dev = scn.devices[i]
    if min(g, p, b, lam) <= 0:
        raise ValueError("device allocation must be strictly positive")
    cycles = float(y1(scn.fit, lam)) * dev.samples * dev.params_per_sample
    t_en = cycles / g
    e_en = scn.kappa * cycles * g * g
    rate = shannon_rate(b, p, dev.channel_gain, scn.noise_density)
    if rate <= 0:
        raise InfeasibleError("zero transmission rate", constraint="rate", device=i)
    t_tr = dev.tx_data_bits / rate
    return DeviceCosts(t_en, e_en, rate, t_tr, p * t_tr)


def server_costs(scn: Scenario, i: int, f: float, lam: float) -> ServerCosts:
    if f <= 0:
        raise ValueError("server frequency must be positive")
    dev = scn.devices[i]
    cycles = (float(prediction_cycles(scn.fit, lam, dev)) + dev.adapter_update_cycles) * dev.samples
    return ServerCosts(cycles / f, scn.kappa * cycles * f * f)


def breakdown(scn: Scenario, alloc: Allocation) -> list:
    out = []
    for i in range(scn.n):
        dc = device_costs(scn, i, alloc.g[i], alloc.p[i], alloc.b[i], alloc.lam[i])
        sc = server_costs(scn, i, alloc.f[i], alloc.lam[i])
        out.append(CostBreakdown(
            t_en=dc.t_en, e_en=dc.e_en, t_tr=dc.t_tr, e_tr=dc.e_tr,
            t_cmp=sc.t_cmp, e_cmp=sc.e_cmp,
            privacy=float(y5(scn.fit, alloc.lam[i])), rate=dc.rate,
        ))
    return out


class ObjectiveParts(NamedTuple):
    objective: float
    energy: float
    privacy: float  # sum of sigma_n * S_n
    e_en: float
    e_tr: float
    e_cmp: float


def objective_parts(scn: Scenario, alloc: Allocation) -> ObjectiveParts:
    rows = breakdown(scn, alloc)
    e_en = math.fsum(r.e_en for r in rows)
    e_tr = math.fsum(r.e_tr for r in rows)
    e_cmp = math.fsum(r.e_cmp for r in rows)
    energy = math.fsum([e_en, e_tr, e_cmp])
    privacy = math.fsum(sig * r.privacy for sig, r in zip(scn.sigma, rows))
    return ObjectiveParts(energy - scn.omega * privacy, energy, privacy, e_en, e_tr, e_cmp)


def total_objective(scn: Scenario, alloc: Allocation) -> float:
    """Total energy minus ``omega`` times the weighted privacy level."""
    return objective_parts(scn, alloc).objective


# ---------------------------------------------------------------------------
# Feasibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintCheck:
    name: str
    device: int | None
    lhs: float
    rhs: float
    satisfied: bool

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


@dataclass(frozen=True)
class FeasibilityReport:
    checks: tuple

    @property
    def feasible(self) -> bool:
        return all(c.satisfied for c in self.checks)

    @property
    def violations(self) -> list:
        return [c for c in self.checks if not c.satisfied]

    def __bool__(self):
        return self.feasible


def check_feasibility(scn: Scenario, alloc: Allocation, rtol: float = 1e-9) -> FeasibilityReport:
    """Evaluate every constraint of the joint problem.

    A constraint ``lhs <= rhs`` counts as satisfied when
    ``lhs <= rhs + rtol * |rhs|``. Lambda membership is exact to 1e-9.
    """
    checks = []

    def add(name, dev, lhs, rhs):
        ok = bool(np.isfinite(lhs)) and lhs <= rhs + rtol * abs(rhs)
        checks.append(ConstraintCheck(name, dev, float(lhs), float(rhs), ok))

    add("server_capacity", None, math.fsum(alloc.f), scn.f_total)
    add("bandwidth", None, math.fsum(alloc.b), scn.b_total)
    opts = np.asarray(scn.lambda_options)
    for i, dev in enumerate(scn.devices):
        add("device_frequency", i, alloc.g[i], dev.g_max)
        add("transmit_power", i, alloc.p[i], dev.p_max)
        dist = float(np.min(np.abs(opts - alloc.lam[i])))
        checks.append(ConstraintCheck("lambda_option", i, dist, 0.0, dist <= 1e-9 * opts[0]))
        if min(alloc.f[i], alloc.g[i], alloc.p[i], alloc.b[i]) <= 0:
            checks.append(ConstraintCheck("positivity", i, 1.0, 0.0, False))
            continue
        dc = device_costs(scn, i, alloc.g[i], alloc.p[i], alloc.b[i], alloc.lam[i])
        add("device_deadline", i, dc.t_en + dc.t_tr, scn.t_max_device)
        try:
            sc = server_costs(scn, i, alloc.f[i], alloc.lam[i])
            add("server_deadline", i, sc.t_cmp, scn.t_max_server)
        except InvalidLambdaError:
            checks.append(ConstraintCheck("server_deadline", i, math.inf, scn.t_max_server, False))
    return FeasibilityReport(tuple(checks))


def channel_gain(distance_km, shadow_db=0.0):
    """Linear power gain for the ``128.1 + 37.6 log10(d)`` path-loss model."""
    d = np.asarray(distance_km, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    loss_db = 128.1 + 37.6 * np.log10(d) + np.asarray(shadow_db, dtype=float)
    g = 10.0 ** (-loss_db / 10.0)
    return float(g) if g.ndim == 0 else g
