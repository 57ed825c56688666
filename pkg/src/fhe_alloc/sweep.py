"""Parameter sweeps over a scenario and the CSV format they produce.

One row per (sweep value, allocator, repetition). Values are stored in SI
units; missing numbers (an infeasible proposed solve) are empty cells.
Floats are written with ``repr`` so reading a CSV back reproduces the
in-memory rows exactly.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import joint, oracle
from .errors import AllocError, ConfigError, InfeasibleError
from .model import Allocation, Scenario, channel_gain, check_feasibility, dbm_to_watt, objective_parts, shannon_rate

PARAMETERS = ("b_total", "p_max", "f_total", "g_max", "t_max_device", "t_max_server", "omega")
ALLOCATORS = ("proposed", "average", "compute_only", "radio_only")
SCENARIO_OVERRIDES = ("b_total", "f_total", "t_max_device", "t_max_server", "omega")

_UNIT_SCALE = {
    "": 1.0, "Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9,
    "W": 1.0, "mW": 1e-3, "s": 1.0,
}


def to_si(values, unit: str):
    """Convert config values to SI; ``dBm`` becomes watts."""
    if unit == "dBm":
        return [float(dbm_to_watt(v)) for v in values]
    if unit not in _UNIT_SCALE:
        raise ConfigError(f"unknown unit {unit!r}")
    return [float(v) * _UNIT_SCALE[unit] for v in values]


@dataclass(frozen=True)
class SweepConfig:
    parameter: str
    values: tuple  # SI units
    allocators: tuple = ALLOCATORS
    repetitions: int = 1
    seed: int = 0
    fixed: tuple = ()  # (name, SI value) scenario overrides applied before sweeping
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "allocators", tuple(self.allocators))
        object.__setattr__(self, "fixed", tuple((str(k), float(v)) for k, v in self.fixed))
        if self.parameter not in PARAMETERS:
            raise ConfigError(f"parameter must be one of {PARAMETERS}, got {self.parameter!r}")
        if not self.values:
            raise ConfigError("values must be non-empty")
        if not self.allocators:
            raise ConfigError("allocators must be non-empty")
        bad = set(self.allocators) - set(ALLOCATORS)
        if bad:
            raise ConfigError(f"unknown allocators {sorted(bad)}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        for k, _ in self.fixed:
            if k not in PARAMETERS:
                raise ConfigError(f"cannot fix {k!r}")
        if not self.name:
            object.__setattr__(self, "name", self.parameter)

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        if not isinstance(data, dict):
            raise ConfigError("sweep config must be a JSON object")
        known = {"parameter", "values", "units", "allocators", "repetitions", "seed", "fixed", "name"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown sweep config keys {sorted(unknown)}")
        try:
            values = to_si(data["values"], data.get("units", ""))
            fixed = []
            for k, spec in dict(data.get("fixed", {})).items():
                if isinstance(spec, dict):
                    fixed.append((k, to_si([spec["value"]], spec.get("units", ""))[0]))
                else:
                    fixed.append((k, float(spec)))
            return cls(
                parameter=data["parameter"], values=values,
                allocators=tuple(data.get("allocators", ALLOCATORS)),
                repetitions=int(data.get("repetitions", 1)), seed=int(data.get("seed", 0)),
                fixed=tuple(fixed), name=data.get("name", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid sweep config: {exc}") from exc


def load_config(path) -> list:
    """A JSON file holding one config object or a list of them."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    items = data if isinstance(data, list) else [data]
    return [SweepConfig.from_dict(d) for d in items]


def _preset(name, parameter, values, units, fixed=None, allocators=ALLOCATORS):
    fx = {"omega": 0.0} if fixed is None else fixed
    return SweepConfig(parameter=parameter, values=to_si(values, units), allocators=allocators,
                       fixed=tuple(fx.items()), name=name)


# Resource sweeps are energy-only (omega = 0). Ranges keep the default
# scenario feasible for every allocator; see the README for the choices.
PRESETS = {
    "bandwidth": _preset("bandwidth", "b_total", [5, 10, 15, 20, 25], "MHz"),
    "power": _preset("power", "p_max", [10, 15, 20, 25, 30], "dBm"),
    "server_capacity": _preset("server_capacity", "f_total", [7, 8, 9, 10, 11], "GHz"),
    "device_frequency": _preset("device_frequency", "g_max", [1, 2, 3, 4, 5], "GHz"),
    "device_deadline": _preset("device_deadline", "t_max_device", [3000, 3500, 4000, 4500, 5000], "s"),
    "server_deadline": _preset("server_deadline", "t_max_server", [3500, 4000, 5000, 6000, 7000], "s"),
    "privacy_weight": _preset("privacy_weight", "omega", list(range(1, 11)), "",
                              fixed={"t_max_device": 10000.0, "t_max_server": 10000.0},
                              allocators=("proposed",)),
}
RESOURCE_PRESETS = tuple(k for k in PRESETS if k != "privacy_weight")


# ---------------------------------------------------------------------------
# applying a sweep point
# ---------------------------------------------------------------------------


def apply_parameter(scn: Scenario, name: str, value: float) -> Scenario:
    if name in SCENARIO_OVERRIDES:
        return scn.with_(**{name: value})
    if name in ("p_max", "g_max"):
        return scn.with_devices(**{name: value})
    raise ConfigError(f"unknown parameter {name!r}")


def redraw_channels(scn: Scenario, seed: int, repetition: int) -> Scenario:
    """Fresh distances and shadowing for repetition ``repetition`` (>= 1).

    Draws follow the generator's ranges stored in the scenario metadata and
    are rejected until the initial upload fits in a quarter of the device
    deadline, as in scenario generation.
    """
    meta = scn.metadata
    lo, hi = meta.get("distance_range_km", (0.05, 0.5))
    shadow_std = meta.get("shadow_std_db", 8.0)
    frac = meta.get("max_initial_upload_fraction", 0.25)
    rng = np.random.default_rng([seed, repetition])
    b0 = scn.b_total / scn.n
    devices = []
    for dev in scn.devices:
        for _ in range(10_000):
            h = channel_gain(rng.uniform(lo, hi), rng.normal(0.0, shadow_std) if shadow_std > 0 else 0.0)
            if dev.tx_data_bits / shannon_rate(b0, dev.p_max / 2, h, scn.noise_density) <= frac * scn.t_max_device:
                break
        else:
            raise ConfigError("could not redraw a usable channel")
        devices.append(replace(dev, channel_gain=float(h)))
    return scn.with_(devices=tuple(devices))


# ---------------------------------------------------------------------------
# rows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    sweep: str
    parameter: str
    value: float
    allocator: str
    repetition: int
    status: str  # ok | infeasible
    detail: str
    objective: float | None
    energy_total: float | None
    e_en: float | None
    e_tr: float | None
    e_cmp: float | None
    privacy_total: float | None
    lambdas: str  # space-separated per-device degrees
    sigmas: str  # space-separated per-device privacy weights
    p_cap_active: int | None  # 1 if any device transmits at p_max
    iterations: int | None
    solve_seconds: float


COLUMNS = tuple(f.name for f in fields(SweepRow))
_FLOAT_COLS = {"value", "objective", "energy_total", "e_en", "e_tr", "e_cmp", "privacy_total", "solve_seconds"}
_INT_COLS = {"repetition", "p_cap_active", "iterations"}


def _run_allocator(scn: Scenario, allocator: str, opts: joint.SolveOptions):
    """Returns ``(allocation or None, iterations, detail)``."""
    if allocator == "proposed":
        alloc, trace = joint.solve(scn, opts)
        return alloc, trace.iterations, ""
    fn = {"average": oracle.average_allocation, "compute_only": oracle.optimize_compute_only,
          "radio_only": oracle.optimize_radio_only}[allocator]
    return fn(scn), None, ""


def run_point(task):
    """Solve one (value, allocator, repetition) task; used by the worker pool."""
    cfg, scn, vi, allocator, rep, opts = task
    value = cfg.values[vi]
    t0 = time.perf_counter()
    sigmas = " ".join(repr(float(s)) for s in scn.sigma)
    try:
        if rep > 0:
            scn = redraw_channels(scn, cfg.seed, rep)
        pt = apply_parameter(scn, cfg.parameter, value)
        alloc, iters, detail = _run_allocator(pt, allocator, opts)
    except (InfeasibleError, AllocError, ValueError) as exc:
        constraint = getattr(exc, "constraint", None)
        detail = f"{constraint}: {exc}" if constraint else str(exc)
        return SweepRow(cfg.name, cfg.parameter, value, allocator, rep, "infeasible", detail,
                        None, None, None, None, None, None, "", sigmas, None, None,
                        time.perf_counter() - t0)
    elapsed = time.perf_counter() - t0
    return _row_from_allocation(cfg, pt, value, allocator, rep, alloc, iters, detail, sigmas, elapsed)


def _row_from_allocation(cfg, scn, value, allocator, rep, alloc: Allocation, iters, detail, sigmas, elapsed):
    parts = objective_parts(scn, alloc)
    report = check_feasibility(scn, alloc)
    status = "ok" if report.feasible else "infeasible"
    if not report.feasible:
        v = report.violations[0]
        detail = f"{v.name}" + (f" (device {v.device})" if v.device is not None else "")
    cap = int(bool(np.any(alloc.p >= scn.p_max * (1 - 1e-9))))
    return SweepRow(
        cfg.name, cfg.parameter, value, allocator, rep, status, detail,
        parts.objective, parts.energy, parts.e_en, parts.e_tr, parts.e_cmp, parts.privacy,
        " ".join(str(int(x)) for x in alloc.lam), sigmas, cap, iters, elapsed,
    )


def run_sweep(cfg: SweepConfig, scn: Scenario, workers: int = 1, opts: joint.SolveOptions | None = None) -> list:
    """Run every point of ``cfg`` and return rows in (value, allocator, repetition) order."""
    opts = opts or joint.SolveOptions()
    for k, v in cfg.fixed:
        scn = apply_parameter(scn, k, v)
    tasks = [(cfg, scn, vi, a, r, opts)
             for vi in range(len(cfg.values)) for a in cfg.allocators for r in range(cfg.repetitions)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_point, tasks))
    else:
        rows = [run_point(t) for t in tasks]
    order = {a: i for i, a in enumerate(cfg.allocators)}
    index = {v: i for i, v in enumerate(cfg.values)}
    return sorted(rows, key=lambda r: (index[r.value], order[r.allocator], r.repetition))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_cell(getattr(r, c)) for c in COLUMNS])


def _parse(col, text):
    if col in _FLOAT_COLS:
        return None if text == "" else float(text)
    if col in _INT_COLS:
        return None if text == "" else int(text)
    return text


def read_csv(path) -> list:
    try:
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != COLUMNS:
                raise ConfigError(f"{path}: unexpected header {header}")
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if len(rec) != len(COLUMNS):
                    raise ConfigError(f"{path}:{lineno}: expected {len(COLUMNS)} fields, got {len(rec)}")
                rows.append(SweepRow(**{c: _parse(c, t) for c, t in zip(COLUMNS, rec)}))
            return rows
    except (OSError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: malformed sweep CSV: {exc}") from exc
