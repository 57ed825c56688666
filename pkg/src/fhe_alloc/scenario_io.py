"""Scenario generation and JSON (de)serialisation.

Files store SI units; dBm and dB inputs are converted once, by
:func:`generate_scenario`, and never again.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .fitting import COEFF_MODULUS_BITS, default_fit
from .model import DeviceProfile, FitModel, Scenario, channel_gain, dbm_to_watt, shannon_rate

SCHEMA_VERSION = 1

DEFAULTS = {
    "n_devices": 10,
    "samples": 10.0,
    "params_per_sample": 1e4,
    "additions_per_sample": 1e5,
    "multiplications_per_sample": 1e6,
    "other_cycles": 1e9,
    "adapter_update_cycles": 1e9,
    "tx_data_bits": 3e9,
    "f_total_hz": 10e9,
    "g_max_hz": 3e9,
    "b_total_hz": 10e6,
    "p_max_dbm": 20.0,
    "noise_dbm_per_hz": -174.0,
    "kappa": 1e-28,
    "t_max_device": 4000.0,
    "t_max_server": 5000.0,
    "omega": 1.0,
    "lambda_options": [4096, 8192, 16384],
    "privacy_weights": [10.0, 5.0, 1.0],
    "distance_km": [0.05, 0.5],
    "shadow_std_db": 8.0,
    # channels are redrawn until the initial upload (p_max/2, b_total/N)
    # takes at most this fraction of the device deadline
    "max_initial_upload_fraction": 0.25,
    "rate_deadline": "device",
}

_RANGES = {
    "n_devices": (1, 10_000),
    "p_max_dbm": (-30.0, 50.0),
    "noise_dbm_per_hz": (-220.0, -100.0),
    "shadow_std_db": (0.0, 30.0),
    "max_initial_upload_fraction": (1e-6, 1.0),
}


def _check_params(params):
    unknown = set(params) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown scenario parameters: {sorted(unknown)}")
    p = {**DEFAULTS, **params}
    for key, (lo, hi) in _RANGES.items():
        if not lo <= p[key] <= hi:
            raise ConfigError(f"{key}={p[key]} outside [{lo}, {hi}]")
    lo, hi = p["distance_km"]
    if not 0 < lo <= hi:
        raise ConfigError("distance_km must be 0 < lo <= hi")
    if not p["privacy_weights"]:
        raise ConfigError("privacy_weights must be non-empty")
    return p


def generate_scenario(seed: int = 0, **params) -> Scenario:
    """Random scenario with the documented defaults.

    Privacy weights are drawn uniformly from ``privacy_weights``, distances
    uniformly from ``distance_km`` and log-normal shadowing with
    ``shadow_std_db``; all from a single ``numpy`` generator seeded by ``seed``.
    """
    p = _check_params(params)
    rng = np.random.default_rng(seed)
    n = int(p["n_devices"])
    n0 = dbm_to_watt(p["noise_dbm_per_hz"])
    p_max = dbm_to_watt(p["p_max_dbm"])
    b0 = p["b_total_hz"] / n
    upload_cap = p["max_initial_upload_fraction"] * p["t_max_device"]

    devices, dist, shadow = [], [], []
    for _ in range(n):
        sigma = float(rng.choice(p["privacy_weights"]))
        for _attempt in range(10_000):
            d_km = float(rng.uniform(*p["distance_km"]))
            sh = float(rng.normal(0.0, p["shadow_std_db"])) if p["shadow_std_db"] > 0 else 0.0
            h = channel_gain(d_km, sh)
            if p["tx_data_bits"] / shannon_rate(b0, p_max / 2, h, n0) <= upload_cap:
                break
        else:
            raise ConfigError("could not draw a channel meeting the initial upload bound")
        dist.append(d_km)
        shadow.append(sh)
        devices.append(DeviceProfile(
            samples=p["samples"], params_per_sample=p["params_per_sample"],
            additions_per_sample=p["additions_per_sample"],
            multiplications_per_sample=p["multiplications_per_sample"],
            other_cycles=p["other_cycles"], adapter_update_cycles=p["adapter_update_cycles"],
            tx_data_bits=p["tx_data_bits"], channel_gain=h, privacy_weight=sigma,
            g_max=p["g_max_hz"], p_max=p_max,
        ))
    meta = {"seed": seed, "distance_km": dist, "shadow_db": shadow,
            "distance_range_km": list(p["distance_km"]), "shadow_std_db": p["shadow_std_db"],
            "max_initial_upload_fraction": p["max_initial_upload_fraction"],
            "coeff_modulus_bits": COEFF_MODULUS_BITS}
    return Scenario(
        devices=tuple(devices), f_total=p["f_total_hz"], b_total=p["b_total_hz"],
        noise_density=n0, kappa=p["kappa"], t_max_device=p["t_max_device"],
        t_max_server=p["t_max_server"], omega=p["omega"],
        lambda_options=tuple(p["lambda_options"]), fit=default_fit(),
        rate_deadline=p["rate_deadline"], metadata=meta,
    )


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

_SYSTEM_FIELDS = ("f_total", "b_total", "noise_density", "kappa", "t_max_device",
                  "t_max_server", "omega", "rate_deadline")


def scenario_to_dict(scn: Scenario) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "units": "SI (Hz, W, W/Hz, s, bits)",
        "system": {k: getattr(scn, k) for k in _SYSTEM_FIELDS},
        "lambda_options": [int(x) for x in scn.lambda_options],
        "fit": scn.fit.as_dict(),
        "devices": [asdict(d) for d in scn.devices],
        "metadata": scn.metadata,
    }


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {data.get('schema_version')!r}")
    try:
        system = data["system"]
        devices = tuple(DeviceProfile(**d) for d in data["devices"])
        return Scenario(
            devices=devices,
            lambda_options=tuple(data["lambda_options"]),
            fit=FitModel(**data["fit"]),
            metadata=data.get("metadata", {}),
            **{k: system[k] for k in _SYSTEM_FIELDS if k in system},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def save_scenario(scn: Scenario, path) -> None:
    text = json.dumps(scenario_to_dict(scn), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_scenario(path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    scn = scenario_from_dict(data)
    for dev in scn.devices:
        if not math.isfinite(dev.channel_gain):
            raise ConfigError("channel gains must be finite")
    return scn
