"""Static SVG line charts of sweep CSVs.

Output bytes depend only on the CSV contents: matplotlib's SVG backend is
run with a fixed hash salt, no date metadata and text kept as ``<text>``.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ConfigError  # noqa: E402
from .sweep import read_csv  # noqa: E402

METRICS = {
    "energy_total": "total energy (J)",
    "objective": "objective",
    "privacy_total": "weighted privacy level (bits)",
}

_DISPLAY = {  # parameter -> (scale divisor or "dBm", axis label)
    "b_total": (1e6, "total bandwidth (MHz)"),
    "p_max": ("dBm", "maximum transmit power (dBm)"),
    "f_total": (1e9, "server capacity (GHz)"),
    "g_max": (1e9, "maximum device frequency (GHz)"),
    "t_max_device": (1.0, "device deadline (s)"),
    "t_max_server": (1.0, "server deadline (s)"),
    "omega": (1.0, "privacy weight omega"),
}

_RC = {
    "svg.hashsalt": "fhe-alloc",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "lines.linewidth": 1.4,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _x(parameter, value):
    import math

    scale, _ = _DISPLAY[parameter]
    if scale == "dBm":
        return 10.0 * math.log10(value) + 30.0
    return value / scale


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def render_plots(csv_path, out_dir) -> list:
    """Write one SVG per (sweep, metric); returns the paths written.

    Repetitions are averaged; rows with status other than ``ok`` are left
    out. For an ``omega`` sweep a chart of each device's degree is added.
    """
    rows = read_csv(csv_path)
    if not rows:
        raise ConfigError(f"{csv_path}: no data rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    by_sweep = defaultdict(list)
    for r in rows:
        by_sweep[r.sweep].append(r)

    with plt.rc_context(_RC):
        for sweep_name in sorted(by_sweep):
            srows = by_sweep[sweep_name]
            param = srows[0].parameter
            if param not in _DISPLAY:
                raise ConfigError(f"{csv_path}: unknown parameter {param!r}")
            allocators = list(dict.fromkeys(r.allocator for r in srows))
            for metric, label in METRICS.items():
                fig, ax = plt.subplots(figsize=(5.0, 3.4))
                for alloc in allocators:
                    acc = defaultdict(list)
                    for r in srows:
                        v = getattr(r, metric)
                        if r.allocator == alloc and r.status == "ok" and v is not None:
                            acc[r.value].append(v)
                    xs = sorted(acc)
                    ax.plot([_x(param, x) for x in xs], [sum(acc[x]) / len(acc[x]) for x in xs],
                            marker="o", markersize=3.5, label=alloc)
                ax.set_xlabel(_DISPLAY[param][1])
                ax.set_ylabel(label)
                ax.set_title(f"{sweep_name}: {metric}")
                ax.legend(fontsize=8)
                fig.tight_layout()
                path = out / f"{sweep_name}_{metric}.svg"
                _save(fig, path)
                written.append(path)

            if param == "omega":
                written.append(_lambda_chart(srows, param, sweep_name, out))
    return written


def _lambda_chart(srows, param, sweep_name, out):
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ok = [r for r in srows if r.allocator == "proposed" and r.repetition == 0 and r.status == "ok"]
    ok.sort(key=lambda r: r.value)
    if ok:
        lams = [[int(x) for x in r.lambdas.split()] for r in ok]
        sigmas = ok[0].sigmas.split()
        for i in range(len(lams[0])):
            ax.step([_x(param, r.value) for r in ok], [lam[i] for lam in lams], where="mid",
                    label=f"device {i} (sigma={float(sigmas[i]):g})")
        ax.set_yscale("log", base=2)
    ax.set_xlabel(_DISPLAY[param][1])
    ax.set_ylabel("polynomial degree")
    ax.set_title(f"{sweep_name}: degree per device")
    ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    path = out / f"{sweep_name}_lambda.svg"
    _save(fig, path)
    return path
