"""Command-line entry point: ``generate``, ``solve``, ``sweep`` and ``plot``.

Exit codes: 0 success, 2 infeasible scenario, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import joint, sweep
from .errors import ConfigError, InfeasibleError
from .model import check_feasibility, objective_parts
from .scenario_io import DEFAULTS, generate_scenario, load_scenario, save_scenario

EXIT_OK, EXIT_INFEASIBLE, EXIT_CONFIG = 0, 2, 3
log = logging.getLogger("fhe_alloc")


def _parse_set(items):
    """``key=value`` pairs; values are parsed as JSON when possible."""
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or key not in DEFAULTS:
            raise ConfigError(f"bad --set {item!r}; known keys: {', '.join(sorted(DEFAULTS))}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _solve_options(args):
    return joint.SolveOptions(max_outer=args.max_outer, max_inner=args.max_inner, eps=args.eps,
                              rebalance=not args.no_rebalance)


def cmd_generate(args):
    scn = generate_scenario(args.seed, **_parse_set(args.set))
    save_scenario(scn, args.out)
    print(f"wrote {args.out} ({scn.n} devices, seed {args.seed})")
    return EXIT_OK


def cmd_solve(args):
    scn = load_scenario(args.scenario)
    alloc, trace = joint.solve(scn, _solve_options(args))
    parts = objective_parts(scn, alloc)
    report = check_feasibility(scn, alloc)
    result = {
        "objective": parts.objective, "energy": parts.energy, "privacy": parts.privacy,
        "e_en": parts.e_en, "e_tr": parts.e_tr, "e_cmp": parts.e_cmp,
        "feasible": report.feasible, "converged": trace.converged, "iterations": trace.iterations,
        "objective_trace": trace.objectives, "allocation": alloc.as_dict(),
    }
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    print(f"objective {parts.objective:.6f}  energy {parts.energy:.6f} J  privacy {parts.privacy:.3f}")
    print(f"iterations {trace.iterations}  converged {trace.converged}  feasible {report.feasible}")
    print("lambda " + " ".join(str(int(x)) for x in alloc.lam))
    return EXIT_OK


def cmd_sweep(args):
    scn = load_scenario(args.scenario)
    if args.config:
        configs = sweep.load_config(args.config)
    else:
        names = list(sweep.PRESETS) if "all" in args.preset else args.preset
        unknown = [n for n in names if n not in sweep.PRESETS]
        if unknown:
            raise ConfigError(f"unknown presets {unknown}; choose from {', '.join(sweep.PRESETS)}")
        configs = [sweep.PRESETS[n] for n in names]
    if args.repetitions is not None or args.seed is not None:
        configs = [sweep.SweepConfig(c.parameter, c.values, c.allocators,
                                     args.repetitions or c.repetitions,
                                     c.seed if args.seed is None else args.seed, c.fixed, c.name)
                   for c in configs]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    opts = _solve_options(args)
    for cfg in configs:
        rows = sweep.run_sweep(cfg, scn, workers=args.workers, opts=opts)
        path = out / f"sweep_{cfg.name}.csv"
        sweep.write_csv(rows, path)
        bad = sum(r.status != "ok" for r in rows)
        print(f"{cfg.name}: {len(rows)} rows -> {path}" + (f" ({bad} infeasible)" if bad else ""))
        if args.plot:
            from . import plotting  # matplotlib is slow to import; only load it when drawing

            for p in plotting.render_plots(path, out):
                print(f"  {p}")
    return EXIT_OK


def cmd_plot(args):
    from . import plotting

    for csv_path in args.csv:
        for p in plotting.render_plots(csv_path, args.out_dir):
            print(p)
    return EXIT_OK


def _add_solver_flags(p):
    p.add_argument("--max-outer", type=int, default=joint.SolveOptions.max_outer)
    p.add_argument("--max-inner", type=int, default=joint.SolveOptions.max_inner)
    p.add_argument("--eps", type=float, default=joint.SolveOptions.eps)
    p.add_argument("--no-rebalance", action="store_true",
                   help="skip the per-device deadline rebalance between outer iterations")


def build_parser():
    ap = argparse.ArgumentParser(prog="fhe-alloc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a random scenario file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a generator default (repeatable), e.g. n_devices=2")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="solve one scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", help="write the allocation and trace as JSON")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run parameter sweeps and write CSV")
    p.add_argument("--scenario", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--config", help="JSON sweep config (object or list)")
    g.add_argument("--preset", nargs="+", help=f"built-in sweeps: {', '.join(sweep.PRESETS)} or all")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, help="override the config seed (channel redraws)")
    p.add_argument("--repetitions", type=int, help="override the config repetition count")
    p.add_argument("--plot", action="store_true", help="also render SVG charts")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="render SVG charts from sweep CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfeasibleError as exc:
        where = f" [{exc.constraint}" + (f", device {exc.device}]" if exc.device is not None else "]") \
            if exc.constraint else ""
        print(f"infeasible{where}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
