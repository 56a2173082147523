"""Command-line entry point: ``nebula-sim {run,compare,sweep,validate}``.

Exit codes: 0 success, 1 invalid configuration or usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .artifacts import write_run
from .config import ConfigError, VARIANT_PRESETS, apply_variant, build_config, load_raw, parse_overrides, set_override
from .engine import run
from .experiments import SWEEP_PARAMS, compare, sweep, variant_raws

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _raw_from_args(args) -> dict:
    raw, lines = load_raw(args.config)
    if getattr(args, "variant", None):
        raw = apply_variant(raw, args.variant)
    for k, v in parse_overrides(getattr(args, "set", None)).items():
        set_override(raw, k, v)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    # validate now so errors carry file locations
    build_config(raw, source=str(args.config), lines=lines)
    return raw


def _progress(quiet: bool):
    if quiet:
        return None

    def show(t, acc):
        print(f"\r  t={t / 3600:8.2f} h  acc={acc:.4f}", end="", file=sys.stderr, flush=True)

    return show


def cmd_validate(args) -> int:
    _raw_from_args(args)
    print(f"{args.config}: ok")
    return EXIT_OK


def cmd_run(args) -> int:
    raw = _raw_from_args(args)
    cfg = build_config(raw)
    out = Path(args.out or cfg.output_dir)
    log = run(cfg, progress=_progress(args.quiet))
    if not args.quiet:
        print(file=sys.stderr)
    summary = write_run(out, log, cfg, audit=not args.no_audit)
    print(f"final accuracy {summary['final_accuracy']:.4f}  cost {summary['total_cost']:.2f}  "
          f"inter-DC transfers {summary['messages']}  -> {out}")
    for t, h, c in zip(summary["targets"], summary["time_to_target_h"], summary["cost_to_target"]):
        print(f"  target {t:.2f}: " + ("-" if h is None else f"{h:.2f} h, cost {c:.2f}"))
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.configs:
        if args.variants:
            raise ConfigError(["pass either extra configs or --variants, not both"])
        raws = {}
        for path in [args.config, *args.configs]:
            a = argparse.Namespace(config=path, set=args.set, seed=None)
            raws[Path(path).stem] = _raw_from_args(a)
    else:
        base = _raw_from_args(argparse.Namespace(config=args.config, set=args.set, seed=None))
        raws = variant_raws(base, args.variants or [])
    if len(raws) < 2:
        raise ConfigError(["compare needs at least two variants (--variants A B or several configs)"])
    for raw in raws.values():
        build_config(raw)
    seeds = args.seeds or [build_config(next(iter(raws.values()))).seed]
    targets = args.targets if args.targets is not None else build_config(next(iter(raws.values()))).targets
    out = Path(args.out or "compare-out")
    result = compare(raws, seeds, targets, outdir=out, jobs=args.jobs)
    def cell(m, s):
        return "-" if m is None else f"{m:.2f}±{s:.2f}"

    header = ["variant", "target", "time_h", "cost", "msgs", "reached"]
    rows = [[r["variant"], f"{r['target']:.2f}", cell(r["time_h"], r["time_h_std"]), cell(r["cost"], r["cost_std"]),
             cell(r["msgs"], r["msgs_std"]), f"{r['reached']}/{r['runs']}"] for r in result["table"]]
    widths = [max(len(row[i]) for row in [header, *rows]) for i in range(len(header))]
    for row in [header, *rows]:
        print("  ".join(x.ljust(w) if i == 0 else x.rjust(w) for i, (x, w) in enumerate(zip(row, widths))))
    for name, v in result["variants"].items():
        tpr = v["transfers_per_round"]
        print(f"  {name}: final acc {v['final_accuracy']:.4f}, transfers/round "
              + ("-" if tpr is None else f"{tpr:.2f}"))
    print(f"-> {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = _raw_from_args(args)
    values = [int(v) if float(v).is_integer() and args.param != "alpha" else float(v) for v in args.values]
    seeds = args.seeds or [base["seed"]]
    out = Path(args.out or f"sweep-{args.param}")
    result = sweep(base, args.param, values, seeds, outdir=out, jobs=args.jobs, fraction=args.fraction)
    for r in result["rows"]:
        tf = r["time_to_fraction_s"]
        print(f"{args.param}={r['value']} seed={r['seed']}: final acc {r['final_accuracy']:.4f}, "
              f"time to {args.fraction:.0%} " + ("-" if tf is None else f"{tf / 3600:.2f} h"))
    print(f"-> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nebula-sim", description="Multi-center asynchronous FL simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("config", help="experiment file (YAML or JSON)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value, e.g. algorithm.name=fedavg (repeatable)")
        if seed:
            sp.add_argument("--seed", type=int)

    v = sub.add_parser("validate", help="check a config and report every problem")
    common(v)
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="simulate one experiment")
    common(r)
    r.add_argument("--variant", choices=sorted(VARIANT_PRESETS))
    r.add_argument("--out", help="output directory (default: config output_dir)")
    r.add_argument("--quiet", action="store_true")
    r.add_argument("--no-audit", action="store_true", help="skip the lease/transfer audit file")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run several variants on shared seeds")
    common(c, seed=False)
    c.add_argument("configs", nargs="*", help="further config files to compare against the first")
    c.add_argument("--variants", nargs="+", choices=sorted(VARIANT_PRESETS))
    c.add_argument("--seeds", nargs="+", type=int)
    c.add_argument("--targets", nargs="+", type=float)
    c.add_argument("--out")
    c.add_argument("--jobs", type=int, default=1)
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="vary one parameter")
    common(s)
    s.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    s.add_argument("--values", required=True, nargs="+")
    s.add_argument("--seeds", nargs="+", type=int)
    s.add_argument("--fraction", type=float, default=0.9, help="report time to this share of final accuracy")
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - surface any engine failure as a runtime exit
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
