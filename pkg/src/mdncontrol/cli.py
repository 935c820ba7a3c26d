"""Command line entry point: pretrain, run, compare, plots."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .config import OUT_ENV, RunConfig, load_config
from .plots import emit_plots
from .trace import write_trace

log = logging.getLogger("mdncontrol")


def _config(args) -> RunConfig:
    overrides = {}
    for item in args.set or ():
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for key in ("example", "seed", "out_dir"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = str(v)
    return load_config(args.config, overrides)


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir()
    snap = harness.save_models(harness.pretrain(cfg), Path(args.snapshot or out / "snapshot"))
    (snap / "config.txt").write_text(cfg.to_text())
    print(snap)
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    models = harness.load_models(cfg, args.snapshot)
    trace = harness.run_online(cfg, models, args.method)
    path = write_trace(cfg.output_dir() / f"trace_{args.method}.csv", trace)
    print(path)
    if trace.failure is not None:
        print(f"error: run halted at {trace.failure}", file=sys.stderr)
        return 3
    return 0


def cmd_compare(args) -> int:
    cfg = _config(args)
    models = harness.load_models(cfg, args.snapshot) if args.snapshot else None
    out = cfg.output_dir()
    cmp = harness.compare(cfg, models, out)
    print(json.dumps(cmp.summary, indent=2, sort_keys=True))
    failed = [m for m, t in cmp.traces.items() if t.failure is not None]
    if failed:
        for m in failed:
            print(f"error: {m} run halted at {cmp.traces[m].failure}", file=sys.stderr)
        return 3
    return 0


def cmd_plots(args) -> int:
    out = Path(args.out) if args.out else Path(args.trace[0]).parent / "tracking.svg"
    print(emit_plots(args.trace, out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdncontrol",
                                description="Mixture-density-network control of stochastic plants.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--example", type=int, choices=(1, 2))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", dest="out_dir",
                        help=f"output directory (the {OUT_ENV} variable takes precedence)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any configuration key; repeatable")
        return sp

    sp = with_config(sub.add_parser("pretrain", help="offline identification and controller fit"))
    sp.add_argument("--snapshot", help="snapshot directory (default OUT/snapshot)")
    sp.set_defaults(func=cmd_pretrain)

    sp = with_config(sub.add_parser("run", help="closed-loop run from a snapshot"))
    sp.add_argument("--snapshot", required=True)
    sp.add_argument("--method", choices=("mdn", "baseline"), default="mdn")
    sp.set_defaults(func=cmd_run)

    sp = with_config(sub.add_parser("compare", help="MDN and baseline on identical streams"))
    sp.add_argument("--snapshot", help="reuse a snapshot instead of pretraining")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("plots", help="render traces to SVG")
    sp.add_argument("--trace", nargs="+", required=True)
    sp.add_argument("--out", help="SVG path (default: tracking.svg beside the first trace)")
    sp.set_defaults(func=cmd_plots)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, harness.RunHalted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
