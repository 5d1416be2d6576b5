"""``tanglesim`` command line: run presets or config files, recompute
verdicts, list presets."""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments as ex


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tanglesim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run a preset or a TOML config file")
    r.add_argument("target", help="preset name or path to a .toml config")
    r.add_argument("--out", default=None,
                   help="output directory (default: out/<name>)")
    r.add_argument("--seed", type=int)
    r.add_argument("--runs", type=int)
    r.add_argument("--horizon", type=int)
    r.add_argument("--jobs", type=int, help="worker processes for batches")
    r.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE",
                   help="override a config field, e.g. lambda=40 or "
                        "verdict.slope_eps=0.3 (repeatable)")
    r.add_argument("--no-plot", action="store_true")

    v = sub.add_parser("verdict", help="recompute the verdict from run CSVs")
    v.add_argument("dir")
    v.add_argument("--tail-fraction", type=float,
                   help="default: value recorded in the manifest, else 0.25")
    v.add_argument("--slope-eps", type=float,
                   help="default: value recorded in the manifest, else 0.5")

    sub.add_parser("list-presets", help="show the shipped presets")
    return p


def _run(args) -> int:
    preset = ex.resolve(args.target)
    overrides = list(args.overrides)
    if preset.kind == "sim":
        for flag, key in (("seed", "seed"), ("runs", "runs"),
                          ("horizon", "horizon"), ("jobs", "n_jobs")):
            value = getattr(args, flag)
            if value is not None:
                overrides.append(f"scenario.{key}={value}")
    elif any(getattr(args, f) is not None
             for f in ("seed", "runs", "horizon", "jobs")):
        raise ex.ConfigError(f"--seed/--runs/--horizon/--jobs only apply to "
                             f"simulation presets, not {preset.kind!r}")
    out = args.out or f"out/{preset.name}"
    res = ex.run_experiment(preset, out, overrides, plot=not args.no_plot)
    d = res.details
    print(f"{preset.name}: {res.outcome} (expected {preset.expected})")
    if "slope" in d:
        print(f"  tail slope {d['slope']:.4g}, threshold {d['threshold']:.4g},"
              f" tail mean {d['mean']:.4g}")
    print(f"  outputs in {res.out_dir}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "run":
            return _run(args)
        if args.verb == "verdict":
            v = ex.verdict_from_dir(args.dir, args.tail_fraction,
                                    args.slope_eps)
            print(v.label)
            print(f"  slope {v.slope:.4g}, threshold {v.threshold:.4g}, "
                  f"{v.positive_runs}/{v.runs} runs with positive tail slope")
            return 0
        for name in ex.list_presets():
            p = ex.load_preset(name)
            print(f"{name:18s} {p.kind:7s} {p.expected:12s} {p.description}")
        return 0
    except (ex.ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"tanglesim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
