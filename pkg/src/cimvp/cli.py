"""Command-line front end.

    cimvp run --config <file|preset> --layer <slug|h,w,p> --workload cpu|cim
              --mode seq|pll [--quantum-insns N] [--report out.json]
              [--trace out.csv] [--seed S]
    cimvp compare --seq report.json --pll report.json
    cimvp sweep --config ... --layer ... --workload ... --quanta a,b,c
                [--csv out.csv] [--seed S]
    cimvp presets list

Exit status is nonzero on any error, including oracle mismatches.
"""

from __future__ import annotations

import argparse
import json
import sys

from .bench import (RunReport, compare, layer_by_id, quantum_sweep,
                    run_bench, sweep_csv)
from .config import PRESETS, load_config, serialize
from .errors import VpError


def _load_cfg(spec: str):
    if spec in PRESETS:
        return PRESETS[spec]()
    return load_config(spec)


def _cmd_run(args) -> int:
    cfg = _load_cfg(args.config)
    layer = layer_by_id(args.layer)
    report = run_bench(cfg, layer, args.workload, args.mode,
                       quantum_insns=args.quantum_insns, seed=args.seed,
                       trace_path=args.trace)
    text = report.to_json(args.report)
    print(text if args.report is None else
          f"wrote {args.report}: simulated_time={report.simulated_time} ps, "
          f"wall={report.wall_clock_ms:.1f} ms")
    return 0


def _cmd_compare(args) -> int:
    result = compare(RunReport.from_json(args.seq), RunReport.from_json(args.pll))
    print(json.dumps(result.to_dict(), indent=2))
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_cfg(args.config)
    layer = layer_by_id(args.layer)
    quanta = [int(q) for q in args.quanta.split(",") if q]
    rows = quantum_sweep(cfg, layer, args.workload, quanta, seed=args.seed)
    if args.csv:
        sweep_csv(rows, args.csv)
        print(f"wrote {args.csv} ({len(rows)} rows)")
    else:
        for row in rows:
            print(json.dumps(row.to_dict()["seq"] | {"speedup": row.speedup}))
    return 0


def _cmd_presets(args) -> int:
    if args.action == "list":
        for name in PRESETS:
            print(name)
    else:
        print(serialize(PRESETS[args.action]()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="cimvp",
                                  description="CIM virtual-platform simulator")
    sub = top.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run one benchmark")
    run.add_argument("--config", required=True,
                     help="JSON config path or preset name")
    run.add_argument("--layer", required=True, help="layer slug or 'h,w,p'")
    run.add_argument("--workload", required=True, choices=["cpu", "cim"])
    run.add_argument("--mode", required=True, choices=["seq", "pll"])
    run.add_argument("--quantum-insns", type=int, default=None)
    run.add_argument("--report", default=None)
    run.add_argument("--trace", default=None)
    run.add_argument("--seed", type=lambda s: int(s, 0), default=0x5EED_CAFE)
    run.set_defaults(func=_cmd_run)

    cmp_ = sub.add_parser("compare", help="compare seq and pll reports")
    cmp_.add_argument("--seq", required=True)
    cmp_.add_argument("--pll", required=True)
    cmp_.set_defaults(func=_cmd_compare)

    swp = sub.add_parser("sweep", help="quantum sweep")
    swp.add_argument("--config", required=True)
    swp.add_argument("--layer", required=True)
    swp.add_argument("--workload", required=True, choices=["cpu", "cim"])
    swp.add_argument("--quanta", required=True,
                     help="comma-separated instruction counts")
    swp.add_argument("--csv", default=None)
    swp.add_argument("--seed", type=lambda s: int(s, 0), default=0x5EED_CAFE)
    swp.set_defaults(func=_cmd_sweep)

    pre = sub.add_parser("presets", help="preset topologies")
    pre.add_argument("action", choices=["list"] + sorted(PRESETS),
                     help="'list' or a preset name to dump as JSON")
    pre.set_defaults(func=_cmd_presets)
    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
