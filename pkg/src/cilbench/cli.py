"""Command-line interface.

Subcommands:

* ``run``     one experiment from a JSON config, record written as JSON;
* ``sweep``   the same config at several total-memory points, plus a curve CSV;
* ``align``   budget arithmetic: exemplar count that fills a target budget;
* ``metrics`` aggregate saved records into the metrics table CSV;
* ``probe``   dump one recorded probe figure as CSV.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .membudget import MEGABYTE, align_budget
from .runner import RunRecord, emit_curve, records_to_table, run_experiment, sweep


def _load_config(path: str) -> dict:
    return json.loads(Path(path).read_text())


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_run(args) -> int:
    record = run_experiment(_load_config(args.config))
    out = Path(args.out)
    _write(out / "record.json", record.to_json())
    accs = ", ".join(f"{a:.2f}" for a in record.stage_accuracies)
    print(f"{record.method}: stages [{accs}]")
    print(f"avg {record.average_accuracy:.2f}  last {record.last_accuracy:.2f}  "
          f"memory {record.memory_mb:.4g} MB  exemplar budget {record.exemplar_budget}")
    print(f"record written to {out / 'record.json'}")
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    points = [float(p) for p in args.memory_points.split(",") if p.strip()]
    records = sweep(config, points)
    out = Path(args.out)
    for record, mb in zip(records, points):
        _write(out / f"{record.method}_mb{mb:g}" / "record.json", record.to_json())
    curve = emit_curve(records)
    _write(out / f"curve_{records[0].method}.csv", curve)
    print(curve, end="")
    print(f"{len(records)} records written under {out}", file=sys.stderr)
    return 0


def cmd_align(args) -> int:
    target_bytes = round(args.target_mb * MEGABYTE)
    count = align_budget(target_bytes, args.params * args.bytes_per_param,
                         args.bytes_per_exemplar, args.base_exemplars)
    print(count)
    return 0


def cmd_metrics(args) -> int:
    paths = sorted(Path(args.runs).rglob("record*.json"))
    if not paths:
        raise SystemExit(f"no record JSON files under {args.runs}")
    table = records_to_table([RunRecord.load(p) for p in paths])
    _write(Path(args.table), table)
    print(table, end="")
    return 0


def cmd_probe(args) -> int:
    record = RunRecord.load(args.run)
    probes = record.get("probes")
    if not probes:
        raise SystemExit("this record has no probe traces (enable probes in the config)")
    lines: list[str] = []
    if args.figure == "gradnorm":
        lines.append("block,value,stage")
        for stage, steps in sorted(probes["grad_norms"].items(), key=lambda kv: int(kv[0])):
            labels = steps[0].keys()
            for label in labels:
                mean = sum(s[label] for s in steps) / len(steps)
                lines.append(f"{label},{mean:.6g},{stage}")
    elif args.figure == "shift":
        lines.append("block,value,stage")
        for stage, mse in sorted(probes["shift_mse"].items(), key=lambda kv: int(kv[0])):
            for label, value in mse.items():
                lines.append(f"{label},{value:.6g},{stage}")
    elif args.figure == "cka":
        if not probes.get("cka_shallow"):
            raise SystemExit("no CKA matrices in this record (needs an expansion-method run)")
        lines.append("depth,row,col,value")
        for depth in ("shallow", "deep"):
            matrix = probes[f"cka_{depth}"]
            for i, row in enumerate(matrix):
                for j, value in enumerate(row):
                    lines.append(f"{depth},{i},{j},{value:.6g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(Path(args.out), text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cilbench",
                                     description="desk-scale class-incremental learning workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a config at several memory budgets")
    p.add_argument("--config", required=True)
    p.add_argument("--memory-points", required=True, help='comma list of MB targets, e.g. "0.01,0.02"')
    p.add_argument("--out", default="sweep_out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("align", help="exemplar count that fills a target budget")
    p.add_argument("--params", type=int, required=True, help="model parameter count")
    p.add_argument("--bytes-per-exemplar", type=int, required=True)
    p.add_argument("--target-mb", type=float, required=True)
    p.add_argument("--base-exemplars", type=int, default=0)
    p.add_argument("--bytes-per-param", type=int, default=4)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("metrics", help="aggregate run records into the metrics CSV")
    p.add_argument("--runs", required=True, help="directory containing record JSON files")
    p.add_argument("--table", required=True, help="output CSV path")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("probe", help="dump a recorded probe figure as CSV")
    p.add_argument("--run", required=True, help="path to a record.json")
    p.add_argument("--figure", required=True, choices=("gradnorm", "shift", "cka"))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_probe)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
