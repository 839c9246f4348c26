"""Command-line entry point: ``czsl run|sweep|convert|report``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error, 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig
from .data import convert_csv
from .errors import CZSLError, ConfigError
from .runner import (SWEEP_AXES, emit_report, plotdata_text, report_from_checkpoint,
                     resume_experiment, run_experiment, sweep)


def _parse_values(text: str) -> list:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--values must be a comma-separated list of integers, got {text!r}") from exc
    if not values:
        raise ConfigError("--values is empty")
    return values


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if getattr(args, "output_dir", None):
        cfg.output_dir = args.output_dir
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.resume:
        report = resume_experiment(cfg, args.resume)
    else:
        report = run_experiment(cfg, stop_after=args.stop_after)
    print(json.dumps({"mSA": report.mSA, "mUA": report.mUA, "mH": report.mH,
                      "forgetting": report.forgetting}))
    return 0


def cmd_sweep(args) -> int:
    out = sweep(_load(args), args.axis, _parse_values(args.values))
    for v, r in zip(out.values, out.reports):
        print(f"{args.axis}={v}\tmSA={r.mSA}\tmUA={r.mUA}\tmH={r.mH}")
    return 0


def cmd_convert(args) -> int:
    ds = convert_csv(args.csv_dir, args.out)
    print(f"wrote {ds.num_samples} samples, {ds.num_classes} classes to {args.out}")
    return 0


def cmd_report(args) -> int:
    report = report_from_checkpoint(args.checkpoint)
    if args.out is None:
        if args.format == "json":
            sys.stdout.write(report.to_json())
        elif args.format == "csv":
            sys.stdout.write(report.to_csv())
        else:
            sys.stdout.write(plotdata_text(report.plot_rows()))
        return 0
    emit_report(report, args.out, formats=(args.format,), stem=Path(args.checkpoint).stem)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="czsl", description="Continual zero-shot learning experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-task progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--output-dir")
    r.add_argument("--resume", metavar="CHECKPOINT", help="continue from a task checkpoint")
    r.add_argument("--stop-after", type=int, metavar="K", help="stop after task K")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="repeat a run over one axis")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--values", required=True, help="comma-separated, e.g. 1,3,5,10")
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("convert", help="convert CSV feature files to the binary dataset layout")
    c.add_argument("--csv-dir", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_convert)

    rep = sub.add_parser("report", help="re-emit the report stored in a checkpoint")
    rep.add_argument("--checkpoint", required=True)
    rep.add_argument("--format", choices=("json", "csv", "plotdata"), default="json")
    rep.add_argument("--out", help="directory to write into (default: stdout)")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CZSLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
