"""Command-line entry point: ``nextbuy <subcommand> [options]``."""

import argparse
import json
import os
import sys
from pathlib import Path

from filelock import Timeout

from . import pipeline
from .errors import NextbuyError, PipelineError
from .ingest import FormatConfig, parse_transactions, save_log, validate_log
from .pipeline import PipelineConfig, Workspace
from .synth import SynthConfig, write_synthetic

# CLI flag -> configuration key, per subcommand
FLAG_KEYS = {
    "ingest": {"input": "input", "format": "format"},
    "panel": {"splits": "splits", "week_anchor": "week_anchor", "start_rule": "start_rule"},
    "featurize": {"windows": "windows", "lags": "lags", "seq_len": "seq_len", "attributes": "attributes"},
    "train": {"grid": "grid", "jobs": "jobs", "epochs": "epochs", "batch_size": "batch_size", "seed": "seed",
              "archs": "archs"},
    "stack": {"k": "stack.k", "sweep": "stack.sweep", "constrain": "stacker.constrain"},
    "threshold": {"fit_split": "threshold.fit_split", "apply_split": "threshold.apply_split",
                  "fallback": "threshold.fallback"},
    "evaluate": {"average": "report.average"},
    "run": {"input": "input", "attributes": "attributes", "jobs": "jobs", "epochs": "epochs"},
}


def _common(p):
    p.add_argument("--workspace", default=os.environ.get("NEXTBUY_WORKSPACE", "workspace"),
                   help="workspace directory (default: $NEXTBUY_WORKSPACE or ./workspace)")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one configuration key")
    p.add_argument("--force", action="store_true", help="re-run even when inputs are unchanged")


def build_parser():
    parser = argparse.ArgumentParser(prog="nextbuy", description="Weekly consumer-item purchase prediction pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic transaction log")
    p.add_argument("--consumers", type=int, default=SynthConfig.n_consumers)
    p.add_argument("--items", type=int, default=SynthConfig.n_items)
    p.add_argument("--weeks", type=int, default=SynthConfig.n_weeks)
    p.add_argument("--seed", type=int, default=SynthConfig.seed)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("ingest", help="parse and validate a transaction file")
    _common(p)
    p.add_argument("--input")
    p.add_argument("--format", help="column-mapping configuration file")
    p.add_argument("--out", help="write the parsed log here instead of the workspace")

    p = sub.add_parser("panel", help="build the weekly panel and its splits")
    _common(p)
    p.add_argument("--splits")
    p.add_argument("--week-anchor", dest="week_anchor")
    p.add_argument("--start-rule", dest="start_rule", choices=("first_purchase", "first_activity"))

    p = sub.add_parser("featurize", help="compute feature matrices")
    _common(p)
    p.add_argument("--windows")
    p.add_argument("--lags")
    p.add_argument("--seq-len", dest="seq_len")
    p.add_argument("--attributes", help="consumer attribute CSV")

    p = sub.add_parser("train", help="run the trial grid")
    _common(p)
    p.add_argument("--grid")
    p.add_argument("--jobs")
    p.add_argument("--epochs")
    p.add_argument("--batch-size", dest="batch_size")
    p.add_argument("--seed")
    p.add_argument("--archs")
    p.add_argument("--out", help="copy the trial table and index here as well")

    p = sub.add_parser("stack", help="fit the K-best blend and the K sweep")
    _common(p)
    p.add_argument("--k")
    p.add_argument("--sweep")
    p.add_argument("--constrain", choices=("simplex", "none"))

    p = sub.add_parser("threshold", help="fit per-consumer F1 cutoffs")
    _common(p)
    p.add_argument("--fit-split", dest="fit_split")
    p.add_argument("--apply-split", dest="apply_split")
    p.add_argument("--fallback", help="'median' or a fixed cutoff for unseen consumers")

    p = sub.add_parser("evaluate", help="write the metrics report")
    _common(p)
    p.add_argument("--report", help="report path (default: <workspace>/report/metrics.json)")
    p.add_argument("--average", choices=("micro", "macro"))

    p = sub.add_parser("run", help="run every stage in order")
    _common(p)
    p.add_argument("--input")
    p.add_argument("--attributes")
    p.add_argument("--jobs")
    p.add_argument("--epochs")
    p.add_argument("--report")
    return parser


def _config(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise NextbuyError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for flag, key in FLAG_KEYS.get(args.command, {}).items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return PipelineConfig.from_file(args.config, overrides)


def _print_outcome(outcome):
    state = "skipped (up to date)" if outcome.skipped else "done"
    print(f"{outcome.stage}: {state}")


def cmd_synth(args):
    cfg = SynthConfig(n_consumers=args.consumers, n_items=args.items, n_weeks=args.weeks, seed=args.seed)
    log, truth = write_synthetic(args.out, cfg)
    print(json.dumps({"out": str(args.out), **truth.counts}, sort_keys=True))


STAGE_FUNCS = {
    "ingest": pipeline.stage_ingest,
    "panel": pipeline.stage_panel,
    "featurize": pipeline.stage_featurize,
    "train": pipeline.stage_train,
    "stack": pipeline.stage_stack,
    "threshold": pipeline.stage_threshold,
}


def cmd_stage(args):
    cfg = _config(args)
    if args.command == "ingest" and args.out:
        fmt = FormatConfig.from_file(cfg["format"]) if cfg["format"] else FormatConfig()
        log = parse_transactions(cfg["input"], fmt)
        save_log(log, args.out)
        print(json.dumps(validate_log(log).as_dict(), sort_keys=True, default=str))
        return
    ws = Workspace(args.workspace)
    with ws.lock():
        if args.command == "evaluate":
            outcome = pipeline.stage_evaluate(ws, cfg, args.report, args.force)
        else:
            outcome = STAGE_FUNCS[args.command](ws, cfg, args.force)
    _print_outcome(outcome)
    if args.command == "train" and args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("trials.csv", "index.json"):
            (out / name).write_bytes(ws.path("runs", name).read_bytes())
    if args.command == "evaluate":
        print(ws.path("report", "tables.txt").read_text())


def cmd_run(args):
    cfg = _config(args)
    for outcome in pipeline.run_pipeline(args.workspace, cfg, args.force, args.report):
        _print_outcome(outcome)
    cfg.save(Path(args.workspace) / "pipeline.cfg")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            cmd_synth(args)
        elif args.command == "run":
            cmd_run(args)
        else:
            cmd_stage(args)
    except Timeout:
        print(f"error: workspace {args.workspace} is locked by another run", file=sys.stderr)
        return 3
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NextbuyError as exc:
        stage = "run" if args.command == "run" else args.command
        print(f"error: [{stage}] {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
