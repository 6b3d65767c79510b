"""Workspace-backed pipeline stages with content-hash skipping.

Layout under the workspace root::

    panel/     log.npz, validation.json, panel.npz, counts.json
    features/  train.npz, validation.npz, test1.npz, test2.npz, schema.json
    runs/      per-trial checkpoints and predictions, trials.csv, index.json
    stack/     stacker.json, sweep.csv, blend.npz, thresholds.tsv, decisions.npz
    report/    metrics.json, tables.txt

Each stage writes a stamp holding a digest of its parameters and input
files plus the digests of what it produced. A stage is skipped when the
stamp matches and every output is intact.
"""

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from filelock import FileLock, Timeout

from .config import int_list, read_kv, write_kv
from .errors import ConfigError, NextbuyError, PipelineError
from .f1max import SENTINEL, ThresholdMap, best_thresholds, decision_rule, fit_thresholds, per_consumer_f1
from .features import featurize, load_features, save_features
from .ingest import FormatConfig, load_log, parse_transactions, save_log, validate_log
from .metrics import eda_report, format_table, micro_prf, probability_histogram, write_report
from .nncore import EPS, bce_loss
from .panel import SPLITS, SplitConfig, build_panel, load_panel, save_panel
from .stacking import StackerModel, blend, build_stacker, k_sweep
from .store import file_digest, load_columns, save_columns
from .training import ARCHS, TrialTable, default_grid, run_grid

STAGES = ("ingest", "panel", "featurize", "train", "stack", "threshold", "evaluate")
EVAL_SPLITS = ("validation", "test1", "test2")

DEFAULTS = {
    "input": "",
    "format": "",
    "attributes": "",
    "splits": "46,2,2,2",
    "week_anchor": "monday",
    "start_rule": "first_purchase",
    "windows": "4,8,12",
    "lags": "1,2,4",
    "seq_len": "16",
    "grid": "default",
    "archs": "mlp,tcn",
    "epochs": "20",
    "batch_size": "512",
    "seed": "7",
    "jobs": "1",
    "swa_start": "0.5",
    "stack.k": "3",
    "stack.sweep": "3,5,10,15,25",
    "stacker.constrain": "simplex",
    "threshold.fit_split": "test1",
    "threshold.apply_split": "test2",
    "threshold.fallback": "median",
    "report.average": "micro",
    "report.bins": "20",
}


class PipelineConfig:
    """Flat string-valued configuration with typed accessors."""

    def __init__(self, entries=None):
        unknown = set(entries or {}) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        self.entries = {**DEFAULTS, **{k: str(v) for k, v in (entries or {}).items()}}

    @classmethod
    def from_file(cls, path, overrides=None):
        entries = read_kv(path) if path else {}
        entries.update(overrides or {})
        return cls(entries)

    def save(self, path):
        write_kv(path, dict(sorted(self.entries.items())))

    def __getitem__(self, key):
        return self.entries[key]

    def __eq__(self, other):
        return isinstance(other, PipelineConfig) and self.entries == other.entries

    def ints(self, key):
        return int_list(self.entries[key])

    def int(self, key):
        try:
            return int(self.entries[key])
        except ValueError as exc:
            raise ConfigError(f"{key} must be an integer, got {self.entries[key]!r}") from exc

    def subset(self, keys):
        return {k: self.entries[k] for k in keys}


@dataclass
class StageOutcome:
    stage: str
    skipped: bool
    outputs: list


class Workspace:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, *parts):
        return self.root.joinpath(*parts)

    def stamp_path(self, stage):
        return self.path(".stamps", f"{stage}.json")

    def lock(self):
        self.root.mkdir(parents=True, exist_ok=True)
        return FileLock(str(self.path(".lock")), timeout=0)


def _digest_inputs(params, inputs):
    h = hashlib.sha256(json.dumps(params, sort_keys=True).encode())
    for p in sorted(str(p) for p in inputs):
        h.update(p.encode())
        h.update(file_digest(p).encode() if os.path.exists(p) else b"missing")
    return h.hexdigest()


def _stamp_valid(ws, stage, key):
    path = ws.stamp_path(stage)
    if not path.exists():
        return False
    with open(path) as fh:
        stamp = json.load(fh)
    if stamp.get("key") != key:
        return False
    for out, digest in stamp["outputs"].items():
        p = ws.root / out
        if not p.exists() or file_digest(p) != digest:
            return False
    return True


def run_stage(ws, stage, params, inputs, fn, force=False):
    """Run ``fn()`` (which returns produced paths) unless the stamp says it is up to date."""
    key = _digest_inputs(params, inputs)
    if not force and _stamp_valid(ws, stage, key):
        with open(ws.stamp_path(stage)) as fh:
            return StageOutcome(stage, True, list(json.load(fh)["outputs"]))
    try:
        produced = fn()
    except NextbuyError as exc:
        raise PipelineError(str(exc), stage=stage) from exc
    except (OSError, ValueError, KeyError) as exc:
        raise PipelineError(f"{type(exc).__name__}: {exc}", stage=stage) from exc
    outputs = {str(Path(p).relative_to(ws.root)): file_digest(p) for p in sorted(map(str, produced))}
    ws.stamp_path(stage).parent.mkdir(parents=True, exist_ok=True)
    with open(ws.stamp_path(stage), "w") as fh:
        json.dump({"stage": stage, "key": key, "outputs": outputs}, fh, indent=2, sort_keys=True)
    return StageOutcome(stage, False, list(outputs))


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# stages


def stage_ingest(ws, cfg, force=False):
    if not cfg["input"]:
        raise PipelineError("no input file configured (set 'input')", stage="ingest")
    inputs = [cfg["input"]] + ([cfg["format"]] if cfg["format"] else [])
    log_path, report_path = ws.path("panel", "log.npz"), ws.path("panel", "validation.json")

    def work():
        fmt = FormatConfig.from_file(cfg["format"]) if cfg["format"] else FormatConfig()
        log = parse_transactions(cfg["input"], fmt)
        save_log(log, log_path)
        _write_json(report_path, validate_log(log).as_dict())
        return [log_path, report_path]

    return run_stage(ws, "ingest", cfg.subset(["input", "format"]), inputs, work, force)


def stage_panel(ws, cfg, force=False):
    log_path = ws.path("panel", "log.npz")
    panel_path, counts_path = ws.path("panel", "panel.npz"), ws.path("panel", "counts.json")

    def work():
        panel = build_panel(load_log(log_path), SplitConfig.parse(cfg["splits"]), cfg["week_anchor"], cfg["start_rule"])
        save_panel(panel_path, panel)
        _write_json(counts_path, {"ranges": {k: list(v) for k, v in panel.ranges.items()}, "counts": panel.counts})
        return [panel_path, counts_path]

    params = cfg.subset(["splits", "week_anchor", "start_rule"])
    return run_stage(ws, "panel", params, [log_path], work, force)


def load_attributes(path):
    if not path:
        return None
    return pd.read_csv(path, dtype={"consumer_id": str})


def stage_featurize(ws, cfg, force=False):
    inputs = [ws.path("panel", "log.npz"), ws.path("panel", "panel.npz")]
    if cfg["attributes"]:
        inputs.append(cfg["attributes"])
    out_dir = ws.path("features")

    def work():
        matrices = featurize(
            load_log(inputs[0]), load_panel(inputs[1]),
            windows=tuple(cfg.ints("windows")), lags=tuple(cfg.ints("lags")),
            seq_len=cfg.int("seq_len"), attributes=load_attributes(cfg["attributes"]),
        )
        save_features(out_dir, matrices)
        schema = matrices["train"].schema
        _write_json(out_dir / "schema.json", {"digest": schema.digest(), **schema.to_dict()})
        return [out_dir / f"{s}.npz" for s in SPLITS] + [out_dir / "schema.json"]

    params = cfg.subset(["windows", "lags", "seq_len", "attributes"])
    return run_stage(ws, "featurize", params, inputs, work, force)


def grid_configs(cfg):
    if cfg["grid"] != "default":
        raise ConfigError(f"unknown grid {cfg['grid']!r}; only 'default' is defined")
    archs = tuple(a.strip() for a in cfg["archs"].split(",") if a.strip())
    if not archs or set(archs) - set(ARCHS):
        raise ConfigError(f"archs must be drawn from {ARCHS}")
    return default_grid(epochs=cfg.int("epochs"), batch_size=cfg.int("batch_size"), seed=cfg.int("seed"),
                        archs=archs, swa_start=float(cfg["swa_start"]))


def stage_train(ws, cfg, force=False):
    features = ws.path("features")
    inputs = [features / f"{s}.npz" for s in SPLITS]
    out_dir = ws.path("runs")

    def work():
        configs = grid_configs(cfg)
        table = run_grid(configs, features_dir=features, jobs=cfg.int("jobs"), out_dir=out_dir)
        produced = [out_dir / "trials.csv", out_dir / "index.json"]
        for r in table.successful():
            produced += [out_dir / f"{r.trial_id}.pred.npz", out_dir / r.checkpoint]
        return produced

    params = cfg.subset(["grid", "archs", "epochs", "batch_size", "seed", "swa_start"])
    return run_stage(ws, "train", params, inputs, work, force)


def split_labels(ws, split_names=EVAL_SPLITS):
    out = {}
    for s in split_names:
        cols, _ = load_columns(ws.path("features", f"{s}.npz"), kind="feature-matrix")
        out[s] = cols["label"]
    return out


def stage_stack(ws, cfg, force=False):
    inputs = [ws.path("runs", "index.json")] + [ws.path("features", f"{s}.npz") for s in EVAL_SPLITS]
    out = ws.path("stack")

    def work():
        table = TrialTable.load(ws.path("runs"))
        labels = split_labels(ws)
        sweep = k_sweep(table, labels, cfg.ints("stack.sweep"), cfg["stacker.constrain"])
        model = build_stacker(table, cfg.int("stack.k"), constrain=cfg["stacker.constrain"], labels=labels["test1"])
        out.mkdir(parents=True, exist_ok=True)
        model.save(out / "stacker.json")
        with open(out / "sweep.csv", "w") as fh:
            fh.write("k,effective_k,validation_bce,test1_bce,test2_bce\n")
            for row, _ in sweep:
                fh.write(f"{row.k},{row.effective_k}," + ",".join(f"{row.bce[s]:.6f}" for s in EVAL_SPLITS) + "\n")
        _write_json(out / "sweep.json", [
            {"k": row.k, "effective_k": row.effective_k, "bce": row.bce, "trials": m.trial_ids,
             "weights": [float(w) for w in m.weights], "source": m.source}
            for row, m in sweep
        ])
        save_columns(out / "blend.npz", {s: blend(model, table, s) for s in EVAL_SPLITS}, {"k": model.k}, kind="blend")
        return [out / "stacker.json", out / "sweep.csv", out / "sweep.json", out / "blend.npz"]

    params = cfg.subset(["stack.k", "stack.sweep", "stacker.constrain"])
    return run_stage(ws, "stack", params, inputs, work, force)


def _split_rows(ws, split_name):
    cols, _ = load_columns(ws.path("features", f"{split_name}.npz"), kind="feature-matrix")
    return cols["consumer"], cols["label"].astype(np.int64)


def stage_threshold(ws, cfg, force=False):
    fit_s, apply_s = cfg["threshold.fit_split"], cfg["threshold.apply_split"]
    for s in (fit_s, apply_s):
        if s not in EVAL_SPLITS:
            raise ConfigError(f"threshold splits must be among {EVAL_SPLITS}, got {s!r}")
    inputs = [ws.path("stack", "blend.npz"), ws.path("panel", "log.npz")]
    inputs += [ws.path("features", f"{s}.npz") for s in (fit_s, apply_s)]
    out = ws.path("stack")

    def work():
        probs, _ = load_columns(ws.path("stack", "blend.npz"), kind="blend")
        consumers, actual = _split_rows(ws, fit_s)
        fallback = None if cfg["threshold.fallback"] == "median" else float(cfg["threshold.fallback"])
        tmap = fit_thresholds(consumers, actual, probs[fit_s], fallback)
        log = load_log(ws.path("panel", "log.npz"))
        tmap.save(out / "thresholds.tsv", consumer_ids=log.consumer_ids)
        decisions = {}
        for s in EVAL_SPLITS:
            c, _ = _split_rows(ws, s)
            decisions[s] = decision_rule(probs[s], tmap.lookup(c))
        save_columns(out / "decisions.npz", decisions,
                     {"fit_split": fit_s, "apply_split": apply_s, "fallback": tmap.fallback}, kind="decisions")
        return [out / "thresholds.tsv", out / "decisions.npz"]

    params = cfg.subset(["threshold.fit_split", "threshold.apply_split", "threshold.fallback"])
    return run_stage(ws, "threshold", params, inputs, work, force)


def threshold_dominance(consumers, actual, probs):
    """Per consumer with positives: F1 at the fitted cutoff vs at 0.5."""
    thr, f1, k, v, b, ids = best_thresholds(consumers, actual, probs)
    at_half = per_consumer_f1(consumers, actual, decision_rule(probs, 0.5))
    rows = []
    for c, t, f, bb in zip(ids.tolist(), thr.tolist(), f1.tolist(), b.tolist()):
        if bb > 0:
            rows.append((c, t, f, at_half[c][3]))
    return rows


def build_report(ws, cfg):
    """The deterministic metrics report: everything but wall-clock timings."""
    counts = json.loads(ws.path("panel", "counts.json").read_text())
    table = TrialTable.load(ws.path("runs"))
    labels = split_labels(ws)
    stacker = StackerModel.load(ws.path("stack", "stacker.json"))
    sweep = json.loads(ws.path("stack", "sweep.json").read_text())
    probs, _ = load_columns(ws.path("stack", "blend.npz"), kind="blend")
    decisions, dheader = load_columns(ws.path("stack", "decisions.npz"), kind="decisions")
    average = cfg["report.average"]

    selected_test1 = {t: table.by_id()[t].bce["test1"] for t in stacker.trial_ids}
    stack_bce = {s: bce_loss(np.clip(probs[s], EPS, 1 - EPS), labels[s]) for s in EVAL_SPLITS}
    prf = {}
    for s in EVAL_SPLITS:
        consumers, actual = _split_rows(ws, s)
        p, r, f = micro_prf(decisions[s], actual, consumers, average)
        p5, r5, f5 = micro_prf(decision_rule(probs[s], 0.5), actual, consumers, average)
        prf[s] = {"precision": p, "recall": r, "f1": f, "at_0.5": {"precision": p5, "recall": r5, "f1": f5}}
    fit_s = dheader["fit_split"]
    consumers, actual = _split_rows(ws, fit_s)
    dom = threshold_dominance(consumers, actual, probs[fit_s])
    tmap = ThresholdMap.load(ws.path("stack", "thresholds.tsv"),
                             consumer_index={cid: i for i, cid in enumerate(load_log(ws.path("panel", "log.npz")).consumer_ids)})
    thr_values = np.array(list(tmap.thresholds.values()))

    return {
        "panel": counts,
        "trials": {
            r.trial_id: {"status": r.status, "bce": r.bce, "selected": r.selected} for r in table.results
        },
        "trial_summary": table.summary_report(),
        "stacking": {
            "k": stacker.k,
            "trial_ids": stacker.trial_ids,
            "weights": [float(w) for w in stacker.weights],
            "source": stacker.source,
            "iterations": stacker.iterations,
            "bce": stack_bce,
            "min_selected_test1_bce": min(selected_test1.values()),
            "dominates_selected": stack_bce["test1"] <= min(selected_test1.values()),
            "sweep": sweep,
        },
        "thresholds": {
            "fit_split": fit_s,
            "apply_split": dheader["apply_split"],
            "consumers": len(tmap),
            "fallback": tmap.fallback,
            "sentinel_count": int(np.sum(thr_values == SENTINEL)),
            "median": float(np.median(thr_values)) if len(thr_values) else None,
            "dominance_checked": len(dom),
            "dominance_violations": sum(1 for _, _, f, h in dom if f < h),
        },
        "prf": prf,
        "average": average,
        "probability_histogram": probability_histogram(probs[dheader["apply_split"]], labels[dheader["apply_split"]],
                                                       cfg.int("report.bins")),
        "eda": eda_report(load_log(ws.path("panel", "log.npz"))),
    }


def render_tables(report):
    parts = []
    rows = [
        [t, v["status"]] + [v["bce"].get(s) for s in EVAL_SPLITS]
        for t, v in sorted(report["trials"].items())
    ]
    parts.append("Trials (BCE)\n" + format_table(["trial", "status", *EVAL_SPLITS], rows))
    summ = report["trial_summary"]
    rows = [[a, *(v[s] for s in EVAL_SPLITS)] for a, v in summ["architectures"].items()]
    parts.append(f"Mean of top {summ['top_n']} trials\n" + format_table(["arch", *EVAL_SPLITS], rows)
                 + f"\nwinning optimizer+scheduler: {summ['winning_pair']}"
                 + f"\nTCN mean test2 <= MLP mean test2: {summ['tcn_le_mlp']}")
    rows = [[r["k"], r["effective_k"], *(r["bce"][s] for s in EVAL_SPLITS)] for r in report["stacking"]["sweep"]]
    parts.append("Stacking sweep (BCE)\n" + format_table(["K", "used", *EVAL_SPLITS], rows))
    rows = [[s, v["precision"], v["recall"], v["f1"]] for s, v in report["prf"].items()]
    parts.append(f"After per-consumer thresholds ({report['average']})\n"
                 + format_table(["split", "precision", "recall", "f1"], rows))
    return "\n\n".join(parts) + "\n"


def stage_evaluate(ws, cfg, report_path=None, force=False):
    inputs = [ws.path("panel", "counts.json"), ws.path("panel", "log.npz"), ws.path("runs", "index.json"),
              ws.path("stack", "stacker.json"), ws.path("stack", "sweep.json"), ws.path("stack", "blend.npz"),
              ws.path("stack", "decisions.npz"), ws.path("stack", "thresholds.tsv")]
    report_path = Path(report_path) if report_path else ws.path("report", "metrics.json")
    tables_path = ws.path("report", "tables.txt")

    def work():
        report = build_report(ws, cfg)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        write_report(report_path, report)
        tables_path.parent.mkdir(parents=True, exist_ok=True)
        tables_path.write_text(render_tables(json.loads(report_path.read_text())))
        return [p for p in (report_path, tables_path) if _inside(p, ws.root)]

    params = {**cfg.subset(["report.average", "report.bins"]), "report": str(report_path)}
    return run_stage(ws, "evaluate", params, inputs, work, force)


def _inside(path, root):
    try:
        Path(path).resolve().relative_to(Path(root).resolve())
        return True
    except ValueError:
        return False


def run_pipeline(workspace, cfg, force=False, report_path=None):
    ws = Workspace(workspace)
    try:
        with ws.lock():
            outcomes = [
                stage_ingest(ws, cfg, force),
                stage_panel(ws, cfg, force),
                stage_featurize(ws, cfg, force),
                stage_train(ws, cfg, force),
                stage_stack(ws, cfg, force),
                stage_threshold(ws, cfg, force),
                stage_evaluate(ws, cfg, report_path, force),
            ]
    except Timeout:
        raise PipelineError(f"workspace {workspace} is locked by another run", stage="run") from None
    return outcomes
