"""Trial grid: train MLP/TCN classifiers under each optimizer/schedule/averaging setting."""

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .errors import ContractError, PipelineError, TrainingError
from .features import load_features
from .nncore import (
    SWA,
    CyclicLR,
    ReduceOnPlateau,
    bce_logit_grad,
    bce_loss,
    build_model,
    load_checkpoint,
    make_optimizer,
    parameter_average,
    save_checkpoint,
)
from .store import load_columns, save_columns

EVAL_SPLITS = ("validation", "test1", "test2")

# (optimizer, scheduler, swa, parameter averaging), one tuple per grid row
DEFAULT_ROWS = (
    ("rmsprop", "plateau", True, False),
    ("rmsprop", "cyclic", True, False),
    ("adam", "plateau", True, False),
    ("rmsprop", "plateau", False, False),
    ("rmsprop", "cyclic", False, False),
    ("adam", "plateau", False, False),
    ("rmsprop", "plateau", False, True),
    ("rmsprop", "cyclic", False, True),
    ("adam", "plateau", False, True),
    ("rmsprop", "plateau", True, True),
    ("rmsprop", "cyclic", True, True),
    ("adam", "plateau", True, True),
)
ARCHS = ("mlp", "tcn")


@dataclass(frozen=True)
class TrialConfig:
    arch: str
    optimizer: str
    scheduler: str
    swa: bool
    parameter_averaging: bool
    row: int = 0
    epochs: int = 20
    batch_size: int = 512
    seed: int = 7
    lr: float = 1e-3
    base_lr: float = 1e-6
    min_lr: float = 1e-6
    weight_decay: float = 1e-5
    patience: int = 2
    factor: float = 0.1
    swa_start: float = 0.5
    swa_lr: float = 1e-3
    n_checkpoints: int = 3

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ContractError(f"unknown architecture {self.arch!r}")
        if self.optimizer not in ("rmsprop", "adam"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")
        if self.scheduler not in ("cyclic", "plateau"):
            raise ContractError(f"unknown scheduler {self.scheduler!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.n_checkpoints < 1:
            raise ContractError("epochs >= 0, batch_size >= 1 and n_checkpoints >= 1 required")

    @property
    def trial_id(self):
        return f"{self.arch}-{self.row:02d}"

    @property
    def swa_start_epoch(self):
        return int(math.floor(self.swa_start * self.epochs))

    def model_seed(self):
        ss = np.random.SeedSequence([self.seed, ARCHS.index(self.arch), self.row])
        return int(ss.generate_state(1)[0])

    def to_dict(self):
        return asdict(self)


def default_grid(epochs=20, batch_size=512, seed=7, archs=ARCHS, **overrides):
    return [
        TrialConfig(arch, opt, sched, swa, pavg, row=r, epochs=epochs, batch_size=batch_size, seed=seed, **overrides)
        for arch in archs
        for r, (opt, sched, swa, pavg) in enumerate(DEFAULT_ROWS, start=1)
    ]


@dataclass
class TrialResult:
    trial_id: str
    config: dict
    status: str
    bce: dict = field(default_factory=dict)  # split -> loss
    probabilities: dict = field(default_factory=dict)  # split -> per-row probabilities
    history: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    error: str = ""
    checkpoint: str = ""
    seconds: float = 0.0

    @property
    def ok(self):
        return self.status == "ok"

    def summary(self):
        return {
            "trial_id": self.trial_id,
            "config": self.config,
            "status": self.status,
            "bce": self.bce,
            "selected": self.selected,
            "history": self.history,
            "error": self.error,
            "checkpoint": self.checkpoint,
        }


def base_rate_bce(train_labels, labels):
    """BCE of the constant predictor at the training positive rate."""
    rate = float(np.mean(train_labels))
    return bce_loss(np.full(len(labels), rate), labels)


def _evaluate(model, matrix):
    p = model.predict(matrix.batch())
    return p, bce_loss(p, matrix.labels)


def run_trial(cfg, data, out_dir=None):
    """Train one configuration; failures come back as ``status="failed"`` results."""
    start = time.perf_counter()
    try:
        result = _train(cfg, data, out_dir)
    except (TrainingError, FloatingPointError) as exc:
        result = TrialResult(cfg.trial_id, cfg.to_dict(), "failed", error=str(exc))
    result.seconds = time.perf_counter() - start
    return result


def _train(cfg, data, out_dir):
    train, val = data["train"], data["validation"]
    model = build_model(cfg.arch, train.schema, seed=cfg.model_seed())
    params = model.params
    opt = make_optimizer(cfg.optimizer, params)
    n_batches = max(1, math.ceil(len(train) / cfg.batch_size))
    sched = (
        CyclicLR(n_batches, cfg.base_lr, cfg.lr)
        if cfg.scheduler == "cyclic"
        else ReduceOnPlateau(cfg.lr, cfg.patience, cfg.factor, cfg.min_lr)
    )
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, ARCHS.index(cfg.arch), cfg.row, 1]))
    swa = SWA() if cfg.swa else None

    _, init_loss = _evaluate(model, val)
    candidates = [("epoch-0", model.copy_params(), init_loss)]
    history = []
    for epoch in range(1, cfg.epochs + 1):
        in_swa = swa is not None and epoch > cfg.swa_start_epoch
        perm = rng.permutation(len(train))
        total = 0.0
        lr = sched.lr
        for s in range(0, len(train), cfg.batch_size):
            idx = perm[s : s + cfg.batch_size]
            lr = cfg.swa_lr if in_swa else sched.lr
            p = model.forward(train.batch(idx), training=True)
            y = train.labels[idx]
            loss = bce_loss(p, y)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            grads = model.backward(bce_logit_grad(p, y), cfg.weight_decay)
            opt.step(params, grads, lr)
            total += loss * len(idx)
            if sched.per_batch and not in_swa:
                sched.step()
        _, val_loss = _evaluate(model, val)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        if not sched.per_batch and not in_swa:
            sched.step(val_loss)
        if in_swa:
            swa.accumulate(params)
        candidates.append((f"epoch-{epoch}", model.copy_params(), val_loss))
        history.append({"epoch": epoch, "train_bce": total / len(train), "val_bce": val_loss, "lr": lr})

    if swa is not None and swa.count:
        model.set_params(swa.finalize())
        _, swa_loss = _evaluate(model, val)
        candidates.append(("swa", model.copy_params(), swa_loss))

    ranked = sorted(candidates, key=lambda c: c[2])  # stable: earlier candidate wins ties
    if cfg.parameter_averaging:
        chosen = ranked[: cfg.n_checkpoints]
        final = parameter_average([(p, loss) for _, p, loss in chosen])
    else:
        chosen = ranked[:1]
        final = chosen[0][1]
    model.set_params(final)

    result = TrialResult(cfg.trial_id, cfg.to_dict(), "ok", history=history, selected=[c[0] for c in chosen])
    for split_name in EVAL_SPLITS:
        p, loss = _evaluate(model, data[split_name])
        result.probabilities[split_name] = p
        result.bce[split_name] = loss
    if out_dir is not None:
        out = Path(out_dir)
        ckpt = out / f"{cfg.trial_id}.ckpt.npz"
        save_checkpoint(ckpt, model, result.bce["validation"], extra={"trial_id": cfg.trial_id})
        result.checkpoint = ckpt.name
    return result


def reevaluate_checkpoint(path, matrix):
    model, _, _ = load_checkpoint(path)
    return _evaluate(model, matrix)[1]


# ---------------------------------------------------------------------------
# grid execution

_WORKER_DATA = None


def _init_worker(features_dir):
    global _WORKER_DATA
    from threadpoolctl import threadpool_limits

    threadpool_limits(1)
    _WORKER_DATA = load_features(features_dir)


def _run_in_worker(cfg, out_dir):
    return run_trial(cfg, _WORKER_DATA, out_dir)


def run_grid(configs, data=None, features_dir=None, jobs=1, out_dir=None):
    """Run every configuration; ``jobs > 1`` uses a process pool fed from ``features_dir``."""
    configs = list(configs)
    ids = [c.trial_id for c in configs]
    if len(set(ids)) != len(ids):
        raise ContractError("trial ids in a grid must be unique")
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    if jobs > 1 and features_dir is not None:
        with ProcessPoolExecutor(jobs, mp_context=get_context("spawn"), initializer=_init_worker,
                                 initargs=(str(features_dir),)) as pool:
            results = list(pool.map(_run_in_worker, configs, [out_dir] * len(configs)))
    else:
        if data is None:
            if features_dir is None:
                raise ContractError("run_grid needs data or features_dir")
            data = load_features(features_dir)
        results = [run_trial(c, data, out_dir) for c in configs]
    if not any(r.ok for r in results):
        raise PipelineError("every trial failed", stage="train")
    table = TrialTable(results, base_rate=base_rate_bce(data_labels(data, features_dir, "train"),
                                                         data_labels(data, features_dir, "test2")))
    if out_dir is not None:
        table.save(out_dir)
    return table


def data_labels(data, features_dir, split_name):
    if data is not None:
        return data[split_name].labels
    cols, _ = load_columns(Path(features_dir) / f"{split_name}.npz", kind="feature-matrix")
    return cols["label"]


class TrialTable:
    def __init__(self, results, base_rate=None):
        self.results = list(results)
        self.base_rate = base_rate

    def __len__(self):
        return len(self.results)

    def __iter__(self):
        return iter(self.results)

    def successful(self):
        return [r for r in self.results if r.ok]

    def by_id(self):
        return {r.trial_id: r for r in self.results}

    def top(self, arch, n=3, split_name="test2"):
        pool = [r for r in self.successful() if r.config["arch"] == arch]
        return sorted(pool, key=lambda r: (r.bce[split_name], r.trial_id))[:n]

    def summary_report(self, n=3):
        """Mean losses of each architecture's best ``n`` trials, plus grid-level comparisons."""
        rows = {}
        for arch in ARCHS:
            top = self.top(arch, n)
            if top:
                rows[arch] = {
                    "trials": [r.trial_id for r in top],
                    **{s: float(np.mean([r.bce[s] for r in top])) for s in EVAL_SPLITS},
                }
        pairs = {}
        for arch in rows:
            for r in self.top(arch, n):
                key = f"{r.config['optimizer']}+{r.config['scheduler']}"
                pairs[key] = pairs.get(key, 0) + 1
        winner = sorted(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0][0] if pairs else None
        report = {
            "top_n": n,
            "architectures": rows,
            "winning_pair_counts": dict(sorted(pairs.items())),
            "winning_pair": winner,
            "rmsprop_cyclic_wins": winner == "rmsprop+cyclic",
            "tcn_le_mlp": (rows["tcn"]["test2"] <= rows["mlp"]["test2"]) if {"tcn", "mlp"} <= set(rows) else None,
        }
        if self.base_rate is not None:
            report["base_rate_test2_bce"] = self.base_rate
            report["beats_base_rate_by_10pct"] = {
                arch: any(r.bce["test2"] <= 0.9 * self.base_rate for r in self.successful() if r.config["arch"] == arch)
                for arch in ARCHS
            }
        return report

    def grid_rows(self):
        """One row per grid configuration with each architecture's test2 loss."""
        by_row = {}
        for r in self.results:
            c = r.config
            row = by_row.setdefault(c["row"], {
                "row": c["row"], "optimizer": c["optimizer"], "scheduler": c["scheduler"],
                "swa": c["swa"], "parameter_averaging": c["parameter_averaging"],
            })
            row[f"{c['arch']}_test2"] = r.bce.get("test2") if r.ok else None
        return [by_row[k] for k in sorted(by_row)]

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for r in self.results:
            if r.ok:
                save_columns(out / f"{r.trial_id}.pred.npz", r.probabilities, {"trial_id": r.trial_id}, kind="predictions")
        with open(out / "trials.csv", "w") as fh:
            fh.write("row,optimizer,scheduler,swa,parameter_averaging,mlp_test2_bce,tcn_test2_bce\n")
            for row in self.grid_rows():
                cells = [row["row"], row["optimizer"], row["scheduler"], row["swa"], row["parameter_averaging"]]
                cells += ["" if row.get(f"{a}_test2") is None else f"{row[f'{a}_test2']:.6f}" for a in ARCHS]
                fh.write(",".join(str(c) for c in cells) + "\n")
        index = {
            "trials": [r.summary() for r in self.results],
            "base_rate_test2_bce": self.base_rate,
            "summary": self.summary_report(),
        }
        _write_json(out / "index.json", index)
        _write_json(out / "timing.json", {r.trial_id: r.seconds for r in self.results})

    @classmethod
    def load(cls, out_dir):
        out = Path(out_dir)
        with open(out / "index.json") as fh:
            index = json.load(fh)
        results = []
        for s in index["trials"]:
            r = TrialResult(s["trial_id"], s["config"], s["status"], s["bce"], {}, s["history"], s["selected"],
                            s["error"], s["checkpoint"])
            if r.ok:
                r.probabilities, _ = load_columns(out / f"{r.trial_id}.pred.npz", kind="predictions")
            results.append(r)
        return cls(results, index["base_rate_test2_bce"])


def _write_json(path, obj):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def with_overrides(configs, **kw):
    return [replace(c, **kw) for c in configs]
