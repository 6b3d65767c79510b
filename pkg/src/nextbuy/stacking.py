"""Weighted K-best blending of trial probabilities."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError
from .nncore import EPS, bce_loss, inverse_loss_weights

DEFAULT_SWEEP = (3, 5, 10, 15, 25)


@dataclass
class StackerModel:
    trial_ids: list
    weights: np.ndarray
    iterations: int = 0
    test1_bce: float = float("nan")
    init_bce: float = float("nan")
    source: str = "descent"  # "descent", "init" or "one-hot:<trial id>"
    constrain: str = "simplex"
    requested_k: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.trial_ids) < 1 or len(self.weights) != len(self.trial_ids):
            raise ContractError("stacker needs one weight per selected trial and K >= 1")

    @property
    def k(self):
        return len(self.trial_ids)

    def to_dict(self):
        d = asdict(self)
        d["weights"] = [float(w) for w in self.weights]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def select_k_best(losses, k):
    """Ids of the ``k`` smallest losses in ``{trial_id: test1 loss}``; ties go to the lower id."""
    if k < 1 or k > len(losses):
        raise ContractError(f"k={k} outside [1, {len(losses)}]")
    return [tid for tid, _ in sorted(losses.items(), key=lambda kv: (kv[1], kv[0]))[:k]]


def init_weights(losses):
    return inverse_loss_weights(losses)


def stack_predict(model, probs):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != model.k:
        raise ContractError(f"expected {model.k} probability columns, got {probs.shape[-1]}")
    out = probs @ model.weights
    if model.constrain == "none":
        out = np.clip(out, EPS, 1.0 - EPS)
    return out


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def _blend_loss(probs, labels, w, clip):
    p = probs @ w
    return bce_loss(np.clip(p, EPS, 1 - EPS) if clip else p, labels)


def _blend_grad(probs, labels, w):
    p = np.clip(probs @ w, EPS, 1 - EPS)
    dp = (p - labels) / (p * (1.0 - p)) / len(labels)
    return probs.T @ dp


def fit_stacker(probs, labels, init, lr=0.05, max_iter=2000, tol=1e-9, constrain="simplex", trial_ids=None):
    """Fit blend weights by gradient descent on the BCE of ``probs @ w``.

    With ``constrain="simplex"`` weights are a softmax of free logits; with
    ``"none"`` they are unconstrained. The returned model is never worse on
    ``labels`` than the initial weights or any single column.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.ndim != 2 or len(probs) != len(labels):
        raise ContractError("probability matrix must be rows x K and aligned with labels")
    if not np.all(np.isfinite(probs)):
        raise ContractError("non-finite probabilities passed to the stacker")
    if constrain not in ("simplex", "none"):
        raise ContractError(f"unknown weight constraint {constrain!r}")
    k = probs.shape[1]
    init = np.asarray(init, dtype=np.float64)
    trial_ids = list(trial_ids) if trial_ids is not None else [str(j) for j in range(k)]
    clip = constrain == "none"

    if constrain == "simplex":
        z = np.log(np.maximum(init, 1e-300))
        w = _softmax(z)
    else:
        w = init.copy()
    loss = init_loss = _blend_loss(probs, labels, w, clip)
    it = 0
    for it in range(1, max_iter + 1):
        g = _blend_grad(probs, labels, w)
        if constrain == "simplex":
            # chain rule through softmax: dz = w * (g - w.g)
            z = z - lr * w * (g - w @ g)
            w_new = _softmax(z)
        else:
            w_new = w - lr * g
        new = _blend_loss(probs, labels, w_new, clip)
        if not np.isfinite(new):
            break
        improvement = (loss - new) / max(abs(loss), 1e-300)
        w, loss = w_new, new
        if improvement < tol:
            break

    best = (loss, "descent", w)
    if init_loss < best[0]:
        best = (init_loss, "init", init.copy())
    for j in range(k):
        one_hot = np.zeros(k)
        one_hot[j] = 1.0
        single = _blend_loss(probs, labels, one_hot, clip)
        if single < best[0]:
            best = (single, f"one-hot:{trial_ids[j]}", one_hot)
    return StackerModel(trial_ids, best[2], it, float(best[0]), float(init_loss), best[1], constrain, k)


@dataclass
class SweepRow:
    k: int
    effective_k: int
    bce: dict = field(default_factory=dict)


def build_stacker(table, k, split_fit="test1", constrain="simplex", **fit_kw):
    """Select the ``k`` best successful trials by ``split_fit`` loss and fit their blend.

    ``k`` larger than the pool is capped at the pool size; the request is kept
    in ``requested_k``.
    """
    pool = {r.trial_id: r.bce[split_fit] for r in table.successful()}
    if not pool:
        raise ContractError("no successful trials to stack")
    eff = min(k, len(pool))
    ids = select_k_best(pool, eff)
    by_id = table.by_id()
    probs = np.column_stack([by_id[t].probabilities[split_fit] for t in ids])
    labels = fit_kw.pop("labels")
    model = fit_stacker(probs, labels, init_weights([pool[t] for t in ids]), constrain=constrain,
                        trial_ids=ids, **fit_kw)
    model.requested_k = k
    return model


def blend(model, table, split_name):
    by_id = table.by_id()
    return stack_predict(model, np.column_stack([by_id[t].probabilities[split_name] for t in model.trial_ids]))


def k_sweep(table, labels, sweep=DEFAULT_SWEEP, constrain="simplex"):
    """One row per requested K with the blend's BCE on every evaluation split."""
    rows = []
    for k in sweep:
        model = build_stacker(table, k, constrain=constrain, labels=labels["test1"])
        row = SweepRow(k, model.k)
        for split_name, y in labels.items():
            row.bce[split_name] = bce_loss(np.clip(blend(model, table, split_name), EPS, 1 - EPS), y)
        rows.append((row, model))
    return rows
