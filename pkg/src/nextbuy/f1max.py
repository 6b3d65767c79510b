"""Per-consumer probability cutoffs that maximise F1 = 2V / (k + b)."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError

# strictly above every probability: predicts nothing
SENTINEL = float(np.nextafter(1.0, 2.0))


@dataclass(frozen=True)
class ThresholdScore:
    v: int
    k: int
    precision: float
    recall: float
    f1: float


def decision_rule(probs, threshold):
    """1 where ``p >= threshold``."""
    return (np.asarray(probs, dtype=np.float64) >= threshold).astype(np.int8)


def score_counts(v, k, b):
    precision = v / k if k else 0.0
    recall = v / b if b else 0.0
    f1 = 2.0 * v / (k + b) if k + b else 0.0
    return precision, recall, f1


def f1_at_threshold(actual, probs, threshold):
    actual = np.asarray(actual, dtype=np.int64)
    pred = decision_rule(probs, threshold)
    if len(pred) != len(actual):
        raise ContractError("actuals and probabilities differ in length")
    v, k, b = int(pred @ actual), int(pred.sum()), int(actual.sum())
    return ThresholdScore(v, k, *score_counts(v, k, b))


def optimize_threshold(actual, probs):
    """Best cutoff for one consumer as ``(threshold, f1)``.

    Candidates are the distinct probabilities, 0.5 and :data:`SENTINEL`;
    equal F1 goes to the larger cutoff. With no positives the sentinel wins.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        raise ContractError("cannot optimise a threshold over zero rows")
    thr, f1, *_ = best_thresholds(np.zeros(len(probs), dtype=np.int64), actual, probs)
    return float(thr[0]), float(f1[0])


def best_thresholds(groups, actual, probs):
    """Vectorised :func:`optimize_threshold` over integer ``groups``.

    Returns ``(thresholds, f1, k, v, b, group_ids)`` with one entry per
    distinct group id (sorted).
    """
    groups = np.asarray(groups, dtype=np.int64)
    actual = np.asarray(actual, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if not (len(groups) == len(actual) == len(probs)):
        raise ContractError("groups, actuals and probabilities differ in length")
    if np.any((probs < 0) | (probs > 1)) or not np.all(np.isfinite(probs)):
        raise ContractError("probabilities must lie in [0, 1]")
    order = np.lexsort((-probs, groups))
    g_sorted = groups[order]
    ids, starts = np.unique(g_sorted, return_index=True)
    offsets = np.append(starts, len(g_sorted)).astype(np.int64)
    thr, f1, k, v, b = kernels.grouped_best_thresholds(probs[order], actual[order], offsets, SENTINEL)
    return thr, f1, k, v, b, ids


class ThresholdMap:
    """Consumer -> cutoff, with a fallback for consumers absent at fit time."""

    def __init__(self, thresholds, fallback=None):
        self.thresholds = {int(c): float(t) for c, t in thresholds.items()}
        if fallback is None:
            fallback = float(np.median(list(self.thresholds.values()))) if self.thresholds else 0.5
        self.fallback = float(fallback)

    def __getitem__(self, consumer):
        return self.thresholds.get(int(consumer), self.fallback)

    def __len__(self):
        return len(self.thresholds)

    def lookup(self, consumers):
        consumers = np.asarray(consumers, dtype=np.int64)
        return np.array([self[c] for c in consumers], dtype=np.float64)

    def save(self, path, consumer_ids=None):
        with open(path, "w") as fh:
            fh.write(f"# fallback {self.fallback!r}\n")
            for c in sorted(self.thresholds):
                name = consumer_ids[c] if consumer_ids is not None else c
                fh.write(f"{name}\t{self.thresholds[c]!r}\n")

    @classmethod
    def load(cls, path, consumer_index=None):
        thresholds, fallback = {}, None
        with open(path) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("# fallback "):
                    fallback = float(line.split()[-1])
                elif line and not line.startswith("#"):
                    name, value = line.split("\t")
                    key = consumer_index[name] if consumer_index is not None else int(name)
                    thresholds[key] = float(value)
        return cls(thresholds, fallback)


def fit_thresholds(consumers, actual, probs, fallback=None):
    thr, f1, k, v, b, ids = best_thresholds(consumers, actual, probs)
    return ThresholdMap(dict(zip(ids.tolist(), thr.tolist())), fallback)


def apply_thresholds(consumers, probs, thresholds):
    return decision_rule(probs, thresholds.lookup(consumers))


def per_consumer_f1(consumers, actual, pred):
    """``{consumer: (v, k, b, f1)}`` for binary predictions."""
    consumers = np.asarray(consumers, dtype=np.int64)
    actual = np.asarray(actual, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    ids, inv = np.unique(consumers, return_inverse=True)
    v = np.bincount(inv, weights=pred * actual, minlength=len(ids)).astype(np.int64)
    k = np.bincount(inv, weights=pred, minlength=len(ids)).astype(np.int64)
    b = np.bincount(inv, weights=actual, minlength=len(ids)).astype(np.int64)
    return {int(c): (int(vi), int(ki), int(bi), score_counts(vi, ki, bi)[2]) for c, vi, ki, bi in zip(ids, v, k, b)}
