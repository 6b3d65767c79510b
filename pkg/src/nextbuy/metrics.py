"""Reporting: pooled precision/recall/F1, probability histograms and log summaries."""

import json

import numpy as np

from .errors import ContractError
from .f1max import score_counts

MAX_CART_BUCKET = 21  # positions 21 and beyond share a bucket


def micro_prf(pred, actual, consumers=None, average="micro"):
    """Precision, recall and F1 pooled over rows (``micro``) or averaged per consumer (``macro``)."""
    pred = np.asarray(pred, dtype=np.int64)
    actual = np.asarray(actual, dtype=np.int64)
    if pred.shape != actual.shape:
        raise ContractError("predictions and actuals differ in length")
    if average == "micro":
        v, k, b = int(pred @ actual), int(pred.sum()), int(actual.sum())
        return score_counts(v, k, b)
    if average != "macro":
        raise ContractError(f"unknown averaging {average!r}")
    if consumers is None:
        raise ContractError("macro averaging needs consumer groups")
    ids, inv = np.unique(np.asarray(consumers), return_inverse=True)
    v = np.bincount(inv, weights=pred * actual, minlength=len(ids))
    k = np.bincount(inv, weights=pred, minlength=len(ids))
    b = np.bincount(inv, weights=actual, minlength=len(ids))
    scores = np.array([score_counts(vi, ki, bi) for vi, ki, bi in zip(v, k, b)])
    return tuple(float(x) for x in scores.mean(axis=0)) if len(scores) else (0.0, 0.0, 0.0)


def probability_histogram(probs, labels, bins=20):
    """Per-label normalised histograms over ``bins`` equal-width bins on [0, 1].

    Bins are closed on the right, so 0.05 with 20 bins lands in the first
    bin; 0 also belongs to the first bin.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if np.any((probs < 0) | (probs > 1)):
        raise ContractError("probabilities must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, bins + 1)
    out = {"edges": edges.tolist()}
    for label in (0, 1):
        sel = probs[labels == label]
        if len(sel) == 0:
            out[str(label)] = {"mass": [], "count": 0, "empty": True}
            continue
        idx = np.clip(np.searchsorted(edges, sel, side="left") - 1, 0, bins - 1)
        counts = np.bincount(idx, minlength=bins)
        mass = counts / counts.sum()
        mode = int(np.argmax(mass))
        out[str(label)] = {
            "mass": mass.tolist(),
            "count": int(len(sel)),
            "empty": False,
            "mode_bin": [float(edges[mode]), float(edges[mode + 1])],
        }
    neg = out["0"]
    out["negative_mode_below_0.1"] = (not neg["empty"]) and neg["mode_bin"][1] <= 0.1 + 1e-12
    return out


def eda_report(log):
    """Basket-size density over consumers and reorder probability by cart position."""
    orders = log.order_codes
    _, order_inv, sizes = np.unique(orders, return_inverse=True, return_counts=True)
    order_consumer = np.zeros(len(sizes), dtype=np.int64)
    order_consumer[order_inv] = log.consumer
    n_orders = np.bincount(order_consumer, minlength=log.n_consumers)
    total = np.bincount(order_consumer, weights=sizes, minlength=log.n_consumers)
    has = n_orders > 0
    mean_basket = total[has] / n_orders[has]
    rounded = np.rint(mean_basket).astype(np.int64)
    values, counts = np.unique(rounded, return_counts=True)

    bucket = np.minimum(log.cart_pos.astype(np.int64), MAX_CART_BUCKET)
    reorder = log.reorder_flags().astype(np.float64)
    n_bucket = np.bincount(bucket, minlength=MAX_CART_BUCKET + 1)[1:]
    n_reorder = np.bincount(bucket, weights=reorder, minlength=MAX_CART_BUCKET + 1)[1:]
    curve = [
        {"position": f"{p}+" if p == MAX_CART_BUCKET else str(p), "lines": int(n),
         "reorder_probability": float(r / n) if n else None}
        for p, n, r in zip(range(1, MAX_CART_BUCKET + 1), n_bucket, n_reorder)
    ]
    return {
        "basket_size_density": {str(int(v)): float(c / counts.sum()) for v, c in zip(values, counts)},
        "mean_basket_size": float(sizes.mean()) if len(sizes) else 0.0,
        "reorder_by_cart_position": curve,
    }


def round_floats(obj, digits=10):
    """Round every float in a nested structure so reports compare byte-for-byte."""
    if isinstance(obj, float):
        return round(obj, digits)
    if isinstance(obj, dict):
        return {str(k): round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, digits) for v in obj]
    if isinstance(obj, np.generic):
        return round_floats(obj.item(), digits)
    return obj


def write_report(path, report):
    with open(path, "w") as fh:
        json.dump(round_floats(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_table(header, rows):
    """Plain-text table with right-aligned numeric cells."""
    cells = [[str(h) for h in header]] + [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    return "" if v is None else str(v)
