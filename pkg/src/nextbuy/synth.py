"""Seeded generator of Instacart-shaped transaction logs with planted signal.

Each consumer owns a repertoire of items. A repertoire pair buys in week
``w`` with probability

    sigmoid(base + cadence_amp * cos(2*pi*(w - phase) / cadence)
                 + season_amp * sin(2*pi*w / 52 + item_phase))

and every consumer also makes rare exploratory one-off purchases of other
items. Baskets are split into orders and cart positions put previously
bought items first with strength ``reorder_decay``.
"""

import datetime as dt
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import write_kv
from .ingest import TransactionLog, write_transactions


@dataclass(frozen=True)
class SynthConfig:
    n_consumers: int = 500
    n_items: int = 50
    n_weeks: int = 52
    seed: int = 7
    n_aisles: int = 12
    n_departments: int = 5
    repertoire_mean: float = 4.0
    cadence_min: int = 1
    cadence_max: int = 5
    cadence_jitter: int = 1
    cadence_amp: float = 2.5
    base_logit: float = -1.0
    base_logit_sd: float = 0.5
    season_amp: float = 0.4
    explore_rate: float = 0.03
    split_prob: float = 0.25
    reorder_decay: float = 2.0
    start_date: dt.date = dt.date(2023, 1, 2)

    def __post_init__(self):
        for name in ("n_consumers", "n_items", "n_weeks", "n_aisles", "n_departments"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.cadence_min < 1 or self.cadence_max < self.cadence_min:
            raise ValueError("cadence bounds must satisfy 1 <= cadence_min <= cadence_max")
        if self.cadence_jitter < 0:
            raise ValueError("cadence_jitter must be non-negative")


@dataclass
class GroundTruth:
    """What the generator knows: true weekly propensities and realised counts."""

    propensity: np.ndarray  # (consumers, items, weeks), indexed by generator order
    cadence: np.ndarray  # (consumers, items); 0 for non-repertoire pairs
    repertoire: np.ndarray  # (consumers, items) bool
    consumer_ids: list[str]
    item_ids: list[str]
    counts: dict = field(default_factory=dict)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _item_catalogue(cfg, rng):
    aisles = rng.integers(0, cfg.n_aisles, size=cfg.n_items)
    # aisles nest inside departments
    dept_of_aisle = np.arange(cfg.n_aisles) % cfg.n_departments
    return aisles, dept_of_aisle[aisles], rng.uniform(0, 2 * np.pi, size=cfg.n_items)


def consumer_attributes(cfg):
    """Static demographic attributes, one row per consumer."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    n = cfg.n_consumers
    return {
        "consumer_id": [f"C{c:04d}" for c in range(n)],
        "age": rng.integers(18, 80, size=n),
        "sex": rng.choice(["F", "M"], size=n),
        "marital_status": rng.choice(["single", "married"], size=n),
        "location": rng.choice([f"L{i}" for i in range(5)], size=n),
        "weight": np.round(rng.normal(75.0, 12.0, size=n), 1),
    }


def generate(cfg=SynthConfig()):
    """Return ``(log, truth)`` for ``cfg``; identical for identical configs."""
    root = np.random.SeedSequence(cfg.seed)
    catalogue_seed, *consumer_seeds = root.spawn(cfg.n_consumers + 1)
    aisles, departments, item_phase = _item_catalogue(cfg, np.random.default_rng(catalogue_seed))

    weeks = np.arange(cfg.n_weeks)
    season = cfg.season_amp * np.sin(2 * np.pi * weeks[None, :] / 52.0 + item_phase[:, None])
    propensity = np.zeros((cfg.n_consumers, cfg.n_items, cfg.n_weeks))
    cadence = np.zeros((cfg.n_consumers, cfg.n_items), dtype=np.int64)
    repertoire = np.zeros((cfg.n_consumers, cfg.n_items), dtype=bool)

    rows = []  # (consumer, item, week, day, basket slot) before order assignment
    baskets = []
    for c, seed in enumerate(consumer_seeds):
        rng = np.random.default_rng(seed)
        size = min(cfg.n_items, 1 + rng.poisson(max(cfg.repertoire_mean - 1, 0)))
        items = np.sort(rng.choice(cfg.n_items, size=size, replace=False))
        repertoire[c, items] = True
        cad = rng.integers(cfg.cadence_min, cfg.cadence_max + 1, size=size)
        cad = np.maximum(1, cad + rng.integers(-cfg.cadence_jitter, cfg.cadence_jitter + 1, size=size))
        phase = rng.integers(0, cad)
        base = rng.normal(cfg.base_logit, cfg.base_logit_sd, size=size)
        cadence[c, items] = cad
        logit = (
            base[:, None]
            + cfg.cadence_amp * np.cos(2 * np.pi * (weeks[None, :] - phase[:, None]) / cad[:, None])
            + season[items]
        )
        propensity[c, items] = _sigmoid(logit)
        others = np.flatnonzero(~repertoire[c])
        if len(others):
            propensity[c, others] = cfg.explore_rate / len(others)
        bought = rng.random((cfg.n_items, cfg.n_weeks)) < propensity[c]
        weekday = rng.integers(0, 7)
        seen = np.zeros(cfg.n_items, dtype=bool)
        for w in range(cfg.n_weeks):
            basket = np.flatnonzero(bought[:, w])
            if not len(basket):
                continue
            split = len(basket) > 1 and rng.random() < cfg.split_prob
            which = rng.integers(0, 2, size=len(basket)) if split else np.zeros(len(basket), dtype=np.int64)
            days = np.sort(rng.choice(7, size=2, replace=False)) if split else [min(6, max(0, weekday + rng.integers(-1, 2)))]
            for o in np.unique(which):
                in_order = basket[which == o]
                reorder = seen[in_order]
                key = rng.random(len(in_order)) + cfg.reorder_decay * (~reorder)
                in_order = in_order[np.argsort(key, kind="stable")]
                baskets.append((c, w, int(days[o]), in_order))
            seen[basket] = True

    consumer_ids = [f"C{c:04d}" for c in range(cfg.n_consumers)]
    item_ids = [f"I{i:03d}" for i in range(cfg.n_items)]
    cols = {k: [] for k in ("consumer", "item", "order", "date", "cart", "aisle", "dept")}
    start = np.datetime64(cfg.start_date, "D")
    for n_order, (c, w, day, items) in enumerate(baskets):
        date = start + np.timedelta64(7 * w + day, "D")
        for pos, i in enumerate(items, start=1):
            cols["consumer"].append(consumer_ids[c])
            cols["item"].append(item_ids[i])
            cols["order"].append(f"O{n_order:08d}")
            cols["date"].append(date)
            cols["cart"].append(pos)
            cols["aisle"].append(f"A{aisles[i]:02d}")
            cols["dept"].append(f"D{departments[i]}")
    log = TransactionLog(
        cols["consumer"], cols["item"], cols["order"],
        np.array(cols["date"], dtype="datetime64[D]"),
        cols["cart"], cols["aisle"], cols["dept"],
    )
    counts = {
        "transactions": len(cols["consumer"]),
        "orders": len(baskets),
        "consumers": len(set(cols["consumer"])),
        "items": len(set(cols["item"])),
    }
    truth = GroundTruth(propensity, cadence, repertoire, consumer_ids, item_ids, counts)
    return log, truth


def write_synthetic(out_dir, cfg=SynthConfig()):
    """Write transactions.csv, consumers.csv, truth.npz and synth.cfg into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log, truth = generate(cfg)
    write_transactions(log, out / "transactions.csv")
    attrs = consumer_attributes(cfg)
    names = list(attrs)
    with open(out / "consumers.csv", "w") as fh:
        fh.write(",".join(names) + "\n")
        for r in range(cfg.n_consumers):
            fh.write(",".join(str(attrs[k][r]) for k in names) + "\n")
    np.savez(
        out / "truth.npz",
        propensity=truth.propensity,
        cadence=truth.cadence,
        repertoire=truth.repertoire,
    )
    write_kv(out / "synth.cfg", {k: (v.isoformat() if isinstance(v, dt.date) else v) for k, v in asdict(cfg).items()})
    return log, truth
