"""Feature generation at the consumer x item x week intersection.

Four families are produced for every panel row:

* datetime: week-of-year, month, quarter, annual sine/cosine and a trend index;
* profiles: recency, frequency, reorder and cart-position aggregates at the
  consumer, item, aisle, department and consumer-item levels, plus a pair of
  consumer-item-time interactions;
* lagged offsets: trailing-window statistics of weekly regressors;
* sequences: the trailing weekly regressors themselves, for the TCN.

Everything is computed from weeks strictly before the row's week.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import kernels
from .errors import AssemblyError
from .panel import SPLITS, make_calendar
from .store import load_columns, save_columns

GROUPS = ("static-categorical", "temporal-categorical", "static-continuous", "temporal-continuous")
CATEGORICAL_GROUPS = GROUPS[:2]
STATS = ("mean", "median", "q25", "q75", "var", "skew", "kurt")
REGRESSORS = ("buy", "orders", "basket")
DEFAULT_WINDOWS = (4, 8, 12)
DEFAULT_LAGS = (1, 2, 4)
DEFAULT_SEQ_LEN = 16
ATTRIBUTE_CATEGORICALS = ("sex", "marital_status", "location")
ATTRIBUTE_CONTINUOUS = ("age", "weight")
RECENT_WEEKS = 4


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    group: str
    cardinality: int | None = None
    lagged: bool = False

    def __post_init__(self):
        if self.group not in GROUPS:
            raise AssemblyError(f"{self.name}: unknown feature group {self.group!r}")
        if self.group in CATEGORICAL_GROUPS and (self.cardinality is None or self.cardinality < 1):
            raise AssemblyError(f"{self.name}: categorical feature needs cardinality >= 1")


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple
    seq_channels: tuple = REGRESSORS
    seq_len: int = DEFAULT_SEQ_LEN

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise AssemblyError("feature names must be unique")

    @property
    def categorical(self):
        return [f for g in CATEGORICAL_GROUPS for f in self.features if f.group == g]

    @property
    def continuous(self):
        return [f for g in GROUPS[2:] for f in self.features if f.group == g]

    def group(self, name):
        return [f for f in self.features if f.group == name]

    def continuous_mask(self, include_lagged=True):
        return np.array([include_lagged or not f.lagged for f in self.continuous], dtype=bool)

    def to_dict(self):
        return {
            "features": [
                {"name": f.name, "group": f.group, "cardinality": f.cardinality, "lagged": f.lagged}
                for f in self.features
            ],
            "seq_channels": list(self.seq_channels),
            "seq_len": self.seq_len,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(FeatureSpec(**f) for f in d["features"]),
            tuple(d["seq_channels"]),
            int(d["seq_len"]),
        )

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Batch:
    cat: np.ndarray  # (n, n_cat) int64 codes, 0 = unknown
    cont: np.ndarray  # (n, n_cont) float64, standardized
    seq: np.ndarray | None = None  # (n, seq_len, n_channels), oldest first

    def __len__(self):
        return len(self.cat)


@dataclass
class FeatureMatrix:
    schema: FeatureSchema
    consumer: np.ndarray
    item: np.ndarray
    week: np.ndarray
    pair: np.ndarray
    cat: np.ndarray
    cont: np.ndarray
    seq: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def batch(self, idx=None):
        if idx is None:
            return Batch(self.cat, self.cont, self.seq)
        return Batch(self.cat[idx], self.cont[idx], self.seq[idx])

    def validate(self):
        n = len(self)
        cats = self.schema.categorical
        conts = self.schema.continuous
        if self.cat.shape != (n, len(cats)) or self.cont.shape != (n, len(conts)):
            raise AssemblyError("matrix columns do not match the schema")
        for j, spec in enumerate(cats):
            col = self.cat[:, j]
            if n and (col.min() < 0 or col.max() >= spec.cardinality):
                raise AssemblyError(f"{spec.name}: code outside [0, {spec.cardinality})")
        if not np.all(np.isfinite(self.cont)) or not np.all(np.isfinite(self.seq)):
            raise AssemblyError("non-finite continuous values after assembly")


# ---------------------------------------------------------------------------
# datetime


def _week_of_year0(calendar):
    origin = np.datetime64(calendar.origin, "D")
    doy = int((origin - origin.astype("datetime64[Y]")).astype(np.int64))
    return min(doy // 7, 51)


def datetime_table(weeks, calendar):
    weeks = np.asarray(weeks, dtype=np.int64)
    start = calendar.week_start(weeks)
    woy = (_week_of_year0(calendar) + weeks) % 52
    month = start.astype("datetime64[M]").astype(np.int64) % 12
    phase = 2.0 * np.pi * woy / 52.0
    return {
        "week_of_year": woy,
        "month": month,
        "quarter": month // 3,
        "annual_sin": np.sin(phase),
        "annual_cos": np.cos(phase),
        "trend": weeks.astype(np.float64),
    }


def datetime_features(week, calendar):
    """Calendar features of one week (categorical codes are 0-based)."""
    row = datetime_table([week], calendar)
    return {k: v[0].item() for k, v in row.items()}


# ---------------------------------------------------------------------------
# weekly activity and profiles


def _before(x):
    """(K, W) weekly values -> (K, W + 1) totals over weeks strictly before t."""
    out = np.zeros((x.shape[0], x.shape[1] + 1))
    np.cumsum(x, axis=1, out=out[:, 1:])
    return out


def _last_before(ind):
    """(K, W) indicator -> (K, W + 1) last week < t with ind set, or -1."""
    k, w = ind.shape
    marks = np.where(ind, np.arange(w)[None, :], -1)
    out = np.full((k, w + 1), -1, dtype=np.int64)
    np.maximum.accumulate(marks, axis=1, out=out[:, 1:])
    return out


def _first_week(ind):
    has = ind.any(axis=1)
    return np.where(has, ind.argmax(axis=1), -1)


def _run_lengths(ind):
    k, w = ind.shape
    run = np.zeros((k, w), dtype=np.int64)
    for t in range(w):
        run[:, t] = np.where(ind[:, t], (run[:, t - 1] if t else 0) + 1, 0)
    return run


def _ratio(num, den):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1), np.nan)


def _bincount2(rows, weeks, n_rows, n_weeks, weights=None):
    flat = rows * n_weeks + weeks
    return np.bincount(flat, weights=weights, minlength=n_rows * n_weeks).reshape(n_rows, n_weeks)


class Activity:
    """Weekly aggregates of a log at every profile level.

    Only weeks inside ``[0, calendar.n_weeks)`` are counted. Profile arrays
    have one column per as-of week ``t`` in ``[0, n_weeks]`` and summarise
    weeks ``< t``.
    """

    def __init__(self, log, calendar, pair_consumer, pair_item):
        self.calendar = calendar
        n_weeks = calendar.n_weeks
        weeks = calendar.week_of(log.date)
        keep = (weeks >= 0) & (weeks < n_weeks)
        weeks = weeks[keep]
        consumer = log.consumer[keep]
        item = log.item[keep]
        cart = log.cart_pos[keep].astype(np.float64)
        reorder = log.reorder_flags()[keep].astype(np.float64)
        order_code = log.order_codes[keep]
        self.aisle_levels, aisle = np.unique(log.aisle_id[keep], return_inverse=True)
        self.department_levels, dept = np.unique(log.department_id[keep], return_inverse=True)
        self.aisle_of_item = self._item_attr(log, log.aisle_id)
        self.department_of_item = self._item_attr(log, log.department_id)

        nc, ni = log.n_consumers, log.n_items
        _, first_row_of_order = np.unique(order_code, return_index=True)
        self.c_orders = _bincount2(consumer[first_row_of_order], weeks[first_row_of_order], nc, n_weeks)
        self.c_lines = _bincount2(consumer, weeks, nc, n_weeks)
        self.c_reorders = _bincount2(consumer, weeks, nc, n_weeks, reorder)

        self.i_lines = _bincount2(item, weeks, ni, n_weeks)
        self.i_reorders = _bincount2(item, weeks, ni, n_weeks, reorder)
        self.i_cart = _bincount2(item, weeks, ni, n_weeks, cart)
        self.i_new_consumers = _bincount2(item, weeks, ni, n_weeks, 1.0 - reorder)

        na, nd = len(self.aisle_levels), len(self.department_levels)
        self.a_lines = _bincount2(aisle, weeks, na, n_weeks)
        self.a_reorders = _bincount2(aisle, weeks, na, n_weeks, reorder)
        self.a_cart = _bincount2(aisle, weeks, na, n_weeks, cart)
        self.d_lines = _bincount2(dept, weeks, nd, n_weeks)
        self.d_reorders = _bincount2(dept, weeks, nd, n_weeks, reorder)
        self.d_cart = _bincount2(dept, weeks, nd, n_weeks, cart)

        # pairs are addressed through a (consumer, item) -> pair lookup
        self.pair_consumer = np.asarray(pair_consumer, dtype=np.int64)
        self.pair_item = np.asarray(pair_item, dtype=np.int64)
        lookup = np.full(nc * ni, -1, dtype=np.int64)
        lookup[self.pair_consumer * ni + self.pair_item] = np.arange(len(self.pair_consumer))
        p = lookup[consumer * ni + item]
        hit = p >= 0
        n_pairs = len(self.pair_consumer)
        self.p_orders = _bincount2(p[hit], weeks[hit], n_pairs, n_weeks)
        self.p_reorders = _bincount2(p[hit], weeks[hit], n_pairs, n_weeks, reorder[hit])
        self.p_cart = _bincount2(p[hit], weeks[hit], n_pairs, n_weeks, cart[hit])

    @staticmethod
    def _item_attr(log, values):
        out = np.empty(log.n_items, dtype=object)
        out[log.item] = values
        return out

    def regressors(self):
        """Weekly regressor matrices: pair purchase indicator, consumer orders, consumer basket size."""
        return {
            "buy": (self.p_orders > 0).astype(np.float64),
            "orders": self.c_orders,
            "basket": self.c_lines,
        }

    def consumer_profile(self):
        ind = self.c_orders > 0
        first = _first_week(ind)
        last = _last_before(ind)
        weeks_active = _before(ind.astype(np.float64))
        t = np.arange(self.calendar.n_weeks + 1)[None, :]
        seen = (first[:, None] >= 0) & (first[:, None] < t)
        orders = _before(self.c_orders)
        lines = _before(self.c_lines)
        return {
            "c_total_orders": orders,
            "c_weeks_since_first": np.where(seen, t - first[:, None], np.nan),
            "c_weeks_since_last": np.where(last >= 0, t - last, np.nan),
            "c_mean_gap": _ratio(np.where(seen, last - first[:, None], 0).astype(np.float64), weeks_active - 1),
            "c_mean_basket": _ratio(lines, orders),
            "c_reorder_rate": _ratio(_before(self.c_reorders), lines),
        }

    def item_profile(self):
        lines = _before(self.i_lines)
        return {
            "i_total_lines": lines,
            "i_distinct_consumers": _before(self.i_new_consumers),
            "i_reorder_rate": _ratio(_before(self.i_reorders), lines),
            "i_mean_cart_pos": _ratio(_before(self.i_cart), lines),
        }

    def aisle_profile(self):
        lines = _before(self.a_lines)
        return {
            "a_total_lines": lines,
            "a_reorder_rate": _ratio(_before(self.a_reorders), lines),
            "a_mean_cart_pos": _ratio(_before(self.a_cart), lines),
        }

    def department_profile(self):
        lines = _before(self.d_lines)
        return {
            "d_total_lines": lines,
            "d_reorder_rate": _ratio(_before(self.d_reorders), lines),
            "d_mean_cart_pos": _ratio(_before(self.d_cart), lines),
        }

    def pair_profile(self):
        ind = self.p_orders > 0
        n_weeks = self.calendar.n_weeks
        t = np.arange(n_weeks + 1)[None, :]
        first = _first_week(ind)
        seen = (first[:, None] >= 0) & (first[:, None] < t)
        last = _last_before(ind)
        count_weeks = _before(ind.astype(np.float64))
        orders = _before(self.p_orders)
        reorders = _before(self.p_reorders)
        run = _run_lengths(ind)
        rows = np.arange(len(ind))[:, None]
        streak = np.where(last >= 0, run[rows, np.maximum(last, 0)], 0).astype(np.float64)

        # consumer activity since the pair's first purchase
        c = self.pair_consumer
        c_active = _before((self.c_orders > 0).astype(np.float64))[c]
        c_orders = _before(self.c_orders)[c]
        start = np.maximum(first, 0)[:, None]
        active_since = np.where(seen, c_active - np.take_along_axis(c_active, start, axis=1), 0)
        orders_since = np.where(seen, c_orders - np.take_along_axis(c_orders, start, axis=1), 0)

        since_last = np.where(last >= 0, t - last, np.nan)
        mean_gap = _ratio(np.where(seen, last - first[:, None], 0).astype(np.float64), count_weeks - 1)

        recent = np.zeros_like(count_weeks)
        recent[:, RECENT_WEEKS:] = count_weeks[:, RECENT_WEEKS:] - count_weeks[:, :-RECENT_WEEKS]
        recent[:, :RECENT_WEEKS] = count_weeks[:, :RECENT_WEEKS]
        c_recent = np.zeros_like(c_active)
        c_recent[:, RECENT_WEEKS:] = c_active[:, RECENT_WEEKS:] - c_active[:, :-RECENT_WEEKS]
        c_recent[:, :RECENT_WEEKS] = c_active[:, :RECENT_WEEKS]
        return {
            "ci_total_orders": orders,
            "ci_weeks_since_first": np.where(seen, t - first[:, None], np.nan),
            "ci_weeks_since_last": since_last,
            "ci_mean_gap": mean_gap,
            "ci_streak": streak,
            "ci_reorder_rate": _ratio(reorders, orders),
            "ci_reorder_freq": _ratio(reorders, active_since),
            "ci_mean_cart_pos": _ratio(_before(self.p_cart), orders),
            "ci_order_share": _ratio(orders, orders_since),
            "cit_recent_share": _ratio(recent, c_recent),
            "cit_due_ratio": _ratio(since_last, mean_gap),
        }


def profile_features(log, as_of, calendar=None, week_anchor="monday"):
    """Profile aggregates as of week ``as_of`` (using weeks ``< as_of`` only).

    Returns a dict of DataFrames keyed by level: ``consumer``, ``item``,
    ``aisle``, ``department`` and ``consumer_item``. Undefined values (for
    instance recency of a key with no history) are NaN and get imputed at
    assembly time.
    """
    cal = calendar or make_calendar(log, week_anchor)
    if as_of > cal.n_weeks:
        # recency keeps growing past the end of the log
        cal = dataclasses.replace(cal, n_weeks=int(as_of))
    n_items = max(log.n_items, 1)
    keys = np.unique(log.consumer * n_items + log.item)
    act = Activity(log, cal, keys // n_items, keys % n_items)
    t = int(np.clip(as_of, 0, cal.n_weeks))

    def frame(profile, index, name):
        return pd.DataFrame({k: v[:, t] for k, v in profile.items()}, index=pd.Index(index, name=name))

    pair_index = pd.MultiIndex.from_arrays(
        [[log.consumer_ids[c] for c in act.pair_consumer], [log.item_ids[i] for i in act.pair_item]],
        names=["consumer", "item"],
    )
    return {
        "consumer": frame(act.consumer_profile(), list(log.consumer_ids), "consumer"),
        "item": frame(act.item_profile(), list(log.item_ids), "item"),
        "aisle": frame(act.aisle_profile(), act.aisle_levels.tolist(), "aisle"),
        "department": frame(act.department_profile(), act.department_levels.tolist(), "department"),
        "consumer_item": pd.DataFrame(
            {k: v[:, t] for k, v in act.pair_profile().items()}, index=pair_index
        ),
    }


# ---------------------------------------------------------------------------
# lagged offsets


def rolling_table(values, windows=DEFAULT_WINDOWS, lags=DEFAULT_LAGS):
    """Lagged rolling statistics for a (n_series, n_weeks) matrix.

    Returns ``{(window, lag, stat): (n_series, n_weeks)}``; entry ``[s, t]``
    summarises ``values[s, t - lag - window + 1 : t - lag + 1]`` and is NaN
    when that window reaches before week 0.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    n, m = values.shape
    out = {}
    for w in windows:
        stats = kernels.rolling_stats(values, w)
        for lag in lags:
            shifted = np.full((n, m, len(STATS)), np.nan)
            if lag < m:
                shifted[:, lag:, :] = stats[:, : m - lag, :]
            for s, name in enumerate(STATS):
                out[(w, lag, name)] = shifted[:, :, s]
    return out


def rolling_offsets(values, windows=DEFAULT_WINDOWS, lags=DEFAULT_LAGS):
    """Lagged rolling statistics of one weekly series, keyed ``w{window}_l{lag}_{stat}``."""
    table = rolling_table(np.asarray(values, dtype=np.float64)[None, :], windows, lags)
    return {f"w{w}_l{lag}_{stat}": v[0] for (w, lag, stat), v in table.items()}


# ---------------------------------------------------------------------------
# assembly


@dataclass
class FeatureRecords:
    """Raw (unencoded, unstandardized) feature columns for each split's rows."""

    rows: dict  # split -> dict(consumer, item, week, pair, label)
    categorical: dict  # split -> {name: raw levels}
    continuous: dict  # split -> {name: float array with NaN for missing}
    sequences: dict  # split -> (n, seq_len, channels) raw, NaN before week 0
    groups: dict  # feature name -> group
    lagged: set = field(default_factory=set)
    seq_len: int = DEFAULT_SEQ_LEN


def _attribute_columns(attributes, consumer_ids):
    """Consumer attribute columns aligned to consumer codes (None/NaN when absent)."""
    n = len(consumer_ids)
    cats = {name: np.full(n, None, dtype=object) for name in ATTRIBUTE_CATEGORICALS}
    conts = {name: np.full(n, np.nan) for name in ATTRIBUTE_CONTINUOUS}
    if attributes is not None:
        table = attributes.set_index(attributes["consumer_id"].astype(str))
        table = table.reindex([str(c) for c in consumer_ids])
        for name in ATTRIBUTE_CATEGORICALS:
            if name in table:
                col = table[name]
                cats[name] = np.array([None if pd.isna(v) else str(v) for v in col], dtype=object)
        for name in ATTRIBUTE_CONTINUOUS:
            if name in table:
                conts[name] = pd.to_numeric(table[name], errors="coerce").to_numpy(dtype=np.float64)
    return cats, conts


def _level_codes(levels, values):
    """Index of each value in ``levels``; -1 for values absent from it (or None)."""
    lookup = {v: k for k, v in enumerate(levels.tolist())}
    return np.array([lookup.get(v, -1) for v in values], dtype=np.int64)


def compute_feature_records(log, panel, windows=DEFAULT_WINDOWS, lags=DEFAULT_LAGS,
                            seq_len=DEFAULT_SEQ_LEN, attributes=None):
    series = panel.series
    cal = series.calendar
    act = Activity(log, cal, series.consumer, series.item)
    regs = act.regressors()
    profiles = {
        "consumer": act.consumer_profile(),
        "item": act.item_profile(),
        "aisle": act.aisle_profile(),
        "department": act.department_profile(),
        "pair": act.pair_profile(),
    }
    aisle_code = _level_codes(act.aisle_levels, act.aisle_of_item)
    dept_code = _level_codes(act.department_levels, act.department_of_item)
    attr_cat, attr_cont = _attribute_columns(attributes, log.consumer_ids)
    rolling = {
        "buy": rolling_table(regs["buy"], windows, lags),
        "orders": rolling_table(regs["orders"], windows, lags),
        "basket": rolling_table(regs["basket"], windows, lags),
    }

    groups = {}
    for name in ("consumer", "item", "aisle", "department", *ATTRIBUTE_CATEGORICALS):
        groups[name] = "static-categorical"
    for name in ("week_of_year", "month", "quarter"):
        groups[name] = "temporal-categorical"
    for name in ATTRIBUTE_CONTINUOUS:
        groups[name] = "static-continuous"
    for name in ("annual_sin", "annual_cos", "trend"):
        groups[name] = "temporal-continuous"
    for prof in profiles.values():
        for name in prof:
            groups[name] = "temporal-continuous"
    lagged = set()
    for reg in REGRESSORS:
        for (w, lag, stat) in rolling[reg]:
            name = f"{reg}_w{w}_l{lag}_{stat}"
            groups[name] = "temporal-continuous"
            lagged.add(name)

    cats, conts, seqs, rows = {}, {}, {}, {}
    for split_name in SPLITS:
        r = panel.rows[split_name]
        p, c, i, t = r["pair"], r["consumer"], r["item"], r["week"]
        rows[split_name] = r
        dt_cols = datetime_table(t, cal)
        cat = {
            "consumer": c,
            "item": i,
            "aisle": act.aisle_of_item[i],
            "department": act.department_of_item[i],
            **{name: attr_cat[name][c] for name in ATTRIBUTE_CATEGORICALS},
            "week_of_year": dt_cols["week_of_year"],
            "month": dt_cols["month"],
            "quarter": dt_cols["quarter"],
        }
        cont = {name: attr_cont[name][c] for name in ATTRIBUTE_CONTINUOUS}
        for name in ("annual_sin", "annual_cos", "trend"):
            cont[name] = dt_cols[name]
        level_key = {"consumer": c, "item": i, "aisle": aisle_code[i], "department": dept_code[i], "pair": p}
        for level, prof in profiles.items():
            key = level_key[level]
            for name, arr in prof.items():
                cont[name] = np.where(key >= 0, arr[np.maximum(key, 0), t], np.nan)
        for reg in REGRESSORS:
            key = p if reg == "buy" else c
            for (w, lag, stat), arr in rolling[reg].items():
                cont[f"{reg}_w{w}_l{lag}_{stat}"] = arr[key, t]
        # trailing sequence: weeks t - seq_len .. t - 1, oldest first
        offs = np.arange(-seq_len, 0)
        wk = t[:, None] + offs[None, :]
        valid = wk >= 0
        wk_c = np.maximum(wk, 0)
        seq = np.stack(
            [
                np.where(valid, regs["buy"][p[:, None], wk_c], np.nan),
                np.where(valid, regs["orders"][c[:, None], wk_c], np.nan),
                np.where(valid, regs["basket"][c[:, None], wk_c], np.nan),
            ],
            axis=2,
        )
        cats[split_name], conts[split_name], seqs[split_name] = cat, cont, seq
    return FeatureRecords(rows, cats, conts, seqs, groups, lagged, seq_len)


def _vocab(levels):
    present = [v for v in levels if v is not None]
    uniq = sorted(set(present), key=lambda v: (str(type(v)), v))
    return {v: k + 1 for k, v in enumerate(uniq)}


def _encode(values, vocab):
    if values.dtype != object:
        keys = np.array(sorted(vocab), dtype=values.dtype) if vocab else np.array([], dtype=values.dtype)
        codes = np.zeros(len(values), dtype=np.int64)
        if len(keys):
            pos = np.clip(np.searchsorted(keys, values), 0, len(keys) - 1)
            hit = keys[pos] == values
            codes[hit] = pos[hit] + 1
        return codes
    return np.array([vocab.get(v, 0) for v in values], dtype=np.int64)


def assemble_matrix(panel, records):
    """Encode and standardize records into one :class:`FeatureMatrix` per split.

    Vocabularies and standardization moments come from the train split only;
    levels first seen later map to the reserved code 0.
    """
    names_by_split = {s: (tuple(records.categorical[s]), tuple(records.continuous[s])) for s in SPLITS}
    if len(set(names_by_split.values())) != 1:
        raise AssemblyError("feature columns differ between splits")
    cat_names, cont_names = names_by_split["train"]
    for name in cat_names + cont_names:
        if name not in records.groups:
            raise AssemblyError(f"{name}: feature has no group")

    vocabs = {name: _vocab(records.categorical["train"][name].tolist()) for name in cat_names}
    moments = {}
    for name in cont_names:
        col = np.asarray(records.continuous["train"][name], dtype=np.float64)
        finite = col[np.isfinite(col)]
        mean = float(finite.mean()) if len(finite) else 0.0
        std = float(finite.std()) if len(finite) else 1.0
        moments[name] = (mean, std if std > 0 else 1.0)
    seq_train = records.sequences["train"]
    seq_moments = []
    for ch in range(seq_train.shape[2]):
        vals = seq_train[:, :, ch]
        vals = vals[np.isfinite(vals)]
        mean = float(vals.mean()) if len(vals) else 0.0
        std = float(vals.std()) if len(vals) else 1.0
        seq_moments.append((mean, std if std > 0 else 1.0))

    ordered_cat = [n for g in CATEGORICAL_GROUPS for n in cat_names if records.groups[n] == g]
    ordered_cont = [n for g in GROUPS[2:] for n in cont_names if records.groups[n] == g]
    specs = [FeatureSpec(n, records.groups[n], cardinality=len(vocabs[n]) + 1) for n in ordered_cat]
    specs += [FeatureSpec(n, records.groups[n], lagged=n in records.lagged) for n in ordered_cont]
    schema = FeatureSchema(tuple(specs), REGRESSORS, records.seq_len)

    matrices = {}
    for split_name in SPLITS:
        r = records.rows[split_name]
        n = len(r["label"])
        cat = np.zeros((n, len(ordered_cat)), dtype=np.int64)
        for j, name in enumerate(ordered_cat):
            cat[:, j] = _encode(np.asarray(records.categorical[split_name][name]), vocabs[name])
        cont = np.empty((n, len(ordered_cont)))
        for j, name in enumerate(ordered_cont):
            mean, std = moments[name]
            col = (np.asarray(records.continuous[split_name][name], dtype=np.float64) - mean) / std
            cont[:, j] = np.where(np.isfinite(col), col, 0.0)
        seq = np.array(records.sequences[split_name], dtype=np.float64)
        for ch, (mean, std) in enumerate(seq_moments):
            seq[:, :, ch] = (seq[:, :, ch] - mean) / std
        seq[~np.isfinite(seq)] = 0.0
        m = FeatureMatrix(
            schema=schema,
            consumer=np.asarray(r["consumer"]),
            item=np.asarray(r["item"]),
            week=np.asarray(r["week"]),
            pair=np.asarray(r["pair"]),
            cat=cat,
            cont=cont,
            seq=seq,
            labels=np.asarray(r["label"], dtype=np.float64),
        )
        m.validate()
        matrices[split_name] = m
    if len({m.schema for m in matrices.values()}) != 1:
        raise AssemblyError("schema drift between splits")
    return matrices


def featurize(log, panel, windows=DEFAULT_WINDOWS, lags=DEFAULT_LAGS, seq_len=DEFAULT_SEQ_LEN, attributes=None):
    records = compute_feature_records(log, panel, windows, lags, seq_len, attributes)
    return assemble_matrix(panel, records)


def save_matrix(path, matrix, split_name):
    columns = {
        "consumer": matrix.consumer,
        "item": matrix.item,
        "week": matrix.week,
        "pair": matrix.pair,
        "cat": matrix.cat,
        "cont": matrix.cont,
        "seq": matrix.seq,
        "label": matrix.labels,
    }
    save_columns(path, columns, {"split": split_name, "schema": matrix.schema.to_dict()}, kind="feature-matrix")


def load_matrix(path):
    cols, header = load_columns(path, kind="feature-matrix")
    m = FeatureMatrix(
        schema=FeatureSchema.from_dict(header["schema"]),
        consumer=cols["consumer"],
        item=cols["item"],
        week=cols["week"],
        pair=cols["pair"],
        cat=cols["cat"],
        cont=cols["cont"],
        seq=cols["seq"],
        labels=cols["label"],
    )
    m.validate()
    return m


def save_features(out_dir, matrices):
    for split_name, m in matrices.items():
        save_matrix(Path(out_dir) / f"{split_name}.npz", m, split_name)


def load_features(features_dir):
    return {s: load_matrix(Path(features_dir) / f"{s}.npz") for s in SPLITS}
