"""Weekly consumer-item panels and their chronological splits."""

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PipelineError
from .store import load_columns, save_columns

WEEKDAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")
SPLITS = ("train", "validation", "test1", "test2")
START_RULES = ("first_purchase", "first_activity")


def _weekday(days):
    # 1970-01-01 was a Thursday
    return (np.asarray(days, dtype=np.int64) + 3) % 7


@dataclass(frozen=True)
class WeekCalendar:
    """Week ``w`` covers the seven days starting at ``origin + 7 * w``."""

    origin: dt.date
    anchor: str
    n_weeks: int

    def week_of(self, dates):
        offset = (np.asarray(dates, dtype="datetime64[D]") - np.datetime64(self.origin, "D")).astype(np.int64)
        return offset // 7

    def week_start(self, weeks):
        return np.datetime64(self.origin, "D") + 7 * np.asarray(weeks, dtype=np.int64)

    def as_dict(self):
        return {"origin": self.origin.isoformat(), "anchor": self.anchor, "n_weeks": self.n_weeks}

    @classmethod
    def from_dict(cls, d):
        return cls(dt.date.fromisoformat(d["origin"]), d["anchor"], int(d["n_weeks"]))


def make_calendar(log, week_anchor="monday", n_weeks=None):
    anchor = week_anchor.lower()
    if anchor not in WEEKDAYS:
        raise ConfigError(f"unknown week anchor {week_anchor!r}")
    if len(log) == 0:
        raise PipelineError("cannot assign weeks for an empty log", stage="panel")
    first = log.date.min()
    back = (_weekday(first.astype(np.int64)) - WEEKDAYS.index(anchor)) % 7
    origin = (first - np.timedelta64(int(back), "D")).item()
    cal = WeekCalendar(origin, anchor, 0)
    last_week = int(cal.week_of(log.date.max()))
    return WeekCalendar(origin, anchor, n_weeks if n_weeks is not None else last_week + 1)


def assign_weeks(log, week_anchor="monday"):
    """Map every order date in ``log`` to its week index (week 0 holds the earliest date)."""
    cal = make_calendar(log, week_anchor)
    dates = np.unique(log.date)
    return {d.item(): int(w) for d, w in zip(dates, cal.week_of(dates))}


@dataclass(frozen=True)
class ConsumerItemSeries:
    consumer: int
    item: int
    first_week: int
    labels: tuple


class SeriesSet:
    """All relevant consumer-item series of one log, stored as a dense label matrix.

    ``labels[p, w]`` is 1 when pair ``p`` bought in week ``w``; entries before
    ``first_week[p]`` are outside the series and kept at 0.
    """

    def __init__(self, consumer, item, first_week, labels, calendar, train_window, purchase_weeks):
        self.consumer = consumer
        self.item = item
        self.first_week = first_week
        self.labels = labels
        self.calendar = calendar
        self.train_window = train_window
        # earliest purchase week per pair over the whole log, used for per-cut relevancy counts
        self.purchase_weeks = purchase_weeks
        for arr in (consumer, item, first_week, labels):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.consumer)

    def __iter__(self):
        for p in range(len(self)):
            yield self[p]

    def __getitem__(self, p):
        fw = int(self.first_week[p])
        return ConsumerItemSeries(
            int(self.consumer[p]), int(self.item[p]), fw, tuple(int(v) for v in self.labels[p, fw:])
        )

    @property
    def n_weeks(self):
        return self.calendar.n_weeks

    def pair_index(self):
        return {(int(c), int(i)): p for p, (c, i) in enumerate(zip(self.consumer, self.item))}


def build_series(log, train_window, week_anchor="monday", calendar=None, start_rule="first_purchase"):
    """One series per consumer-item pair with a purchase inside ``train_window``.

    ``train_window`` is a half-open ``(start_week, end_week)`` range. Series
    run to the end of the calendar and start at the pair's first purchase
    (or the consumer's first order with ``start_rule="first_activity"``).
    """
    if start_rule not in START_RULES:
        raise ConfigError(f"start_rule must be one of {START_RULES}")
    cal = calendar or make_calendar(log, week_anchor)
    start, end = train_window
    weeks = cal.week_of(log.date)
    n_items = max(log.n_items, 1)
    key = log.consumer * n_items + log.item
    in_window = (weeks >= start) & (weeks < end)
    relevant = np.unique(key[in_window])
    if not len(relevant):
        raise PipelineError(
            f"no consumer-item pair purchased in training weeks [{start}, {end}); widen the training window",
            stage="panel",
        )
    consumer = relevant // n_items
    item = relevant % n_items
    p_of_row = np.searchsorted(relevant, key)
    hit = (p_of_row < len(relevant)) & (relevant[np.minimum(p_of_row, len(relevant) - 1)] == key)
    in_cal = (weeks >= 0) & (weeks < cal.n_weeks)
    labels = np.zeros((len(relevant), cal.n_weeks), dtype=np.int8)
    labels[p_of_row[hit & in_cal], weeks[hit & in_cal]] = 1

    first_purchase = np.full(len(relevant), np.iinfo(np.int64).max)
    np.minimum.at(first_purchase, p_of_row[hit], weeks[hit])
    if start_rule == "first_purchase":
        first_week = first_purchase
    else:
        first_activity = np.full(log.n_consumers, np.iinfo(np.int64).max)
        np.minimum.at(first_activity, log.consumer, weeks)
        first_week = first_activity[consumer]
    first_week = np.clip(first_week, 0, cal.n_weeks - 1).astype(np.int64)
    # earliest purchase at or after the window start, for relevancy at later cuts
    all_keys, first_idx = np.unique(key[weeks >= start], return_index=True)
    purchase_weeks = (all_keys, weeks[weeks >= start][first_idx])
    return SeriesSet(consumer, item, first_week, labels, cal, (start, end), purchase_weeks)


@dataclass(frozen=True)
class SplitConfig:
    train_weeks: int = 46
    validation_weeks: int = 2
    test1_weeks: int = 2
    test2_weeks: int = 2

    def __post_init__(self):
        for name in ("train_weeks", "validation_weeks", "test1_weeks", "test2_weeks"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def parse(cls, text):
        parts = [int(p) for p in str(text).split(",")]
        if len(parts) != 4:
            raise ConfigError(f"splits need four widths, got {text!r}")
        return cls(*parts)

    def widths(self):
        return (self.train_weeks, self.validation_weeks, self.test1_weeks, self.test2_weeks)

    @property
    def total(self):
        return sum(self.widths())

    def ranges(self, n_weeks):
        """Half-open week ranges per split, laid out backwards from the panel end."""
        if n_weeks < self.total:
            raise ConfigError(f"panel has {n_weeks} weeks but splits need {self.total}")
        end = n_weeks
        out = {}
        for name, width in zip(reversed(SPLITS[1:]), reversed(self.widths()[1:])):
            out[name] = (end - width, end)
            end -= width
        out["train"] = (max(0, end - self.train_weeks), end)
        return {name: out[name] for name in SPLITS}


class SplitPanel:
    """Panel rows (pair, week, label) for the four chronological splits."""

    def __init__(self, series, cfg, ranges, rows, counts):
        self.series = series
        self.cfg = cfg
        self.ranges = ranges
        self.rows = rows  # split -> dict(pair, consumer, item, week, label)
        self.counts = counts

    def __getitem__(self, name):
        return self.rows[name]


def panel_rows(series, week_range):
    start, end = week_range
    weeks = np.arange(start, end)
    pair, week = np.nonzero(weeks[None, :] >= series.first_week[:, None])
    week = weeks[week]
    return {
        "pair": pair.astype(np.int64),
        "consumer": series.consumer[pair],
        "item": series.item[pair],
        "week": week.astype(np.int64),
        "label": series.labels[pair, week].astype(np.int8),
    }


def split(series_set, cfg):
    """Cut the panel into train/validation/test1/test2 week ranges."""
    ranges = cfg.ranges(series_set.n_weeks)
    train_start = ranges["train"][0]
    keys, first = series_set.purchase_weeks
    rows = {}
    counts = {}
    for name in SPLITS:
        rows[name] = panel_rows(series_set, ranges[name])
        counts[name] = {
            "weeks": ranges[name][1] - ranges[name][0],
            "rows": int(len(rows[name]["label"])),
            "pairs": int(len(np.unique(rows[name]["pair"]))),
            "positives": int(rows[name]["label"].sum()),
            # pairs that would qualify if relevancy were re-cut at this split's end
            "relevant_at_cut": int(np.count_nonzero((first >= train_start) & (first < ranges[name][1]))),
        }
    return SplitPanel(series_set, cfg, ranges, rows, counts)


def build_panel(log, cfg, week_anchor="monday", start_rule="first_purchase"):
    cal = make_calendar(log, week_anchor)
    ranges = cfg.ranges(cal.n_weeks)
    series = build_series(log, ranges["train"], calendar=cal, start_rule=start_rule)
    return split(series, cfg)


def save_panel(path, panel):
    s = panel.series
    split_code = []
    cols = {k: [] for k in ("pair", "consumer", "item", "week", "label")}
    for code, name in enumerate(SPLITS):
        r = panel.rows[name]
        for k in cols:
            cols[k].append(r[k])
        split_code.append(np.full(len(r["label"]), code, dtype=np.int8))
    columns = {k: np.concatenate(v) for k, v in cols.items()}
    columns["split"] = np.concatenate(split_code)
    columns["series_consumer"] = s.consumer
    columns["series_item"] = s.item
    columns["series_first_week"] = s.first_week
    columns["series_labels"] = s.labels
    columns["cut_keys"], columns["cut_first_week"] = s.purchase_weeks
    header = {
        "calendar": s.calendar.as_dict(),
        "train_window": list(s.train_window),
        "splits": dict(zip(SPLITS, panel.cfg.widths())),
        "ranges": {k: list(v) for k, v in panel.ranges.items()},
        "counts": panel.counts,
    }
    save_columns(path, columns, header, kind="panel")


def load_panel(path):
    cols, header = load_columns(path, kind="panel")
    cal = WeekCalendar.from_dict(header["calendar"])
    series = SeriesSet(
        cols["series_consumer"],
        cols["series_item"],
        cols["series_first_week"],
        cols["series_labels"],
        cal,
        tuple(header["train_window"]),
        (cols["cut_keys"], cols["cut_first_week"]),
    )
    cfg = SplitConfig(*(header["splits"][k] for k in SPLITS))
    rows = {}
    for code, name in enumerate(SPLITS):
        mask = cols["split"] == code
        rows[name] = {k: cols[k][mask] for k in ("pair", "consumer", "item", "week", "label")}
    ranges = {k: tuple(v) for k, v in header["ranges"].items()}
    return SplitPanel(series, cfg, ranges, rows, header["counts"])
