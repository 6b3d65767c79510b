"""Parsing and validation of Instacart-style transaction exports."""

import csv
import datetime as dt
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .config import read_kv
from .errors import ConfigError, RowError, SchemaError
from .store import load_columns, save_columns

FIELDS = ("consumer", "item", "order", "date", "cart_pos", "aisle", "department")


@dataclass(frozen=True)
class FormatConfig:
    """Column mapping and date handling for a delimited transaction file."""

    consumer: str = "user_id"
    item: str = "product_id"
    order: str = "order_id"
    date: str = "order_date"
    cart_pos: str = "add_to_cart_order"
    aisle: str = "aisle_id"
    department: str = "department_id"
    delimiter: str = ","
    date_mode: str = "iso"
    date_epoch: dt.date = dt.date(2020, 1, 1)
    min_date: dt.date | None = None
    max_date: dt.date | None = None

    def __post_init__(self):
        if self.date_mode not in ("iso", "offset"):
            raise ConfigError(f"date.mode must be 'iso' or 'offset', got {self.date_mode!r}")
        if len(self.delimiter) != 1:
            raise ConfigError(f"delimiter must be one character, got {self.delimiter!r}")

    def columns(self):
        return {name: getattr(self, name) for name in FIELDS}

    @classmethod
    def from_mapping(cls, entries):
        kwargs = {}
        for key, value in entries.items():
            if key.startswith("col."):
                name = key[4:]
                if name not in FIELDS:
                    raise ConfigError(f"unknown column key {key!r}")
                kwargs[name] = value
            elif key == "delimiter":
                kwargs["delimiter"] = "\t" if value in ("\\t", "tab") else value
            elif key == "date.mode":
                kwargs["date_mode"] = value
            elif key in ("date.epoch", "date.min", "date.max"):
                target = {"date.epoch": "date_epoch", "date.min": "min_date", "date.max": "max_date"}[key]
                try:
                    kwargs[target] = dt.date.fromisoformat(value)
                except ValueError as exc:
                    raise ConfigError(f"{key}: not an ISO date: {value!r}") from exc
            else:
                raise ConfigError(f"unknown format key {key!r}")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path):
        return cls.from_mapping(read_kv(path))

    def to_mapping(self):
        out = {f"col.{name}": col for name, col in self.columns().items()}
        out["delimiter"] = "\\t" if self.delimiter == "\t" else self.delimiter
        out["date.mode"] = self.date_mode
        out["date.epoch"] = self.date_epoch.isoformat()
        if self.min_date is not None:
            out["date.min"] = self.min_date.isoformat()
        if self.max_date is not None:
            out["date.max"] = self.max_date.isoformat()
        return out


@dataclass(frozen=True)
class Transaction:
    consumer_id: str
    item_id: str
    order_id: str
    order_date: dt.date
    add_to_cart_order: int
    aisle_id: str
    department_id: str


def _first_appearance_codes(ids):
    index = {}
    codes = np.empty(len(ids), dtype=np.int64)
    for i, key in enumerate(ids):
        code = index.get(key)
        if code is None:
            code = index[key] = len(index)
        codes[i] = code
    return codes, index


def _frozen(arr):
    arr = np.asarray(arr)
    arr.setflags(write=False)
    return arr


class TransactionLog:
    """Immutable columnar event log with dense consumer and item codes.

    Rows are sorted by (consumer code, order date, order id, cart position).
    Order ids sort lexicographically, which decides the sequence of orders
    placed by one consumer on the same date.
    """

    def __init__(self, consumer_ids, item_ids, order_ids, dates, cart_pos, aisle_ids, department_ids):
        n = len(consumer_ids)
        lengths = {len(item_ids), len(order_ids), len(dates), len(cart_pos), len(aisle_ids), len(department_ids)}
        if lengths != {n}:
            raise ValueError("all columns must have the same length")
        consumer_codes, consumer_index = _first_appearance_codes(consumer_ids)
        item_codes, item_index = _first_appearance_codes(item_ids)
        self._setup(
            consumer_codes, item_codes, tuple(consumer_index), tuple(item_index),
            order_ids, dates, cart_pos, aisle_ids, department_ids,
        )

    @classmethod
    def from_codes(cls, consumer, item, consumer_ids, item_ids, order_ids, dates, cart_pos, aisle_ids, department_ids):
        """Build a log whose dense codes are given rather than derived."""
        log = cls.__new__(cls)
        log._setup(
            np.asarray(consumer, dtype=np.int64), np.asarray(item, dtype=np.int64),
            tuple(consumer_ids), tuple(item_ids),
            order_ids, dates, cart_pos, aisle_ids, department_ids,
        )
        return log

    def _setup(self, consumer_codes, item_codes, consumer_ids, item_ids, order_ids, dates, cart_pos, aisle_ids, department_ids):
        n = len(consumer_codes)
        order_ids = np.asarray(order_ids, dtype=str).reshape(n)
        dates = np.asarray(dates, dtype="datetime64[D]").reshape(n)
        cart_pos = np.asarray(cart_pos, dtype=np.int64).reshape(n)
        order = np.lexsort((cart_pos, order_ids, dates, consumer_codes))

        self.consumer = _frozen(consumer_codes[order])
        self.item = _frozen(item_codes[order])
        self.order_id = _frozen(order_ids[order])
        self.date = _frozen(dates[order])
        self.cart_pos = _frozen(cart_pos[order])
        self.aisle_id = _frozen(np.asarray(aisle_ids, dtype=str).reshape(n)[order])
        self.department_id = _frozen(np.asarray(department_ids, dtype=str).reshape(n)[order])
        self.consumer_ids = consumer_ids
        self.item_ids = item_ids
        self.consumer_index = {cid: code for code, cid in enumerate(consumer_ids)}
        self.item_index = {iid: code for code, iid in enumerate(item_ids)}
        self._order_codes = None

    def __len__(self):
        return len(self.consumer)

    def __eq__(self, other):
        if not isinstance(other, TransactionLog):
            return NotImplemented
        return (
            self.consumer_ids == other.consumer_ids
            and self.item_ids == other.item_ids
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in ("consumer", "item", "order_id", "date", "cart_pos", "aisle_id", "department_id")
            )
        )

    __hash__ = None

    @property
    def n_consumers(self):
        return len(self.consumer_ids)

    @property
    def n_items(self):
        return len(self.item_ids)

    @property
    def order_codes(self):
        """Dense order codes following row order (one code per distinct order id)."""
        if self._order_codes is None:
            codes, _ = _first_appearance_codes(self.order_id.tolist())
            self._order_codes = _frozen(codes)
        return self._order_codes

    @property
    def transactions(self):
        return [self.row(i) for i in range(len(self))]

    def row(self, i):
        return Transaction(
            consumer_id=self.consumer_ids[self.consumer[i]],
            item_id=self.item_ids[self.item[i]],
            order_id=str(self.order_id[i]),
            order_date=self.date[i].item(),
            add_to_cart_order=int(self.cart_pos[i]),
            aisle_id=str(self.aisle_id[i]),
            department_id=str(self.department_id[i]),
        )

    def subset(self, mask):
        """New log built from the rows selected by ``mask`` (codes re-derived)."""
        mask = np.asarray(mask, dtype=bool)
        return TransactionLog(
            [self.consumer_ids[c] for c in self.consumer[mask]],
            [self.item_ids[i] for i in self.item[mask]],
            self.order_id[mask],
            self.date[mask],
            self.cart_pos[mask],
            self.aisle_id[mask],
            self.department_id[mask],
        )

    def reorder_flags(self):
        """1 where the consumer bought the item in an earlier row, else 0."""
        key = self.consumer * max(self.n_items, 1) + self.item
        _, first = np.unique(key, return_index=True)
        flags = np.ones(len(self), dtype=np.int64)
        flags[first] = 0
        return flags


def _parse_date(text, fmt, line):
    text = text.strip()
    if fmt.date_mode == "iso":
        try:
            value = dt.date.fromisoformat(text)
        except ValueError:
            raise RowError(f"unparseable date {text!r}", line) from None
    else:
        try:
            offset = int(text)
        except ValueError:
            raise RowError(f"unparseable day offset {text!r}", line) from None
        value = fmt.date_epoch + dt.timedelta(days=offset)
    if fmt.min_date is not None and value < fmt.min_date:
        raise RowError(f"date {value} before history window start {fmt.min_date}", line)
    if fmt.max_date is not None and value > fmt.max_date:
        raise RowError(f"date {value} after history window end {fmt.max_date}", line)
    return value


def parse_transactions(path, format_config=None):
    """Read a delimited transaction file into a :class:`TransactionLog`.

    Fails on the first malformed row; a silently dropped row would corrupt
    the weekly labels built from the log.
    """
    fmt = format_config or FormatConfig()
    cols = {name: [] for name in FIELDS}
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=fmt.delimiter)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        pos = {}
        for name, column in fmt.columns().items():
            if column not in header:
                raise SchemaError(f"{path}: missing column {column!r}", column=column)
            pos[name] = header.index(column)
        width = len(header)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise RowError(f"expected {width} fields, found {len(row)}", line)
            for name in ("consumer", "item", "order", "aisle", "department"):
                value = row[pos[name]].strip()
                if not value:
                    raise RowError(f"empty {fmt.columns()[name]!r}", line)
                cols[name].append(value)
            raw_cart = row[pos["cart_pos"]].strip()
            try:
                cart = int(raw_cart)
            except ValueError:
                raise RowError(f"non-integer add_to_cart_order {raw_cart!r}", line) from None
            if cart < 1:
                raise RowError(f"add_to_cart_order must be >= 1, got {cart}", line)
            cols["cart_pos"].append(cart)
            cols["date"].append(_parse_date(row[pos["date"]], fmt, line))
    return TransactionLog(
        cols["consumer"],
        cols["item"],
        cols["order"],
        np.array(cols["date"], dtype="datetime64[D]"),
        cols["cart_pos"],
        cols["aisle"],
        cols["department"],
    )


def _code_preserving_order(log):
    """Row order under which first-appearance coding reproduces the log's codes.

    Emits, in turn, a row introducing the next consumer code or the next item
    code (or both) while only referencing already-introduced codes, then the
    remaining rows in canonical order.
    """
    n = len(log)
    cons, items = log.consumer, log.item
    by_consumer = {}
    by_item = {}
    by_pair = {}
    for r in range(n):
        c, i = int(cons[r]), int(items[r])
        by_consumer.setdefault(c, []).append(r)
        by_item.setdefault(i, []).append(r)
        by_pair.setdefault((c, i), r)
    # rows whose item is smallest for each consumer / consumer smallest for each item
    min_item_row = {c: min(rows, key=lambda r: items[r]) for c, rows in by_consumer.items()}
    min_cons_row = {i: min(rows, key=lambda r: cons[r]) for i, rows in by_item.items()}
    emitted = []
    seen = np.zeros(n, dtype=bool)
    nc = ni = 0
    while nc < log.n_consumers or ni < log.n_items:
        r = None
        if nc < log.n_consumers and items[min_item_row[nc]] < ni:
            r = min_item_row[nc]
        elif ni < log.n_items and cons[min_cons_row[ni]] < nc:
            r = min_cons_row[ni]
        elif (nc, ni) in by_pair:
            r = by_pair[(nc, ni)]
        if r is None:
            raise ValueError("log codes are not a first-appearance coding of any row order")
        emitted.append(r)
        seen[r] = True
        nc = max(nc, int(cons[r]) + 1)
        ni = max(ni, int(items[r]) + 1)
    emitted.extend(np.flatnonzero(~seen).tolist())
    return emitted


def write_transactions(log, path, format_config=None):
    """Write ``log`` as a delimited file that re-parses to an equal log."""
    fmt = format_config or FormatConfig()
    cols = fmt.columns()
    header = [cols[name] for name in FIELDS]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=fmt.delimiter, lineterminator="\n")
        writer.writerow(header)
        epoch = np.datetime64(fmt.date_epoch, "D")
        for r in _code_preserving_order(log):
            if fmt.date_mode == "iso":
                date_text = str(log.date[r])
            else:
                date_text = str(int((log.date[r] - epoch).astype(np.int64)))
            writer.writerow(
                [
                    log.consumer_ids[log.consumer[r]],
                    log.item_ids[log.item[r]],
                    log.order_id[r],
                    date_text,
                    int(log.cart_pos[r]),
                    log.aisle_id[r],
                    log.department_id[r],
                ]
            )


@dataclass
class ValidationReport:
    transaction_count: int
    consumer_count: int
    item_count: int
    order_count: int
    duplicates: int
    date_min: dt.date | None
    date_max: dt.date | None
    errors: list[str] = field(default_factory=list)

    @property
    def ok(self):
        return not self.errors

    def as_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        for key in ("date_min", "date_max"):
            if out[key] is not None:
                out[key] = out[key].isoformat()
        return out


def validate_log(log):
    """Summarise a log and list structural problems; never raises."""
    n = len(log)
    errors = []
    order_ids = log.order_id.tolist()
    pair_counts = Counter(zip(order_ids, log.item.tolist()))
    duplicates = sum(1 for count in pair_counts.values() if count > 1)
    if duplicates:
        errors.append(f"{duplicates} (order, item) pairs occur more than once")
    owner = {}
    when = {}
    for r in range(n):
        oid = order_ids[r]
        c, d = int(log.consumer[r]), log.date[r]
        if owner.setdefault(oid, c) != c:
            errors.append(f"order {oid} belongs to more than one consumer")
        if when.setdefault(oid, d) != d:
            errors.append(f"order {oid} spans more than one date")
    return ValidationReport(
        transaction_count=n,
        consumer_count=log.n_consumers,
        item_count=log.n_items,
        order_count=len(owner),
        duplicates=duplicates,
        date_min=log.date.min().item() if n else None,
        date_max=log.date.max().item() if n else None,
        errors=list(dict.fromkeys(errors)),
    )


def save_log(log, path):
    columns = {
        "consumer": log.consumer,
        "item": log.item,
        "order_id": log.order_id,
        "date": log.date.astype(np.int64),
        "cart_pos": log.cart_pos,
        "aisle_id": log.aisle_id,
        "department_id": log.department_id,
        "consumer_ids": np.array(log.consumer_ids, dtype=str),
        "item_ids": np.array(log.item_ids, dtype=str),
    }
    save_columns(path, columns, {"rows": len(log)}, kind="transaction-log")


def load_log(path):
    cols, _ = load_columns(path, kind="transaction-log")
    return TransactionLog.from_codes(
        cols["consumer"],
        cols["item"],
        cols["consumer_ids"].tolist(),
        cols["item_ids"].tolist(),
        cols["order_id"],
        cols["date"].astype("datetime64[D]"),
        cols["cart_pos"],
        cols["aisle_id"],
        cols["department_id"],
    )
