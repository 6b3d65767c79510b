import datetime as dt

import numpy as np
import pytest

from nextbuy.features import featurize
from nextbuy.ingest import TransactionLog
from nextbuy.panel import SplitConfig, build_panel
from nextbuy.synth import SynthConfig, generate

SMALL = SynthConfig(n_consumers=60, n_items=15, n_weeks=30, seed=3)


@pytest.fixture(scope="session")
def small_log():
    log, _ = generate(SMALL)
    return log


@pytest.fixture(scope="session")
def small_panel(small_log):
    return build_panel(small_log, SplitConfig(20, 2, 2, 2))


@pytest.fixture(scope="session")
def small_features(small_log, small_panel):
    return featurize(small_log, small_panel, seq_len=8)


def make_log(rows):
    """Rows of (consumer, item, order, iso date, cart position[, aisle, department])."""
    cols = list(zip(*[r if len(r) == 7 else (*r, "A1", "D1") for r in rows]))
    return TransactionLog(
        list(cols[0]), list(cols[1]), list(cols[2]),
        np.array([dt.date.fromisoformat(d) for d in cols[3]], dtype="datetime64[D]"),
        list(cols[4]), list(cols[5]), list(cols[6]),
    )


def weekly_log(purchases, start="2024-01-01"):
    """``{(consumer, item): [weeks]}`` -> log with one order per consumer-week (Mondays)."""
    origin = dt.date.fromisoformat(start)
    rows = []
    for (c, i), weeks in purchases.items():
        for w in weeks:
            day = origin + dt.timedelta(days=7 * w)
            rows.append((c, i, f"{c}-{w}", day.isoformat(), 1))
    # cart positions within each order
    seen = {}
    out = []
    for c, i, o, d, _ in sorted(rows, key=lambda r: (r[2], r[1])):
        seen[o] = seen.get(o, 0) + 1
        out.append((c, i, o, d, seen[o]))
    return make_log(out)


# acceptance criteria report one line each in the terminal summary
CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    lines = request.config.stash.setdefault(CRITERIA, [])

    def record(name, ok, detail=""):
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
