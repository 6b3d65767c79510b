import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nextbuy.errors import ContractError
from nextbuy.f1max import f1_at_threshold
from nextbuy.metrics import eda_report, format_table, micro_prf, probability_histogram, round_floats, write_report
from nextbuy.synth import SynthConfig, generate

from conftest import make_log


def test_micro_two_consumers():
    # consumer 0: V=2, k=3, b=2; consumer 1: V=1, k=1, b=2
    pred = [1, 1, 1, 0, 1, 0]
    actual = [1, 1, 0, 0, 1, 1]
    consumers = [0, 0, 0, 0, 1, 1]
    assert micro_prf(pred, actual, consumers) == pytest.approx((0.75, 0.75, 0.75))


def test_micro_all_correct():
    assert micro_prf([1, 0, 1], [1, 0, 1]) == (1.0, 1.0, 1.0)


def test_micro_zero_denominators():
    assert micro_prf([0, 0], [0, 0]) == (0.0, 0.0, 0.0)


def test_micro_length_mismatch():
    with pytest.raises(ContractError):
        micro_prf([1, 0], [1])


def test_macro_averages_consumers():
    p, r, f = micro_prf([1, 1, 1, 0, 1, 0], [1, 1, 0, 0, 1, 1], [0, 0, 0, 0, 1, 1], average="macro")
    assert p == pytest.approx((2 / 3 + 1) / 2) and r == pytest.approx((1 + 0.5) / 2)
    assert f == pytest.approx((0.8 + 2 / 3) / 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=30), st.floats(0, 1))
def test_single_consumer_agrees_with_threshold_score(rows, thr):
    probs, actual = map(list, zip(*rows))
    s = f1_at_threshold(actual, probs, thr)
    pred = (np.array(probs) >= thr).astype(int)
    assert micro_prf(pred, actual, [5] * len(pred)) == (s.precision, s.recall, s.f1)
    assert all(0 <= x <= 1 for x in (s.precision, s.recall, s.f1))


def test_histogram_point_mass():
    h = probability_histogram([0.05] * 10, [0] * 10)
    assert h["0"]["mass"][0] == 1.0 and sum(h["0"]["mass"]) == 1.0
    assert h["1"]["empty"] and h["1"]["mass"] == []
    assert h["negative_mode_below_0.1"]


def test_histogram_uniform_is_flat():
    rng = np.random.default_rng(0)
    p = rng.random(100_000)
    h = probability_histogram(p, rng.integers(0, 2, p.size))
    for label in ("0", "1"):
        mass = np.array(h[label]["mass"])
        n = h[label]["count"]
        # binomial SE per bin at 1/20
        assert np.all(np.abs(mass - 0.05) < 4 * np.sqrt(0.05 * 0.95 / n))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
def test_histogram_mass_conserved(rows):
    probs, labels = map(list, zip(*rows))
    h = probability_histogram(probs, labels)
    for label in ("0", "1"):
        if not h[label]["empty"]:
            assert sum(h[label]["mass"]) == pytest.approx(1.0)
            assert h[label]["count"] == labels.count(int(label))


def test_histogram_rejects_out_of_range():
    with pytest.raises(ContractError):
        probability_histogram([1.2], [0])


def test_basket_point_mass():
    rows = [(c, i, f"{c}{o}", "2024-01-0%d" % (o + 1), pos + 1)
            for c in "AB" for o in range(3) for pos, i in enumerate("XYZ")]
    rep = eda_report(make_log(rows))
    assert rep["basket_size_density"] == {"3": 1.0}
    assert rep["mean_basket_size"] == 3.0


def test_single_order_has_no_reorders():
    rep = eda_report(make_log([("A", "X", "o1", "2024-01-01", 1), ("A", "Y", "o1", "2024-01-01", 2)]))
    curve = rep["reorder_by_cart_position"]
    assert len(curve) == 21 and curve[-1]["position"] == "21+"
    assert curve[0]["reorder_probability"] == 0.0 and curve[1]["reorder_probability"] == 0.0
    assert curve[2]["reorder_probability"] is None


def test_long_carts_pool_in_last_bucket():
    rows = [("A", f"I{j}", "o1", "2024-01-01", j + 1) for j in range(25)]
    rep = eda_report(make_log(rows))
    assert rep["reorder_by_cart_position"][-1]["lines"] == 5


def test_reorder_curve_decreases_on_synthetic_data():
    log, _ = generate(SynthConfig(n_consumers=300, reorder_decay=2.0))
    curve = [c["reorder_probability"] for c in eda_report(log)["reorder_by_cart_position"] if c["lines"]]
    assert len(curve) >= 5
    assert all(a >= b for a, b in zip(curve, curve[1:]))


def test_report_rounding_is_stable(tmp_path):
    rep = {"a": 0.1 + 0.2, "b": [np.float64(1 / 3)], "c": {"d": 2}}
    write_report(tmp_path / "r.json", rep)
    assert json.loads((tmp_path / "r.json").read_text()) == {"a": 0.3, "b": [0.3333333333], "c": {"d": 2}}
    assert round_floats(rep) == round_floats(round_floats(rep))


def test_format_table():
    text = format_table(["split", "f1"], [["test1", 0.41234], ["test2", None]])
    lines = text.splitlines()
    assert lines[0].split() == ["split", "f1"] and set(lines[1]) <= {"-", " "}
    assert lines[2].split() == ["test1", "0.4123"] and lines[3].split() == ["test2"]
