from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nextbuy.errors import ContractError
from nextbuy.f1max import (
    SENTINEL,
    ThresholdMap,
    apply_thresholds,
    best_thresholds,
    decision_rule,
    f1_at_threshold,
    fit_thresholds,
    optimize_threshold,
    per_consumer_f1,
)


def exhaustive(actual, probs):
    """Plain-Python search over every cutpoint with exact rational F1."""
    b = sum(actual)
    best = None
    for thr in sorted(set(probs) | {0.5, SENTINEL}):
        pred = [int(p >= thr) for p in probs]
        v = sum(x * a for x, a in zip(pred, actual))
        k = sum(pred)
        f1 = Fraction(2 * v, k + b) if k + b else Fraction(0)
        if best is None or f1 >= best[1]:  # ascending order: later equal wins the larger cutoff
            best = (thr, f1)
    return best


def test_decision_rule_examples():
    assert decision_rule([0.3, 0.5, 0.9], 0.5).tolist() == [0, 1, 1]
    assert decision_rule([0.0, 0.4, 1.0], 0.0).tolist() == [1, 1, 1]
    assert decision_rule([0.2, 0.999999], 1.0).tolist() == [0, 0]
    assert decision_rule([1.0, 1.0], SENTINEL).tolist() == [0, 0]


def test_f1_at_threshold_example():
    s = f1_at_threshold([1, 0, 1], [0.7, 0.6, 0.2], 0.2)
    assert (s.v, s.k) == (2, 3)
    assert s.precision == pytest.approx(2 / 3) and s.recall == 1.0 and s.f1 == pytest.approx(0.8)


def test_f1_degenerate_cases():
    assert f1_at_threshold([1, 0], [0.9, 0.1], 0.5).f1 == 1.0
    assert f1_at_threshold([1, 1, 0], [0.0, 0.0, 0.0], 0.3).f1 == 0.0
    s = f1_at_threshold([0, 0], [0.1, 0.2], 0.5)
    assert (s.precision, s.recall, s.f1) == (0.0, 0.0, 0.0)


def test_optimize_example():
    thr, f1 = optimize_threshold([1, 0, 1], [0.7, 0.6, 0.2])
    assert thr == 0.2 and f1 == pytest.approx(0.8)
    assert f1_at_threshold([1, 0, 1], [0.7, 0.6, 0.2], 0.5).f1 == pytest.approx(0.5)
    assert f1_at_threshold([1, 0, 1], [0.7, 0.6, 0.2], 0.7).f1 == pytest.approx(2 / 3)


def test_no_positives_returns_sentinel():
    thr, f1 = optimize_threshold([0, 0, 0], [0.9, 0.2, 1.0])
    assert thr == SENTINEL and f1 == 0.0
    assert decision_rule([0.9, 0.2, 1.0], thr).sum() == 0


def test_empty_is_contract_error():
    with pytest.raises(ContractError):
        optimize_threshold([], [])


def test_thousand_instance_exhaustive_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        # coarse grid forces ties between probabilities
        probs = (rng.integers(0, 11, n) / 10).tolist() if rng.random() < 0.5 else rng.random(n).tolist()
        actual = rng.integers(0, 2, n).tolist()
        thr, f1 = optimize_threshold(actual, probs)
        o_thr, o_f1 = exhaustive(actual, probs)
        assert (thr, f1) == (o_thr, float(o_f1)), (actual, probs)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 1.0]) | st.floats(0, 1), st.integers(0, 1)),
                min_size=1, max_size=15))
def test_oracle_equivalence_property(rows):
    probs, actual = map(list, zip(*rows))
    thr, f1 = optimize_threshold(actual, probs)
    o_thr, o_f1 = exhaustive(actual, probs)
    assert thr == o_thr and f1 == float(o_f1)
    assert 0.0 <= thr <= 1.0 or thr == SENTINEL


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(0, 1), st.floats(0, 1))
def test_k_non_increasing_in_threshold(probs, t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    assert decision_rule(probs, hi).sum() <= decision_rule(probs, lo).sum()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=20))
def test_fitted_beats_half(rows):
    probs, actual = map(list, zip(*rows))
    if sum(actual) == 0:
        return
    _, f1 = optimize_threshold(actual, probs)
    assert f1 >= f1_at_threshold(actual, probs, 0.5).f1


def test_grouped_matches_per_consumer():
    rng = np.random.default_rng(5)
    groups = rng.integers(0, 30, 500)
    probs = rng.random(500)
    actual = (rng.random(500) < probs).astype(int)
    thr, f1, k, v, b, ids = best_thresholds(groups, actual, probs)
    for j, g in enumerate(ids):
        sel = groups == g
        assert (thr[j], f1[j]) == optimize_threshold(actual[sel], probs[sel])
        assert b[j] == actual[sel].sum()
        assert k[j] == decision_rule(probs[sel], thr[j]).sum()


def test_probabilities_outside_unit_interval_rejected():
    with pytest.raises(ContractError):
        best_thresholds([0, 0], [1, 0], [0.5, 1.5])


def test_apply_examples():
    tm = ThresholdMap({7: 0.3, 8: 0.9, 9: 0.5})
    assert apply_thresholds([7, 7], [0.2, 0.4], tm).tolist() == [0, 1]
    assert tm.fallback == 0.5
    # unseen consumer 11 gets the median cutoff
    assert apply_thresholds([11, 11], [0.45, 0.55], tm).tolist() == [0, 1]


def test_fixed_fallback():
    tm = ThresholdMap({1: 0.2}, fallback=0.8)
    assert tm[2] == 0.8 and tm[1] == 0.2


def test_map_round_trip(tmp_path):
    tm = fit_thresholds([0, 0, 1, 1, 2], [1, 0, 0, 0, 1], [0.8, 0.3, 0.4, 0.6, 0.1 + 0.2])
    tm.save(tmp_path / "t.tsv", consumer_ids=["a", "b", "c"])
    lines = (tmp_path / "t.tsv").read_text().splitlines()
    assert lines[1].split("\t")[0] == "a" and len(lines) == 4
    back = ThresholdMap.load(tmp_path / "t.tsv", consumer_index={"a": 0, "b": 1, "c": 2})
    assert back.thresholds == tm.thresholds and back.fallback == tm.fallback
    assert back[1] == SENTINEL


def test_per_consumer_f1_counts():
    out = per_consumer_f1([0, 0, 1], [1, 0, 1], [1, 1, 0])
    assert out[0] == (1, 2, 1, pytest.approx(2 / 3)) and out[1] == (0, 0, 1, 0.0)
