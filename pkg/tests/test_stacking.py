import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nextbuy.errors import ContractError
from nextbuy.nncore import EPS, bce_loss
from nextbuy.stacking import (
    DEFAULT_SWEEP,
    StackerModel,
    build_stacker,
    fit_stacker,
    init_weights,
    k_sweep,
    select_k_best,
    stack_predict,
)
from nextbuy.training import TrialResult, TrialTable


def test_select_k_best_smallest():
    assert select_k_best({"a": 0.03, "b": 0.05, "c": 0.02}, 2) == ["c", "a"]


def test_select_all_and_ties():
    losses = {"t3": 0.1, "t1": 0.1, "t2": 0.1}
    assert select_k_best(losses, 3) == ["t1", "t2", "t3"]
    assert select_k_best(losses, 1) == ["t1"]


@pytest.mark.parametrize("k", [0, 4])
def test_select_k_out_of_range(k):
    with pytest.raises(ContractError):
        select_k_best({"a": 1.0, "b": 2.0, "c": 3.0}, k)


def test_init_weights():
    np.testing.assert_allclose(init_weights([0.1, 0.3]), [0.75, 0.25])
    np.testing.assert_allclose(init_weights([0.2] * 4), [0.25] * 4)
    assert init_weights([0.7]).tolist() == [1.0]


def test_predict_examples():
    m = StackerModel(["a", "b"], [0.5, 0.5])
    assert stack_predict(m, [[0.2, 0.4]])[0] == pytest.approx(0.3)
    one = StackerModel(["a", "b"], [0.0, 1.0])
    probs = np.random.default_rng(0).random((10, 2))
    np.testing.assert_array_equal(stack_predict(one, probs), probs[:, 1])


def test_predict_matches_dot_product():
    rng = np.random.default_rng(1)
    w = rng.dirichlet(np.ones(4))
    probs = rng.random((100, 4))
    oracle = [sum(float(p) * float(wi) for p, wi in zip(row, w)) for row in probs]
    assert np.max(np.abs(stack_predict(StackerModel(list("abcd"), w), probs) - oracle)) < 1e-12


def test_predict_column_mismatch():
    with pytest.raises(ContractError):
        stack_predict(StackerModel(["a", "b"], [0.5, 0.5]), np.zeros((3, 3)))


def test_non_finite_probabilities_rejected():
    with pytest.raises(ContractError):
        fit_stacker(np.array([[0.5, np.nan]]), [1], [0.5, 0.5])


def _two_models(seed=0, n=400):
    rng = np.random.default_rng(seed)
    truth = rng.uniform(0.05, 0.95, n)
    y = (rng.random(n) < truth).astype(float)
    good = np.clip(truth + rng.normal(0, 0.02, n), 0.01, 0.99)
    bad = np.clip(truth + rng.normal(0, 0.25, n), 0.01, 0.99)
    return np.column_stack([good, bad]), y


@pytest.mark.parametrize("seed", range(5))
def test_blend_at_least_as_good_as_grid_search(seed):
    probs, y = _two_models(seed)
    model = fit_stacker(probs, y, init_weights([bce_loss(probs[:, j], y) for j in range(2)]))
    grid = [bce_loss(probs @ np.array([w, 1 - w]), y) for w in np.linspace(0, 1, 101)]
    # the better-calibrated model carries the weight, as on the grid
    assert np.argmin(grid) > 50 and model.weights[0] > 0.5
    assert model.test1_bce <= bce_loss(probs[:, 0], y)
    # fixed-step descent stops short of the grid optimum by well under 1e-3
    assert model.test1_bce <= min(grid) + 1e-3


def test_identical_submodels_keep_loss():
    p = np.random.default_rng(2).random(50)
    y = (p > 0.5).astype(float)
    probs = np.column_stack([p, p, p])
    model = fit_stacker(probs, y, [0.2, 0.3, 0.5])
    assert model.test1_bce == pytest.approx(bce_loss(p, y), rel=1e-12)
    np.testing.assert_allclose(stack_predict(model, probs), p, rtol=1e-12)


def test_single_submodel_is_identity():
    p = np.random.default_rng(3).random(20)
    y = np.round(p)
    model = fit_stacker(p[:, None], y, [1.0])
    assert model.weights.tolist() == [1.0]
    np.testing.assert_array_equal(stack_predict(model, p[:, None]), p)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6), st.sampled_from(["simplex", "none"]))
def test_dominates_every_column(seed, k, constrain):
    rng = np.random.default_rng(seed)
    probs = rng.random((60, k))
    y = rng.integers(0, 2, 60).astype(float)
    init = init_weights([bce_loss(probs[:, j], y) for j in range(k)])
    model = fit_stacker(probs, y, init, max_iter=50, constrain=constrain)
    best_single = min(bce_loss(probs[:, j], y) for j in range(k))
    assert model.test1_bce <= best_single + 1e-15
    assert model.test1_bce <= model.init_bce + 1e-15
    out = stack_predict(model, probs)
    assert np.all((out >= 0) & (out <= 1))
    if constrain == "simplex":
        assert np.all(model.weights >= 0) and model.weights.sum() == pytest.approx(1.0)


def test_unconstrained_clamps_output():
    model = StackerModel(["a", "b"], [1.5, 0.5], constrain="none")
    out = stack_predict(model, np.array([[0.9, 0.9], [0.0, 0.0]]))
    assert out.tolist() == [1 - EPS, EPS]


def test_model_round_trip(tmp_path):
    m = StackerModel(["mlp-01", "tcn-02"], [0.25, 0.75], iterations=7, test1_bce=0.1, init_bce=0.2, requested_k=5)
    m.save(tmp_path / "s.json")
    back = StackerModel.load(tmp_path / "s.json")
    assert back.trial_ids == m.trial_ids and back.weights.tolist() == [0.25, 0.75]
    assert back.requested_k == 5 and back.test1_bce == 0.1


def _table(n_trials, n_rows=200, seed=0):
    rng = np.random.default_rng(seed)
    truth = {s: rng.uniform(0.05, 0.95, n_rows) for s in ("validation", "test1", "test2")}
    labels = {s: (rng.random(n_rows) < t).astype(float) for s, t in truth.items()}
    results = []
    for j in range(n_trials):
        arch = "mlp" if j % 2 == 0 else "tcn"
        noise = 0.05 + 0.03 * j
        probs = {s: np.clip(t + rng.normal(0, noise, n_rows), 0.01, 0.99) for s, t in truth.items()}
        r = TrialResult(f"{arch}-{j + 1:02d}", {"arch": arch}, "ok", {s: bce_loss(p, labels[s]) for s, p in probs.items()}, probs)
        results.append(r)
    results.append(TrialResult("tcn-99", {"arch": "tcn"}, "failed"))
    return TrialTable(results), labels


def test_build_stacker_selects_by_test1_and_dominates():
    table, labels = _table(6)
    model = build_stacker(table, 3, labels=labels["test1"])
    best = sorted(table.successful(), key=lambda r: r.bce["test1"])[:3]
    assert model.trial_ids == [r.trial_id for r in best]
    assert model.test1_bce <= best[0].bce["test1"]


def test_k_larger_than_pool_is_capped():
    table, labels = _table(4)
    model = build_stacker(table, 25, labels=labels["test1"])
    assert model.k == 4 and model.requested_k == 25


def test_k_sweep_rows():
    table, labels = _table(12)
    rows = k_sweep(table, labels)
    assert [r.k for r, _ in rows] == list(DEFAULT_SWEEP)
    assert [r.effective_k for r, _ in rows] == [3, 5, 10, 12, 12]
    for row, _ in rows:
        assert set(row.bce) == {"validation", "test1", "test2"}
