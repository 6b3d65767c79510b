import numpy as np
import pytest

from nextbuy.errors import ContractError, PipelineError
from nextbuy.features import save_features
from nextbuy.nncore import bce_loss, build_model
from nextbuy.training import (
    DEFAULT_ROWS,
    EVAL_SPLITS,
    TrialConfig,
    TrialResult,
    TrialTable,
    base_rate_bce,
    default_grid,
    reevaluate_checkpoint,
    run_grid,
    run_trial,
)


def cfg(arch="mlp", opt="rmsprop", sched="cyclic", swa=False, pavg=False, **kw):
    kw.setdefault("epochs", 2)
    kw.setdefault("batch_size", 256)
    return TrialConfig(arch, opt, sched, swa, pavg, row=kw.pop("row", 1), **kw)


def test_default_grid_shape():
    grid = default_grid()
    assert len(grid) == 24 == 2 * len(DEFAULT_ROWS)
    assert len({c.trial_id for c in grid}) == 24
    assert {c.arch for c in grid} == {"mlp", "tcn"}
    assert grid[0].trial_id == "mlp-01" and grid[-1].trial_id == "tcn-12"
    assert all(c.epochs == 20 and c.batch_size == 512 and c.n_checkpoints == 3 for c in grid)


def test_config_validation():
    with pytest.raises(ContractError):
        TrialConfig("lstm", "adam", "plateau", False, False)
    with pytest.raises(ContractError):
        TrialConfig("mlp", "sgd", "plateau", False, False)


def test_seeds_differ_per_trial():
    assert len({c.model_seed() for c in default_grid()}) == 24


def test_swa_start_epoch():
    assert cfg(epochs=20).swa_start_epoch == 10
    assert cfg(epochs=5).swa_start_epoch == 2


def test_zero_epoch_trial_equals_initialization(small_features):
    c = cfg(epochs=0)
    result = run_trial(c, small_features)
    model = build_model("mlp", small_features["train"].schema, seed=c.model_seed())
    for s in EVAL_SPLITS:
        p = model.predict(small_features[s].batch())
        assert result.bce[s] == bce_loss(p, small_features[s].labels)
        assert result.probabilities[s].tobytes() == p.tobytes()
    assert result.selected == ["epoch-0"] and result.history == []


@pytest.mark.parametrize("arch,opt,sched,swa,pavg", [
    ("mlp", "rmsprop", "cyclic", True, True),
    ("tcn", "adam", "plateau", False, True),
])
def test_trial_is_deterministic(small_features, arch, opt, sched, swa, pavg):
    c = cfg(arch, opt, sched, swa, pavg, epochs=3)
    a, b = run_trial(c, small_features), run_trial(c, small_features)
    assert a.ok and a.bce == b.bce and a.selected == b.selected
    for s in EVAL_SPLITS:
        assert a.probabilities[s].tobytes() == b.probabilities[s].tobytes()


def test_every_epoch_runs_and_best_is_chosen(small_features):
    r = run_trial(cfg(epochs=4), small_features)
    assert [h["epoch"] for h in r.history] == [1, 2, 3, 4]
    losses = {f"epoch-{h['epoch']}": h["val_bce"] for h in r.history}
    chosen = r.selected[0]
    if chosen != "epoch-0":
        assert losses[chosen] == min(losses.values())
        assert r.bce["validation"] == losses[chosen]


def test_parameter_averaging_uses_three_checkpoints(small_features):
    r = run_trial(cfg(pavg=True, epochs=4), small_features)
    assert len(r.selected) == 3 and len(set(r.selected)) == 3


def test_swa_candidate_present(small_features):
    r = run_trial(cfg(swa=True, pavg=True, epochs=4), small_features)
    assert r.ok and len(r.selected) == 3
    # lr is pinned once averaging starts
    assert [h["lr"] for h in r.history[2:]] == [1e-3, 1e-3]


def test_checkpoint_reproduces_stored_loss(tmp_path, small_features):
    r = run_trial(cfg("tcn", pavg=True, epochs=2), small_features, out_dir=tmp_path)
    assert reevaluate_checkpoint(tmp_path / r.checkpoint, small_features["validation"]) == r.bce["validation"]


def _poisoned(data):
    bad = dict(data)
    train = data["train"]
    cont = train.cont.copy()
    cont[:, 0] = np.inf
    bad["train"] = type(train)(train.schema, train.consumer, train.item, train.week, train.pair,
                               train.cat, cont, train.seq, train.labels)
    return bad


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_marks_trial_failed(small_features):
    r = run_trial(cfg(), _poisoned(small_features))
    assert r.status == "failed" and r.error and not r.probabilities


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_all_failed_grid_is_pipeline_error(small_features):
    with pytest.raises(PipelineError):
        run_grid([cfg(row=1), cfg(row=2)], data=_poisoned(small_features))


def test_duplicate_ids_rejected(small_features):
    with pytest.raises(ContractError):
        run_grid([cfg(), cfg()], data=small_features)


def test_parallel_grid_matches_serial(tmp_path, small_features):
    save_features(tmp_path / "f", small_features)
    grid = [cfg("mlp", row=1), cfg("tcn", "adam", "plateau", row=2)]
    serial = run_grid(grid, data=small_features)
    parallel = run_grid(grid, features_dir=tmp_path / "f", jobs=2)
    for a, b in zip(serial, parallel):
        assert a.trial_id == b.trial_id and a.bce == b.bce


def test_table_round_trip(tmp_path, small_features):
    grid = [cfg("mlp", row=1), cfg("tcn", row=1)]
    table = run_grid(grid, data=small_features, out_dir=tmp_path)
    back = TrialTable.load(tmp_path)
    assert back.base_rate == table.base_rate
    for a, b in zip(table, back):
        assert a.bce == b.bce
        assert a.probabilities["test1"].tobytes() == b.probabilities["test1"].tobytes()
    assert (tmp_path / "trials.csv").read_text().count("\n") == 2


def test_base_rate_oracle():
    assert base_rate_bce([0, 0, 0, 1], [1, 0]) == pytest.approx(-(np.log(0.25) + np.log(0.75)) / 2)


def fake(tid, arch, opt, sched, test2, val=0.5, status="ok"):
    c = {"arch": arch, "optimizer": opt, "scheduler": sched, "row": int(tid[-2:]), "swa": False,
         "parameter_averaging": False}
    return TrialResult(tid, c, status, {"validation": val, "test1": test2 + 0.01, "test2": test2})


def test_summary_report_means_top_three():
    table = TrialTable([
        fake("mlp-01", "mlp", "rmsprop", "cyclic", 0.30),
        fake("mlp-02", "mlp", "adam", "plateau", 0.20),
        fake("mlp-03", "mlp", "rmsprop", "cyclic", 0.25),
        fake("mlp-04", "mlp", "rmsprop", "plateau", 0.90),
        fake("mlp-05", "mlp", "rmsprop", "plateau", 0.01, status="failed"),
        fake("tcn-01", "tcn", "rmsprop", "cyclic", 0.10),
        fake("tcn-02", "tcn", "rmsprop", "cyclic", 0.12),
        fake("tcn-03", "tcn", "adam", "plateau", 0.14),
    ], base_rate=0.5)
    rep = table.summary_report()
    assert rep["architectures"]["mlp"]["trials"] == ["mlp-02", "mlp-03", "mlp-01"]
    assert rep["architectures"]["mlp"]["test2"] == pytest.approx(0.25)
    assert rep["architectures"]["tcn"]["test2"] == pytest.approx(0.12)
    assert rep["winning_pair"] == "rmsprop+cyclic" and rep["rmsprop_cyclic_wins"]
    assert rep["winning_pair_counts"] == {"adam+plateau": 2, "rmsprop+cyclic": 4}
    assert rep["tcn_le_mlp"] is True
    assert rep["beats_base_rate_by_10pct"] == {"mlp": True, "tcn": True}


def test_grid_rows_pair_architectures():
    table = TrialTable([fake("mlp-01", "mlp", "adam", "plateau", 0.3), fake("tcn-01", "tcn", "adam", "plateau", 0.2)])
    assert table.grid_rows() == [{"row": 1, "optimizer": "adam", "scheduler": "plateau", "swa": False,
                                  "parameter_averaging": False, "mlp_test2": 0.3, "tcn_test2": 0.2}]
