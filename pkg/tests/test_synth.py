import numpy as np
import pytest

from nextbuy.ingest import load_log, parse_transactions, validate_log
from nextbuy.synth import SynthConfig, consumer_attributes, generate, write_synthetic


def test_same_seed_same_log():
    cfg = SynthConfig(n_consumers=50, n_items=20, n_weeks=52, seed=7)
    a, ta = generate(cfg)
    b, tb = generate(cfg)
    for name in ("consumer", "item", "date", "cart_pos"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    np.testing.assert_array_equal(ta.propensity, tb.propensity)
    assert ta.counts == tb.counts


def test_different_seed_differs():
    a, _ = generate(SynthConfig(n_consumers=50, n_items=20, seed=1))
    b, _ = generate(SynthConfig(n_consumers=50, n_items=20, seed=2))
    assert len(a) != len(b) or not np.array_equal(a.item, b.item)


def test_output_is_valid():
    log, truth = generate(SynthConfig(n_consumers=40, n_items=15))
    report = validate_log(log)
    assert report.errors == [] and report.ok
    assert truth.counts["transactions"] == len(log)


def _weekly(log, cfg):
    days = (log.date - np.datetime64(cfg.start_date, "D")).astype(np.int64)
    return days // 7


def test_cadence_two_alternates():
    cfg = SynthConfig(n_consumers=10, n_items=6, n_weeks=30, cadence_min=2, cadence_max=2, cadence_jitter=0,
                      cadence_amp=40.0, season_amp=0.0, explore_rate=0.0, base_logit_sd=0.0)
    log, truth = generate(cfg)
    weeks = _weekly(log, cfg)
    checked = 0
    for c, i in zip(*np.nonzero(truth.repertoire)):
        sel = (log.consumer == log.consumer_index[truth.consumer_ids[c]]) & (log.item == log.item_index[truth.item_ids[i]])
        labels = np.zeros(cfg.n_weeks, dtype=int)
        labels[np.unique(weeks[sel])] = 1
        assert labels[0] != labels[1]
        assert np.all(labels[2:] == labels[:-2]), labels
        checked += 1
    assert checked >= 10


def test_monte_carlo_rate_matches_propensity():
    cfg = SynthConfig(n_consumers=2, n_items=6, n_weeks=10_000, seed=11)
    log, truth = generate(cfg)
    weeks = _weekly(log, cfg)
    for c in range(cfg.n_consumers):
        for i in range(cfg.n_items):
            p = truth.propensity[c, i]
            sel = (log.consumer == log.consumer_index.get(truth.consumer_ids[c], -1)) & (
                log.item == log.item_index.get(truth.item_ids[i], -1))
            bought = len(np.unique(weeks[sel]))
            se = np.sqrt(np.sum(p * (1 - p)))
            if se > 0:
                assert abs(bought - p.sum()) <= 3 * se, (c, i, bought, p.sum(), se)


def test_truth_shapes_and_ranges():
    cfg = SynthConfig(n_consumers=30, n_items=10, n_weeks=20)
    _, truth = generate(cfg)
    assert truth.propensity.shape == (30, 10, 20)
    assert np.all((truth.propensity >= 0) & (truth.propensity <= 1))
    assert np.all(truth.cadence[truth.repertoire] >= 1) and np.all(truth.cadence[~truth.repertoire] == 0)


@pytest.mark.parametrize("field,value", [("n_consumers", 0), ("cadence_min", 0), ("cadence_jitter", -1)])
def test_invalid_config(field, value):
    with pytest.raises(ValueError):
        SynthConfig(**{field: value})


def test_write_synthetic_files(tmp_path):
    cfg = SynthConfig(n_consumers=20, n_items=8, n_weeks=10)
    log, _ = write_synthetic(tmp_path, cfg)
    assert {p.name for p in tmp_path.iterdir()} >= {"transactions.csv", "consumers.csv", "truth.npz", "synth.cfg"}
    back = parse_transactions(tmp_path / "transactions.csv")
    assert len(back) == len(log)
    header = (tmp_path / "consumers.csv").read_text().splitlines()[0].split(",")
    assert header == list(consumer_attributes(cfg))
