import json
import subprocess
import sys

import pytest

from nextbuy import cli
from nextbuy.errors import ConfigError
from nextbuy.pipeline import DEFAULTS, STAGES, PipelineConfig, Workspace

TINY = ["--set", "splits=10,2,2,2", "--set", "epochs=1", "--set", "batch_size=256", "--set", "seq_len=6",
        "--set", "windows=2,4", "--set", "lags=1,2", "--set", "stack.sweep=2,3"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--consumers", "30", "--items", "10", "--weeks", "20", "--seed", "5", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def finished(tmp_path_factory, data_dir):
    ws = tmp_path_factory.mktemp("ws")
    args = ["run", "--workspace", str(ws), "--input", str(data_dir / "transactions.csv"),
            "--attributes", str(data_dir / "consumers.csv"), *TINY]
    assert cli.main(args) == 0
    return ws, args


def run_main(args, capsys):
    code = cli.main(args)
    out, err = capsys.readouterr()
    return code, out, err


def test_config_round_trip(tmp_path):
    cfg = PipelineConfig({"epochs": 3, "stack.sweep": "3,5", "input": "x.csv"})
    cfg.save(tmp_path / "p.cfg")
    back = PipelineConfig.from_file(tmp_path / "p.cfg")
    assert back == cfg and back.int("epochs") == 3 and back.ints("stack.sweep") == [3, 5]
    assert set(back.entries) == set(DEFAULTS)


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig({"epoch": 3})
    (tmp_path / "bad.cfg").write_text("epochs 3\n")
    with pytest.raises(ConfigError):
        PipelineConfig.from_file(tmp_path / "bad.cfg")


def test_flags_override_file(tmp_path):
    (tmp_path / "p.cfg").write_text("epochs = 9\njobs = 4\n")
    args = cli.build_parser().parse_args(["train", "--config", str(tmp_path / "p.cfg"), "--epochs", "2",
                                          "--set", "seed=3"])
    cfg = cli._config(args)
    assert cfg["epochs"] == "2" and cfg["jobs"] == "4" and cfg["seed"] == "3"


def test_full_run_artifacts(finished):
    ws, _ = finished
    for rel in ("panel/log.npz", "panel/panel.npz", "features/train.npz", "features/schema.json",
                "runs/trials.csv", "runs/index.json", "stack/stacker.json", "stack/thresholds.tsv",
                "stack/sweep.csv", "report/metrics.json", "report/tables.txt", "pipeline.cfg"):
        assert (ws / rel).exists(), rel
    report = json.loads((ws / "report/metrics.json").read_text())
    assert len(report["trials"]) == 24
    assert report["stacking"]["dominates_selected"]
    assert report["thresholds"]["dominance_violations"] == 0
    assert (ws / "runs/trials.csv").read_text().count("\n") == 13


def test_second_run_skips_everything(finished, capsys):
    _, args = finished
    code, out, _ = run_main(args, capsys)
    assert code == 0
    assert out.splitlines() == [f"{s}: skipped (up to date)" for s in STAGES]


def test_corrupted_intermediate_reruns(finished, capsys):
    ws, args = finished
    path = ws / "features" / "test1.npz"
    path.write_bytes(path.read_bytes()[:-10] + b"corrupted!")
    code, out, _ = run_main(args, capsys)
    assert code == 0
    lines = dict(line.split(": ", 1) for line in out.splitlines())
    assert lines["featurize"] == "done"
    assert lines["ingest"].startswith("skipped") and lines["train"].startswith("skipped")
    # the regenerated file is byte-identical, so later stages stay cached
    code, out, _ = run_main(args, capsys)
    assert all(line.endswith("skipped (up to date)") for line in out.splitlines())


def test_changed_parameter_reruns_downstream_only(finished, capsys, tmp_path):
    ws, args = finished
    code, out, _ = run_main(["threshold", "--workspace", str(ws), "--fallback", "0.4", *TINY], capsys)
    assert code == 0 and out.strip() == "threshold: done"
    assert "# fallback 0.4" in (ws / "stack" / "thresholds.tsv").read_text()
    code, out, _ = run_main(["threshold", "--workspace", str(ws), *TINY], capsys)
    assert out.strip() == "threshold: done"


def test_single_stage_commands(finished, capsys, tmp_path):
    ws, _ = finished
    code, out, _ = run_main(["stack", "--workspace", str(ws), *TINY], capsys)
    assert code == 0 and out.strip() == "stack: skipped (up to date)"
    code, out, _ = run_main(["evaluate", "--workspace", str(ws), "--report", str(tmp_path / "r.json"), *TINY], capsys)
    assert code == 0 and "Stacking sweep" in out
    assert json.loads((tmp_path / "r.json").read_text())["average"] == "micro"


def test_locked_workspace(finished, capsys):
    ws, args = finished
    with Workspace(ws).lock():
        code, _, err = run_main(["panel", "--workspace", str(ws), *TINY], capsys)
        assert code == 3 and "locked" in err
        code, _, err = run_main(args, capsys)
        assert code != 0 and "locked" in err


def test_missing_input_names_stage(tmp_path, capsys):
    code, _, err = run_main(["run", "--workspace", str(tmp_path / "w"), "--input", str(tmp_path / "nope.csv")], capsys)
    assert code == 2 and "[ingest]" in err


def test_stage_before_inputs_exist(tmp_path, capsys):
    code, _, err = run_main(["featurize", "--workspace", str(tmp_path / "w")], capsys)
    assert code == 2 and "[featurize]" in err


def test_bad_value_is_reported(finished, capsys):
    ws, _ = finished
    code, _, err = run_main(["train", "--workspace", str(ws), "--epochs", "many"], capsys)
    assert code == 2 and "epochs" in err


def test_workspace_from_environment(monkeypatch, tmp_path, capsys, data_dir):
    monkeypatch.setenv("NEXTBUY_WORKSPACE", str(tmp_path / "envws"))
    code, _, _ = run_main(["ingest", "--input", str(data_dir / "transactions.csv")], capsys)
    assert code == 0 and (tmp_path / "envws" / "panel" / "log.npz").exists()


def test_ingest_to_directory(tmp_path, capsys, data_dir):
    code, out, _ = run_main(["ingest", "--input", str(data_dir / "transactions.csv"), "--out", str(tmp_path / "log.npz")], capsys)
    assert code == 0 and json.loads(out)["errors"] == []
    assert (tmp_path / "log.npz").exists()


def test_console_entry_point(data_dir, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nextbuy.cli", "synth", "--consumers", "5", "--items", "4",
                           "--weeks", "6", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["consumers"] >= 1
