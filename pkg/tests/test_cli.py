import csv
import json
import os

import pytest

from fourier_mts import cli
from fourier_mts.data import TimeSeriesDataset, serialize_ts, synth_dataset
from fourier_mts.experiments import PRUNING_ORDER

SYNTH = "classes=2,dims=2,length=8,n=6,difficulty=0.3,seed=0"
SMALL = ["--synth", SYNTH, "--embed-dim", "8", "--heads", "2", "--ffn-hidden", "8",
         "--epochs", "2", "--seeds", "0"]


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(cli.OUTPUT_ROOT_ENV, raising=False)


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_gen_synth_then_train(tmp_path, capsys):
    assert run("gen-synth", "--out", "data", "--classes", "2", "--length", "8",
               "--n-per-class", "6") == 0
    files = capsys.readouterr().out.split()
    assert [os.path.basename(f) for f in files] == ["Synthetic_TRAIN.ts", "Synthetic_TEST.ts"]
    assert run("train", "--train", files[0], "--test", files[1], "--embed-dim", "8",
               "--heads", "2", "--epochs", "4", "--out", "t") == 0
    out = capsys.readouterr().out
    assert out.startswith("accuracy=")
    assert len(read_csv(tmp_path / "t" / "history.csv")) == 4
    assert (tmp_path / "t" / "model.ckpt").exists()
    summary = json.loads((tmp_path / "t" / "summary.json").read_text())
    assert summary["param_count"] > 0 and summary["epochs"] == 4


def test_train_rerun_gives_identical_accuracy(tmp_path):
    for out in ("a", "b"):
        assert run("train", *SMALL, "--out", out) == 0
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    b = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert a["accuracy"] == b["accuracy"]
    assert (tmp_path / "a" / "model.ckpt").read_text() == (tmp_path / "b" / "model.ckpt").read_text()


def test_protocol_flag_rejects_off_grid_heads(capsys):
    assert run("train", "--synth", SYNTH, "--heads", "5", "--paper-protocol", "--out", "x") == 1
    assert "[4, 8, 16]" in capsys.readouterr().err


def test_help_lists_grid_bounds(capsys):
    with pytest.raises(SystemExit) as info:
        run("train", "--help")
    assert info.value.code == 0
    text = capsys.readouterr().out
    for bound in ("{4,8,16}", "{0.1,0.2,0.3}", "{8,16,32}", "{0,1,2,3,4}", "0.001"):
        assert bound in text


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nepochs = 3\nembed_dim = 8\nheads = 2\nsynth = " + SYNTH + "\n")
    assert run("train", "--config", cfg, "--epochs", "2", "--out", "o") == 0
    assert len(read_csv(tmp_path / "o" / "history.csv")) == 2
    assert run("train", "--config", cfg, "--out", "p") == 0
    assert len(read_csv(tmp_path / "p" / "history.csv")) == 3


def test_config_file_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nonsense = 1\n")
    assert run("train", "--config", cfg, "--out", "o") == 1
    cfg.write_text("epochs = many\n")
    assert run("train", "--config", cfg, "--out", "o") == 1
    assert "bad value" in capsys.readouterr().err


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert run("gen-synth", "--out", "sub", "--n-per-class", "2") == 0
    assert (tmp_path / "root" / "sub" / "Synthetic_TRAIN.ts").exists()


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        run("train", "--bogus-flag")
    assert info.value.code == 1
    assert run("train", "--out", "o") == 1  # no data source
    assert run("train", "--train", "missing.ts", "--test", "missing.ts", "--out", "o") == 2
    bad = tmp_path / "bad.ts"
    bad.write_text("@dimensions 1\n@seriesLength 2\n@classLabel true a b\n@data\n1,?:a\n")
    assert run("train", "--train", bad, "--test", bad, "--out", "o") == 2
    assert "line 5" in capsys.readouterr().err
    tr, _ = synth_dataset(0, n_classes=2, dims=1, length=8, n_per_class=5)
    huge = TimeSeriesDataset("huge", tr.X * 1e300, tr.y, tr.class_names)
    (tmp_path / "huge.ts").write_text(serialize_ts(huge))
    assert run("train", "--train", tmp_path / "huge.ts", "--test", tmp_path / "huge.ts",
               "--remove", "BN", "--embed-dim", "8", "--heads", "2", "--val-fraction", "0",
               "--out", "o") == 3


def test_inspect_data(tmp_path, capsys):
    tr, _ = synth_dataset(0, n_classes=3, dims=2, length=640, n_per_class=5)
    (tmp_path / "af.ts").write_text(serialize_ts(tr))
    assert run("inspect-data", tmp_path / "af.ts", "--code", "AF") == 0
    assert "matches manifest row AF" in capsys.readouterr().out
    assert run("inspect-data", tmp_path / "af.ts", "--code", "BM") == 0
    assert capsys.readouterr().out.count("mismatch") == 4


def test_ablate_writes_nine_rows(tmp_path, capsys):
    assert run("ablate", *SMALL, "--out", "a") == 0
    rows = read_csv(tmp_path / "a" / "records.csv")
    assert len(rows) == 9
    out = capsys.readouterr().out
    assert "Acc." in out and "Mean" in out and "Std." in out
    assert (tmp_path / "a" / "table.txt").exists()


def test_prune_orders(tmp_path, capsys):
    assert run("prune", *SMALL, "--out", "p") == 0
    first = capsys.readouterr().out.splitlines()[0]
    assert first == "pruning order: " + ", ".join(str(m) for m in PRUNING_ORDER)
    assert run("prune", *SMALL, "--order", "derived", "--out", "d") == 0
    assert (tmp_path / "d" / "ablation_records.jsonl").exists()
    from fourier_mts.experiments import rank_contributions, read_records_jsonl

    ranked = rank_contributions(read_records_jsonl(tmp_path / "d" / "ablation_records.jsonl"))
    assert capsys.readouterr().out.splitlines()[0] == \
        "pruning order: " + ", ".join(str(m) for m in ranked)
    rows = read_csv(tmp_path / "d" / "records.csv")
    assert rows[1]["record_id"] == f"-{ranked[0]}"


def test_stack_normalized_efficiency(tmp_path):
    assert run("stack", *SMALL, "--out", "s") == 0
    rows = read_csv(tmp_path / "s" / "efficiency.csv")
    assert len(rows) == 9
    vals = [float(r["normalized_eff_cost"]) for r in rows]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert min(vals) == 0.0 and max(vals) == 1.0


def test_sweep_then_pareto(tmp_path, capsys):
    assert run("sweep", "--synth", SYNTH, "--embed-dim", "16", "--ffn-hidden", "8",
               "--epochs", "1", "--seeds", "0", "--n", "25", "--out", "w") == 0
    assert len(read_csv(tmp_path / "w" / "records.csv")) == 25
    capsys.readouterr()
    assert run("pareto", tmp_path / "w" / "records.csv", "--out", "f", "--min-accuracy", "2.0") == 0
    out = capsys.readouterr().out
    assert "unattainable" in out
    front = read_csv(tmp_path / "f" / "frontier.csv")
    assert front
    assert (tmp_path / "f" / "front.svg").read_text().startswith("<?xml")
    assert (tmp_path / "f" / "front.dat").exists()
    # the frontier file is a fixpoint of the command
    assert run("pareto", tmp_path / "f" / "frontier.csv", "--out", "g") == 0
    assert (tmp_path / "g" / "frontier.csv").read_bytes() == (tmp_path / "f" / "frontier.csv").read_bytes()


def test_pareto_query_hit_and_empty_input(tmp_path, capsys):
    assert run("ablate", *SMALL, "--out", "a") == 0
    capsys.readouterr()
    assert run("pareto", tmp_path / "a" / "records.csv", "--out", "f", "--min-accuracy", "0") == 0
    assert "accuracy >= 0.0:" in capsys.readouterr().out
    header = (tmp_path / "a" / "records.csv").read_text().splitlines()[0]
    (tmp_path / "empty.csv").write_text(header + "\n")
    assert run("pareto", tmp_path / "empty.csv", "--out", "f") == 2


def test_outputs_stay_under_out_dir(tmp_path):
    before = set(os.listdir(tmp_path))
    assert run("train", *SMALL, "--out", "only") == 0
    assert set(os.listdir(tmp_path)) - before == {"only"}


def test_bad_remove_name(capsys):
    assert run("train", *SMALL, "--remove", "LSTM", "--out", "o") == 1
    assert "EMBED" in capsys.readouterr().err

