import json
import time
from pathlib import Path

import pytest
import yaml

from gca.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, git_blob_hash, main, versioned_dir
from gca.config import load_config, parse_config
from gca.errors import ConfigError

TINY = {
    "seed": 0,
    "synth": {"D": 3, "k": 2, "edge_density": 0.3, "length": 300, "burn_in": 50},
    "model": {"d_alpha": 4, "d_beta": 4, "d_e": 8, "enc_hidden": 16, "pred_hidden": 8, "d_var": 2, "lstm_hidden": 8},
    "trainer": {"epochs": 2, "batch_size": 32, "steps_per_epoch": 4, "structure_warmup_epochs": 1},
    "sweep": {"seeds": [0]},
}


def write_config(path: Path, cfg: dict) -> Path:
    path.write_text(yaml.safe_dump(cfg))
    return path


def only_dir(base: Path, prefix: str) -> Path:
    found = sorted(base.glob(f"{prefix}-*"))
    assert found, f"no {prefix} output under {base}"
    return found[-1]


@pytest.fixture
def dataset(tmp_path):
    cfg = write_config(tmp_path / "sim.yaml", TINY)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "runs")]) == EXIT_OK
    return only_dir(tmp_path / "runs", "simulate")


def test_simulate_table1_preset(dataset):
    assert sorted(p.name for p in dataset.glob("*.csv")) == ["domain1.csv", "domain2.csv", "domain3.csv"]
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert [d["config"]["sample_interval"] for d in manifest["domains"]] == [1, 2, 3]


def test_simulate_single_domain(tmp_path):
    cfg = dict(TINY, synth=dict(TINY["synth"], domains=[{"id": "solo", "length": 200, "burn_in": 10}]))
    path = write_config(tmp_path / "one.yaml", cfg)
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == EXIT_OK
    assert [p.name for p in only_dir(tmp_path, "simulate").glob("*.csv")] == ["solo.csv"]


def test_bad_field_names_its_path(tmp_path, capsys):
    path = write_config(tmp_path / "bad.yaml", dict(TINY, trainer={"epochs": -3}))
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "trainer.epochs" in capsys.readouterr().err


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="model.widthh"):
        parse_config({"model": {"widthh": 3}})


def test_target_dim_must_fit():
    with pytest.raises(ConfigError, match="target_dim"):
        parse_config({"synth": {"D": 3}, "objective": {"target_dim": 3}})


def test_relative_dataset_dir_resolves_against_config(tmp_path):
    (tmp_path / "sub").mkdir()
    path = write_config(tmp_path / "sub" / "c.yaml", {"data": {"dataset_dir": "../data"}})
    assert load_config(path).data.dataset_dir == (tmp_path / "data").resolve()


def test_missing_dataset_is_io_error(tmp_path):
    path = write_config(tmp_path / "c.yaml", dict(TINY, data={"dataset_dir": str(tmp_path / "nowhere")}))
    assert main(["train", "--config", str(path), "--out", str(tmp_path)]) == EXIT_IO


def _train(tmp_path, dataset, *extra):
    path = write_config(tmp_path / "train.yaml", dict(TINY, data={"dataset_dir": str(dataset)}))
    out = tmp_path / "runs"
    assert main(["train", "--config", str(path), "--out", str(out), *extra]) == EXIT_OK
    return path, out


def test_train_writes_artifacts_and_reruns_identically(tmp_path, dataset):
    t0 = time.perf_counter()
    path, out = _train(tmp_path, dataset)
    assert time.perf_counter() - t0 < 300
    _train(tmp_path, dataset)
    first, second = sorted(out.glob("train-gca-*"))
    assert first != second  # versioned, nothing overwritten
    for name in ("checkpoint.zip", "train_log.jsonl", "epochs.jsonl", "ledger.json", "split_target.json", "config.yaml"):
        assert (first / name).exists(), name
    a, b = (json.loads((d / "ledger.json").read_text()) for d in (first, second))
    assert a["schema"] == "gca.ledger.v1" and a["ablation"] is False
    assert a["metrics"] == b["metrics"]
    assert a["data_files"]["domain1.csv"] == git_blob_hash(dataset / "domain1.csv")
    assert {"rmse", "mae", "auprc_src", "auprc_tgt"} <= set(a["metrics"])
    assert {"recon_src", "kl_tgt", "disc", "total"} <= set(a["loss_history"][0])
    assert (first / "checkpoint.zip").read_bytes() == (second / "checkpoint.zip").read_bytes()


def test_variant_flag_marks_ablation(tmp_path, dataset):
    _, out = _train(tmp_path, dataset, "--variant", "gca-r")
    ledger = json.loads((only_dir(out, "train-gca-r") / "ledger.json").read_text())
    assert ledger["variant"] == "gca-r" and ledger["ablation"] is True
    assert ledger["config"]["train"]["objective"]["variant"] == "gca-r"


def test_evaluate_reproduces_training_metrics(tmp_path, dataset):
    path, out = _train(tmp_path, dataset)
    run = only_dir(out, "train-gca")
    ckpt = run / "checkpoint.zip"
    assert main(["evaluate", "--config", str(path), "--checkpoint", str(ckpt), "--out", str(out)]) == EXIT_OK
    report = json.loads((only_dir(out, "evaluate") / "evaluation.json").read_text())
    ledger = json.loads((run / "ledger.json").read_text())
    assert report["metrics"]["rmse"] == pytest.approx(ledger["metrics"]["rmse"], abs=1e-12)


def test_transfer_matrix_two_domains(tmp_path):
    two = [{"id": "a", "length": 300, "burn_in": 20}, {"id": "b", "noise_variance": 2.0, "length": 300, "burn_in": 20}]
    cfg = dict(TINY, synth=dict(TINY["synth"], domains=two))
    path = write_config(tmp_path / "m.yaml", cfg)
    assert main(["transfer-matrix", "--config", str(path), "--out", str(tmp_path), "--with-baseline"]) == EXIT_OK
    result = json.loads((only_dir(tmp_path, "transfer-matrix") / "matrix.json").read_text())
    tasks = {c["task"] for c in result["cells"]}
    assert tasks == {"a->b", "b->a"}
    assert set(result["table"]["a->b"]) == {"gca", "lstm-st"}
    assert "Average" in result["table"]
    text = (only_dir(tmp_path, "transfer-matrix") / "table.txt").read_text()
    assert "RMSE" in text and "MAE" in text


def test_transfer_matrix_six_tasks(tmp_path):
    cfg = dict(TINY, trainer=dict(TINY["trainer"], epochs=1, steps_per_epoch=1))
    path = write_config(tmp_path / "m.yaml", cfg)
    assert main(["transfer-matrix", "--config", str(path), "--out", str(tmp_path)]) == EXIT_OK
    result = json.loads((only_dir(tmp_path, "transfer-matrix") / "matrix.json").read_text())
    assert len({c["task"] for c in result["cells"]}) == 6
    assert set(result["table"]["domain1->domain2"]) == {"gca"}


def test_plot_from_cli(tmp_path, dataset):
    _, out = _train(tmp_path, dataset)
    ledger = only_dir(out, "train-gca") / "ledger.json"
    assert main(["plot", str(ledger), "--out", str(out)]) == EXIT_OK
    assert len(list(only_dir(out, "plot").glob("*.png"))) == 3


def test_plot_empty_ledger_fails(tmp_path):
    empty = tmp_path / "ledger.json"
    empty.write_text("{}")
    assert main(["plot", str(empty), "--out", str(tmp_path)]) != EXIT_OK


def test_versioned_dirs_never_collide(tmp_path):
    dirs = [versioned_dir(tmp_path, "run") for _ in range(3)]
    assert [d.name for d in dirs] == ["run-001", "run-002", "run-003"]


def test_git_blob_hash_matches_git(tmp_path):
    f = tmp_path / "x.txt"
    f.write_text("hello\n")
    assert git_blob_hash(f) == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_shipped_config_parses():
    cfg = load_config(Path(__file__).parents[1] / "configs" / "synthetic.yaml")
    assert cfg.synth.D == 5 and cfg.trainer.learning_rate == 0.002
    assert cfg.sweep.variants == ["gca", "gca-r"]
