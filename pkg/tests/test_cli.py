import os
import pytest
import pandas as pd
from divdr.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from divdr.data.cache import cached_split
from divdr.experiment import ConfigError, build_config, load_config, load_dataset
from divdr.trainer import RunMetrics
from divdr.util import read_json, write_json

TINY = {
    "name": "tiny",
    "num_layers": 2,
    "num_scales": 2,
    "channels": 4,
    "gate_hidden": 4,
    "size": 16,
    "n_train": 8,
    "n_val": 4,
    "radius_small": [1.0, 2.0],
    "radius_large": [4.0, 6.0],
    "noise_std": 0.05,
    "total_steps": 4,
    "batch_size": 4,
    "warmup_steps": 2,
    "kmeans_interval": 2,
    "eval_interval": 2,
    "K": 2,
    "lambda1": 0.1,
    "lambda2": 0.5,
}


@pytest.fixture
def tiny_config(tmp_path):
    path = str(tmp_path / "tiny.json")
    write_json(path, {**TINY, "out": str(tmp_path / "runs")})
    return path


def test_missing_k_is_named(tmp_path):
    path = str(tmp_path / "bad.json")
    write_json(path, {key: value for key, value in TINY.items() if key != "K"})
    with pytest.raises(ConfigError) as error:
        load_config(path)
    assert error.value.fields == ["K"]
    assert main(["train", "--config", path, "--out", str(tmp_path / "runs")]) == EXIT_CONFIG
    assert not os.path.exists(tmp_path / "runs" / "tiny")


def test_config_errors():
    with pytest.raises(ConfigError) as error:
        build_config({**TINY, "lamda2": 0.5})
    assert "lamda2" in error.value.fields
    with pytest.raises(ConfigError, match="K >= 2"):
        build_config({**TINY, "K": 1})
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/config.json")


def test_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["train", "--config", str(path)]) == EXIT_CONFIG


def test_bad_split_is_a_usage_error():
    with pytest.raises(SystemExit) as exit_info:
        main(["eval", "runs/tiny", "--split", "val_q"])
    assert exit_info.value.code == 2


def test_eval_without_checkpoint(tmp_path):
    assert main(["eval", str(tmp_path / "nothing")]) == EXIT_RUNTIME


def test_sweep_rejects_unknown_parameter(tiny_config):
    assert main(["sweep", "--config", tiny_config, "--param", "beta", "--values", "1,2"]) == EXIT_CONFIG


def test_train_eval_export(tmp_path, tiny_config, capsys):
    assert main(["train", "--config", tiny_config]) == EXIT_OK
    run_dir = tmp_path / "runs" / "tiny"
    for name in ("metrics.jsonl", "centers.csv", "checkpoint.json", "config.json", "eval_val_x.json"):
        assert (run_dir / name).exists(), name
    metrics = RunMetrics.from_jsonl((run_dir / "metrics.jsonl").read_bytes())
    assert [record.step for record in metrics.refits] == [2]
    assert read_json(str(run_dir / "eval_val_x.json"))["split"] == "val_x"
    assert read_json(str(run_dir / "config.json"))["K"] == 2

    capsys.readouterr()
    assert main(["eval", str(run_dir), "--split", "val_s"]) == EXIT_OK
    printed = capsys.readouterr().out
    assert '"split": "val_s"' in printed
    record = read_json(str(run_dir / "eval_val_s.json"))
    assert record["sample_count"] == 4
    assert 0.5 <= record["alignment"] <= 1.0

    assert main(["export-aspace", str(run_dir)]) == EXIT_OK
    aspace = pd.read_csv(run_dir / "aspace_val_x.csv")
    assert list(aspace.columns[:3]) == ["sample_id", "true_subset", "assigned_cluster"]
    assert len(aspace.columns) == 3 + 2 * (2 + 2)
    assert len(aspace) == 4
    gates = aspace.filter(like="g_").to_numpy()
    assert ((gates >= 0.0) & (gates <= 1.0)).all()
    pca = pd.read_csv(run_dir / "pca_val_x.csv")
    assert list(pca.columns) == ["sample_id", "pc1", "pc2", "assigned_cluster"]
    assert read_json(str(run_dir / "aspace_val_x.edges.json"))["cluster_space"] == "pre"


def test_resume_flag_finishes_a_completed_run(tmp_path, tiny_config):
    assert main(["train", "--config", tiny_config]) == EXIT_OK
    run_dir = tmp_path / "runs" / "tiny"
    before = (run_dir / "metrics.jsonl").read_bytes()
    assert main(["train", "--config", tiny_config, "--resume"]) == EXIT_OK
    assert (run_dir / "metrics.jsonl").read_bytes() == before


def test_seed_override(tmp_path, tiny_config):
    config = load_config(tiny_config, seed=9)
    assert config.seed == 9
    assert config.dataset_spec().seed == 9


def test_gen_data_feeds_later_runs(tmp_path, tiny_config):
    assert main(["gen-data", "--config", tiny_config]) == EXIT_OK
    data_dir = tmp_path / "runs" / "data"
    for subset in ("S", "L", "X"):
        for split in ("train", "val"):
            assert (data_dir / f"{subset}_{split}.bin").exists()
            assert (data_dir / f"{subset}_{split}.manifest.json").exists()
    config = load_config(tiny_config)
    assert cached_split(str(data_dir), "X_val", config.dataset_spec()) is not None
    assert len(load_dataset(config, "val_l")) == 4
    with pytest.raises(ConfigError, match="Unknown split"):
        load_dataset(config, "test")


def test_sweep_writes_one_row_per_value(tmp_path, tiny_config):
    assert main(["sweep", "--config", tiny_config, "--param", "K", "--values", "3,2"]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "runs" / "tiny" / "sweep_K.csv")
    assert list(frame["K"]) == [2, 3]
    assert {"mIoU", "expected_cost", "inter", "intra", "alignment"} <= set(frame.columns)
    assert (tmp_path / "runs" / "tiny_K_2" / "eval_val_x.json").exists()


def test_motivation_table(tmp_path, tiny_config):
    assert main(["motivation", "--config", tiny_config]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "runs" / "tiny" / "motivation.csv")
    assert list(frame["model"]) == ["S", "L", "X", "DivDR"]
    assert list(frame.columns) == ["model", "mIoU_val_s", "mIoU_val_l", "expected_cost"]
    assert frame["mIoU_val_s"].between(0.0, 1.0).all()
    for model in ("S", "L", "X", "DivDR"):
        assert (tmp_path / "runs" / f"tiny_train_{model}" / "checkpoint.json").exists()
    assert read_json(str(tmp_path / "runs" / "tiny_train_S" / "config.json"))["lambda2"] == 0.0
    assert read_json(str(tmp_path / "runs" / "tiny_train_DivDR" / "config.json"))["subset"] == "X"


def test_motivation_without_clustering_has_three_rows(tmp_path):
    path = str(tmp_path / "dr.json")
    write_json(path, {**TINY, "lambda2": 0.0, "out": str(tmp_path / "runs")})
    assert main(["motivation", "--config", path]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "runs" / "tiny" / "motivation.csv")
    assert list(frame["model"]) == ["S", "L", "X"]
