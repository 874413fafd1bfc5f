import csv
import json

import pytest

from trajembed.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, ConfigError, ExperimentConfig, main
from trajembed.pretrain import encoder_hash, load_checkpoint, read_manifest
from trajembed.registry import build_method

SMALL = {
    "dataset": {"synthetic": {"width": 6, "height": 6, "n_trajectories": 60, "n_zones": 4, "n_drivers": 3}},
    "method": "t2vec",
    "model": {"dim": 16, "heads": 2},
    "pretrain": {"epochs": 2, "batch_size": 16},
    "adapter": {"task": "classification", "epochs": 2},
    "seed": 5,
}


def _write(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def test_generate_is_deterministic_with_defaults(tmp_path):
    assert main(["generate", "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["generate", "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("trajectories.csv", "network.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with open(tmp_path / "a" / "trajectories.csv") as fh:
        ids = {row["traj_id"] for row in csv.DictReader(fh)}
    assert len(ids) == 2000
    assert len(json.loads((tmp_path / "a" / "network.json").read_text())["nodes"]) == 400


def test_generate_seed_changes_output(tmp_path):
    cfg = _write(tmp_path, SMALL)
    main(["generate", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "a")])
    main(["generate", "--config", cfg, "--seed", "2", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "trajectories.csv").read_bytes() != (tmp_path / "b" / "trajectories.csv").read_bytes()


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict(SMALL)
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()
    inline = ExperimentConfig.from_dict({**SMALL, "method": {"inline": build_method("DTC").to_dict()}})
    assert ExperimentConfig.from_dict(inline.to_dict()) == inline


@pytest.mark.parametrize("bad,path", [
    ({"pretrain": {"seed": 3}}, "pretrain.seed"),
    ({"pretrain": {"epochs": "ten"}}, "pretrain.epochs"),
    ({"model": {"dim": 10, "heads": 4}}, "model"),
    ({"method": "no-such-method"}, "method"),
    ({"strategy": "partial"}, "strategy"),
    ({"colour": 1}, "colour"),
    ({"dataset": {"synthetic": {}, "trajectories": "x.csv"}}, "dataset"),
])
def test_config_errors_name_key_path(bad, path):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict({**SMALL, **bad})
    assert info.value.path == path


def test_exit_codes(tmp_path, capsys):
    assert main(["pretrain", "--method", "no-such-method", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "no-such-method" in capsys.readouterr().err
    assert main(["bogus"]) == EXIT_CONFIG
    assert main(["pretrain", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    cfg = _write(tmp_path, SMALL)
    # full strategy without a checkpoint is a configuration problem
    assert main(["evaluate", "--config", cfg, "--strategy", "full", "--out", str(tmp_path / "none")]) == EXIT_CONFIG
    # destination labels need a road network, which a CSV-only dataset lacks
    csv_only = tmp_path / "csvonly"
    main(["generate", "--config", cfg, "--out", str(csv_only)])
    no_net = _write(tmp_path, {**SMALL, "adapter": {"task": "destination", "epochs": 1},
                               "dataset": {"trajectories": str(csv_only / "trajectories.csv")}}, "nonet.json")
    assert main(["evaluate", "--config", no_net, "--strategy", "no-pretrain", "--out", str(tmp_path / "e")]) \
        == EXIT_RUNTIME


def test_pretrain_then_evaluate(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "run"
    assert main(["pretrain", "--config", cfg, "--out", str(out)]) == EXIT_OK
    history = json.loads((out / "history.json").read_text())
    assert [row["epoch"] for row in history] == [1, 2]
    assert read_manifest(out / "checkpoint")["epoch"] == 2
    ckpt_hash = encoder_hash(load_checkpoint(out / "checkpoint"))
    assert main(["evaluate", "--config", cfg, "--strategy", "no-finetune", "--out", str(out)]) == EXIT_OK
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics) == {"task", "method", "strategy", "seed", "metrics", "encoder_hash", "wall_seconds"}
    assert metrics["task"] == "classification" and metrics["method"] == "t2vec"
    assert metrics["strategy"] == "no-finetune" and metrics["seed"] == 5
    assert set(metrics["metrics"]) == {"acc@1", "acc@5", "recall", "f1"}
    assert all(isinstance(v, float) for v in metrics["metrics"].values())
    assert metrics["encoder_hash"] == ckpt_hash
    assert isinstance(metrics["wall_seconds"], float)


def test_zero_epoch_checkpoint_is_initialisation(tmp_path):
    cfg = _write(tmp_path, {**SMALL, "pretrain": {"epochs": 0}})
    main(["pretrain", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["pretrain", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "5"])
    assert (tmp_path / "a/checkpoint/params.bin").read_bytes() == (tmp_path / "b/checkpoint/params.bin").read_bytes()


def test_finetune_deterministic(tmp_path):
    cfg = _write(tmp_path, SMALL)
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["pretrain", "--config", cfg, "--out", str(out)]) == EXIT_OK
        assert main(["finetune", "--config", cfg, "--strategy", "full", "--out", str(out)]) == EXIT_OK
        metrics = json.loads((out / "metrics.json").read_text())
        metrics.pop("wall_seconds")
        runs.append((metrics, (out / "finetuned/params.bin").read_bytes()))
    assert runs[0] == runs[1]
