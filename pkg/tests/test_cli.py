import json
import math

import pytest

from histdp.cli import load_experiment_config, main


def test_accountant_subcommand(capsys):
    main(["accountant", "--q", "0.01", "--sigma", "1.0", "--steps", "100", "--delta", "1e-5"])
    out = json.loads(capsys.readouterr().out)
    from histdp.accountant import epsilon

    want, order = epsilon(0.01, 1.0, 100, 1e-5)
    assert out["epsilon"] == pytest.approx(want, rel=1e-12)
    assert out["best_order"] == order


def test_calibrate_subcommand(capsys):
    main(["calibrate", "--epsilon", "1.0", "--delta", "1e-5", "--q", "0.02", "--steps", "200"])
    sigma = json.loads(capsys.readouterr().out)["sigma"]
    from histdp.accountant import epsilon

    assert epsilon(0.02, sigma, 200, 1e-5)[0] <= 1.0


def test_generate_data_subcommand(tmp_path, capsys):
    out = tmp_path / "data.jsonl"
    main([
        "generate-data", "--output", str(out), "--users", "30", "--dim", "4",
        "--imbalance", "2.0", "--seed", "3",
    ])
    assert "wrote 30 samples" in capsys.readouterr().out
    from histdp.data import POST_LEVEL, ingest_jsonl

    ds = ingest_jsonl(out, POST_LEVEL, dim=4)
    assert len(ds) == 30


def test_train_subcommand(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("HISTDP_OUT", str(tmp_path))
    main([
        "train", "--seed", "1",
        "--set", "synthetic.num_users=50", "--set", "synthetic.dim=4",
        "--set", "synthetic.fixed_history_len=2", "--set", "synthetic.imbalance_ratio=2.0",
        "--set", "q=0.5", "--set", "epochs=1", "--set", "hidden=2",
    ])
    row = json.loads(capsys.readouterr().out)
    assert row["seed"] == 1
    assert row["epsilon"] == math.inf
    assert list(tmp_path.glob("model_*.json"))


def test_load_config_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"epochs": 7, "synthetic": {"num_users": 25, "dim": 4}}))
    cfg = load_experiment_config(str(path), ["learning_rate=0.5", "synthetic.seed=9"])
    assert cfg.epochs == 7
    assert cfg.learning_rate == 0.5
    assert cfg.synthetic.num_users == 25
    assert cfg.synthetic.seed == 9
    assert cfg.clip_bound == math.inf


def test_load_config_rejects_unknown_keys():
    with pytest.raises(SystemExit, match="unknown config keys"):
        load_experiment_config(None, ["optimiser=sgd"])
    with pytest.raises(SystemExit, match="unknown synthetic"):
        load_experiment_config(None, ["synthetic.n_users=5"])
    with pytest.raises(SystemExit, match="key=value"):
        load_experiment_config(None, ["epochs"])
