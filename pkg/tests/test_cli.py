import json

import pytest
import yaml

from mmwpose.cli import main

CONFIG = {
    "problem": "slam-tightness",
    "sweep": {"param": "sigma_mu", "values": [0.01]},
    "trials": 2,
    "seed": 3,
    "params": {"n_scatter": 6},
}


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "exp.yaml"
    p.write_text(yaml.safe_dump(CONFIG))
    return p


def test_validate_prints_resolved_config(config, capsys):
    assert main(["validate", str(config), "--trials", "5"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["trials"] == 5 and doc["params"]["n_scatter"] == 6
    assert doc["params"]["ransac_iterations"] == 200


def test_run_writes_csv(config, tmp_path, capsys):
    out = tmp_path / "res" / "a.csv"
    assert main(["run", str(config), "--out", str(out), "--seed", "4"]) == 0
    first = out.read_text()
    assert first.splitlines()[0].split(",")[0] == "experiment"
    assert len(first.splitlines()) == 1 + 2 * 2
    assert "RMSE" in capsys.readouterr().out
    assert main(["run", str(config), "--out", str(out), "--seed", "4", "--threads", "2"]) == 0
    assert out.read_text() == first


def test_run_without_output_is_config_error(config, capsys):
    assert main(["run", str(config)]) == 2
    assert "config error" in capsys.readouterr().err


def test_scene_to_stdout_and_file(config, tmp_path, capsys):
    assert main(["scene", str(config)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["scatterers"]) == 6
    out = tmp_path / "scene.json"
    assert main(["scene", str(config), "--out", str(out)]) == 0
    assert json.loads(out.read_text()) == doc


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump({**CONFIG, "trials": 0}))
    assert main(["validate", str(p)]) == 2
    assert "trials" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump({**CONFIG, "plot": True}))
    assert main(["validate", str(p)]) == 2


def test_shipped_configs_validate(capsys):
    from pathlib import Path

    import mmwpose

    for p in sorted((Path(mmwpose.__file__).parent / "configs").glob("*.yaml")):
        assert main(["validate", str(p)]) == 0, p.name
