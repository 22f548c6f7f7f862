import json

import numpy as np
import pytest

from condmeas.cli import main, read_config
from condmeas.errors import InvalidInput
from condmeas.potential import DiscreteMeasure, Component, fibonacci_sphere


def _json(path):
    return json.loads(path.read_text())


def test_hit_ball_outputs(tmp_path, capsys):
    rc = main(["hit-ball", "--d", "3", "--x", "2,0,0", "--r", "0.5", "--trials", "20000", "--seed", "7",
               "--out-dir", str(tmp_path)])
    assert rc == 0
    doc = _json(tmp_path / "hit-ball.json")
    assert doc["target"] == 0.25 and abs(doc["z"]) < 4
    assert doc["seed"] == 7 and len(doc["code_version"]) == 12
    for key in ("experiment", "params", "n", "mean", "stderr", "target", "z"):
        assert key in doc
    assert (tmp_path / "hit-ball.csv").read_text().startswith("n,mean")
    assert "hit-ball" in capsys.readouterr().out


def test_reproducible_from_seed(tmp_path):
    for name in ("a", "b"):
        assert main(["hit-ball", "--trials", "3000", "--seed", "3", "--out-dir", str(tmp_path), "--name", name]) == 0
    assert _json(tmp_path / "a.json")["mean"] == _json(tmp_path / "b.json")["mean"]


def test_tree_exact_second_moment(tmp_path):
    rc = main(["tree-exact", "--m", "2", "--alpha", "0.5", "--check", "second-moment", "--depth", "3",
               "--out-dir", str(tmp_path)])
    assert rc == 0
    doc = _json(tmp_path / "tree-exact.json")
    assert doc["max_abs_err"] <= 1e-12
    assert all({"lhs", "rhs", "abs_err"} <= set(r) for r in doc["rows"])


def test_capacity_from_file(tmp_path):
    pts = fibonacci_sphere(500)
    DiscreteMeasure(pts, np.full(500, 1 / 500)).save_csv(tmp_path / "sphere500.csv")
    rc = main(["capacity", "--input", str(tmp_path / "sphere500.csv"), "--kernel", "riesz:1", "--h", "auto",
               "--out-dir", str(tmp_path)])
    assert rc == 0
    doc = _json(tmp_path / "capacity.json")
    assert abs(doc["value"] - 1.0) < 0.1 and doc["gap"] <= 1e-8


def test_exit_codes(tmp_path, capsys):
    assert main(["no-such-thing"]) == 2
    assert main(["hit-ball", "--bogus"]) == 2
    assert main(["hit-ball", "--r", "-1", "--out-dir", str(tmp_path)]) == 2
    assert main(["hit-ball", "--x", "1,2", "--out-dir", str(tmp_path)]) == 2
    assert main(["condmeasure", "--region", "-1:1,-1:1,-1:1", "--out-dir", str(tmp_path)]) == 2
    assert main(["tree-exact", "--depth", "4", "--out-dir", str(tmp_path)]) == 1
    capsys.readouterr()


def test_config_and_dry_run(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ntrials = 5000\nr = 0.25\nseed=4\n")
    assert main(["hit-ball", "--config", str(cfg), "--trials", "1234", "--dry-run"]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["plan"]["trials"] == 1234 and plan["plan"]["r"] == 0.25 and plan["plan"]["seed"] == 4
    assert not list(tmp_path.glob("*.json"))
    cfg.write_text("colour = blue\n")
    assert main(["hit-ball", "--config", str(cfg)]) == 2
    with pytest.raises(InvalidInput):
        read_config(tmp_path / "missing.cfg")
    capsys.readouterr()


def test_workers_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("CONDMEAS_WORKERS", "2")
    assert main(["hit-ball", "--trials", "100", "--dry-run"]) == 0
    assert json.loads(capsys.readouterr().out)["workers"] == 2


def test_decompose_and_tree_commands(tmp_path, capsys):
    nu = DiscreteMeasure([[0.5, 0.5, 0.5], [2.0, 2.0, 2.0], [2.5, 2.0, 2.0]], [1.0, 0.5, 0.5],
                         [Component(0, 1, "atomic"), Component(1, 3, "density", 3)])
    nu.save_csv(tmp_path / "mix.csv")
    assert main(["decompose", "--input", str(tmp_path / "mix.csv"), "--out-dir", str(tmp_path)]) == 0
    doc = _json(tmp_path / "decompose.json")
    assert doc["regular_mass"] == 1.0 and doc["singular_mass"] == 1.0
    assert (tmp_path / "decompose_regular.csv").exists()
    assert main(["tree-mc", "--trials", "20000", "--depth", "6", "--out-dir", str(tmp_path)]) == 0
    assert main(["nonextinction", "--trials", "20000", "--depth", "6", "--out-dir", str(tmp_path)]) == 0
    assert _json(tmp_path / "nonextinction.json")["within"] is True
    assert main(["boxcount", "--paths", "5", "--N", "10,20", "--out-dir", str(tmp_path)]) == 0
    assert main(["occupation", "--trials", "50", "--dt", "1e-3", "--out-dir", str(tmp_path)]) == 0
    assert main(["hit-joint", "--trials", "50000", "--r", "0.3", "--out-dir", str(tmp_path)]) == 0
    assert main(["condmeasure", "--trials", "200", "--cal-trials", "1000", "--k", "1", "--out-dir",
                 str(tmp_path)]) == 0
    assert main(["occupation-identity", "--trials", "30", "--cal-trials", "1000", "--levels", "1,2",
                 "--out-dir", str(tmp_path)]) == 0
    capsys.readouterr()
