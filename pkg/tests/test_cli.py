import json

import numpy as np
import pytest

from torsionpinn import cli
from torsionpinn.errors import ConfigError


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_usage_errors_exit_1(capsys, tmp_path):
    assert run(capsys)[0] == 1
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys, "torsion2d", "hexagon")[0] == 1
    assert run(capsys, "torsion2d")[0] == 1
    assert run(capsys, "vs1d", "--scale", "0.5", "--out", str(tmp_path))[0] == 1
    assert run(capsys, "parametric", "eval", "--ckpt", str(tmp_path / "missing"))[0] == 1
    assert run(capsys, "oracle", "sweep", "--h", "0.01,0.02", "--out", str(tmp_path))[0] == 1
    (tmp_path / "junk.ckpt").write_bytes(b"junk")
    assert run(capsys, "inspect", str(tmp_path / "junk.ckpt"))[0] == 1


def test_defaults_and_config_parsing(capsys, tmp_path):
    code, out, _ = run(capsys, "defaults", "vs1d")
    assert code == 0 and "epochs = 20000" in out and "problem = vs1d" in out
    cfg = cli.parse_config_text("problem = vs1d\n# comment\nepochs = 5  # short\nlr = 0.01\n", "vs1d")
    assert cfg == {"epochs": 5, "lr": 0.01}
    with pytest.raises(ConfigError):
        cli.parse_config_text("colour = red\n", "vs1d")
    with pytest.raises(ConfigError):
        cli.parse_config_text("problem = torsion2d\n", "vs1d")
    with pytest.raises(ConfigError):
        cli.parse_config_text("epochs = many\n", "vs1d")
    bad = tmp_path / "bad.cfg"
    bad.write_text("unknown_key = 1\n")
    assert run(capsys, "vs1d", "--config", str(bad))[0] == 1


def test_oracle_commands(capsys, tmp_path):
    code, out, _ = run(capsys, "oracle", "poisson", "--shape", "square", "--h", "0.01", "--out", str(tmp_path / "p"))
    assert code == 0 and out.startswith("J = ")
    assert (tmp_path / "p" / "oracle_field.csv").read_text().startswith("x,y,phi\n")
    assert run(capsys, "verify", str(tmp_path / "p" / "manifest.json"))[0] == 0

    code, out, _ = run(capsys, "oracle", "sweep", "--shape", "irregular", "--h", "0.02,0.01",
                       "--out", str(tmp_path / "s"))
    assert code == 0 and len(out.splitlines()) == 2
    code, out, _ = run(capsys, "oracle", "ode", "--n", "256", "--out", str(tmp_path / "o"))
    assert code == 0 and float(out.split("=")[1]) < 1e-3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exits_2(capsys, tmp_path):
    code, _, err = run(capsys, "torsion2d", "circle", "--epochs", "30", "--lr", "1e300", "--hidden", "4",
                       "--out", str(tmp_path))
    assert code == 2 and "numerical failure" in err
    assert (tmp_path / "loss.csv").exists()


def test_torsion2d_run_and_rerun_is_identical(capsys, tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text("problem = torsion2d\nepochs = 20\nhidden = 8,8\npoint_spacing = 0.02\n"
                   "boundary_spacing = 0.01\nquad_h = 0.005\nfield_h = 0.02\n")
    digests = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code, stdout, _ = run(capsys, "torsion2d", "square", "--config", str(cfg), "--out", str(out))
        assert code == 0 and "rel_error" in stdout
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["epochs"] == 20 and manifest["seed"] == 0
        assert set(manifest["files"]) == {"field.csv", "loss.csv", "summary.csv"}
        digests.append(manifest["files"])
    assert digests[0] == digests[1]
    # tampering is detected
    with (tmp_path / "run0" / "loss.csv").open("a") as fh:
        fh.write("x\n")
    code, out, _ = run(capsys, "verify", str(tmp_path / "run0" / "manifest.json"))
    assert code == 2 and "MISMATCH loss.csv" in out


def test_vs1d_small(capsys, tmp_path):
    code, out, _ = run(capsys, "vs1d", "--scale", "1,4", "--seeds", "1", "--epochs", "20", "--out", str(tmp_path))
    assert code == 0 and "N=4" in out
    lines = (tmp_path / "comparison.csv").read_text().splitlines()
    assert lines[0] == "N,seed,rel_l2,final_loss" and len(lines) == 3
    assert (tmp_path / "N4" / "seed0" / "solution.csv").exists()


def test_parametric_train_eval_predict_inspect(capsys, tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "DEFAULTS", {**cli.DEFAULTS, "parametric": {
        **cli.DEFAULTS["parametric"], "hidden": "8,8", "n_param_residual": 10, "n_x_residual": 10,
        "n_param_boundary": 20}})
    ckpt = tmp_path / "m.ckpt"
    code, out, _ = run(capsys, "parametric", "train", "--epochs", "5", "--ckpt", str(ckpt), "--out", str(tmp_path))
    assert code == 0 and ckpt.exists() and "rel_l2" in out
    assert (tmp_path / "curves.csv").exists()
    code, out, _ = run(capsys, "parametric", "eval", "--ckpt", str(ckpt))
    assert code == 0 and out.startswith("rel_l2 = ")
    code, out, err = run(capsys, "parametric", "predict", "--ckpt", str(ckpt), "--x", "0,0.5,1",
                         "--T", "2", "--m", "0.6", "--sigma", "0.4")
    assert code == 0 and len(out.split()) == 3 and err == ""
    again = run(capsys, "parametric", "predict", "--ckpt", str(ckpt), "--x", "0,0.5,1",
                "--T", "2", "--m", "0.6", "--sigma", "0.4")[1]
    assert again == out
    vals = [float(v) for v in out.split()]
    assert np.all(np.isfinite(vals))
    code, _, err = run(capsys, "parametric", "predict", "--ckpt", str(ckpt), "--x", "0.5",
                       "--T", "50", "--m", "0.6", "--sigma", "0.4")
    assert code == 0 and "extrapolated" in err
    assert run(capsys, "parametric", "predict", "--ckpt", str(ckpt), "--x", "0.5")[0] == 1
    code, out, _ = run(capsys, "inspect", str(ckpt))
    assert code == 0 and "problem = parametric1d" in out
