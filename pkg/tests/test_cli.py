import json

import numpy as np
import pytest

from sasa_iv import cli

GEN = ["gen", "--count", "40", "--seed", "3", "--n_vars", "4", "--n_steps", "6"]
TINY = ["--d_h", "4", "--d_g", "8", "--head_size", "8", "--batch_size", "16"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def gen_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SASA_OUT", str(tmp_path / "data"))
    code, out, _ = run(capsys, *GEN)
    assert code == 0
    monkeypatch.delenv("SASA_OUT")
    return tmp_path / "data"


@pytest.fixture
def trained(gen_dir, tmp_path, capsys):
    out = tmp_path / "train"
    code, _, err = run(capsys, "train", "--out", out, "--source", gen_dir / "src.csv", "--source_labels",
                       gen_dir / "src_labels.csv", "--target", gen_dir / "tgt.csv", "--epochs", 1, *TINY)
    assert code == 0, err
    return out


def test_gen_outputs(gen_dir, tmp_path, monkeypatch, capsys):
    names = sorted(p.name for p in gen_dir.iterdir())
    assert names == ["src.csv", "src.manifest", "src_labels.csv", "tgt.csv", "tgt.manifest", "tgt_labels.csv"]
    monkeypatch.setenv("SASA_OUT", str(tmp_path / "again"))
    run(capsys, *GEN)
    for name in names:
        assert (gen_dir / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_gen_start_variation_sd(tmp_path, capsys):
    code, out, _ = run(capsys, *GEN, "--variation", "start", "--out", tmp_path)
    report = json.loads(out)
    assert code == 0 and report["structure_term"] == 0 and report["strength_term"] == 0
    assert report["tv_start"] > 0


def test_gen_unwritable(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = run(capsys, *GEN, "--out", blocker / "sub")
    assert code == 2 and "error" in err


def test_train_outputs(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"model.ckpt", "train.log", "adjacency_src.csv", "adjacency_tgt.csv", "beta_src.csv",
            "beta_tgt.csv"} <= names
    lines = (trained / "train.log").read_text().splitlines()
    assert len(lines) == 1
    assert set(json.loads(lines[0])) == {"epoch", "l_y", "l_alpha", "l_beta", "l_r", "total"}


def test_train_rerun_identical_and_zero_epochs(gen_dir, trained, tmp_path, capsys):
    args = ["train", "--source", gen_dir / "src.csv", "--source_labels", gen_dir / "src_labels.csv", "--target",
            gen_dir / "tgt.csv", *TINY]
    assert run(capsys, *args, "--epochs", 1, "--out", tmp_path / "b")[0] == 0
    assert (tmp_path / "b" / "train.log").read_text() == (trained / "train.log").read_text()
    assert run(capsys, *args, "--epochs", 0, "--out", tmp_path / "z")[0] == 0
    assert (tmp_path / "z" / "train.log").read_text() == ""
    assert (tmp_path / "z" / "model.ckpt").exists()


def test_train_source_only_without_target(gen_dir, tmp_path, capsys):
    code, _, err = run(capsys, "train", "--out", tmp_path / "so", "--source", gen_dir / "src.csv",
                       "--source_labels", gen_dir / "src_labels.csv", "--variant", "source-only", "--epochs", 1, *TINY)
    assert code == 0, err
    assert not (tmp_path / "so" / "adjacency_tgt.csv").exists()


def test_train_schema_error(gen_dir, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    lines = (gen_dir / "src.csv").read_text().splitlines()
    lines[5] = lines[5].rsplit(",", 1)[0] + ",oops"
    bad.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "train", "--out", tmp_path, "--source", bad, "--source_labels",
                       gen_dir / "src_labels.csv", "--target", gen_dir / "tgt.csv")
    assert code == 3
    assert "row 6, column x4" in err


def test_eval(trained, gen_dir, tmp_path, capsys):
    base = ["eval", "--checkpoint", trained / "model.ckpt", "--data", gen_dir / "src.csv", "--labels",
            gen_dir / "src_labels.csv", "--out", tmp_path / "ev"]
    code, out, _ = run(capsys, *base)
    doc = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert code == 0 and np.isfinite(doc["rmse"]) and "structure_score" not in doc
    assert json.loads(out) == doc
    code, _, _ = run(capsys, *base, "--manifest", gen_dir / "src.manifest")
    doc = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert set(doc["structure_score"]) == {"precision", "recall", "f1"}
    code, _, err = run(capsys, *base, "--task", "classification")
    assert code == 4 and "mismatch" in err


def test_eval_shape_mismatch(trained, tmp_path, capsys):
    from sasa_iv.io import write_data_csv, write_labels_csv

    write_data_csv(tmp_path / "x.csv", np.zeros((3, 5, 4)))
    write_labels_csv(tmp_path / "y.csv", np.zeros(3))
    code, _, _ = run(capsys, "eval", "--checkpoint", trained / "model.ckpt", "--data", tmp_path / "x.csv",
                     "--labels", tmp_path / "y.csv", "--out", tmp_path)
    assert code == 4


def test_plot(trained, tmp_path, capsys):
    out = tmp_path / "fig"
    code, printed, _ = run(capsys, "plot", "--beta", trained / "beta_src.csv", "--mus", "0,0.1,0.3", "--out", out)
    assert code == 0
    pngs = sorted(p.name for p in out.glob("*.png"))
    assert len(pngs) == 6
    lit = [r["lit_edges"] for r in json.loads(printed)]
    assert lit == sorted(lit, reverse=True)
    first = {p.name: p.read_bytes() for p in out.glob("*.png")}
    run(capsys, "plot", "--beta", trained / "beta_src.csv", "--mus", "0,0.1,0.3", "--out", out)
    assert all(first[p.name] == p.read_bytes() for p in out.glob("*.png"))
    code, _, _ = run(capsys, "plot", "--beta", tmp_path / "missing.csv", "--out", out)
    assert code == 3


def test_sd(gen_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "sd", "--manifest_a", gen_dir / "src.manifest", "--manifest_b",
                       gen_dir / "tgt.manifest")
    assert code == 0 and json.loads(out)["strength_term"] > 0
    other = tmp_path / "o"
    run(capsys, "gen", "--count", 5, "--n_vars", 3, "--out", other)
    code, _, _ = run(capsys, "sd", "--manifest_a", gen_dir / "src.manifest", "--manifest_b", other / "src.manifest")
    assert code == 4


def test_ablate(gen_dir, tmp_path, capsys, monkeypatch):
    real_fit = cli.SASARegressor.fit

    def flaky(self, X, y, X_target=None):
        if self.variant == "SASA":
            raise RuntimeError("boom")
        return real_fit(self, X, y, X_target)

    monkeypatch.setattr(cli.SASARegressor, "fit", flaky)
    code, out, _ = run(capsys, "ablate", "--source", gen_dir / "src.csv", "--source_labels",
                       gen_dir / "src_labels.csv", "--target", gen_dir / "tgt.csv", "--eval_data",
                       gen_dir / "tgt.csv", "--eval_labels", gen_dir / "tgt_labels.csv", "--variants",
                       "SASA-IV,SASA,source-only", "--seeds", 2, "--epochs", 1, "--out", tmp_path / "ab", *TINY)
    assert code == 0
    doc = json.loads((tmp_path / "ab" / "ablation.json").read_text())
    rows = {r["variant"]: r for r in doc["rows"]}
    assert list(rows) == ["SASA-IV", "SASA", "source-only"]
    assert rows["SASA-IV"]["runs"] == 2 and rows["source-only"]["runs"] == 2
    assert rows["SASA"]["failed"] == 2
    assert out.count("\n") == 5


def test_config_file_and_precedence(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("count = 7\nn_vars = 3\nout = ignored\n")
    monkeypatch.setenv("SASA_OUT", str(tmp_path / "env"))
    code, _, _ = run(capsys, "gen", "--config", cfg, "--count", 9)
    assert code == 0
    lines = (tmp_path / "env" / "src.csv").read_text().splitlines()
    assert lines[0] == "sample_id,step,x1,x2,x3" and lines[-1].startswith("8,16,")
    code, _, _ = run(capsys, "gen", "--config", cfg, "--count", 2, "--out", tmp_path / "flag")
    assert (tmp_path / "flag" / "src.csv").exists()


def test_config_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = red\n")
    code, _, err = run(capsys, "gen", "--config", cfg)
    assert code == 1 and "unknown config keys ['colour']" in err and "expected keys for 'gen'" in err
    code, _, err = run(capsys, "train")
    assert code == 1 and "missing required keys" in err and "source_labels (required)" in err
    code, _, err = run(capsys, "gen", "--count", "many")
    assert code == 1 and "bad value for count" in err
