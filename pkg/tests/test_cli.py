import json

import numpy as np
import pandas as pd
import pytest

from src.main import main
from src.models.embeddings import EmbeddingMatrix
from src.services.embedding_io import load_embeddings, save_embeddings

TRAIN_FLAGS = ["--batch-size", "8", "--epochs", "1", "--eval-every", "4"]


@pytest.fixture(autouse=True)
def _no_seed_override(monkeypatch):
    monkeypatch.delenv("DCLR_SEED", raising=False)


@pytest.fixture
def data(tmp_path):
    out = tmp_path / "data"
    code = main(["synth", "--out", str(out), "--n", "96", "--d", "8", "--clusters", "4",
                 "--num-pairs", "60", "--cone-angle", "30", "--reference-out"])
    assert code == 0
    return out


def _train(data, out, *extra):
    return main(["train", "--embeddings", str(data / "embeddings.emb"), "--dev", str(data / "pairs.tsv"),
                 "--out", str(out), *TRAIN_FLAGS, *extra])


def test_synth_writes_every_artifact(data):
    assert load_embeddings(data / "embeddings.emb").data.shape == (96, 8)
    assert load_embeddings(data / "reference.emb").data.shape == (96, 8)
    recipe = json.loads((data / "recipe.json").read_text())
    assert recipe["config"]["cone_angle"] == 30.0


def test_train_twice_is_byte_identical(data, tmp_path):
    assert _train(data, tmp_path / "a", "--seed", "7") == 0
    assert _train(data, tmp_path / "b", "--seed", "7") == 0
    for name in ("metrics.tsv", "uniformity_dev.tsv", "best.safetensors", "best.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    metrics = pd.read_csv(tmp_path / "a" / "metrics.tsv", sep="\t")
    assert list(metrics.columns) == ["step", "train_loss", "uniformity", "masked_fraction", "dev_spearman", "alignment"]
    assert len(metrics) == 12


def test_seed_environment_overrides_flag(data, tmp_path, monkeypatch):
    assert _train(data, tmp_path / "flag", "--seed", "7") == 0
    monkeypatch.setenv("DCLR_SEED", "7")
    assert _train(data, tmp_path / "env", "--seed", "1") == 0
    assert (tmp_path / "flag" / "metrics.tsv").read_bytes() == (tmp_path / "env" / "metrics.tsv").read_bytes()


def test_baseline_and_reference_runs(data, tmp_path):
    assert _train(data, tmp_path / "plain", "--no-noise", "--weighting", "off") == 0
    assert _train(data, tmp_path / "ref", "--reference-embeddings", str(data / "reference.emb"), "--phi", "off") == 0
    meta = json.loads((tmp_path / "ref" / "best.json").read_text())
    assert meta["config"]["weighting"] == "reference"


def test_eval_matches_stored_metric(data, tmp_path, capsys):
    assert _train(data, tmp_path / "run") == 0
    stored = json.loads((tmp_path / "run" / "best.json").read_text())["dev_metric"]
    capsys.readouterr()
    code = main(["eval", "--checkpoint", str(tmp_path / "run" / "best"), "--embeddings", str(data / "embeddings.emb"),
                 "--dev", str(data / "pairs.tsv"), "--predictions", str(tmp_path / "pred.tsv"), "--whiten"])
    assert code == 0
    out = capsys.readouterr().out
    assert f"mean\t{stored:.6f}" in out
    assert len(pd.read_csv(tmp_path / "pred.tsv", sep="\t")) == 60


def test_eval_dimension_mismatch_exits_nonzero(data, tmp_path, capsys):
    assert _train(data, tmp_path / "run") == 0
    other = tmp_path / "other"
    assert main(["synth", "--out", str(other), "--n", "96", "--d", "6", "--clusters", "4", "--num-pairs", "60"]) == 0
    code = main(["eval", "--checkpoint", str(tmp_path / "run" / "best"), "--embeddings", str(other / "embeddings.emb"),
                 "--dev", str(other / "pairs.tsv")])
    assert code == 2
    assert "d=8" in capsys.readouterr().err


def test_audit(data, tmp_path, capsys):
    assert main(["audit", "--embeddings", str(data / "embeddings.emb"), "--out", str(tmp_path / "h.tsv"),
                 "--batch-size", "32"]) == 0
    histogram = pd.read_csv(tmp_path / "h.tsv", sep="\t")
    assert histogram["count"].sum() == 8 * 32 * 31
    assert "uniformity" in capsys.readouterr().out


def test_audit_single_row_is_an_error(tmp_path):
    save_embeddings(EmbeddingMatrix(np.ones((1, 4))), tmp_path / "one.emb")
    assert main(["audit", "--embeddings", str(tmp_path / "one.emb"), "--out", str(tmp_path / "h.tsv")]) == 2
    assert not (tmp_path / "h.tsv").exists()


def test_validation_happens_before_any_output(data, tmp_path, capsys):
    assert _train(data, tmp_path / "bad", "--phi", "2.0") == 2
    assert "phi" in capsys.readouterr().err
    assert not (tmp_path / "bad").exists()
    code = main(["train", "--embeddings", str(tmp_path / "missing.emb"), "--dev", str(data / "pairs.tsv"),
                 "--out", str(tmp_path / "missing")])
    assert code == 2
    assert not (tmp_path / "missing").exists()
    assert _train(data, tmp_path / "noref", "--weighting", "reference") == 2
    with pytest.raises(SystemExit):
        _train(data, tmp_path / "typo", "--phi", "high")


def test_sweep_over_phi(data, tmp_path):
    code = main(["sweep", "--embeddings", str(data / "embeddings.emb"), "--dev", str(data / "pairs.tsv"),
                 "--out", str(tmp_path / "sweep"), "--param", "phi", "--values", "0.7,0.8,0.9,off", *TRAIN_FLAGS])
    assert code == 0
    table = pd.read_csv(tmp_path / "sweep" / "sweep_phi.tsv", sep="\t")
    assert len(table) == 4


def test_ablate(data, tmp_path):
    code = main(["ablate", "--embeddings", str(data / "embeddings.emb"), "--dev", str(data / "pairs.tsv"),
                 "--out", str(tmp_path / "abl"), "--variants", "dclr,no_both", "--seeds", "1,2", *TRAIN_FLAGS])
    assert code == 0
    assert len(pd.read_csv(tmp_path / "abl" / "ablation_runs.tsv", sep="\t")) == 4
    assert len(pd.read_csv(tmp_path / "abl" / "ablation_means.tsv", sep="\t")) == 2


def test_noise_debug(data, tmp_path, capsys):
    code = main(["noise-debug", "--embeddings", str(data / "embeddings.emb"), "--out", str(tmp_path / "noise"),
                 "--batch-size", "8", "--k", "2"])
    assert code == 0
    before = load_embeddings(tmp_path / "noise" / "noise_before.emb")
    after = load_embeddings(tmp_path / "noise" / "noise_after.emb")
    assert before.data.shape == after.data.shape == (16, 8)
    trace = [float(line.split("\t")[1]) for line in capsys.readouterr().out.splitlines()]
    assert len(trace) == 5
    assert trace == sorted(trace)


def test_self_check_command():
    assert main(["self-check", "--scale", "0.05"]) == 0


@pytest.mark.parametrize("flags", [
    ["--num-batches", "0"],
    ["--bins", "1"],
    ["--batch-size", "1"],
    ["--threshold", "1.5"],
])
def test_audit_flags_are_checked_before_reading(tmp_path, capsys, flags):
    code = main(["audit", "--embeddings", str(tmp_path / "missing.emb"), "--out", str(tmp_path / "h.tsv"), *flags])
    assert code == 2
    err = capsys.readouterr().err
    assert flags[0] in err
    assert "not found" not in err
    assert not (tmp_path / "h.tsv").exists()


def test_audit_reports_invalid_utf8(tmp_path, capsys):
    (tmp_path / "bad.tsv").write_bytes(b"0.1\t0.2\n0.3\t\xff\xfe\n")
    assert main(["audit", "--embeddings", str(tmp_path / "bad.tsv"), "--format", "tsv",
                 "--out", str(tmp_path / "h.tsv")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_eval_whiten_dim_is_checked(data, tmp_path, capsys):
    code = main(["eval", "--checkpoint", str(tmp_path / "nothing"), "--embeddings", str(data / "embeddings.emb"),
                 "--dev", str(data / "pairs.tsv"), "--whiten", "--whiten-dim", "0"])
    assert code == 2
    assert "--whiten-dim" in capsys.readouterr().err


def test_self_check_scale_is_checked(capsys):
    assert main(["self-check", "--scale", "0"]) == 2
    assert "--scale" in capsys.readouterr().err


def test_off_is_only_a_phi_value(data, tmp_path, capsys):
    code = main(["sweep", "--embeddings", str(data / "embeddings.emb"), "--dev", str(data / "pairs.tsv"),
                 "--out", str(tmp_path / "sweep"), "--param", "k", "--values", "0.5,off", *TRAIN_FLAGS])
    assert code == 2
    assert "'off'" in capsys.readouterr().err
    assert not (tmp_path / "sweep").exists()
