"""End-to-end CLI contracts: artifacts, determinism, exit codes."""

import json

import numpy as np
import pytest

from digitlab.cli import main
from digitlab.config import config_hash, load_experiment_config

TINY_TRAIN = """
output_dir = "{out}"
seeds = [0]
eval_count = 20

[model]
d_model = 16
n_layers = 1
n_heads = 2
context_len = 24

[train]
steps = 30
batch_size = 8
log_interval = 10

[penalty]
variant = "del"
alpha = 0.1

[task]
kind = "add"
operand_digits = 2
count = 60
seed = 5
"""


def write_config(tmp_path, text, name="config.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """One tiny trained checkpoint shared by the eval/embed tests."""
    tmp = tmp_path_factory.mktemp("run")
    cfg = write_config(tmp, TINY_TRAIN.format(out=tmp / "out"))
    assert main(["train", "--config", str(cfg)]) == 0
    return tmp / "out"


class TestGradcheck:
    def test_default_passes_and_writes_report(self, tmp_path, capsys):
        code = main(["gradcheck", "--trials", "40", "--out", str(tmp_path)])
        assert code == 0
        report = json.loads((tmp_path / "gradcheck.json").read_text())
        assert set(report["variants"]) == {"ntl", "dist2", "digit_entropy", "del", "focal"}
        assert all(v["max_rel_err"] < 1e-6 for v in report["variants"].values())
        assert "ok" in capsys.readouterr().out

    def test_coarse_eps_degrades_but_still_reports(self, tmp_path):
        code = main(["gradcheck", "--trials", "20", "--eps", "0.1", "--out", str(tmp_path)])
        assert code == 3
        report = json.loads((tmp_path / "gradcheck.json").read_text())
        assert any(not v["passed"] for v in report["variants"].values())

    def test_zero_trials_is_usage_error(self, tmp_path):
        assert main(["gradcheck", "--trials", "0", "--out", str(tmp_path)]) == 2


class TestSynthData:
    def test_writes_jsonl(self, tmp_path):
        out = tmp_path / "data.jsonl"
        code = main(["synth-data", "--kind", "float_add", "--operand-digits", "2",
                     "--frac-digits", "1", "--count", "30", "--seed", "4",
                     "--out", str(out)])
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 30
        rec = json.loads(lines[0])
        assert set(rec) == {"prompt", "answer", "seed", "index"}

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (a, b):
            assert main(["synth-data", "--count", "25", "--seed", "9", "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestTrain:
    def test_artifacts_and_manifest(self, trained_run):
        assert (trained_run / "seed_0" / "checkpoint.npz").exists()
        assert (trained_run / "seed_0" / "train_log.csv").exists()
        manifest = json.loads((trained_run / "manifest.json").read_text())
        assert manifest["status"] == "complete"
        assert manifest["runs"][0]["seed"] == 0
        assert len(manifest["config_hash"]) == 64

    def test_rerun_identical_logs(self, tmp_path):
        logs = []
        for name in ("r1", "r2"):
            cfg = write_config(tmp_path, TINY_TRAIN.format(out=tmp_path / name), f"{name}.toml")
            assert main(["train", "--config", str(cfg)]) == 0
            logs.append((tmp_path / name / "seed_0" / "train_log.csv").read_bytes())
        assert logs[0] == logs[1]

    def test_invalid_alpha_exits_2(self, tmp_path):
        bad = TINY_TRAIN.format(out=tmp_path / "o") + "\n"
        bad = bad.replace('alpha = 0.1', 'alpha = -1.0')
        cfg = write_config(tmp_path, bad)
        assert main(["train", "--config", str(cfg)]) == 2

    def test_missing_config_exits_2(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.toml")]) == 2

    def test_numerical_blowup_exits_3(self, tmp_path):
        cfg_text = TINY_TRAIN.format(out=tmp_path / "boom").replace(
            "steps = 30", "steps = 40\nlr = 1e12\ngrad_clip = 0.0\nwarmup_frac = 0.0"
        )
        cfg = write_config(tmp_path, cfg_text)
        with np.errstate(all="ignore"):
            assert main(["train", "--config", str(cfg)]) == 3
        assert (tmp_path / "boom" / "seed_0" / "failure.json").exists()

    def test_config_hash_stable_under_reordering(self, tmp_path):
        base = TINY_TRAIN.format(out="x")
        reordered = base.replace("steps = 30\nbatch_size = 8", "batch_size = 8\nsteps = 30")
        h1 = config_hash(load_experiment_config(write_config(tmp_path, base, "a.toml")))
        h2 = config_hash(load_experiment_config(write_config(tmp_path, reordered, "b.toml")))
        assert h1 == h2


class TestEval:
    def test_report_and_determinism(self, trained_run, tmp_path):
        ckpt = trained_run / "seed_0" / "checkpoint.npz"
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            code = main(["eval", "--checkpoint", str(ckpt), "--kind", "add",
                         "--operand-digits", "2", "--count", "20", "--seed", "5",
                         "--out", str(out)])
            assert code == 0
            outs.append(out)
        for fname in ("report.json", "per_place.csv"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
        report = json.loads((outs[0] / "report.json").read_text())
        assert 0.0 <= report["task_accuracy"] <= 1.0
        assert report["entropy"]["digit_count"] > 0

    def test_untrained_model_reports_finite_entropies(self, tmp_path, vocab):
        from digitlab import ModelConfig, init_model, save_checkpoint

        config = ModelConfig(vocab_size=vocab.size, d_model=16, n_layers=1, n_heads=2, context_len=24)
        ckpt = tmp_path / "fresh.npz"
        save_checkpoint(ckpt, init_model(config), config, vocab)
        out = tmp_path / "eval"
        assert main(["eval", "--checkpoint", str(ckpt), "--count", "10", "--seed", "5",
                     "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        ent = report["entropy"]
        if ent["digit_mean"] is not None:
            assert np.isfinite(ent["digit_mean"])
        assert ent["nondigit_mean"] is None or np.isfinite(ent["nondigit_mean"])

    def test_missing_checkpoint_exits_2(self, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "none.npz"),
                     "--out", str(tmp_path / "o")]) == 2


class TestEmbedAnalyze:
    def test_matrices(self, trained_run, tmp_path):
        ckpt = trained_run / "seed_0" / "checkpoint.npz"
        out = tmp_path / "emb"
        assert main(["embed-analyze", "--checkpoint", str(ckpt), "--out", str(out)]) == 0
        cosine = np.loadtxt(out / "cosine_distance.csv", delimiter=",")
        ideal = np.loadtxt(out / "ideal_distance.csv", delimiter=",")
        assert cosine.shape == (10, 10)
        np.testing.assert_array_equal(cosine, cosine.T)
        np.testing.assert_array_equal(np.diag(cosine), np.zeros(10))
        assert ideal[0, 9] == 9.0
        norm = np.loadtxt(out / "ideal_distance_normalized.csv", delimiter=",")
        np.testing.assert_allclose(norm, ideal / 9.0)

    def test_rerun_identical(self, trained_run, tmp_path):
        ckpt = trained_run / "seed_0" / "checkpoint.npz"
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["embed-analyze", "--checkpoint", str(ckpt), "--out", str(out)]) == 0
        assert (a / "cosine_distance.csv").read_bytes() == (b / "cosine_distance.csv").read_bytes()


ABLATE = """
output_dir = "{out}"
eval_count = 15

[train]
steps = 25
batch_size = 8

[model]
d_model = 16
n_layers = 1
n_heads = 2
context_len = 24

[task]
kind = "add"
operand_digits = 2
count = 50
seed = 5

[grid]
variants = ["mle", "ntl"]
alpha = [0.0, 0.1]
seeds = [0]
"""


class TestAblate:
    def test_grid_summary(self, tmp_path):
        cfg = write_config(tmp_path, ABLATE.format(out=tmp_path / "ab"))
        assert main(["ablate", "--config", str(cfg)]) == 0
        lines = (tmp_path / "ab" / "summary.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 4  # header + 2 variants x 2 alphas
        assert lines[0].startswith("variant,alpha,k,decimal")

    def test_empty_grid_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, ABLATE.format(out=tmp_path / "ab2").replace(
            'variants = ["mle", "ntl"]', "variants = []"))
        assert main(["ablate", "--config", str(cfg)]) == 2

    def test_decimal_axis_rows(self, tmp_path):
        text = ABLATE.format(out=tmp_path / "ab3").replace(
            'kind = "add"', 'kind = "float_add"\nfrac_digits = 1'
        ).replace('variants = ["mle", "ntl"]', 'variants = ["del"]').replace(
            "alpha = [0.0, 0.1]", 'decimal = ["no_penalty", "constant", 1.02, "as_integers"]'
        )
        cfg = write_config(tmp_path, text)
        assert main(["ablate", "--config", str(cfg)]) == 0
        lines = (tmp_path / "ab3" / "summary.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 4  # one row per decimal-weighting mode
