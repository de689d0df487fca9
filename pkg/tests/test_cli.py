import json
from pathlib import Path

import numpy as np
import pytest

from neurodecode.cli import RunConfig, cmd_features, cmd_synth, main
from neurodecode.dataset import load_corpus
from neurodecode.errors import ConfigError
from neurodecode.models import build_classifier
from neurodecode.nn import load_checkpoint

TINY = {"synth": {"n_per_class": 5, "duration_range_s": [0.2, 0.25]},
        "model": {"hidden": [6, 5], "tcn_filters": 4},
        "classifier": {"epochs": 2, "batch_size": 8},
        "regression": {"epochs": 2, "batch_size": 8},
        "seeds": [0]}


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory, tiny_config):
    d = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--config", tiny_config, "--out", str(d)]) == 0
    assert main(["features", "--config", tiny_config, str(d)]) == 0
    return d


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.classifier["epochs"] == 1000 and cfg.regression["epochs"] == 2000
        assert cfg.channels == "all17" and cfg.model["hidden"] == [256, 128]

    @pytest.mark.parametrize("data", [{"bogus": 1}, {"synth": {"bogus": 1}}, {"classifier": {"loss": "mse"}},
                                      {"channels": "occipital"}, {"labels": 5}, {"regime": "lpc"},
                                      {"synth": {"n_per_class": 0}}, {"seeds": []}])
    def test_rejects(self, data):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(data)

    def test_hash_ignores_out(self):
        assert RunConfig(out="a").hash == RunConfig(out="b").hash
        assert RunConfig(seed=1).hash != RunConfig(seed=2).hash

    def test_bad_file(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text("[1, 2]")
        assert main(["synth", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "x")]) == 1
        assert "config must be a JSON object" in capsys.readouterr().err


class TestSynth:
    def test_default_manifest(self, tmp_path):
        manifest = json.loads(cmd_synth(RunConfig(), tmp_path).read_text())
        assert len(manifest["examples"]) == 400
        assert manifest["meta"]["config_hash"] == RunConfig().hash

    def test_same_seed_identical(self, tmp_path, tiny_config):
        for name in ("a", "b"):
            assert main(["synth", "--config", tiny_config, "--out", str(tmp_path / name), "--seed", "3"]) == 0
        assert tree(tmp_path / "a") == tree(tmp_path / "b")

    def test_unwritable(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["synth", "--out", str(blocker / "sub")]) != 0
        assert "not writable" in capsys.readouterr().err


class TestFeatures:
    def test_widths(self, corpus_dir):
        corpus = load_corpus(corpus_dir)
        assert {ex.eeg_features.n_features for ex in corpus.examples} == {85}
        assert {ex.acoustic_features.n_features for ex in corpus.examples} == {26}
        assert corpus.meta["features"]["channels"] == "all17"

    def test_frontal_temporal(self, tmp_path, tiny_config):
        assert main(["synth", "--config", tiny_config, "--out", str(tmp_path)]) == 0
        assert main(["features", "--config", tiny_config, "--channels", "frontal_temporal_8", str(tmp_path)]) == 0
        corpus = load_corpus(tmp_path)
        assert {ex.eeg_features.n_features for ex in corpus.examples} == {40}
        assert corpus.examples[0].eeg_features.column_names[:6] == [
            "fp1.rms", "fp1.zcr", "fp1.mwa", "fp1.kurtosis", "fp1.pse", "fp2.rms"]

    def test_missing_audio(self, tmp_path, tiny_config, capsys):
        cmd_synth(RunConfig.from_dict(TINY), tmp_path)
        manifest_path = tmp_path / "manifest.json"
        manifest = json.loads(manifest_path.read_text())
        del manifest["examples"][3]["files"]["audio"]
        victim = manifest["examples"][3]["id"]
        manifest_path.write_text(json.dumps(manifest))
        before = manifest_path.read_bytes()
        assert main(["features", "--config", tiny_config, str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert victim in err and "audio" in err
        assert manifest_path.read_bytes() == before
        path, failures = cmd_features(RunConfig.from_dict({**TINY, "target_kind": None}), tmp_path)
        assert failures == [] and load_corpus(path).examples[3].acoustic_features is None


class TestTrain:
    def test_transplant_run(self, corpus_dir, tiny_config, tmp_path):
        out = tmp_path / "run"
        assert main(["train", "--config", tiny_config, str(corpus_dir), "--out", str(out),
                     "--regime", "mfcc+gfcc", "--labels", "2"]) == 0
        report = json.loads((out / "report.json").read_text())
        assert 0.0 <= report["test_accuracy"] <= 1.0
        assert report["frozen"] == {"0.gru": True, "2.gru": True}
        assert "wall_clock_s" not in json.dumps(report)
        assert "total_s" in json.loads((out / "timing.json").read_text())
        stamp = f"config_hash={report['config_hash']} seed=0"
        for name in ("classifier_curves.csv", "regression_curves.csv"):
            assert (out / name).read_text().startswith("# " + stamp)
        for name in ("classifier.modelbin", "regression.modelbin"):
            assert load_checkpoint(out / name).meta["config_hash"] == report["config_hash"]

    def test_random_regime_has_no_regression(self, corpus_dir, tiny_config, tmp_path):
        assert main(["train", "--config", tiny_config, str(corpus_dir), "--out", str(tmp_path),
                     "--regime", "random", "--labels", "4"]) == 0
        assert not (tmp_path / "regression.modelbin").exists()
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["frozen"] == {"0.gru": False, "2.gru": False} and report["regression"] is None

    def test_zero_epochs(self, corpus_dir, tiny_config, tmp_path):
        assert main(["train", "--config", tiny_config, str(corpus_dir), "--out", str(tmp_path),
                     "--regime", "random", "--epochs", "0", "--seed", "4"]) == 0
        trained = load_checkpoint(tmp_path / "classifier.modelbin")
        fresh = build_classifier(85, 2, seed=4, hidden=(6, 5), tcn_filters=4)
        for a, b in zip(trained.parameters().values(), fresh.parameters().values()):
            assert np.array_equal(a, b)
        assert 0.0 <= json.loads((tmp_path / "report.json").read_text())["test_accuracy"] <= 1.0

    def test_channel_subset_from_full_features(self, corpus_dir, tiny_config, tmp_path):
        assert main(["train", "--config", tiny_config, str(corpus_dir), "--out", str(tmp_path),
                     "--regime", "random", "--channels", "frontal_temporal_8"]) == 0
        assert load_checkpoint(tmp_path / "classifier.modelbin").meta["input_dim"] == 40

    def test_needs_features(self, tmp_path, tiny_config, capsys):
        cmd_synth(RunConfig.from_dict(TINY), tmp_path / "raw")
        assert main(["train", "--config", tiny_config, str(tmp_path / "raw"), "--out", str(tmp_path / "o")]) == 1
        assert "features" in capsys.readouterr().err

    def test_eval_matches_report(self, corpus_dir, tiny_config, tmp_path, capsys):
        assert main(["train", "--config", tiny_config, str(corpus_dir), "--out", str(tmp_path)]) == 0
        capsys.readouterr()
        assert main(["eval", "--config", tiny_config, str(corpus_dir), "--out", str(tmp_path)]) == 0
        result = json.loads(capsys.readouterr().out)
        report = json.loads((tmp_path / "report.json").read_text())
        assert result["test_accuracy"] == report["test_accuracy"]
        assert result["config_hash"] == report["config_hash"]


class TestGrid:
    def test_default_cells(self, corpus_dir, tiny_config, tmp_path):
        assert main(["grid", "--config", tiny_config, str(corpus_dir), "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "grid.csv").read_text().splitlines()
        assert lines[0].startswith("# config_hash=")
        means = [l.split(",") for l in lines[2:] if l.split(",")[2] == "mean"]
        assert len(means) == 12 and all(0.0 <= float(m[3]) <= 1.0 for m in means)

    def test_seed_rows_and_reproducible(self, corpus_dir, tiny_config, tmp_path):
        cfg = json.loads(Path(tiny_config).read_text())
        cfg["seeds"] = [1, 2, 3]
        cfg["classifier"]["epochs"] = cfg["regression"]["epochs"] = 1
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg))
        for name in ("a", "b"):
            assert main(["grid", "--config", str(path), str(corpus_dir), "--out", str(tmp_path / name)]) == 0
        rows = (tmp_path / "a" / "grid.csv").read_text().splitlines()[2:]
        assert sum(r.split(",")[2] != "mean" for r in rows) == 36
        assert tree(tmp_path / "a") == tree(tmp_path / "b")
