"""End-to-end tests for the treegraph command line."""

import json
import logging

import pandas as pd
import pytest
from click.testing import CliRunner

from treegraph.cli import cli

SMALL_RUN = """\
synth.n_samples = 60
synth.n_features = 12,10,8
synth.n_informative = 3,3,2
synth.effect_size = 2.0
synth.imbalance = 2.0
gbt.num_trees = 3
gbt.max_depth = 3
train.learning_rate = 0.01
train.max_epochs = 5
train.hidden_width = 4
n_repeats = 2
top_k = 3
log_level = WARNING
"""


@pytest.fixture(autouse=True)
def reset_logging():
    yield
    logger = logging.getLogger("treegraph")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def small_config(write_text):
    return write_text("small.env", SMALL_RUN)


def _error(result):
    line = next(l for l in result.output.splitlines() if l.startswith('{"success"'))
    return json.loads(line)["error"]


class TestSynth:
    def test_writes_dataset(self, runner, small_config, tmp_path):
        out = tmp_path / "data"
        result = runner.invoke(cli, ["synth", "--config", str(small_config), "--seed", "3", "--out", str(out)],
                               obj={})
        assert result.exit_code == 0, result.output
        assert pd.read_csv(out / "mrna.csv").shape == (60, 11)
        labels = pd.read_csv(out / "labels.csv")
        assert labels.columns.tolist() == ["sample_id", "label"]
        truth = json.loads((out / "truth.json").read_text(encoding="utf-8"))
        assert truth["seed"] == 3
        assert [len(truth["informative"][m]) for m in ("methylation", "mrna", "mirna")] == [3, 3, 2]

    def test_same_seed_same_files(self, runner, small_config, tmp_path):
        for name in ("a", "b"):
            runner.invoke(cli, ["synth", "--config", str(small_config), "--out", str(tmp_path / name)], obj={})
        for f in ("methylation.csv", "mrna.csv", "mirna.csv", "labels.csv", "truth.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


    def test_log_level_comes_from_config(self, runner, write_text, tmp_path):
        config = write_text("quiet.env", SMALL_RUN.replace("log_level = WARNING", "log_level = ERROR"))
        result = runner.invoke(cli, ["synth", "--config", str(config), "--out", str(tmp_path / "q")], obj={})
        assert result.exit_code == 0, result.output
        assert logging.getLogger("treegraph").level == logging.ERROR

class TestExperiment:
    def test_artifacts(self, runner, small_config, tmp_path):
        out = tmp_path / "run"
        result = runner.invoke(cli, ["experiment", "--config", str(small_config), "--out", str(out)], obj={})
        assert result.exit_code == 0, result.output
        report = json.loads((out / "report.json").read_text(encoding="utf-8"))
        assert [r["seed"] for r in report["repeats"]] == [0, 1]
        assert set(report["aggregate"]) == {"accuracy", "auc", "f1"}
        assert report["config"]["base_seed"] == 0
        rankings = pd.read_csv(out / "rankings.csv")
        assert rankings.columns.tolist() == ["modality", "rank", "feature", "score"]
        assert (out / "model.npz").exists()
        for m in ("methylation", "mrna", "mirna"):
            assert (out / "graphs" / f"{m}_edges.csv").exists()
            assert (out / "graphs" / f"{m}_nodes.csv").exists()
        assert "auc=" in result.output

    def test_explain_reads_checkpoint(self, runner, small_config, tmp_path):
        runner.invoke(cli, ["experiment", "--config", str(small_config), "--out", str(tmp_path / "run")], obj={})
        out = tmp_path / "explain"
        result = runner.invoke(cli, ["explain", str(tmp_path / "run" / "model.npz"), "--top-k", "2",
                                     "--out", str(out)], obj={})
        assert result.exit_code == 0, result.output
        rig = json.loads((out / "rig.json").read_text(encoding="utf-8"))
        assert rig["modalities"] == ["methylation", "mrna", "mirna"]
        assert sum(rig["rig"]) == pytest.approx(1.0)
        rankings = pd.read_csv(out / "rankings.csv")
        assert rankings.groupby("modality")["rank"].max().max() <= 2

    @pytest.mark.parametrize("which", ["gbt", "dfn"])
    def test_baseline(self, runner, small_config, tmp_path, which):
        out = tmp_path / which
        result = runner.invoke(cli, ["baseline", "--config", str(small_config), "--which", which,
                                     "--out", str(out)], obj={})
        assert result.exit_code == 0, result.output
        report = json.loads((out / "baseline_report.json").read_text(encoding="utf-8"))
        assert report["model"] == which


class TestFailures:
    def test_missing_labels_file(self, runner, tmp_path, write_text):
        for name in ("meth.csv", "mrna.csv", "mirna.csv"):
            write_text(name, "sample_id,x\nA,1\nB,2\n")
        config = write_text("run.env", "methylation_path = meth.csv\nmrna_path = mrna.csv\n"
                                       "mirna_path = mirna.csv\nlabels_path = labels.csv\n")
        result = runner.invoke(cli, ["experiment", "--config", str(config)], obj={})
        assert result.exit_code == 1
        error = _error(result)
        assert error["code"] == "INVALID_CONFIG"
        assert any("labels_path" in e for e in error["details"]["errors"])

    def test_missing_config(self, runner, tmp_path):
        result = runner.invoke(cli, ["baseline", "--config", str(tmp_path / "none.env"), "--which", "gbt"], obj={})
        assert result.exit_code == 1
        assert _error(result)["code"] == "CONFIG_NOT_FOUND"

    def test_corrupt_checkpoint(self, runner, tmp_path):
        path = tmp_path / "model.npz"
        path.write_bytes(b"junk")
        result = runner.invoke(cli, ["explain", str(path), "--out", str(tmp_path / "x")], obj={})
        assert result.exit_code == 1
        assert _error(result)["code"] == "CORRUPT_CHECKPOINT"

    def test_unknown_option_is_usage_error(self, runner):
        result = runner.invoke(cli, ["experiment", "--bogus"], obj={})
        assert result.exit_code == 2

    def test_unexpected_exception_is_one_line(self, runner, small_config, tmp_path, monkeypatch):
        def broken(*args, **kwargs):
            raise KeyError("mrna")

        monkeypatch.setattr("treegraph.cli.generate_synthetic", broken)
        result = runner.invoke(cli, ["synth", "--config", str(small_config), "--out", str(tmp_path / "s")], obj={})
        assert result.exit_code == 1
        error = _error(result)
        assert error["code"] == "UNEXPECTED_ERROR"
        assert error["details"]["error_type"] == "KeyError"
        assert "Traceback" not in result.output
