"""Tests for the report schema and atomic writes."""

import json

import pytest
from pydantic import ValidationError

from treegraph.report import ExperimentReport, MetricSummary, atomic_path, strip_timing, write_report


def _report(**overrides):
    summary = {"mean": 0.8, "sd": 0.1, "ci_low": 0.75, "ci_high": 0.85}
    data = {
        "model": "gbt",
        "config": {"n_repeats": 2},
        "repeats": [
            {"seed": 0, "accuracy": 0.8, "auc": 0.9, "f1": 0.7, "timing": {"total": 1.5}},
            {"seed": 1, "accuracy": 0.7, "auc": 0.8, "f1": 0.6, "timing": {"total": 2.5}},
        ],
        "aggregate": {m: dict(summary) for m in ("accuracy", "auc", "f1")},
        "timing": {"total": 2.0},
    }
    data.update(overrides)
    return data


class TestSchema:
    def test_valid(self):
        assert ExperimentReport.model_validate(_report()).model == "gbt"

    def test_asymmetric_interval(self):
        with pytest.raises(ValidationError):
            MetricSummary(mean=0.5, sd=0.1, ci_low=0.4, ci_high=0.7)

    def test_unsorted_seeds(self):
        data = _report()
        data["repeats"].reverse()
        with pytest.raises(ValidationError):
            ExperimentReport.model_validate(data)

    def test_missing_metric(self):
        data = _report()
        del data["aggregate"]["f1"]
        with pytest.raises(ValidationError):
            ExperimentReport.model_validate(data)

    def test_unknown_field(self):
        with pytest.raises(ValidationError):
            ExperimentReport.model_validate(_report(notes="x"))

    def test_bad_rig(self):
        data = _report()
        data["repeats"][0]["rig"] = [0.5, 0.5, 0.5]
        with pytest.raises(ValidationError):
            ExperimentReport.model_validate(data)


def test_write_report_and_strip_timing(tmp_path):
    write_report(_report(), tmp_path / "report.json")
    data = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert data["repeats"][1]["timing"]["total"] == 2.5
    stripped = strip_timing(data)
    assert "timing" not in stripped and all("timing" not in r for r in stripped["repeats"])
    assert "timing" in data


def test_atomic_path_keeps_old_file_on_failure(tmp_path):
    target = tmp_path / "out.txt"
    target.write_text("old", encoding="utf-8")
    with pytest.raises(RuntimeError):
        with atomic_path(target) as tmp:
            tmp.write_text("partial", encoding="utf-8")
            raise RuntimeError("interrupted")
    assert target.read_text(encoding="utf-8") == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]
