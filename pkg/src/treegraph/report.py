"""JSON report schema and atomic artifact writes."""

import json
import logging
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
METRICS = ("accuracy", "auc", "f1")
STAGES = ("ensemble_fit", "graph_build", "nn_train", "eval", "total")


class _Schema(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MetricSummary(_Schema):
    mean: float
    sd: float = Field(ge=0.0)
    ci_low: float
    ci_high: float

    @model_validator(mode="after")
    def validate_symmetric(self) -> "MetricSummary":
        if abs((self.ci_high - self.mean) - (self.mean - self.ci_low)) > 1e-9:
            raise ValueError("confidence interval must be symmetric about the mean")
        return self


class StageTiming(_Schema):
    """Wall-clock seconds per stage; excluded from determinism checks."""

    ensemble_fit: float = Field(default=0.0, ge=0.0)
    graph_build: float = Field(default=0.0, ge=0.0)
    nn_train: float = Field(default=0.0, ge=0.0)
    eval: float = Field(default=0.0, ge=0.0)
    total: float = Field(default=0.0, ge=0.0)


class GraphRecord(_Schema):
    modality: str
    num_features: int = Field(ge=1, description="Columns before selection (p)")
    num_nodes: int = Field(ge=1, description="Selected features (p*)")
    num_edges: int = Field(ge=1)
    edge_node_ratio: float = Field(ge=1.0)


class GraphSummary(_Schema):
    modality: str
    mean_num_features: float
    mean_num_nodes: float
    mean_num_edges: float
    mean_edge_node_ratio: float


class RepeatRecord(_Schema):
    seed: int
    accuracy: float = Field(ge=0.0, le=1.0)
    auc: float = Field(ge=0.0, le=1.0)
    f1: float = Field(ge=0.0, le=1.0)
    rig: Optional[List[float]] = None
    graphs: Optional[List[GraphRecord]] = None
    best_epoch: Optional[int] = None
    epochs_run: Optional[int] = None
    timing: StageTiming

    @field_validator("rig")
    @classmethod
    def validate_rig(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is not None and (len(v) != 3 or min(v) < 0 or abs(sum(v) - 1.0) > 1e-9):
            raise ValueError("rig must hold 3 non-negative values summing to 1")
        return v


class BiomarkerEntry(_Schema):
    rank: int = Field(ge=1)
    feature: str
    score: float = Field(ge=0.0)


class ExperimentReport(_Schema):
    """Everything ``experiment`` and ``baseline`` emit as report.json."""

    model: Literal["treegraph", "gbt", "dfn"]
    config: Dict[str, Any]
    repeats: List[RepeatRecord]
    aggregate: Dict[str, MetricSummary]
    rig: Optional[List[float]] = None
    graphs: Optional[List[GraphSummary]] = None
    biomarker_mode: Optional[Literal["consensus", "best_run"]] = None
    biomarkers: Optional[Dict[str, List[BiomarkerEntry]]] = None
    timing: StageTiming

    @model_validator(mode="after")
    def validate_contents(self) -> "ExperimentReport":
        if len(self.repeats) < 2:
            raise ValueError("a report needs at least 2 repeats")
        seeds = [r.seed for r in self.repeats]
        if seeds != sorted(set(seeds)):
            raise ValueError("repeats must be ordered by distinct seed")
        missing = [m for m in METRICS if m not in self.aggregate]
        if missing:
            raise ValueError(f"aggregate is missing metrics: {missing}")
        return self


@contextmanager
def atomic_path(path: PathLike) -> Iterator[Path]:
    """Yield a temporary sibling of ``path``; it replaces ``path`` only if the block succeeds."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    with atomic_path(path) as tmp:
        tmp.write_text(text, encoding="utf-8")


def write_json(path: PathLike, data: Any) -> None:
    atomic_write_text(path, json.dumps(data, indent=2) + "\n")


def write_report(report: Union[ExperimentReport, Dict[str, Any]], path: PathLike) -> ExperimentReport:
    """Validate against the schema, then write atomically."""
    validated = ExperimentReport.model_validate(
        report.model_dump() if isinstance(report, ExperimentReport) else report)
    atomic_write_text(path, validated.model_dump_json(indent=2) + "\n")
    logger.info(f"Wrote {validated.model} report with {len(validated.repeats)} repeats to {path}")
    return validated


def strip_timing(data: Dict[str, Any]) -> Dict[str, Any]:
    """Report contents without wall-clock fields, for determinism comparisons."""
    data = json.loads(json.dumps(data))
    data.pop("timing", None)
    for repeat in data.get("repeats", []):
        repeat.pop("timing", None)
    return data
