"""Feature-level and modality-level importance read directly from trained weights."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .graph import FeatureGraph
from .model import BranchModel, FusionModel
from .report import atomic_write_text

logger = logging.getLogger(__name__)

Ranking = List[Tuple[str, float]]


@dataclass(frozen=True)
class ImportanceScores:
    """Per-node scores of one branch, aligned with the graph's node order."""

    columns: Tuple[int, ...]
    feature_names: Tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (len(self.columns),) or len(self.feature_names) != len(self.columns):
            raise ValueError(f"{scores.shape} scores for {len(self.columns)} columns "
                             f"and {len(self.feature_names)} names")
        if np.any(scores < 0):
            raise ValueError("importance scores must be non-negative")
        object.__setattr__(self, "scores", scores)


@dataclass(frozen=True)
class RIGTriple:
    values: Tuple[float, float, float]

    def __post_init__(self) -> None:
        if len(self.values) != 3 or min(self.values) < 0 or abs(sum(self.values) - 1.0) > 1e-9:
            raise ValueError(f"relative graph importance must be 3 non-negative values summing to 1, got {self.values}")

    def as_list(self) -> List[float]:
        return [float(v) for v in self.values]


def feature_importance(branch: BranchModel, graph: FeatureGraph) -> ImportanceScores:
    """Row sums of |W| over the mask-1 entries of the branch's masked layer."""
    W = branch.masked.W
    if W.shape != graph.adjacency.shape:
        raise ValueError(f"branch weights {W.shape} do not match graph adjacency {graph.adjacency.shape}")
    scores = np.sum(np.abs(W) * (graph.adjacency == 1), axis=1)
    return ImportanceScores(graph.node_columns, graph.feature_names, scores)


def rank_biomarkers(scores: ImportanceScores, k: int) -> Ranking:
    """Top ``min(k, p*)`` features by descending score; ties go to the lower column index."""
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    order = np.lexsort((np.asarray(scores.columns), -scores.scores))[:k]
    return [(scores.feature_names[i], float(scores.scores[i])) for i in order]


def relative_graph_importance(fusion: FusionModel, branch_widths: Sequence[int]) -> RIGTriple:
    """L1 mass of each branch's row block in the first fusion layer, normalized to sum to 1."""
    W = fusion.layer1.W
    if len(branch_widths) != 3 or sum(branch_widths) != W.shape[0]:
        raise ValueError(f"branch widths {tuple(branch_widths)} do not partition {W.shape[0]} fusion inputs")
    bounds = np.cumsum((0,) + tuple(branch_widths))
    mass = np.array([np.abs(W[bounds[i]:bounds[i + 1]]).sum() for i in range(3)])
    total = mass.sum()
    if total == 0:
        logger.warning("All fusion weights attached to the branch embeddings are zero; reporting equal importance")
        return RIGTriple((1 / 3, 1 / 3, 1 / 3))
    return RIGTriple(tuple(float(m) for m in mass / total))  # type: ignore[arg-type]


def mean_rig(triples: Sequence[RIGTriple]) -> RIGTriple:
    values = np.mean([t.values for t in triples], axis=0)
    return RIGTriple(tuple(float(v) for v in values / values.sum()))  # type: ignore[arg-type]


def consensus_biomarkers(runs: Sequence[ImportanceScores], feature_names: Sequence[str], k: int) -> Ranking:
    """Rank by the mean score over runs; a feature missing from a run's graph counts as 0 there."""
    if not runs:
        raise ValueError("consensus needs at least one run")
    totals = np.zeros(len(feature_names))
    for run in runs:
        totals[list(run.columns)] += run.scores
    columns = tuple(int(c) for c in np.flatnonzero(totals > 0))
    mean = totals[list(columns)] / len(runs)
    pooled = ImportanceScores(columns, tuple(feature_names[c] for c in columns), mean)
    return rank_biomarkers(pooled, k)


def write_rankings_csv(rankings: Mapping[str, Ranking], path: Union[str, Path]) -> None:
    """``modality,rank,feature,score`` with 1-based ranks."""
    rows: List[Dict[str, object]] = []
    for modality, ranking in rankings.items():
        for rank, (feature, score) in enumerate(ranking, start=1):
            rows.append({"modality": modality, "rank": rank, "feature": feature, "score": repr(float(score))})
    frame = pd.DataFrame(rows, columns=["modality", "rank", "feature", "score"])
    atomic_write_text(path, frame.to_csv(index=False))
