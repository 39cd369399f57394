"""Single-split pipeline, repeated-split protocol, and the two concatenated-feature baselines."""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boosting import GBTEnsemble, fit_ensemble, predict_proba
from .config import GBTConfig, TrainConfig
from .data import MultiOmicsDataset, SplitIndices, stratified_split
from .error_handling import handle_exceptions
from .graph import FeatureGraph, GraphStats, build_feature_graph, graph_stats, reduce_matrix
from .interpret import (
    ImportanceScores,
    RIGTriple,
    consensus_biomarkers,
    feature_importance,
    mean_rig,
    rank_biomarkers,
    relative_graph_importance,
)
from .metrics import compute_metrics, summarize
from .model import TrainHistory, TreeGraphModel, build_feedforward, build_model, predict, train
from .report import (
    METRICS,
    BiomarkerEntry,
    ExperimentReport,
    GraphRecord,
    GraphSummary,
    MetricSummary,
    RepeatRecord,
    StageTiming,
)

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    """One trained model and everything measured on its split."""

    seed: int
    model: TreeGraphModel
    metrics: Dict[str, float]
    history: TrainHistory
    num_features: Tuple[int, ...]
    graph_stats: List[GraphStats]
    importances: List[ImportanceScores]
    rig: RIGTriple
    timing: Dict[str, float] = field(default_factory=dict)

    @property
    def graphs(self) -> List[FeatureGraph]:
        return self.model.graphs

    @property
    def ensembles(self) -> List[Optional[GBTEnsemble]]:
        return self.model.ensembles


@dataclass
class BaselineResult:
    seed: int
    metrics: Dict[str, float]
    timing: Dict[str, float] = field(default_factory=dict)
    history: Optional[TrainHistory] = None


@handle_exceptions("ensemble_fit", logger)
def _fit_ensembles(dataset: MultiOmicsDataset, split: SplitIndices, gbt_config: GBTConfig) -> List[GBTEnsemble]:
    y = dataset.labels[split.train]
    return [fit_ensemble(m.values[split.train], y, gbt_config) for m in dataset.modalities]


@handle_exceptions("graph_build", logger)
def _build_graphs(dataset: MultiOmicsDataset, ensembles: Sequence[GBTEnsemble]) -> List[FeatureGraph]:
    return [build_feature_graph(e, m.feature_names) for e, m in zip(ensembles, dataset.modalities)]


@handle_exceptions("nn_train", logger)
def _train_model(inputs: List[np.ndarray], labels: np.ndarray, split: SplitIndices, graphs: List[FeatureGraph],
                 ensembles: List[GBTEnsemble], train_config: TrainConfig) -> Tuple[TreeGraphModel, TrainHistory]:
    model = build_model(graphs, train_config, train_config.seed, ensembles)
    model, history = train(model, inputs, labels, split, train_config)
    return model, history  # type: ignore[return-value]


@handle_exceptions("eval", logger)
def _evaluate(model: Any, inputs: List[np.ndarray], labels: np.ndarray, rows: np.ndarray) -> Dict[str, float]:
    _, probabilities = predict(model, [x[rows] for x in inputs])
    return compute_metrics(labels[rows], probabilities)


def run_pipeline(dataset: MultiOmicsDataset, split: SplitIndices, gbt_config: GBTConfig,
                 train_config: TrainConfig) -> PipelineResult:
    """Fit ensembles and graphs on the training part, train the masked network, score the test part."""
    timing: Dict[str, float] = {}
    start = time.perf_counter()

    t = time.perf_counter()
    ensembles = _fit_ensembles(dataset, split, gbt_config)
    timing["ensemble_fit"] = time.perf_counter() - t

    t = time.perf_counter()
    graphs = _build_graphs(dataset, ensembles)
    inputs = [reduce_matrix(m, g).values for m, g in zip(dataset.modalities, graphs)]
    timing["graph_build"] = time.perf_counter() - t

    t = time.perf_counter()
    model, history = _train_model(inputs, dataset.labels, split, graphs, ensembles, train_config)
    timing["nn_train"] = time.perf_counter() - t

    t = time.perf_counter()
    metrics = _evaluate(model, inputs, dataset.labels, split.test)
    timing["eval"] = time.perf_counter() - t
    timing["total"] = time.perf_counter() - start

    importances = [feature_importance(b, g) for b, g in zip(model.branches, graphs)]
    rig = relative_graph_importance(model.fusion, model.embedding_widths)
    return PipelineResult(
        seed=train_config.seed,
        model=model,
        metrics=metrics,
        history=history,
        num_features=tuple(m.n_features for m in dataset.modalities),
        graph_stats=[graph_stats(g) for g in graphs],
        importances=importances,
        rig=rig,
        timing=timing,
    )


def _concatenated(dataset: MultiOmicsDataset) -> np.ndarray:
    return np.concatenate([m.values for m in dataset.modalities], axis=1)


def baseline_gbt(dataset: MultiOmicsDataset, split: SplitIndices, gbt_config: GBTConfig) -> Dict[str, float]:
    """One boosted ensemble over all modalities side by side."""
    X = _concatenated(dataset)
    ensemble = fit_ensemble(X[split.train], dataset.labels[split.train], gbt_config)
    return compute_metrics(dataset.labels[split.test], predict_proba(ensemble, X[split.test]))


def baseline_dfn(dataset: MultiOmicsDataset, split: SplitIndices,
                 train_config: TrainConfig) -> Tuple[Dict[str, float], TrainHistory]:
    """Fully connected network on the concatenated features, trained with the same loop."""
    X = _concatenated(dataset)
    model = build_feedforward(X.shape[1], train_config, train_config.seed)
    model, history = train(model, [X], dataset.labels, split, train_config)
    _, probabilities = predict(model, [X[split.test]])
    return compute_metrics(dataset.labels[split.test], probabilities), history


def _seeded(train_config: TrainConfig, seed: int) -> TrainConfig:
    return train_config.model_copy(update={"seed": seed})


def _map_seeds(task: Callable[[int], Any], seeds: Sequence[int], jobs: int) -> List[Any]:
    """Run one task per seed; results come back in seed order whatever the completion order."""
    if jobs <= 1:
        return [task(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(task, seeds))


def run_repeats(dataset: MultiOmicsDataset, n_repeats: int, gbt_config: GBTConfig, train_config: TrainConfig,
                base_seed: int = 0, jobs: int = 1) -> List[PipelineResult]:
    """Seeds ``base_seed .. base_seed + n_repeats - 1`` drive both the split and the network."""
    if n_repeats < 2:
        raise ValueError(f"n_repeats must be at least 2, got {n_repeats}")

    def one(seed: int) -> PipelineResult:
        split = stratified_split(dataset.labels, seed=seed)
        result = run_pipeline(dataset, split, gbt_config, _seeded(train_config, seed))
        logger.info(f"Repeat seed={seed}: accuracy {result.metrics['accuracy']:.3f}, "
                    f"auc {result.metrics['auc']:.3f}, f1 {result.metrics['f1']:.3f} "
                    f"({result.timing['total']:.1f}s)")
        return result

    return _map_seeds(one, range(base_seed, base_seed + n_repeats), jobs)


def run_baseline_repeats(dataset: MultiOmicsDataset, which: str, n_repeats: int, gbt_config: GBTConfig,
                         train_config: TrainConfig, base_seed: int = 0, jobs: int = 1) -> List[BaselineResult]:
    """Same split seeds as ``run_repeats``, for paired comparison."""
    if which not in ("gbt", "dfn"):
        raise ValueError(f"unknown baseline '{which}' (expected gbt or dfn)")
    if n_repeats < 2:
        raise ValueError(f"n_repeats must be at least 2, got {n_repeats}")

    def one(seed: int) -> BaselineResult:
        split = stratified_split(dataset.labels, seed=seed)
        start = time.perf_counter()
        history = None
        if which == "gbt":
            metrics = baseline_gbt(dataset, split, gbt_config)
        else:
            metrics, history = baseline_dfn(dataset, split, _seeded(train_config, seed))
        elapsed = time.perf_counter() - start
        logger.info(f"Baseline {which} seed={seed}: auc {metrics['auc']:.3f}, f1 {metrics['f1']:.3f}")
        stage = "ensemble_fit" if which == "gbt" else "nn_train"
        return BaselineResult(seed, metrics, {stage: elapsed, "total": elapsed}, history)

    return _map_seeds(one, range(base_seed, base_seed + n_repeats), jobs)


def _aggregate(rows: Sequence[Dict[str, float]]) -> Dict[str, MetricSummary]:
    return {m: MetricSummary(**summarize([r[m] for r in rows]).as_dict()) for m in METRICS}


def _mean_timing(timings: Sequence[Dict[str, float]]) -> StageTiming:
    stages = StageTiming.model_fields
    return StageTiming(**{s: float(np.mean([t.get(s, 0.0) for t in timings])) for s in stages})


def best_repeat(results: Sequence[PipelineResult]) -> PipelineResult:
    """Highest test AUC; ties go to the lowest seed."""
    return max(results, key=lambda r: (r.metrics["auc"], -r.seed))


def select_biomarkers(results: Sequence[PipelineResult], dataset: MultiOmicsDataset, top_k: int,
                      mode: str = "consensus") -> Dict[str, List[Tuple[str, float]]]:
    if mode == "consensus":
        return {
            name: consensus_biomarkers([r.importances[i] for r in results], m.feature_names, top_k)
            for i, (name, m) in enumerate(zip(dataset.modality_names, dataset.modalities))
        }
    if mode == "best_run":
        best = best_repeat(results)
        return {name: rank_biomarkers(best.importances[i], top_k) for i, name in enumerate(dataset.modality_names)}
    raise ValueError(f"unknown biomarker mode '{mode}'")


def assemble_report(results: Sequence[PipelineResult], dataset: MultiOmicsDataset, top_k: int,
                    biomarker_mode: str, config: Dict[str, Any]) -> ExperimentReport:
    names = dataset.modality_names
    repeats = []
    for r in results:
        graphs = [GraphRecord(modality=name, num_features=p, num_nodes=s.num_nodes, num_edges=s.num_edges,
                              edge_node_ratio=s.edge_node_ratio)
                  for name, p, s in zip(names, r.num_features, r.graph_stats)]
        repeats.append(RepeatRecord(seed=r.seed, rig=r.rig.as_list(), graphs=graphs,
                                    best_epoch=r.history.best_epoch, epochs_run=r.history.epochs_run,
                                    timing=StageTiming(**r.timing), **r.metrics))
    graph_summary = [
        GraphSummary(
            modality=name,
            mean_num_features=float(np.mean([r.num_features[i] for r in results])),
            mean_num_nodes=float(np.mean([r.graph_stats[i].num_nodes for r in results])),
            mean_num_edges=float(np.mean([r.graph_stats[i].num_edges for r in results])),
            mean_edge_node_ratio=float(np.mean([r.graph_stats[i].edge_node_ratio for r in results])),
        )
        for i, name in enumerate(names)
    ]
    rankings = select_biomarkers(results, dataset, top_k, biomarker_mode)
    return ExperimentReport(
        model="treegraph",
        config=config,
        repeats=repeats,
        aggregate=_aggregate([r.metrics for r in results]),
        rig=mean_rig([r.rig for r in results]).as_list(),
        graphs=graph_summary,
        biomarker_mode=biomarker_mode,  # type: ignore[arg-type]
        biomarkers={
            modality: [BiomarkerEntry(rank=k, feature=f, score=s) for k, (f, s) in enumerate(ranking, start=1)]
            for modality, ranking in rankings.items()
        },
        timing=_mean_timing([r.timing for r in results]),
    )


def assemble_baseline_report(results: Sequence[BaselineResult], which: str,
                             config: Dict[str, Any]) -> ExperimentReport:
    repeats = [
        RepeatRecord(seed=r.seed, timing=StageTiming(**r.timing),
                     best_epoch=r.history.best_epoch if r.history else None,
                     epochs_run=r.history.epochs_run if r.history else None, **r.metrics)
        for r in results
    ]
    return ExperimentReport(
        model=which,  # type: ignore[arg-type]
        config=config,
        repeats=repeats,
        aggregate=_aggregate([r.metrics for r in results]),
        timing=_mean_timing([r.timing for r in results]),
    )


def _default_config(gbt_config: GBTConfig, train_config: TrainConfig, **extra: Any) -> Dict[str, Any]:
    return {"gbt": gbt_config.model_dump(mode="json"), "train": train_config.model_dump(mode="json"), **extra}


def run_experiment(dataset: MultiOmicsDataset, n_repeats: int = 20, gbt_config: Optional[GBTConfig] = None,
                   train_config: Optional[TrainConfig] = None, top_k: int = 30, biomarker_mode: str = "consensus",
                   base_seed: int = 0, jobs: int = 1, config: Optional[Dict[str, Any]] = None) -> ExperimentReport:
    """Repeated stratified splits aggregated into one report."""
    gbt_config = gbt_config or GBTConfig()
    train_config = train_config or TrainConfig()
    results = run_repeats(dataset, n_repeats, gbt_config, train_config, base_seed, jobs)
    if config is None:
        config = _default_config(gbt_config, train_config, n_repeats=n_repeats, top_k=top_k,
                                 biomarker_mode=biomarker_mode)
    return assemble_report(results, dataset, top_k, biomarker_mode, config)


def run_baseline(dataset: MultiOmicsDataset, which: str, n_repeats: int = 20,
                 gbt_config: Optional[GBTConfig] = None, train_config: Optional[TrainConfig] = None,
                 base_seed: int = 0, jobs: int = 1, config: Optional[Dict[str, Any]] = None) -> ExperimentReport:
    gbt_config = gbt_config or GBTConfig()
    train_config = train_config or TrainConfig()
    results = run_baseline_repeats(dataset, which, n_repeats, gbt_config, train_config, base_seed, jobs)
    if config is None:
        config = _default_config(gbt_config, train_config, n_repeats=n_repeats)
    return assemble_baseline_report(results, which, config)
