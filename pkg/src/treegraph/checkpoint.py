"""Versioned single-file archive of a trained model, its graphs and its ensembles."""

import json
import logging
import zipfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .boosting import ensemble_from_dict, ensemble_to_dict
from .config import MODALITIES
from .error_handling import CheckpointError
from .graph import FeatureGraph, adjacency_edges
from .model import BranchModel, FusionModel, TreeGraphModel
from .nn import BatchNormParams, DenseParams, MaskedDenseParams
from .report import atomic_path

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_KEY = "__manifest__"


def _graph_to_dict(graph: FeatureGraph) -> Dict[str, Any]:
    return {
        "node_columns": list(graph.node_columns),
        "feature_names": list(graph.feature_names),
        "edges": [[u, v] for u, v in adjacency_edges(graph) if u != v],
    }


def _graph_from_dict(data: Dict[str, Any]) -> FeatureGraph:
    columns = [int(c) for c in data["node_columns"]]
    position = {c: i for i, c in enumerate(columns)}
    adjacency = np.eye(len(columns))
    for u, v in data["edges"]:
        adjacency[position[u], position[v]] = adjacency[position[v], position[u]] = 1.0
    return FeatureGraph(tuple(columns), adjacency, tuple(data["feature_names"]))


def save_checkpoint(model: TreeGraphModel, path: Union[str, Path],
                    modality_names: Sequence[str] = MODALITIES,
                    train_config: Optional[Dict[str, Any]] = None) -> None:
    """Write parameters, buffers and a JSON manifest into one ``.npz`` archive."""
    arrays = model.state_dict()
    manifest = {
        "format_version": FORMAT_VERSION,
        "modality_names": list(modality_names),
        "activation": model.activation,
        "dropout": model.dropout,
        "fusion_depth": len(model.fusion.layers),
        "shapes": {name: list(a.shape) for name, a in arrays.items()},
        "graphs": [_graph_to_dict(g) for g in model.graphs],
        "ensembles": [ensemble_to_dict(e) if e is not None else None for e in model.ensembles],
        "train_config": train_config or {},
    }
    arrays[MANIFEST_KEY] = np.array(json.dumps(manifest))
    with atomic_path(path) as tmp:
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
    logger.info(f"Saved checkpoint to {path}")


def _read_archive(path: Path) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}", error_code="CHECKPOINT_NOT_FOUND",
                              details={"path": str(path)})
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}", error_code="CORRUPT_CHECKPOINT",
                              details={"path": str(path)}) from e
    if MANIFEST_KEY not in arrays:
        raise CheckpointError(f"Checkpoint {path} has no manifest", error_code="CORRUPT_CHECKPOINT",
                              details={"path": str(path)})
    try:
        manifest = json.loads(str(arrays.pop(MANIFEST_KEY)[()]))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"Checkpoint {path} has an unreadable manifest: {e}",
                              error_code="CORRUPT_CHECKPOINT", details={"path": str(path)}) from e
    return manifest, arrays


def load_checkpoint(path: Union[str, Path]) -> Tuple[TreeGraphModel, Dict[str, Any]]:
    """Rebuild the model exactly as saved; returns it with the manifest."""
    path = Path(path)
    manifest, arrays = _read_archive(path)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Checkpoint format version {version} is not supported (expected {FORMAT_VERSION})",
                              error_code="VERSION_MISMATCH", details={"path": str(path), "version": version})

    expected = {name: tuple(shape) for name, shape in manifest.get("shapes", {}).items()}
    mismatched = sorted(name for name in set(expected) | set(arrays)
                        if name not in arrays or name not in expected or arrays[name].shape != expected[name])
    if mismatched:
        raise CheckpointError(f"Checkpoint arrays do not match the manifest: {', '.join(mismatched)}",
                              error_code="SHAPE_MISMATCH", details={"path": str(path), "arrays": mismatched})

    try:
        graphs = [_graph_from_dict(g) for g in manifest["graphs"]]
        branches = [
            BranchModel(
                MaskedDenseParams(arrays[f"branch{i}.masked.W"], arrays[f"branch{i}.masked.b"], graph.adjacency.copy()),
                DenseParams(arrays[f"branch{i}.hidden.W"], arrays[f"branch{i}.hidden.b"]),
            )
            for i, graph in enumerate(graphs)
        ]
        layers: List[DenseParams] = []
        norms: List[BatchNormParams] = []
        for k in range(1, int(manifest["fusion_depth"]) + 1):
            layers.append(DenseParams(arrays[f"fusion.layer{k}.W"], arrays[f"fusion.layer{k}.b"]))
            norms.append(BatchNormParams(arrays[f"fusion.norm{k}.gamma"], arrays[f"fusion.norm{k}.beta"],
                                         arrays[f"fusion.norm{k}.running_mean"],
                                         arrays[f"fusion.norm{k}.running_var"]))
        fusion = FusionModel(layers, norms, DenseParams(arrays["fusion.head.W"], arrays["fusion.head.b"]))
        ensembles = [ensemble_from_dict(e) if e is not None else None for e in manifest.get("ensembles", [])]
        model = TreeGraphModel(branches, fusion, graphs, ensembles, manifest["activation"], float(manifest["dropout"]))
    except (KeyError, ValueError, TypeError) as e:
        raise CheckpointError(f"Checkpoint {path} does not describe a valid model: {e}",
                              error_code="CORRUPT_CHECKPOINT", details={"path": str(path)}) from e
    logger.info(f"Loaded checkpoint {path}: branch inputs {model.input_widths}")
    return model, manifest
