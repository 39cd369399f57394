"""Feature graphs built from the parent-child split structure of boosted trees."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd

from .boosting import GBTEnsemble, TreeNode, used_features
from .data import OmicsMatrix
from .report import atomic_write_text

logger = logging.getLogger(__name__)

Edge = FrozenSet[int]


@dataclass(frozen=True)
class FeatureGraph:
    """Undirected graph over selected columns; adjacency carries self-loops."""

    node_columns: Tuple[int, ...]
    adjacency: np.ndarray
    feature_names: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        a = np.array(self.adjacency, dtype=np.float64, copy=True)
        k = len(self.node_columns)
        if a.shape != (k, k):
            raise ValueError(f"adjacency shape {a.shape} does not match {k} nodes")
        if list(self.node_columns) != sorted(set(self.node_columns)):
            raise ValueError("node_columns must be strictly ascending")
        if not np.array_equal(a, a.T) or not np.all(np.diag(a) == 1.0) or not np.all(np.isin(a, (0.0, 1.0))):
            raise ValueError("adjacency must be a symmetric 0/1 matrix with unit diagonal")
        names = tuple(self.feature_names) or tuple(f"f{c}" for c in self.node_columns)
        if len(names) != k:
            raise ValueError(f"{len(names)} feature names for {k} nodes")
        a.flags.writeable = False
        object.__setattr__(self, "node_columns", tuple(int(c) for c in self.node_columns))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "adjacency", a)

    @property
    def num_nodes(self) -> int:
        return len(self.node_columns)

    @property
    def edge_count(self) -> int:
        """Self-loops plus each undirected off-diagonal pair once."""
        off_diagonal = int(self.adjacency.sum()) - self.num_nodes
        return self.num_nodes + off_diagonal // 2

    @property
    def edge_node_ratio(self) -> float:
        return self.edge_count / self.num_nodes


@dataclass(frozen=True)
class GraphStats:
    num_nodes: int
    num_edges: int
    edge_node_ratio: float


def tree_edges(tree: TreeNode) -> Set[Edge]:
    """Parent-child pairs of internal nodes; same-feature pairs are dropped."""
    edges: Set[Edge] = set()
    for node in tree.internal_nodes():
        for child in (node.left, node.right):
            if child is not None and not child.is_leaf and child.split_feature != node.split_feature:
                edges.add(frozenset((node.split_feature, child.split_feature)))
    return edges


def build_feature_graph(ensemble: GBTEnsemble, feature_names: Optional[Sequence[str]] = None) -> FeatureGraph:
    """Union of all tree graphs over the used features, plus self-loops.

    ``feature_names`` are the names of all ensemble columns; the graph keeps those of its nodes.
    """
    columns = used_features(ensemble)
    position = {c: i for i, c in enumerate(columns)}
    adjacency = np.eye(len(columns))
    edges: Set[Edge] = set()
    for tree in ensemble.trees:
        edges |= tree_edges(tree)
    for edge in edges:
        u, v = sorted(edge)
        adjacency[position[u], position[v]] = adjacency[position[v], position[u]] = 1.0
    names = tuple(feature_names[c] for c in columns) if feature_names is not None else ()
    graph = FeatureGraph(tuple(columns), adjacency, names)
    logger.info(f"Built feature graph: {graph.num_nodes} nodes, {graph.edge_count} edges "
                f"(m={graph.edge_node_ratio:.2f})")
    return graph


def graph_stats(graph: FeatureGraph) -> GraphStats:
    return GraphStats(graph.num_nodes, graph.edge_count, graph.edge_node_ratio)


def adjacency_edges(graph: FeatureGraph) -> List[Tuple[int, int]]:
    """Edges as original column pairs (u <= v), self-loops included."""
    rows, cols = np.nonzero(np.triu(graph.adjacency))
    return [(graph.node_columns[r], graph.node_columns[c]) for r, c in zip(rows, cols)]


def reduce_matrix(X: OmicsMatrix, graph: FeatureGraph) -> OmicsMatrix:
    """Keep only the graph's columns, in graph order."""
    columns = list(graph.node_columns)
    if columns and (columns[0] < 0 or columns[-1] >= X.n_features):
        raise ValueError(f"Graph references column {columns[-1]} but the matrix has {X.n_features} columns")
    return OmicsMatrix(X.values[:, columns], tuple(X.feature_names[c] for c in columns), X.sample_ids)


def write_edge_list(graph: FeatureGraph, edges_path: Union[str, Path], nodes_path: Union[str, Path]) -> None:
    """``u,v`` per line (original column indices) plus a ``column,feature`` node map."""
    edges = adjacency_edges(graph)
    atomic_write_text(edges_path, pd.DataFrame(edges, columns=["u", "v"]).to_csv(index=False, header=False))
    names: Dict[str, List] = {
        "column": list(graph.node_columns),
        "feature": list(graph.feature_names),
    }
    atomic_write_text(nodes_path, pd.DataFrame(names).to_csv(index=False))
