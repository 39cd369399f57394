"""Shared fixtures for the treegraph test suite."""

from typing import Iterable, Tuple

import numpy as np
import pytest

from treegraph.boosting import TreeNode
from treegraph.config import GBTConfig, SynthConfig, TrainConfig
from treegraph.data import generate_synthetic
from treegraph.graph import FeatureGraph


def stump(feature: int, threshold: float = 0.5, left: float = -0.1, right: float = 0.1) -> TreeNode:
    return TreeNode(split_feature=feature, threshold=threshold, left=TreeNode(weight=left),
                    right=TreeNode(weight=right))


def make_graph(columns: Iterable[int], edges: Iterable[Tuple[int, int]] = ()) -> FeatureGraph:
    """Graph over ``columns`` with undirected ``edges`` given as column pairs."""
    columns = sorted(columns)
    position = {c: i for i, c in enumerate(columns)}
    adjacency = np.eye(len(columns))
    for u, v in edges:
        adjacency[position[u], position[v]] = adjacency[position[v], position[u]] = 1.0
    return FeatureGraph(tuple(columns), adjacency)


def random_tree(rng: np.random.Generator, n_features: int, depth: int) -> TreeNode:
    if depth == 0 or rng.random() < 0.25:
        return TreeNode(weight=float(rng.normal()))
    return TreeNode(
        split_feature=int(rng.integers(n_features)),
        threshold=float(rng.random()),
        left=random_tree(rng, n_features, depth - 1),
        right=random_tree(rng, n_features, depth - 1),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_synth_config() -> SynthConfig:
    return SynthConfig(n_samples=80, n_features=(24, 20, 12), n_informative=(4, 4, 2), effect_size=2.0,
                       imbalance=2.0, seed=0)


@pytest.fixture
def small_dataset(small_synth_config):
    dataset, _ = generate_synthetic(small_synth_config, seed=0)
    return dataset


@pytest.fixture
def fast_gbt() -> GBTConfig:
    return GBTConfig(num_trees=5, max_depth=3)


@pytest.fixture
def fast_train() -> TrainConfig:
    return TrainConfig(learning_rate=0.01, batch_size=16, max_epochs=25, dropout=0.2, l2_lambda=0.001,
                       patience=5, hidden_width=8, seed=0)


@pytest.fixture
def write_text(tmp_path):
    """Write a text file under tmp_path and return its path."""

    def _write(name: str, text: str):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
