"""Regularized gradient-boosted trees for binary classification.

Second-order (Newton) boosting with exact greedy split search. Each tree is fit
to the logistic-loss gradients and hessians of the running logits:

    gain = 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - (G_L+G_R)^2/(H_L+H_R+lambda)] - gamma
    leaf weight = -G/(H+lambda)

Samples go left when ``x[feature] < threshold``.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .config import GBTConfig
from .error_handling import TrainingError

logger = logging.getLogger(__name__)


@dataclass
class TreeNode:
    """Internal split node or leaf."""

    split_feature: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    weight: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def kind(self) -> str:
        return "leaf" if self.is_leaf else "internal"

    def internal_nodes(self) -> Iterator["TreeNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                yield node
                stack.append(node.right)  # type: ignore[arg-type]
                stack.append(node.left)  # type: ignore[arg-type]

    def leaves(self) -> List["TreeNode"]:
        if self.is_leaf:
            return [self]
        return self.left.leaves() + self.right.leaves()  # type: ignore[union-attr]


@dataclass
class GBTEnsemble:
    """Boosted trees; prediction = sigmoid(base_logit + learning_rate * sum of tree outputs)."""

    trees: List[TreeNode]
    learning_rate: float
    num_features: int
    base_logit: float = 0.0
    loss_history: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.trees:
            raise ValueError("an ensemble needs at least one tree")


@dataclass(frozen=True)
class SplitCandidate:
    feature: int
    threshold: float
    gain: float


def logistic_grad_hess(y: np.ndarray, logit: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient and hessian of the logistic loss with respect to the logit."""
    y = np.asarray(y, dtype=np.float64)
    logit = np.asarray(logit, dtype=np.float64)
    if y.shape != logit.shape:
        raise ValueError(f"y and logit lengths differ: {y.shape} vs {logit.shape}")
    p = expit(logit)
    return p - y, p * (1.0 - p)


def log_loss(y: np.ndarray, logit: np.ndarray) -> float:
    """Mean logistic loss computed from logits."""
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, logit) - y * logit))


def best_split(X: np.ndarray, g: np.ndarray, h: np.ndarray, reg_lambda: float, gamma: float,
               min_child_hessian: float) -> Optional[SplitCandidate]:
    """Exact greedy search over every feature and every midpoint between distinct values.

    Ties in gain go to the lowest feature index, then the lowest threshold.
    """
    n, p = X.shape
    if n < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    g_left = np.cumsum(g[order], axis=0)[:-1]
    h_left = np.cumsum(h[order], axis=0)[:-1]
    g_total = float(g.sum())
    h_total = float(h.sum())
    g_right = g_total - g_left
    h_right = h_total - h_left

    mid = 0.5 * (xs[:-1] + xs[1:])
    # mid > lower value also guarantees the `<` predicate reproduces this partition
    valid = (xs[1:] > xs[:-1]) & (mid > xs[:-1])
    valid &= (h_left >= min_child_hessian) & (h_right >= min_child_hessian)
    if not valid.any():
        return None

    parent = g_total * g_total / (h_total + reg_lambda)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = 0.5 * (g_left ** 2 / (h_left + reg_lambda) + g_right ** 2 / (h_right + reg_lambda) - parent) - gamma
    gain = np.where(valid, gain, -np.inf)

    # feature-major flattening: argmax keeps the first (lowest feature, lowest threshold) maximum
    flat = int(np.argmax(gain.T))
    feature, position = divmod(flat, n - 1)
    best = float(gain[position, feature])
    if not best > 0.0:
        return None
    return SplitCandidate(feature=int(feature), threshold=float(mid[position, feature]), gain=best)


def fit_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, config: GBTConfig,
             rows: Optional[np.ndarray] = None, depth: int = 0) -> TreeNode:
    """Grow one tree depth-first to ``config.max_depth``."""
    if rows is None:
        rows = np.arange(X.shape[0])
    if rows.size == 0:
        raise ValueError("cannot fit a tree on an empty sample set")
    g_node = g[rows]
    h_node = h[rows]

    split = None
    if depth < config.max_depth and rows.size >= 2:
        split = best_split(X[rows], g_node, h_node, config.reg_lambda, config.gamma, config.min_child_hessian)
    if split is None:
        return TreeNode(weight=float(-g_node.sum() / (h_node.sum() + config.reg_lambda)))

    goes_left = X[rows, split.feature] < split.threshold
    return TreeNode(
        split_feature=split.feature,
        threshold=split.threshold,
        left=fit_tree(X, g, h, config, rows[goes_left], depth + 1),
        right=fit_tree(X, g, h, config, rows[~goes_left], depth + 1),
    )


def _tree_output(node: TreeNode, X: np.ndarray, rows: np.ndarray, out: np.ndarray) -> None:
    if node.is_leaf:
        out[rows] = node.weight
        return
    goes_left = X[rows, node.split_feature] < node.threshold
    _tree_output(node.left, X, rows[goes_left], out)  # type: ignore[arg-type]
    _tree_output(node.right, X, rows[~goes_left], out)  # type: ignore[arg-type]


def tree_predict(tree: TreeNode, X: np.ndarray) -> np.ndarray:
    """Raw (unshrunk) leaf values for every row."""
    out = np.zeros(X.shape[0])
    _tree_output(tree, X, np.arange(X.shape[0]), out)
    return out


def tree_apply(tree: TreeNode, X: np.ndarray) -> List[np.ndarray]:
    """Row indices reaching each leaf, in ``tree.leaves()`` order."""
    routed: List[np.ndarray] = []

    def walk(node: TreeNode, rows: np.ndarray) -> None:
        if node.is_leaf:
            routed.append(rows)
            return
        goes_left = X[rows, node.split_feature] < node.threshold
        walk(node.left, rows[goes_left])  # type: ignore[arg-type]
        walk(node.right, rows[~goes_left])  # type: ignore[arg-type]

    walk(tree, np.arange(X.shape[0]))
    return routed


def fit_ensemble(X: np.ndarray, y: np.ndarray, config: GBTConfig) -> GBTEnsemble:
    """Fit ``config.num_trees`` rounds from base logit 0."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X {X.shape} and y {y.shape} do not conform")
    if X.shape[0] < 4:
        raise TrainingError(f"Need at least 4 samples to boost, got {X.shape[0]}", error_code="TOO_FEW_SAMPLES")
    if np.unique(y).size < 2:
        raise TrainingError("Boosting labels contain a single class", error_code="SINGLE_CLASS")

    logits = np.zeros(X.shape[0])
    history = [log_loss(y, logits)]
    trees: List[TreeNode] = []
    for round_ in range(config.num_trees):
        g, h = logistic_grad_hess(y, logits)
        tree = fit_tree(X, g, h, config)
        trees.append(tree)
        logits = logits + config.learning_rate * tree_predict(tree, X)
        history.append(log_loss(y, logits))
        logger.debug(f"Round {round_ + 1}/{config.num_trees}: train log-loss {history[-1]:.6f}")

    ensemble = GBTEnsemble(trees=trees, learning_rate=config.learning_rate, num_features=X.shape[1],
                           loss_history=history)
    logger.info(f"Fitted {len(trees)} trees on {X.shape[0]}x{X.shape[1]}: "
                f"{count_internal_nodes(ensemble)} splits, final log-loss {history[-1]:.4f}")
    return ensemble


def predict_proba(ensemble: GBTEnsemble, X: np.ndarray) -> np.ndarray:
    """Class-1 probability for every row."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != ensemble.num_features:
        raise ValueError(f"Expected {ensemble.num_features} columns, got shape {X.shape}")
    logits = np.full(X.shape[0], ensemble.base_logit)
    for tree in ensemble.trees:
        logits += ensemble.learning_rate * tree_predict(tree, X)
    return expit(logits)


def count_internal_nodes(ensemble: GBTEnsemble) -> int:
    return sum(1 for tree in ensemble.trees for _ in tree.internal_nodes())


def used_features(ensemble: GBTEnsemble) -> List[int]:
    """Ascending set of split features over all trees."""
    features = sorted({node.split_feature for tree in ensemble.trees for node in tree.internal_nodes()})
    if not features:
        raise TrainingError("No tree in the ensemble ever split; no features selected", error_code="NO_SPLITS")
    return features


def _format(x: float) -> str:
    return format(x, ".17g")


def _node_to_dict(node: TreeNode) -> Dict[str, Any]:
    if node.is_leaf:
        return {"leaf": _format(node.weight)}
    return {
        "feature": node.split_feature,
        "threshold": _format(node.threshold),
        "left": _node_to_dict(node.left),  # type: ignore[arg-type]
        "right": _node_to_dict(node.right),  # type: ignore[arg-type]
    }


def _node_from_dict(data: Dict[str, Any]) -> TreeNode:
    if "leaf" in data:
        return TreeNode(weight=float(data["leaf"]))
    return TreeNode(
        split_feature=int(data["feature"]),
        threshold=float(data["threshold"]),
        left=_node_from_dict(data["left"]),
        right=_node_from_dict(data["right"]),
    )


def ensemble_to_dict(ensemble: GBTEnsemble) -> Dict[str, Any]:
    """JSON-ready form; reals are 17-significant-digit strings so they round-trip exactly."""
    return {
        "learning_rate": _format(ensemble.learning_rate),
        "base_logit": _format(ensemble.base_logit),
        "num_features": ensemble.num_features,
        "trees": [_node_to_dict(t) for t in ensemble.trees],
    }


def ensemble_from_dict(data: Dict[str, Any]) -> GBTEnsemble:
    return GBTEnsemble(
        trees=[_node_from_dict(t) for t in data["trees"]],
        learning_rate=float(data["learning_rate"]),
        num_features=int(data["num_features"]),
        base_logit=float(data["base_logit"]),
    )
