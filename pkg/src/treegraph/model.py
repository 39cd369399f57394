"""Graph-masked multi-branch classifier, its feedforward baseline, and the training loop.

Each modality feeds a branch: a square layer masked by the modality's feature
graph, then a dense layer producing the branch embedding. The three embeddings
are concatenated and passed through a batch-normalized fusion network with a
two-unit softmax head.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boosting import GBTEnsemble
from .config import TrainConfig
from .data import SplitIndices
from .error_handling import TrainingError
from .graph import FeatureGraph
from .nn import (
    ACTIVATIONS,
    AdamState,
    BatchNormCache,
    BatchNormParams,
    DenseParams,
    MaskedDenseParams,
    RandomLike,
    adam_step,
    batchnorm_backward,
    batchnorm_forward,
    dense_backward,
    dense_forward,
    dropout_apply,
    dropout_backward,
    init_batchnorm,
    init_dense,
    init_masked_dense,
    l2_penalty,
    masked_dense_backward,
    masked_dense_forward,
    softmax2,
    softmax2_bce,
)

logger = logging.getLogger(__name__)
LOG_EVERY = 50

Grads = Dict[str, np.ndarray]
Activation = Callable[[np.ndarray], np.ndarray]
ActivationGrad = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class BranchModel:
    """Masked layer over one feature graph followed by the embedding layer."""

    masked: MaskedDenseParams
    hidden: DenseParams

    def __post_init__(self) -> None:
        if self.hidden.W.shape[0] != self.masked.W.shape[1]:
            raise ValueError(f"embedding layer expects {self.hidden.W.shape[0]} inputs, "
                             f"masked layer gives {self.masked.W.shape[1]}")

    @property
    def input_width(self) -> int:
        return self.masked.W.shape[0]

    @property
    def embedding_width(self) -> int:
        return self.hidden.W.shape[1]

    def named_parameters(self) -> Dict[str, np.ndarray]:
        return {"masked.W": self.masked.W, "masked.b": self.masked.b,
                "hidden.W": self.hidden.W, "hidden.b": self.hidden.b}


@dataclass
class BranchCache:
    x: np.ndarray
    z1: np.ndarray
    keep: Optional[np.ndarray]
    d1: np.ndarray
    z2: np.ndarray


@dataclass
class FusionModel:
    """Stack of dense -> batchnorm -> activation -> dropout blocks and a 2-unit head."""

    layers: List[DenseParams]
    norms: List[BatchNormParams]
    head: DenseParams

    def __post_init__(self) -> None:
        if not self.layers or len(self.layers) != len(self.norms):
            raise ValueError("fusion needs one batchnorm per hidden layer and at least one layer")
        width = self.layers[0].W.shape[0]
        for k, (layer, norm) in enumerate(zip(self.layers, self.norms), start=1):
            if layer.W.shape[0] != width:
                raise ValueError(f"fusion layer{k} expects {layer.W.shape[0]} inputs, previous gives {width}")
            width = layer.W.shape[1]
            if norm.gamma.shape != (width,):
                raise ValueError(f"fusion norm{k} width {norm.gamma.shape} does not match layer width {width}")
        if self.head.W.shape != (width, 2):
            raise ValueError(f"head must map {width} -> 2, got {self.head.W.shape}")

    @property
    def input_width(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def layer1(self) -> DenseParams:
        return self.layers[0]

    @property
    def batchnorm1(self) -> BatchNormParams:
        return self.norms[0]

    @property
    def layer2(self) -> DenseParams:
        return self.layers[1]

    @property
    def batchnorm2(self) -> BatchNormParams:
        return self.norms[1]

    def named_parameters(self) -> Dict[str, np.ndarray]:
        params: Dict[str, np.ndarray] = {}
        for k, (layer, norm) in enumerate(zip(self.layers, self.norms), start=1):
            params[f"layer{k}.W"] = layer.W
            params[f"layer{k}.b"] = layer.b
            params[f"norm{k}.gamma"] = norm.gamma
            params[f"norm{k}.beta"] = norm.beta
        params["head.W"] = self.head.W
        params["head.b"] = self.head.b
        return params

    def named_buffers(self) -> Dict[str, np.ndarray]:
        buffers: Dict[str, np.ndarray] = {}
        for k, norm in enumerate(self.norms, start=1):
            buffers[f"norm{k}.running_mean"] = norm.running_mean
            buffers[f"norm{k}.running_var"] = norm.running_var
        return buffers

    def weight_names(self) -> List[str]:
        return [f"layer{k}.W" for k in range(1, len(self.layers) + 1)] + ["head.W"]


@dataclass
class FusionCache:
    inputs: List[np.ndarray] = field(default_factory=list)
    norm_caches: List[Optional[BatchNormCache]] = field(default_factory=list)
    pre_act: List[np.ndarray] = field(default_factory=list)
    keeps: List[Optional[np.ndarray]] = field(default_factory=list)
    last: Optional[np.ndarray] = None


def _fusion_forward(fusion: FusionModel, h: np.ndarray, training: bool, rng: np.random.Generator,
                    act: Activation, dropout: float) -> Tuple[np.ndarray, FusionCache]:
    cache = FusionCache()
    for layer, norm in zip(fusion.layers, fusion.norms):
        cache.inputs.append(h)
        u = dense_forward(h, layer)
        v, norm_cache = batchnorm_forward(u, norm, training)
        cache.norm_caches.append(norm_cache)
        cache.pre_act.append(v)
        h, keep = dropout_apply(act(v), dropout, training, rng)
        cache.keeps.append(keep)
    cache.last = h
    return dense_forward(h, fusion.head), cache


def _fusion_backward(fusion: FusionModel, cache: FusionCache, grad_logits: np.ndarray,
                     act_grad: ActivationGrad) -> Tuple[Grads, np.ndarray]:
    grads: Grads = {}
    grads["head.W"], grads["head.b"], dh = dense_backward(cache.last, fusion.head, grad_logits)
    for k in range(len(fusion.layers), 0, -1):
        i = k - 1
        norm_cache = cache.norm_caches[i]
        if norm_cache is None:
            raise ValueError("backward needs a training-mode forward cache")
        dv = act_grad(cache.pre_act[i], dropout_backward(dh, cache.keeps[i]))
        grads[f"norm{k}.gamma"], grads[f"norm{k}.beta"], du = batchnorm_backward(norm_cache, fusion.norms[i], dv)
        grads[f"layer{k}.W"], grads[f"layer{k}.b"], dh = dense_backward(cache.inputs[i], fusion.layers[i], du)
    return grads, dh


def _prefixed(prefix: str, items: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {f"{prefix}.{name}": value for name, value in items.items()}


class _Network(ABC):
    """Parameter bookkeeping shared by both classifiers."""

    activation: str
    dropout: float

    @abstractmethod
    def parameters(self) -> Dict[str, np.ndarray]:
        ...

    @abstractmethod
    def buffers(self) -> Dict[str, np.ndarray]:
        ...

    @abstractmethod
    def weight_names(self) -> List[str]:
        ...

    @abstractmethod
    def forward(self, inputs: Sequence[np.ndarray], training: bool,
                rng: RandomLike = None) -> Tuple[np.ndarray, object]:
        ...

    @abstractmethod
    def backward(self, cache: object, grad_logits: np.ndarray) -> Grads:
        ...

    def mask_violations(self) -> int:
        return 0

    @property
    def _act(self) -> Tuple[Activation, ActivationGrad]:
        return ACTIVATIONS[self.activation]

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter and buffer."""
        state = {name: value.copy() for name, value in self.parameters().items()}
        state.update({name: value.copy() for name, value in self.buffers().items()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Overwrite parameters and buffers in place."""
        targets = {**self.parameters(), **self.buffers()}
        missing = sorted(set(targets) - set(state))
        if missing:
            raise ValueError(f"state is missing entries: {', '.join(missing)}")
        for name, target in targets.items():
            value = np.asarray(state[name])
            if value.shape != target.shape:
                raise ValueError(f"{name}: expected shape {target.shape}, got {value.shape}")
            target[...] = value

    def weights(self) -> List[np.ndarray]:
        params = self.parameters()
        return [params[name] for name in self.weight_names()]


class TreeGraphModel(_Network):
    """Three graph-masked branches joined by a fusion network."""

    def __init__(self, branches: Sequence[BranchModel], fusion: FusionModel, graphs: Sequence[FeatureGraph],
                 ensembles: Sequence[Optional[GBTEnsemble]] = (), activation: str = "relu",
                 dropout: float = 0.5):
        if len(branches) != 3 or len(graphs) != 3:
            raise ValueError(f"expected 3 branches and 3 graphs, got {len(branches)} and {len(graphs)}")
        for i, (branch, graph) in enumerate(zip(branches, graphs)):
            if not np.array_equal(branch.masked.mask, graph.adjacency):
                raise ValueError(f"branch {i} mask does not match its graph adjacency")
        embedding = sum(b.embedding_width for b in branches)
        if fusion.input_width != embedding:
            raise ValueError(f"fusion expects {fusion.input_width} inputs, branches give {embedding}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{activation}'")
        self.branches = list(branches)
        self.fusion = fusion
        self.graphs = list(graphs)
        self.ensembles = list(ensembles)
        self.activation = activation
        self.dropout = dropout

    @property
    def input_widths(self) -> Tuple[int, ...]:
        return tuple(b.input_width for b in self.branches)

    @property
    def embedding_widths(self) -> Tuple[int, ...]:
        return tuple(b.embedding_width for b in self.branches)

    def parameters(self) -> Dict[str, np.ndarray]:
        params: Dict[str, np.ndarray] = {}
        for i, branch in enumerate(self.branches):
            params.update(_prefixed(f"branch{i}", branch.named_parameters()))
        params.update(_prefixed("fusion", self.fusion.named_parameters()))
        return params

    def buffers(self) -> Dict[str, np.ndarray]:
        return _prefixed("fusion", self.fusion.named_buffers())

    def weight_names(self) -> List[str]:
        names = [f"branch{i}.{layer}.W" for i in range(len(self.branches)) for layer in ("masked", "hidden")]
        return names + [f"fusion.{name}" for name in self.fusion.weight_names()]

    def mask_violations(self) -> int:
        return sum(b.masked.mask_violations() for b in self.branches)

    def _check_inputs(self, inputs: Sequence[np.ndarray]) -> None:
        if len(inputs) != len(self.branches):
            raise ValueError(f"expected {len(self.branches)} input matrices, got {len(inputs)}")
        rows = {x.shape[0] for x in inputs}
        if len(rows) != 1:
            raise ValueError(f"input matrices are not row-aligned: row counts {sorted(rows)}")
        for i, (x, width) in enumerate(zip(inputs, self.input_widths)):
            if x.ndim != 2 or x.shape[1] != width:
                raise ValueError(f"input {i} has shape {x.shape}, branch expects {width} columns")

    def forward(self, inputs: Sequence[np.ndarray], training: bool,
                rng: RandomLike = None) -> Tuple[np.ndarray, Tuple[List[BranchCache], FusionCache]]:
        """Logits (n, 2) and the cache needed by ``backward``."""
        self._check_inputs(inputs)
        rng = np.random.default_rng(rng)
        act, _ = self._act
        embeddings = []
        branch_caches = []
        for branch, x in zip(self.branches, inputs):
            z1 = masked_dense_forward(x, branch.masked)
            d1, keep = dropout_apply(act(z1), self.dropout, training, rng)
            z2 = dense_forward(d1, branch.hidden)
            embeddings.append(act(z2))
            branch_caches.append(BranchCache(x, z1, keep, d1, z2))
        logits, fusion_cache = _fusion_forward(self.fusion, np.concatenate(embeddings, axis=1), training,
                                               rng, act, self.dropout)
        return logits, (branch_caches, fusion_cache)

    def backward(self, cache: Tuple[List[BranchCache], FusionCache], grad_logits: np.ndarray) -> Grads:
        branch_caches, fusion_cache = cache
        _, act_grad = self._act
        fusion_grads, dz = _fusion_backward(self.fusion, fusion_cache, grad_logits, act_grad)
        grads = _prefixed("fusion", fusion_grads)
        offsets = np.cumsum((0,) + self.embedding_widths)
        for i, (branch, bc) in enumerate(zip(self.branches, branch_caches)):
            dz2 = act_grad(bc.z2, dz[:, offsets[i]:offsets[i + 1]])
            dW_h, db_h, dd1 = dense_backward(bc.d1, branch.hidden, dz2)
            dz1 = act_grad(bc.z1, dropout_backward(dd1, bc.keep))
            dW_m, db_m, _ = masked_dense_backward(bc.x, branch.masked, dz1)
            grads.update({f"branch{i}.masked.W": dW_m, f"branch{i}.masked.b": db_m,
                          f"branch{i}.hidden.W": dW_h, f"branch{i}.hidden.b": db_h})
        return grads


class FeedForwardModel(_Network):
    """Fully connected baseline over the column-wise concatenation of all modalities."""

    def __init__(self, network: FusionModel, activation: str = "relu", dropout: float = 0.5):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{activation}'")
        self.network = network
        self.activation = activation
        self.dropout = dropout

    @property
    def input_widths(self) -> Tuple[int, ...]:
        return (self.network.input_width,)

    def parameters(self) -> Dict[str, np.ndarray]:
        return _prefixed("network", self.network.named_parameters())

    def buffers(self) -> Dict[str, np.ndarray]:
        return _prefixed("network", self.network.named_buffers())

    def weight_names(self) -> List[str]:
        return [f"network.{name}" for name in self.network.weight_names()]

    def forward(self, inputs: Sequence[np.ndarray], training: bool,
                rng: RandomLike = None) -> Tuple[np.ndarray, FusionCache]:
        if len(inputs) != 1 or inputs[0].ndim != 2 or inputs[0].shape[1] != self.network.input_width:
            raise ValueError(f"expected one matrix with {self.network.input_width} columns")
        act, _ = self._act
        return _fusion_forward(self.network, inputs[0], training, np.random.default_rng(rng), act, self.dropout)

    def backward(self, cache: FusionCache, grad_logits: np.ndarray) -> Grads:
        grads, _ = _fusion_backward(self.network, cache, grad_logits, self._act[1])
        return _prefixed("network", grads)


def _build_fusion(n_in: int, config: TrainConfig, rng: np.random.Generator) -> FusionModel:
    layers = []
    width = n_in
    for _ in range(config.fusion_depth):
        layers.append(init_dense(width, config.hidden_width, rng))
        width = config.hidden_width
    norms = [init_batchnorm(config.hidden_width) for _ in layers]
    return FusionModel(layers, norms, init_dense(width, 2, rng))


def build_model(graphs: Sequence[FeatureGraph], config: TrainConfig, seed: int,
                ensembles: Sequence[Optional[GBTEnsemble]] = ()) -> TreeGraphModel:
    """Initialize a model whose branch masks are the graph adjacencies."""
    rng = np.random.default_rng(seed)
    branches = []
    for i, graph in enumerate(graphs):
        if graph.num_nodes == 0:
            raise TrainingError(f"Feature graph {i} has no nodes", error_code="EMPTY_GRAPH", details={"branch": i})
        masked = init_masked_dense(graph.adjacency, rng)
        branches.append(BranchModel(masked, init_dense(graph.num_nodes, config.hidden_width, rng)))
    fusion = _build_fusion(len(branches) * config.hidden_width, config, rng)
    model = TreeGraphModel(branches, fusion, graphs, ensembles, config.activation, config.dropout)
    logger.debug(f"Built model: branch inputs {model.input_widths}, fusion input {fusion.input_width}, "
                 f"depth {config.fusion_depth}")
    return model


def build_feedforward(n_inputs: int, config: TrainConfig, seed: int) -> FeedForwardModel:
    return FeedForwardModel(_build_fusion(n_inputs, config, np.random.default_rng(seed)),
                            config.activation, config.dropout)


def forward(model: _Network, inputs: Sequence[np.ndarray], training: bool,
            rng: RandomLike = None) -> Tuple[np.ndarray, object]:
    """Class-1 probabilities and the activation cache."""
    logits, cache = model.forward(inputs, training, rng)
    return softmax2(logits)[:, 1], cache


def backward(model: _Network, cache: object, grad_logits: np.ndarray) -> Grads:
    return model.backward(cache, grad_logits)


def predict(model: _Network, inputs: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Inference-mode labels (class 1 when p >= 0.5) and class-1 probabilities."""
    probabilities, _ = forward(model, [np.asarray(x, dtype=np.float64) for x in inputs], training=False)
    return (probabilities >= 0.5).astype(np.int64), probabilities


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    initial_val_loss: float = float("nan")
    best_epoch: int = -1
    stopped_epoch: int = -1

    @property
    def epochs_run(self) -> int:
        return len(self.val_loss)

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]


def _batches(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    """Consecutive slices; a trailing single row joins the previous batch."""
    batches = [order[i:i + batch_size] for i in range(0, order.size, batch_size)]
    if len(batches) > 1 and batches[-1].size == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def evaluate_loss(model: _Network, inputs: Sequence[np.ndarray], labels: np.ndarray) -> float:
    """Inference-mode cross-entropy, without the L2 term."""
    logits, _ = model.forward(inputs, training=False)
    loss, _ = softmax2_bce(logits, labels)
    return loss


def train(model: _Network, inputs: Sequence[np.ndarray], labels: np.ndarray, split: SplitIndices,
          config: TrainConfig) -> Tuple[_Network, TrainHistory]:
    """Mini-batch Adam on cross-entropy plus L2, early stopping on validation cross-entropy.

    The state of the epoch with the lowest validation cross-entropy is restored.
    """
    labels = np.asarray(labels)
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    for part, rows in (("training", split.train), ("validation", split.validation)):
        if np.unique(labels[rows]).size < 2:
            raise TrainingError(f"The {part} part contains a single class", error_code="SINGLE_CLASS",
                                details={"part": part})
    if split.train.size < 2:
        raise TrainingError("Need at least 2 training samples", error_code="TOO_FEW_SAMPLES")

    rng = np.random.default_rng(config.seed)
    adam = AdamState()
    params = model.parameters()
    weight_names = model.weight_names()
    train_x = [x[split.train] for x in inputs]
    train_y = labels[split.train]
    val_x = [x[split.validation] for x in inputs]
    val_y = labels[split.validation]

    history = TrainHistory(initial_val_loss=evaluate_loss(model, val_x, val_y))
    best_state = model.state_dict()
    best_val = np.inf
    reference = np.inf
    wait = 0

    for epoch in range(config.max_epochs):
        epoch_loss = 0.0
        for batch in _batches(rng.permutation(train_y.size), config.batch_size):
            logits, cache = model.forward([x[batch] for x in train_x], training=True, rng=rng)
            loss, grad_logits = softmax2_bce(logits, train_y[batch])
            penalty, penalty_grads = l2_penalty(model.weights(), config.l2_lambda)
            grads = model.backward(cache, grad_logits)
            for name, g in zip(weight_names, penalty_grads):
                grads[name] = grads[name] + g
            adam_step(params, grads, adam, config.learning_rate)
            epoch_loss += (loss + penalty) * batch.size
        train_loss = epoch_loss / train_y.size
        val_loss = evaluate_loss(model, val_x, val_y)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingError(f"Loss became non-finite at epoch {epoch}", error_code="NON_FINITE_LOSS",
                                details={"epoch": epoch})
        violations = model.mask_violations()
        if violations:
            raise TrainingError(f"{violations} masked weight(s) became nonzero at epoch {epoch}",
                                error_code="MASK_VIOLATION", details={"epoch": epoch})
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        log = logger.info if (epoch + 1) % LOG_EVERY == 0 else logger.debug
        log(f"Epoch {epoch}: train loss {train_loss:.5f}, validation loss {val_loss:.5f}")

        if val_loss < best_val:
            best_val = val_loss
            best_state = model.state_dict()
            history.best_epoch = epoch
        if val_loss < reference - config.min_delta:
            reference = val_loss
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                logger.info(f"Early stopping at epoch {epoch}; best epoch {history.best_epoch} "
                            f"(validation loss {best_val:.5f})")
                break

    history.stopped_epoch = len(history.val_loss) - 1
    model.load_state_dict(best_state)
    return model, history
