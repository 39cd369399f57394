"""Dense-tensor neural toolkit with hand-derived gradients.

Layers follow the row-major convention ``y = x @ W + b`` with ``x`` of shape
(samples, inputs). Everything runs in float64. Stochastic operations take an
explicit ``numpy.random.Generator``.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax

logger = logging.getLogger(__name__)

PROB_EPS = 1e-12
LEAKY_SLOPE = 0.3

RandomLike = Union[np.random.Generator, int, None]


@dataclass
class DenseParams:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError(f"dense shapes do not conform: W {self.W.shape}, b {self.b.shape}")


@dataclass
class MaskedDenseParams:
    """Square layer whose weights live only where ``mask`` is 1."""

    W: np.ndarray
    b: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        k = self.mask.shape[0]
        if self.mask.shape != (k, k) or self.W.shape != (k, k) or self.b.shape != (k,):
            raise ValueError(f"masked shapes do not conform: W {self.W.shape}, b {self.b.shape}, "
                             f"mask {self.mask.shape}")
        if not np.array_equal(self.mask, self.mask.T) or not np.all(np.diag(self.mask) == 1):
            raise ValueError("mask must be symmetric with unit diagonal")
        if np.any(self.W[self.mask == 0] != 0):
            raise ValueError("weights must be zero outside the mask")

    def effective_weight(self) -> np.ndarray:
        return self.W * self.mask

    def mask_violations(self) -> int:
        return int(np.count_nonzero(self.W[self.mask == 0]))


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5


@dataclass
class AdamState:
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray


def _rng(rng: RandomLike) -> np.random.Generator:
    return np.random.default_rng(rng)


def init_dense(n_in: int, n_out: int, rng: RandomLike) -> DenseParams:
    """Uniform in +-sqrt(6/fan_in), zero bias."""
    limit = np.sqrt(6.0 / n_in)
    return DenseParams(_rng(rng).uniform(-limit, limit, size=(n_in, n_out)), np.zeros(n_out))


def init_masked_dense(mask: np.ndarray, rng: RandomLike) -> MaskedDenseParams:
    """fan_in of a unit counts only its unmasked inputs; masked weights start at exactly 0."""
    mask = np.asarray(mask, dtype=np.float64)
    fan_in = mask.sum(axis=0)
    limit = np.sqrt(6.0 / fan_in)
    W = _rng(rng).uniform(-1.0, 1.0, size=mask.shape) * limit[None, :]
    W = np.where(mask == 1, W, 0.0)
    return MaskedDenseParams(W, np.zeros(mask.shape[0]), mask.copy())


def init_batchnorm(width: int) -> BatchNormParams:
    return BatchNormParams(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width))


def dense_forward(x: np.ndarray, params: DenseParams) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != params.W.shape[0]:
        raise ValueError(f"input {x.shape} does not match weights {params.W.shape}")
    return x @ params.W + params.b


def dense_backward(x: np.ndarray, params: DenseParams,
                   upstream: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad W, grad b, grad x)."""
    if upstream.shape != (x.shape[0], params.W.shape[1]):
        raise ValueError(f"upstream {upstream.shape} does not match output ({x.shape[0]}, {params.W.shape[1]})")
    return x.T @ upstream, upstream.sum(axis=0), upstream @ params.W.T


def masked_dense_forward(x: np.ndarray, params: MaskedDenseParams) -> np.ndarray:
    """Pre-activation ``x @ (W * mask) + b``."""
    if x.ndim != 2 or x.shape[1] != params.W.shape[0]:
        raise ValueError(f"input {x.shape} does not match masked weights {params.W.shape}")
    return x @ params.effective_weight() + params.b


def masked_dense_backward(x: np.ndarray, params: MaskedDenseParams,
                          upstream: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad W, grad b, grad x); grad W is exactly zero off the mask."""
    if upstream.shape != (x.shape[0], params.W.shape[1]):
        raise ValueError(f"upstream {upstream.shape} does not match output ({x.shape[0]}, {params.W.shape[1]})")
    grad_w = (x.T @ upstream) * params.mask
    return grad_w, upstream.sum(axis=0), upstream @ params.effective_weight().T


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    # subgradient at 0 is 0
    return np.where(x > 0, upstream, 0.0)


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_relu_backward(x: np.ndarray, upstream: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x > 0, upstream, slope * upstream)


ACTIVATIONS: Dict[str, Tuple[Callable[[np.ndarray], np.ndarray],
                             Callable[[np.ndarray, np.ndarray], np.ndarray]]] = {
    "relu": (relu, relu_backward),
    "leaky_relu": (leaky_relu, leaky_relu_backward),
}


def softmax2(logits: np.ndarray) -> np.ndarray:
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ValueError(f"expected (n, 2) logits, got {logits.shape}")
    return softmax(logits, axis=1)


def softmax2_bce(logits: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean binary cross-entropy of the class-1 softmax output, and its gradient in the logits."""
    y = np.asarray(y, dtype=np.float64)
    n = logits.shape[0]
    p = softmax2(logits)[:, 1]
    clipped = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    loss = -float(np.mean(y * np.log(clipped) + (1.0 - y) * np.log(1.0 - clipped)))
    # the clamp is flat where it bites
    d1 = np.where(clipped == p, (p - y) / n, 0.0)
    return loss, np.stack([-d1, d1], axis=1)


def dropout_apply(x: np.ndarray, rate: float, training: bool,
                  rng: RandomLike = None) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverted dropout. Returns the output and the scaled keep-mask (None when inactive)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    keep = (_rng(rng).random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(upstream: np.ndarray, keep: Optional[np.ndarray]) -> np.ndarray:
    return upstream if keep is None else upstream * keep


def batchnorm_forward(x: np.ndarray, params: BatchNormParams,
                      training: bool) -> Tuple[np.ndarray, Optional[BatchNormCache]]:
    """Batch statistics in training (running stats updated in place), running stats otherwise."""
    if training:
        if x.shape[0] < 2:
            raise ValueError("batch normalization needs at least 2 samples in training mode")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        params.running_mean *= params.momentum
        params.running_mean += (1.0 - params.momentum) * mean
        params.running_var *= params.momentum
        params.running_var += (1.0 - params.momentum) * var
    else:
        mean, var = params.running_mean, params.running_var
    inv_std = 1.0 / np.sqrt(var + params.eps)
    xhat = (x - mean) * inv_std
    y = params.gamma * xhat + params.beta
    return y, (BatchNormCache(xhat, inv_std) if training else None)


def batchnorm_backward(cache: BatchNormCache, params: BatchNormParams,
                       upstream: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad gamma, grad beta, grad x) for a training-mode forward."""
    n = upstream.shape[0]
    dxhat = upstream * params.gamma
    dx = cache.inv_std / n * (n * dxhat - dxhat.sum(axis=0) - cache.xhat * (dxhat * cache.xhat).sum(axis=0))
    return (upstream * cache.xhat).sum(axis=0), upstream.sum(axis=0), dx


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
              learning_rate: float) -> None:
    """Bias-corrected Adam, updating ``params`` arrays in place."""
    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise ValueError(f"gradient for {name} has shape {grad.shape}, parameter {param.shape}")
        m = state.m.setdefault(name, np.zeros_like(param))
        v = state.v.setdefault(name, np.zeros_like(param))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        param -= learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.eps)


def l2_penalty(weights: Sequence[np.ndarray], reg_lambda: float) -> Tuple[float, List[np.ndarray]]:
    """``lambda * sum(w^2)`` over weight matrices, with gradients ``2 lambda w``."""
    if reg_lambda < 0:
        raise ValueError("reg_lambda must be non-negative")
    penalty = reg_lambda * float(sum(np.sum(w * w) for w in weights))
    return penalty, [2.0 * reg_lambda * w for w in weights]


def finite_diff_grad(loss_fn: Callable[[], float], param: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn`` with respect to every entry of ``param`` (perturbed in place)."""
    grad = np.zeros_like(param)
    for idx in np.ndindex(param.shape):
        original = param[idx]
        param[idx] = original + h
        plus = loss_fn()
        param[idx] = original - h
        minus = loss_fn()
        param[idx] = original
        grad[idx] = (plus - minus) / (2.0 * h)
    return grad
