"""Binary classification metrics and across-repeat summary statistics."""

import logging
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Summary:
    """Mean, sample SD and symmetric t-interval of one metric."""

    mean: float
    sd: float
    ci_low: float
    ci_high: float

    def as_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "sd": self.sd, "ci_low": self.ci_low, "ci_high": self.ci_high}


def _check_pair(labels: Sequence[int], other: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels)
    z = np.asarray(other)
    if y.ndim != 1 or y.shape != z.shape:
        raise ValueError(f"labels and predictions must be equal-length vectors, got {y.shape} and {z.shape}")
    if y.size == 0:
        raise ValueError("cannot score an empty prediction set")
    return y, z


def confusion_counts(labels: Sequence[int], predictions: Sequence[int]) -> ConfusionCounts:
    """Counts with label 1 as the positive class."""
    y, yhat = _check_pair(labels, predictions)
    return ConfusionCounts(
        tp=int(np.sum((y == 1) & (yhat == 1))),
        fp=int(np.sum((y == 0) & (yhat == 1))),
        tn=int(np.sum((y == 0) & (yhat == 0))),
        fn=int(np.sum((y == 1) & (yhat == 0))),
    )


def accuracy(labels: Sequence[int], predictions: Sequence[int]) -> float:
    c = confusion_counts(labels, predictions)
    return (c.tp + c.tn) / c.total


def f1_score(labels: Sequence[int], predictions: Sequence[int]) -> float:
    """Harmonic mean of precision and recall; 0 when both are zero or undefined."""
    c = confusion_counts(labels, predictions)
    denominator = 2 * c.tp + c.fp + c.fn
    if c.tp == 0 or denominator == 0:
        return 0.0
    return 2 * c.tp / denominator


def roc_auc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Mann-Whitney statistic from average ranks; tied pairs count one half.

    With average ranks the rank sum of the positives is a multiple of 1/2, so the
    pair count is recovered exactly before the final division.
    """
    y, s = _check_pair(labels, scores)
    s = s.astype(np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    positive = y == 1
    n_pos = int(positive.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = stats.rankdata(s, method="average")
    # twice the rank sum is an exact integer
    twice_rank_sum = int(round(2.0 * float(ranks[positive].sum())))
    twice_pairs = twice_rank_sum - n_pos * (n_pos + 1)
    return twice_pairs / (2 * n_pos * n_neg)


def t_quantile(df: int, confidence: float = 0.95) -> float:
    """Two-sided Student t critical value, e.g. 2.093 for df=19 at 95%."""
    if df < 1:
        raise ValueError(f"degrees of freedom must be at least 1, got {df}")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    return float(stats.t.ppf(0.5 + confidence / 2.0, df))


def summarize(values: Sequence[float], confidence: float = 0.95) -> Summary:
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError(f"summarize needs at least 2 values, got {x.size}")
    n = x.size
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    half_width = t_quantile(n - 1, confidence) * sd / np.sqrt(n)
    return Summary(mean=mean, sd=sd, ci_low=mean - half_width, ci_high=mean + half_width)


def predict_labels(probabilities: np.ndarray) -> np.ndarray:
    """Class 1 when the class-1 probability is at least 0.5."""
    return (np.asarray(probabilities) >= 0.5).astype(np.int64)


def compute_metrics(labels: Sequence[int], probabilities: Sequence[float]) -> Dict[str, float]:
    """accuracy and f1 from the 0.5 rule, auc from the raw class-1 probabilities."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    predictions = predict_labels(probabilities)
    return {
        "accuracy": accuracy(labels, predictions),
        "auc": roc_auc(labels, probabilities),
        "f1": f1_score(labels, predictions),
    }
