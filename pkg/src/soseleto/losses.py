"""Per-example cross-entropy and the two aggregate training losses.

The aggregate source loss is the alpha-weighted mean over the *full* source
set: sum_j alpha_j * loss_j / n_source.  The target loss is the plain mean.
Both are evaluated with vectorized forward passes.
"""

from __future__ import annotations

import numpy as np

from .data import LabeledDataset
from .errors import NumericalError, ShapeError
from .model import ModelParams, forward_batch


def cross_entropy(logits, y: int) -> float:
    """-log softmax(logits)[y], stabilized by subtracting the max logit."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= y < logits.shape[-1]:
        raise ValueError(f"label {y} out of range for {logits.shape[-1]} logits")
    if not np.isfinite(logits).all():
        raise NumericalError("non-finite logits")
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[y])


def cross_entropy_batch(logits, ys) -> np.ndarray:
    """Row-wise cross-entropy for (n, c) logits and length-n labels."""
    logits = np.asarray(logits, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.intp)
    if not np.isfinite(logits).all():
        raise NumericalError("non-finite logits")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return lse - z[np.arange(len(ys)), ys]


def cross_entropy_logit_grad(logits, y: int) -> np.ndarray:
    """softmax(logits) - onehot(y)."""
    from scipy.special import softmax

    g = softmax(np.asarray(logits, dtype=np.float64))
    g[y] -= 1.0
    return g


class CrossEntropy:
    """Default per-example loss.  Any object with the same three methods can
    be swapped in for it throughout the trainer."""

    @staticmethod
    def value(logits, y: int) -> float:
        return cross_entropy(logits, y)

    @staticmethod
    def value_batch(logits, ys) -> np.ndarray:
        return cross_entropy_batch(logits, ys)

    @staticmethod
    def logit_grad(logits, y: int) -> np.ndarray:
        return cross_entropy_logit_grad(logits, y)


def _per_example_values(params: ModelParams, head: str, dataset: LabeledDataset, loss) -> np.ndarray:
    logits = forward_batch(params, head, dataset.features)
    if hasattr(loss, "value_batch"):
        return np.asarray(loss.value_batch(logits, dataset.labels), dtype=np.float64)
    return np.array([loss.value(logits[i], int(dataset.labels[i])) for i in range(dataset.n)])


def weighted_source_loss(params: ModelParams, alpha, dataset: LabeledDataset, loss=CrossEntropy) -> float:
    """sum_j alpha_j * loss_j / n_source over the whole source set."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (dataset.n,):
        raise ShapeError(f"alpha has shape {alpha.shape}, source set has {dataset.n} examples")
    values = _per_example_values(params, "source", dataset, loss)
    return float(alpha @ values / dataset.n)


def target_loss(params: ModelParams, dataset: LabeledDataset, loss=CrossEntropy) -> float:
    """Mean per-example loss through the target head."""
    return float(_per_example_values(params, "target", dataset, loss).mean())
