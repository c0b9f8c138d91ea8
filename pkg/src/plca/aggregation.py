"""Similarity-weighted spatial aggregation over the pixels of one target image.

Each pixel is blended with a softmax-weighted average of all pixels of the
same image, so a loss on a single pixel sends gradient to every pixel that
contributes to it.
"""

from dataclasses import dataclass

from . import tensor as T
from .similarity import check_distributions, cosine_entries, normalize_rows
from .tensor import Tensor, as_tensor

DEFAULT_ALPHA = 0.5


@dataclass(frozen=True)
class AggregationWeights:
    w: Tensor  # (N, N), row j holds the weights used for pixel j


def aggregation_weights(f_t):
    """Row-wise softmax of contrast-normalized self-cosine similarities."""
    f_t = as_tensor(f_t)
    if f_t.ndim != 2:
        raise T.ShapeError("aggregation_weights", f_t.shape, detail="expected (C, N)")
    d = normalize_rows(cosine_entries(f_t, f_t))
    return AggregationWeights(T.softmax(d, axis=1))


def _blend(x, weights, alpha, op):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"{op}: alpha must lie in [0, 1], got {alpha}")
    w = weights.w if isinstance(weights, AggregationWeights) else as_tensor(weights)
    n = x.shape[1]
    if w.shape != (n, n):
        raise T.ShapeError(op, x.shape, w.shape)
    return x * (1.0 - alpha) + T.matmul(x, w.T) * alpha


def spatial_aggregate_features(f_t, weights, alpha=DEFAULT_ALPHA):
    """``(1 - alpha) * F_j + alpha * sum_j' w[j, j'] * F_j'`` for every column j."""
    return _blend(as_tensor(f_t), weights, alpha, "spatial_aggregate_features")


def spatial_aggregate_probs(p_t, weights, alpha=DEFAULT_ALPHA):
    """Same blend applied to class distributions; columns stay normalized."""
    p_t = as_tensor(p_t)
    check_distributions(p_t, "spatial_aggregate_probs")
    return _blend(p_t, weights, alpha, "spatial_aggregate_probs")
