"""Directed pixel-to-pixel similarity tables.

Feature maps and probability maps are passed flattened, channels first:
``(C, N)`` for features and ``(M, N)`` for class probabilities. A table has
one row per "from" pixel and one column per "to" pixel.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .tensor import Tensor, as_tensor

SOURCE_TO_TARGET = "source_to_target"
TARGET_TO_SOURCE = "target_to_source"
COSINE = "cosine"
NEG_KL = "neg_kl"

# rows whose sample std falls at or below this are treated as constant
SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class SimMatrix:
    entries: Tensor
    direction: str = SOURCE_TO_TARGET
    kind: str = COSINE
    normalized: bool = False

    @property
    def shape(self):
        return self.entries.shape


def _check_2d(op, a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise T.ShapeError(op, a.shape, b.shape, detail="expected (C, N_from) and (C, N_to)")


def cosine_entries(f_from, f_to):
    a = f_from / T.norm(f_from, axis=0, keepdims=True)
    b = f_to / T.norm(f_to, axis=0, keepdims=True)
    return T.matmul(a.T, b)


def cosine_similarity_map(f_from, f_to, direction=SOURCE_TO_TARGET):
    """Cosine similarity between every column of ``f_from`` and of ``f_to``."""
    f_from, f_to = as_tensor(f_from), as_tensor(f_to)
    _check_2d("cosine_similarity_map", f_from, f_to)
    return SimMatrix(cosine_entries(f_from, f_to), direction, COSINE)


def check_distributions(p, op, tol=1e-6):
    d = as_tensor(p).data
    if np.any(d < 0) or np.any(np.abs(d.sum(axis=0) - 1.0) > tol):
        raise ValueError(f"{op}: columns must be probability distributions "
                         f"(non-negative, summing to 1 within {tol})")


def kl_entries(p_from, p_to):
    # entries[i, j] = sum_c p_i(c) log p_j(c) - sum_c p_i(c) log p_i(c)
    cross = T.matmul(p_from.T, T.log(p_to))
    self_term = T.tsum(p_from * T.log(p_from), axis=0)
    return cross - T.reshape(self_term, (-1, 1))


def kl_similarity_map(p_from, p_to, direction=SOURCE_TO_TARGET):
    """Negative KL(p_from_i || p_to_j) for every pair of columns; 0 is the maximum."""
    p_from, p_to = as_tensor(p_from), as_tensor(p_to)
    _check_2d("kl_similarity_map", p_from, p_to)
    check_distributions(p_from, "kl_similarity_map")
    check_distributions(p_to, "kl_similarity_map")
    return SimMatrix(kl_entries(p_from, p_to), direction, NEG_KL)


def row_statistics(d):
    """Row mean and inverse sample std; degenerate rows get a zero scale."""
    mu = d.mean(axis=1, keepdims=True)
    if d.shape[1] < 2:
        return mu, np.zeros_like(mu)
    sd = d.std(axis=1, ddof=1, keepdims=True)
    scale = np.where(sd > SIGMA_FLOOR, 1.0 / np.maximum(sd, SIGMA_FLOOR), 0.0)
    return mu, scale


def normalize_rows(d):
    """(row - mean) / std with detached statistics."""
    mu, scale = row_statistics(d.data)
    mu, scale = T.constant(mu), T.constant(scale)
    return (d - mu) * scale


def contrast_normalize_rows(s):
    """Standardize each row to zero mean and unit sample std.

    The statistics are constants for the backward pass, so the incoming
    gradient of a row is multiplied by exactly ``1/std``.
    """
    if s.normalized:
        raise ValueError("contrast_normalize_rows: matrix is already normalized")
    return replace(s, entries=normalize_rows(s.entries), normalized=True)
