"""Cyclic source -> target -> source pixel association with label-consistency filtering."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .similarity import SimMatrix

IGNORE_INDEX = 255


class AssociationRecord(NamedTuple):
    i: int
    j_star: int
    i_star: int
    valid: bool


@dataclass(frozen=True)
class AssociationSet:
    """One cycle per non-ignored source pixel, stored column-wise."""

    i: np.ndarray
    j_star: np.ndarray
    i_star: np.ndarray
    valid: np.ndarray
    start_labels: np.ndarray
    n_source: int
    n_target: int

    @classmethod
    def empty(cls, n_source=0, n_target=0):
        z = np.zeros(0, dtype=np.intp)
        return cls(z, z, z, np.zeros(0, dtype=bool), z, n_source, n_target)

    def __len__(self):
        return len(self.i)

    @property
    def records(self):
        return [AssociationRecord(int(a), int(b), int(c), bool(v))
                for a, b, c, v in zip(self.i, self.j_star, self.i_star, self.valid)]

    @property
    def valid_count(self):
        return int(np.count_nonzero(self.valid))

    @property
    def target_coverage(self):
        if self.n_target == 0:
            return 0.0
        return len(np.unique(self.j_star[self.valid])) / self.n_target

    def valid_triples(self):
        return self.i[self.valid], self.j_star[self.valid], self.i_star[self.valid]


def _values(s):
    if isinstance(s, SimMatrix):
        s = s.entries
    if isinstance(s, T.Tensor):
        s = s.data
    return np.asarray(s, dtype=np.float64)


def argmax_rows(s):
    """Column index of each row's maximum; ties go to the lowest index."""
    d = _values(s)
    if d.ndim != 2 or d.size == 0:
        raise ValueError(f"argmax_rows: need a non-empty 2-D matrix, got shape {d.shape}")
    return T.constant(np.argmax(d, axis=1))


def build_cycle_associations(d_s2t, d_t2s, y_s, ignore_index=IGNORE_INDEX):
    """Associate every labeled source pixel i -> j* -> i* and flag label-consistent cycles."""
    a, b = _values(d_s2t), _values(d_t2s)
    y = np.asarray(y_s).reshape(-1).astype(np.int64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("build_cycle_associations: similarity tables must be 2-D")
    n_s, n_t = a.shape
    if b.shape != (n_t, n_s) or y.shape[0] != n_s:
        raise T.ShapeError("build_cycle_associations", a.shape, b.shape, y.shape,
                           detail="expected (N_s, N_t), (N_t, N_s) and N_s labels")
    to_target = argmax_rows(a)
    to_source = argmax_rows(b)
    starts = np.flatnonzero(y != ignore_index)
    j_star = to_target[starts]
    i_star = to_source[j_star]
    labels = y[starts]
    valid = y[i_star] == labels
    return AssociationSet(starts, j_star, i_star, valid, labels, n_s, n_t)


@dataclass(frozen=True)
class AssociationStats:
    valid_ratio: float
    target_coverage: float
    per_class_valid: dict

    def as_dict(self):
        return {"valid_ratio": self.valid_ratio, "target_coverage": self.target_coverage,
                "per_class_valid": {str(k): v for k, v in self.per_class_valid.items()}}


def association_stats(assoc, num_classes=None):
    n = len(assoc)
    counts = {}
    if num_classes is not None:
        counts = {c: 0 for c in range(num_classes)}
    for c in assoc.start_labels[assoc.valid]:
        counts[int(c)] = counts.get(int(c), 0) + 1
    return AssociationStats(assoc.valid_count / n if n else 0.0, assoc.target_coverage, counts)
