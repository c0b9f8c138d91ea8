"""Training objectives.

All maps are flattened channels-first: features ``(C, N)``, probabilities
``(M, N)``, labels ``(N,)`` with 255 marking ignored pixels.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .association import IGNORE_INDEX
from .similarity import cosine_entries, kl_entries, normalize_rows
from .tensor import Tensor, as_tensor

log = logging.getLogger(__name__)

DEFAULT_BETAS = (0.75, 0.1, 0.01)
DEFAULT_LAMBDA = 10.0


@dataclass
class LossBreakdown:
    ce: float = 0.0
    lov: float = 0.0
    fass: float = 0.0
    cass: float = 0.0
    lsr: float = 0.0
    full: float = 0.0
    valid_pairs: int = 0

    def recombine(self, betas=DEFAULT_BETAS):
        b1, b2, b3 = betas
        return self.ce + b1 * self.lov + b2 * (self.fass + self.cass) + b3 * self.lsr

    def as_dict(self):
        return asdict(self)


def _zero():
    return Tensor(0.0)


# ---------------------------------------------------------------------------
# association losses


def association_loss_from_tables(d_s2t, d_t2s, assoc, name="association"):
    """Contrastive cycle loss given raw similarity tables and a fixed association set.

    For each valid cycle (i, j*, i*): the row of ``d_s2t`` for i and the row of
    ``d_t2s`` for j* are contrast-normalized, and the loss is the negative log
    of the product of the two softmax probabilities at j* and i*.
    """
    i, j, i_star = assoc.valid_triples()
    k = len(i)
    if k == 0:
        log.warning("%s loss: no valid cycle associations, contributing 0", name)
        return _zero()
    rows = np.arange(k)
    fwd = T.log_softmax(normalize_rows(T.getitem(d_s2t, i)), axis=1)
    back = T.log_softmax(normalize_rows(T.getitem(d_t2s, j)), axis=1)
    picked = T.getitem(fwd, (rows, j)) + T.getitem(back, (rows, i_star))
    return -T.tsum(picked) / k


def feature_association_loss(f_s, f_t_hat, assoc):
    """Contrastive association loss on cosine similarities of backbone features."""
    d = cosine_entries(as_tensor(f_s), as_tensor(f_t_hat))
    return association_loss_from_tables(d, d.T, assoc, "feature association")


def prediction_association_loss(p_s, p_t_hat, assoc):
    """Contrastive association loss on negative-KL similarities of predictions."""
    p_s, p_t_hat = as_tensor(p_s), as_tensor(p_t_hat)
    return association_loss_from_tables(kl_entries(p_s, p_t_hat), kl_entries(p_t_hat, p_s),
                                        assoc, "prediction association")


def _column_cosine(a, b):
    an = a / T.norm(a, axis=0, keepdims=True)
    bn = b / T.norm(b, axis=0, keepdims=True)
    return T.tsum(an * bn, axis=0)


def _column_neg_kl(p, q):
    return -T.tsum(p * (T.log(p) - T.log(q)), axis=0)


def similarity_maximization_loss(x_s, x_t_hat, assoc, kind="cosine"):
    """Negative mean raw similarity of both legs of every valid cycle (Sim-PLCA).

    ``kind`` is ``"cosine"`` for features or ``"neg_kl"`` for probabilities.
    """
    i, j, i_star = assoc.valid_triples()
    k = len(i)
    if k == 0:
        log.warning("similarity maximization loss: no valid cycle associations, contributing 0")
        return _zero()
    sim = {"cosine": _column_cosine, "neg_kl": _column_neg_kl}[kind]
    x_s, x_t_hat = as_tensor(x_s), as_tensor(x_t_hat)
    xt = T.gather(x_t_hat, j, axis=1)
    total = sim(T.gather(x_s, i, axis=1), xt) + sim(xt, T.gather(x_s, i_star, axis=1))
    return -T.tsum(total) / k


# ---------------------------------------------------------------------------
# supervised source losses


def _labeled(y, ignore_index):
    y = np.asarray(y).reshape(-1).astype(np.int64)
    idx = np.flatnonzero(y != ignore_index)
    if idx.size == 0:
        raise ValueError("every pixel carries the ignore label")
    return idx, y[idx]


def cross_entropy_loss(p_s, y_s, ignore_index=IGNORE_INDEX):
    """Mean negative log-probability of the true class over labeled pixels."""
    p_s = as_tensor(p_s)
    idx, y = _labeled(y_s, ignore_index)
    if y.max() >= p_s.shape[0] or y.min() < 0:
        raise ValueError(f"labels must lie in [0, {p_s.shape[0]}) or equal {ignore_index}")
    return -T.mean(T.log(T.getitem(p_s, (y, idx))))


def lovasz_grad(gt_sorted):
    """Lovasz extension gradient of the Jaccard loss, row-wise over sorted ground truth."""
    gt_sorted = np.atleast_2d(gt_sorted).astype(np.float64)
    gts = gt_sorted.sum(axis=1, keepdims=True)
    intersection = gts - np.cumsum(gt_sorted, axis=1)
    union = gts + np.cumsum(1.0 - gt_sorted, axis=1)
    jaccard = 1.0 - intersection / union
    jaccard[:, 1:] = jaccard[:, 1:] - jaccard[:, :-1]
    return jaccard


def lovasz_softmax_loss(p_s, y_s, ignore_index=IGNORE_INDEX):
    """Lovasz-softmax averaged over the classes present in the labels."""
    p_s = as_tensor(p_s)
    idx, y = _labeled(y_s, ignore_index)
    m = p_s.shape[0]
    present = np.flatnonzero(np.bincount(y, minlength=m)[:m] > 0)
    fg = (y[None, :] == present[:, None]).astype(np.float64)
    probs = T.getitem(p_s, (present[:, None], idx[None, :]))
    errors = probs * (1.0 - 2.0 * fg) + fg  # |fg - p|
    order = T.constant(np.argsort(-errors.data, axis=1, kind="stable"))
    rows = np.arange(len(present))[:, None]
    sorted_errors = T.getitem(errors, (rows, order))
    weights = lovasz_grad(np.take_along_axis(fg, order, axis=1))
    return T.tsum(sorted_errors * weights) / len(present)


# ---------------------------------------------------------------------------
# adaptive label smoothing


def mean_neg_log_prob(p):
    """Per-pixel ``-(1/M) sum_c log p(c)`` as a plain array."""
    p = as_tensor(p).data
    return -np.log(p + T.EPS).sum(axis=0) / p.shape[0]


def lsr_weights(p, lam=DEFAULT_LAMBDA):
    return mean_neg_log_prob(p) / lam - 1.0


def _lsr_side(p, lam):
    p = as_tensor(p)
    gamma = T.constant(lsr_weights(p, lam))
    s = T.tsum(T.log(p), axis=0)
    return T.tsum(s * gamma) / p.shape[1]


def lsr_loss(p_s, p_t=None, lam=DEFAULT_LAMBDA):
    """Adaptive label smoothing on source and (optionally) target predictions.

    The per-pixel weight ``gamma = mean_nll / lam - 1`` is detached, so
    pixels sharper than the target smoothness are pushed softer and vice versa.
    """
    if lam <= 0:
        raise ValueError(f"lsr_loss: lambda must be positive, got {lam}")
    m = as_tensor(p_s).shape[0]
    total = _lsr_side(p_s, lam)
    if p_t is not None:
        total = total + _lsr_side(p_t, lam)
    return total * (-1.0 / m)


def lsr_pixel_terms(p, lam=DEFAULT_LAMBDA):
    """Each pixel's contribution to one side of :func:`lsr_loss`."""
    p = as_tensor(p).data
    m, n = p.shape
    s = np.log(p + T.EPS).sum(axis=0)
    return -(lsr_weights(p, lam) * s) / n / m


# ---------------------------------------------------------------------------
# full objective


def full_objective(ce, lov=0.0, fass=0.0, cass=0.0, lsr=0.0, betas=DEFAULT_BETAS):
    b1, b2, b3 = betas
    if min(betas) < 0:
        raise ValueError(f"loss weights must be non-negative, got {betas}")
    return as_tensor(ce) + as_tensor(lov) * b1 + (as_tensor(fass) + as_tensor(cass)) * b2 \
        + as_tensor(lsr) * b3
