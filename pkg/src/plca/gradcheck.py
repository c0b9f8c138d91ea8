"""Finite-difference audit of every loss term and the full objective.

Fixtures are tiny (4x4 feature maps, 8 channels, 4 classes) so the whole
suite runs in well under a minute. Probability-level losses that validate
their inputs as distributions are checked through a softmax over logits, since
a raw finite-difference step would leave the simplex.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import aggregation as agg
from . import losses, segnet, train
from . import tensor as T
from .association import IGNORE_INDEX, build_cycle_associations
from .similarity import cosine_entries, kl_entries

log = logging.getLogger(__name__)

TOLERANCE = 1e-4
SMALL_NET = segnet.NetConfig(channels=(8, 8, 8, 8), num_classes=4)


@dataclass
class CheckResult:
    name: str
    wrt: str
    max_rel_error: float
    size: int

    @property
    def passed(self):
        return self.max_rel_error < TOLERANCE


def make_fixture(seed=0, c=8, m=4, side=4):
    rng = np.random.default_rng([seed, 0x6C])
    n = side * side
    y = rng.integers(0, m, n)
    y[rng.integers(0, n)] = IGNORE_INDEX
    return {
        "f_s": rng.normal(size=(c, n)),
        "f_t": rng.normal(size=(c, n)),
        "z_s": rng.normal(size=(m, n)) * 2.0,
        "z_t": rng.normal(size=(m, n)) * 2.0,
        "p_s": rng.dirichlet(np.ones(m), size=n).T,
        "y_s": y,
    }


def _fass(f_s, f_t, y, sagg):
    f_hat = agg.spatial_aggregate_features(f_t, agg.aggregation_weights(f_t)) if sagg else f_t
    d = cosine_entries(f_s, f_hat)
    return losses.association_loss_from_tables(d, d.T, build_cycle_associations(d.data, d.data.T, y))


def _cass(p_s, p_t, f_t, y, sagg):
    p_hat = agg.spatial_aggregate_probs(p_t, agg.aggregation_weights(f_t)) if sagg else p_t
    d_st, d_ts = kl_entries(p_s, p_hat), kl_entries(p_hat, p_s)
    return losses.association_loss_from_tables(d_st, d_ts,
                                               build_cycle_associations(d_st.data, d_ts.data, y))


def _sim(x_s, x_t, f_t, y, kind):
    w = agg.aggregation_weights(f_t)
    if kind == "cosine":
        x_hat = agg.spatial_aggregate_features(x_t, w)
        d = cosine_entries(x_s, x_hat)
        a = build_cycle_associations(d.data, d.data.T, y)
    else:
        x_hat = agg.spatial_aggregate_probs(x_t, w)
        a = build_cycle_associations(kl_entries(x_s, x_hat).data, kl_entries(x_hat, x_s).data, y)
    return losses.similarity_maximization_loss(x_s, x_hat, a, kind)


def tensor_cases(fx):
    """(name, wrt, f, x0) for the per-term checks on raw tensors."""
    sm = lambda z: T.softmax(z, axis=0)  # noqa: E731
    y, f_s, f_t, z_s, z_t = fx["y_s"], fx["f_s"], fx["f_t"], fx["z_s"], fx["z_t"]
    p_s, p_t = sm(T.Tensor(z_s)).data, sm(T.Tensor(z_t)).data
    return [
        ("ce", "probabilities", lambda p: losses.cross_entropy_loss(p, y), fx["p_s"]),
        ("ce", "logits", lambda z: losses.cross_entropy_loss(sm(z), y), z_s),
        ("lov", "probabilities", lambda p: losses.lovasz_softmax_loss(p, y), fx["p_s"]),
        ("lov", "logits", lambda z: losses.lovasz_softmax_loss(sm(z), y), z_s),
        ("lsr", "probabilities", lambda p: losses.lsr_loss(p), fx["p_s"]),
        ("lsr", "logits (source and target)", lambda z: losses.lsr_loss(sm(z), sm(z * 0.5)), z_s),
        ("fass+sagg", "source features", lambda f: _fass(f, f_t, y, True), f_s),
        ("fass+sagg", "target features", lambda f: _fass(f_s, f, y, True), f_t),
        ("fass", "source features", lambda f: _fass(f, f_t, y, False), f_s),
        ("fass", "target features", lambda f: _fass(f_s, f, y, False), f_t),
        ("cass+sagg", "source probabilities", lambda z: _cass(sm(z), p_t, f_t, y, True), z_s),
        ("cass+sagg", "target probabilities", lambda z: _cass(p_s, sm(z), f_t, y, True), z_t),
        ("cass+sagg", "target features", lambda f: _cass(p_s, p_t, f, y, True), f_t),
        ("cass", "target probabilities", lambda z: _cass(p_s, sm(z), f_t, y, False), z_t),
        ("sim_plca cosine", "source features", lambda f: _sim(f, f_t, f_t, y, "cosine"), f_s),
        ("sim_plca cosine", "target features", lambda f: _sim(f_s, f, f, y, "cosine"), f_t),
        ("sim_plca neg_kl", "source probabilities",
         lambda z: _sim(sm(z), p_t, f_t, y, "neg_kl"), z_s),
        ("sim_plca neg_kl", "target probabilities",
         lambda z: _sim(p_s, sm(z), f_t, y, "neg_kl"), z_t),
    ]


def _objective_cfg(column):
    base = train.TrainConfig(net=segnet.net_config_dict(SMALL_NET))
    return train.ablation_config(base, column)


def param_cases(seed=0, columns=("plca", "plca_wo_sagg", "sim_plca")):
    """(name, wrt, f, x0) checking the full objective against every network parameter."""
    rng = np.random.default_rng([seed, 0x9A])
    side = 4 * SMALL_NET.downsample
    src = rng.uniform(0, 1, (2, 3, side, side))
    tgt = rng.uniform(0, 1, (2, 3, side, side))
    labels = rng.integers(0, SMALL_NET.num_classes, (2, 16))
    cases = []
    for column in columns:
        cfg = _objective_cfg(column)
        params = segnet.init_params(seed, SMALL_NET)
        for name in params:
            def f(x, name=name, cfg=cfg, params=params):
                local = dict(params, **{name: x})
                return train.batch_objective(cfg, local, src, labels, tgt)[0]
            cases.append((f"full[{column}]", name, f, params[name].data))
    return cases


def run_checks(seed=0, include_params=True):
    fx = make_fixture(seed)
    cases = tensor_cases(fx) + (param_cases(seed) if include_params else [])
    out = []
    for name, wrt, f, x0 in cases:
        rep = T.finite_diff_report(f, x0)
        if not np.any(rep.analytic) and not np.any(rep.numeric):
            log.warning("%s w.r.t. %s: gradient identically zero on this fixture", name, wrt)
        out.append(CheckResult(name, wrt, rep.max_rel_error, int(np.size(x0))))
    return out


def grad_check_command(seed=0, include_params=True, stream=print):
    """Print one line per check; return a process exit code (0 when all pass)."""
    t0 = time.perf_counter()
    results = run_checks(seed, include_params)
    width = max(len(f"{r.name} / {r.wrt}") for r in results)
    for r in results:
        tag = "ok  " if r.passed else "FAIL"
        stream(f"{tag} {f'{r.name} / {r.wrt}':<{width}}  max rel err {r.max_rel_error:.2e}  "
               f"({r.size} entries)")
    worst = max(r.max_rel_error for r in results)
    failed = sum(not r.passed for r in results)
    stream(f"{len(results)} checks, {failed} failed, worst {worst:.2e}, "
           f"tolerance {TOLERANCE:g}, {time.perf_counter() - t0:.1f}s")
    return 1 if failed else 0
