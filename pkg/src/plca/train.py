"""One-stage adaptation training, evaluation and the ablation column set."""

import json
import logging
import shutil
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import aggregation as agg
from . import datagen, losses, segnet
from . import tensor as T
from .association import IGNORE_INDEX, build_cycle_associations
from .metrics import confusion_matrix, iou_from_confusion
from .similarity import cosine_entries, kl_entries

log = logging.getLogger(__name__)

ABLATION_FLAGS = ("use_lov", "use_fass", "use_cass", "use_lsr", "sim_plca", "use_sagg",
                  "inference_aggregation")


@dataclass
class TrainConfig:
    betas: tuple = losses.DEFAULT_BETAS
    lam: float = losses.DEFAULT_LAMBDA
    alpha: float = agg.DEFAULT_ALPHA
    base_lr: float = 2.5e-4
    poly_power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 5e-4
    max_iters: int = 2000
    batch_pairs: int = 4
    seed: int = 0
    use_lov: bool = True
    use_fass: bool = True
    use_cass: bool = True
    use_lsr: bool = True
    sim_plca: bool = False
    use_sagg: bool = True
    inference_aggregation: bool = True
    random_crop_flip: bool = False  # reserved, not implemented at this scale
    source_dir: str = ""
    target_dir: str = ""
    test_dir: str = ""
    adapt_start_iter: int = 0  # adaptation terms are off before this iteration
    checkpoint_every: int = 500
    check_every: int = 100
    net: dict = field(default_factory=lambda: segnet.net_config_dict(segnet.NetConfig()))

    def validate(self):
        if self.sim_plca and (self.use_fass or self.use_cass):
            raise ValueError("sim_plca replaces the association losses; disable use_fass/use_cass")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lam <= 0 or min(self.betas) < 0:
            raise ValueError("lam must be positive and betas non-negative")
        if self.max_iters < 1 or self.batch_pairs < 1:
            raise ValueError("max_iters and batch_pairs must be positive")
        if self.random_crop_flip:
            raise ValueError("random_crop_flip is reserved and not implemented")

    @property
    def adapts(self):
        return self.use_fass or self.use_cass or self.sim_plca

    def as_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def net_config(self):
        return segnet.NetConfig.from_dict(self.net)


# Ablation column set; each entry overrides the ablation flags of a base config.
ABLATIONS = {
    "source_only_ce": dict(use_lov=False, use_fass=False, use_cass=False, use_lsr=False,
                           sim_plca=False, use_sagg=False, inference_aggregation=False),
    "source_only": dict(use_lov=True, use_fass=False, use_cass=False, use_lsr=False,
                        sim_plca=False, use_sagg=False, inference_aggregation=False),
    "+fass": dict(use_lov=True, use_fass=True, use_cass=False, use_lsr=False, sim_plca=False,
                  use_sagg=True, inference_aggregation=True),
    "+cass": dict(use_lov=True, use_fass=True, use_cass=True, use_lsr=False, sim_plca=False,
                  use_sagg=True, inference_aggregation=True),
    "+lsr": dict(use_lov=True, use_fass=True, use_cass=True, use_lsr=True, sim_plca=False,
                 use_sagg=True, inference_aggregation=True),
    "plca": dict(use_lov=True, use_fass=True, use_cass=True, use_lsr=True, sim_plca=False,
                 use_sagg=True, inference_aggregation=True),
    "sim_plca": dict(use_lov=True, use_fass=False, use_cass=False, use_lsr=True, sim_plca=True,
                     use_sagg=True, inference_aggregation=True),
    "plca_wo_sagg": dict(use_lov=True, use_fass=True, use_cass=True, use_lsr=True,
                         sim_plca=False, use_sagg=False, inference_aggregation=False),
}


def ablation_config(base, name):
    return replace(base, **ABLATIONS[name])


# ---------------------------------------------------------------------------
# optimizer


def poly_lr(it, cfg):
    if not 0 <= it <= cfg.max_iters:
        raise ValueError(f"iteration {it} outside [0, {cfg.max_iters}]")
    return cfg.base_lr * (1.0 - it / cfg.max_iters) ** cfg.poly_power


def sgd_step(params, lr, momentum, weight_decay, velocity):
    """Momentum SGD with L2 weight decay; updates ``params`` and ``velocity`` in place."""
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise FloatingPointError(f"non-finite gradient in {name}: {bad} of {g.size} entries")
        v = velocity.get(name)
        v = g + weight_decay * p.data if v is None else momentum * v + g + weight_decay * p.data
        velocity[name] = v
        p.data = p.data - lr * v
        p.grad = None
    return velocity


# ---------------------------------------------------------------------------
# per-pair objective


@dataclass
class PairTerms:
    ce: T.Tensor
    lov: T.Tensor
    fass: T.Tensor
    cass: T.Tensor
    lsr: T.Tensor
    valid_pairs: int
    prob_sum_error: float


def _flat(x):
    return T.reshape(x, (x.shape[0], -1))


def pair_terms(cfg, f_s, p_s, y_s, f_t, p_t, adapt=True):
    """Loss terms for one source/target pair of (C, N) features and (M, N) probabilities."""
    zero = T.Tensor(0.0)
    ce = losses.cross_entropy_loss(p_s, y_s)
    lov = losses.lovasz_softmax_loss(p_s, y_s) if cfg.use_lov else zero
    lsr = losses.lsr_loss(p_s, p_t, cfg.lam) if cfg.use_lsr and adapt else zero
    fass, cass, valid = zero, zero, 0
    prob_err = float(np.abs(p_s.data.sum(0) - 1).max())
    prob_err = max(prob_err, float(np.abs(p_t.data.sum(0) - 1).max()))
    if cfg.adapts and adapt:
        if cfg.use_sagg:
            w = agg.aggregation_weights(f_t)
            f_hat = agg.spatial_aggregate_features(f_t, w, cfg.alpha)
            p_hat = agg.spatial_aggregate_probs(p_t, w, cfg.alpha)
            prob_err = max(prob_err, float(np.abs(p_hat.data.sum(0) - 1).max()))
        else:
            f_hat, p_hat = f_t, p_t
        if cfg.use_fass or cfg.sim_plca:
            d = cosine_entries(f_s, f_hat)
            a_f = build_cycle_associations(d.data, d.data.T, y_s)
            valid = a_f.valid_count
            if cfg.sim_plca:
                fass = losses.similarity_maximization_loss(f_s, f_hat, a_f, "cosine")
            else:
                fass = losses.association_loss_from_tables(d, d.T, a_f, "feature association")
        if cfg.use_cass or cfg.sim_plca:
            d_st, d_ts = kl_entries(p_s, p_hat), kl_entries(p_hat, p_s)
            a_c = build_cycle_associations(d_st.data, d_ts.data, y_s)
            if cfg.sim_plca:
                cass = losses.similarity_maximization_loss(p_s, p_hat, a_c, "neg_kl")
            else:
                cass = losses.association_loss_from_tables(d_st, d_ts, a_c, "prediction association")
    return PairTerms(ce, lov, fass, cass, lsr, valid, prob_err)


def batch_objective(cfg, params, src_images, src_labels, tgt_images, adapt=True):
    """Forward a batch of index-paired images; returns (full loss, LossBreakdown, prob error)."""
    b = len(src_images)
    out = segnet.forward(params, np.concatenate([src_images, tgt_images]), cfg.net_config())
    feats = T.reshape(out.features, (2 * b, out.features.shape[1], -1))
    probs = T.reshape(out.probs, (2 * b, out.probs.shape[1], -1))
    terms = [pair_terms(cfg, feats[k], probs[k], src_labels[k], feats[b + k], probs[b + k], adapt)
             for k in range(b)]
    mean = {n: T.tsum(T.concat([T.reshape(getattr(t, n), (1,)) for t in terms])) / b
            for n in ("ce", "lov", "fass", "cass", "lsr")}
    full = losses.full_objective(mean["ce"], mean["lov"], mean["fass"], mean["cass"],
                                 mean["lsr"], cfg.betas)
    breakdown = losses.LossBreakdown(**{n: v.item() for n, v in mean.items()}, full=full.item(),
                                     valid_pairs=sum(t.valid_pairs for t in terms))
    return full, breakdown, max(t.prob_sum_error for t in terms)


# ---------------------------------------------------------------------------
# training


@dataclass
class Data:
    images: np.ndarray  # (K, 3, H, W)
    labels: np.ndarray  # (K, h*w) at feature resolution


def load_split(path, downsample=4, with_labels=True):
    items = datagen.read_dataset(path)
    if not items:
        raise ValueError(f"dataset {path} is empty")
    images = np.stack([it.image for it in items])
    labels = None
    if with_labels:
        labels = np.stack([datagen.downsample_labels(it.labels, downsample).reshape(-1)
                           for it in items])
    return Data(images, labels)


def _check_data(cfg, src, tgt):
    netc = cfg.net_config()
    if src.images.shape[1:] != tgt.images.shape[1:]:
        raise ValueError(f"source images {src.images.shape[1:]} and target images "
                         f"{tgt.images.shape[1:]} differ in shape")
    if src.images.shape[2] % netc.downsample or src.images.shape[3] % netc.downsample:
        raise ValueError("image size not divisible by the network downsampling factor")
    lab = src.labels[src.labels != IGNORE_INDEX]
    if lab.size and lab.max() >= netc.num_classes:
        raise ValueError(f"labels reach class {lab.max()} but the network has "
                         f"{netc.num_classes} classes")


@dataclass
class TrainResult:
    params: dict
    out_dir: Path
    metrics: list
    checks: list


def train(cfg, out_dir, src=None, tgt=None, progress=None):
    """Run the adaptation loop, writing metrics.jsonl, checks.jsonl and checkpoints."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    netc = cfg.net_config()
    if src is None:
        src = load_split(cfg.source_dir, netc.downsample)
    if tgt is None:
        tgt = load_split(cfg.target_dir, netc.downsample, with_labels=False)
    _check_data(cfg, src, tgt)
    (out_dir / "config.json").write_text(json.dumps(cfg.as_dict(), indent=2, sort_keys=True))

    params = segnet.init_params(cfg.seed, netc)
    rng = np.random.default_rng([cfg.seed, 0x7A1])
    velocity = {}
    metrics, checks = [], []
    mf = open(out_dir / "metrics.jsonl", "w")
    cf = open(out_dir / "checks.jsonl", "w")
    try:
        for it in range(cfg.max_iters):
            lr = poly_lr(it, cfg)
            si = rng.integers(0, len(src.images), cfg.batch_pairs)
            ti = rng.integers(0, len(tgt.images), cfg.batch_pairs)
            full, bd, prob_err = batch_objective(cfg, params, src.images[si], src.labels[si],
                                                 tgt.images[ti], it >= cfg.adapt_start_iter)
            full.backward()
            sgd_step(params, lr, cfg.momentum, cfg.weight_decay, velocity)
            rec = {"iter": it, **bd.as_dict(), "lr": lr}
            metrics.append(rec)
            mf.write(json.dumps(rec) + "\n")
            if it % cfg.check_every == 0 or it == cfg.max_iters - 1:
                chk = {"iter": it, "prob_sum_error": prob_err,
                       "recombination_error": abs(bd.recombine(cfg.betas) - bd.full)}
                checks.append(chk)
                cf.write(json.dumps(chk) + "\n")
            if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                segnet.save_checkpoint(out_dir / f"ckpt_{it + 1:06d}", params, it + 1,
                                       cfg.as_dict())
            if progress:
                progress(rec)
    finally:
        mf.close()
        cf.close()
    final = out_dir / "final"
    if final.exists():
        shutil.rmtree(final)
    segnet.save_checkpoint(final, params, cfg.max_iters, cfg.as_dict())
    return TrainResult(params, out_dir, metrics, checks)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    per_class_iou: list
    miou: float
    confusion: list
    config_hash: str
    checkpoint_id: str
    prob_sum_error: float

    def as_dict(self):
        return asdict(self)


def predict(params, images, netc, inference_aggregation, alpha, batch=25):
    """Per-pixel class probabilities (K, M, h*w) at feature resolution."""
    out = []
    with T.no_grad():
        for k in range(0, len(images), batch):
            res = segnet.forward(params, images[k:k + batch], netc)
            feats = T.reshape(res.features, (res.features.shape[0], res.features.shape[1], -1))
            if not inference_aggregation:
                out.append(T.reshape(res.probs, (res.probs.shape[0], res.probs.shape[1], -1)).data)
                continue
            for f in feats.data:
                w = agg.aggregation_weights(f)
                f_hat = agg.spatial_aggregate_features(f, w, alpha)
                out.append(T.softmax(segnet.classify(params, f_hat, netc),
                                     axis=0).data[None])
    return np.concatenate(out)


def evaluate(checkpoint, data, inference_aggregation=None):
    """mIoU of a checkpoint directory on a labeled dataset directory (or loaded Data)."""
    params, manifest = segnet.load_checkpoint(checkpoint)
    cfg = TrainConfig.from_dict(manifest["config"])
    if inference_aggregation is None:
        inference_aggregation = cfg.inference_aggregation
    return evaluate_params(params, cfg, data, inference_aggregation,
                           manifest["config_hash"], f"{Path(checkpoint).name}@{manifest['iteration']}")


def evaluate_params(params, cfg, data, inference_aggregation, config_hash="", checkpoint_id=""):
    netc = cfg.net_config()
    if not isinstance(data, Data):
        data = load_split(data, netc.downsample)
    probs = predict(params, data.images, netc, inference_aggregation, cfg.alpha)
    prob_err = float(np.abs(probs.sum(axis=1) - 1).max())
    pred = probs.argmax(axis=1)
    cm = confusion_matrix(pred, data.labels, netc.num_classes)
    iou, miou = iou_from_confusion(cm)
    return EvalReport([None if np.isnan(v) else float(v) for v in iou], miou, cm.tolist(),
                      config_hash, checkpoint_id, prob_err)


# ---------------------------------------------------------------------------
# ablations


def run_ablation(base, out_dir, names=None, seeds=(0,), progress=None):
    """Train and evaluate each ablation column for each seed; returns rows of results."""
    names = list(names or ABLATIONS)
    out_dir = Path(out_dir)
    netc = base.net_config()
    src = load_split(base.source_dir, netc.downsample)
    tgt = load_split(base.target_dir, netc.downsample, with_labels=False)
    test = load_split(base.test_dir, netc.downsample)
    rows = []
    for name in names:
        for seed in seeds:
            cfg = replace(ablation_config(base, name), seed=seed)
            t0 = time.perf_counter()
            res = train(cfg, out_dir / f"{name}_seed{seed}", src, tgt)
            rep = evaluate_params(res.params, cfg, test, cfg.inference_aggregation)
            row = {"column": name, "seed": seed, "miou": rep.miou,
                   "per_class_iou": rep.per_class_iou, "seconds": time.perf_counter() - t0}
            rows.append(row)
            if progress:
                progress(row)
    return rows


def summarize(rows):
    """Mean mIoU per column, preserving first-seen order."""
    out = {}
    for r in rows:
        out.setdefault(r["column"], []).append(r["miou"])
    return {k: (float(np.mean(v)), v) for k, v in out.items()}
