"""Small convolutional segmentation network.

A stack of 3x3 convolutions with tanh activations produces a feature map at
1/4 of the input resolution; a 1x1 classifier turns it into per-pixel class
logits. There is no normalization layer, so forward and backward are exact
deterministic functions of the parameters.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import plt1
from . import tensor as T
from .tensor import Tensor, as_tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 3
    channels: tuple = (16, 16, 16, 16)
    strides: tuple = (1, 2, 2, 1)
    num_classes: int = 4
    normalize_features: bool = False  # classify unit-length features
    logit_scale: float = 10.0  # multiplies logits when features are normalized
    standardize_input: bool = True  # per-image, per-channel zero mean / unit variance

    @property
    def feature_dim(self):
        return self.channels[-1]

    @property
    def downsample(self):
        return int(np.prod(self.strides))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("channels", "strides"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


class NetOutput(NamedTuple):
    features: Tensor
    logits: Tensor
    probs: Tensor


def init_params(seed, cfg=NetConfig()):
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    if len(cfg.channels) != len(cfg.strides):
        raise ValueError("channels and strides must have the same length")
    rng = np.random.default_rng(seed)
    params = {}
    c_in = cfg.in_channels
    for k, c_out in enumerate(cfg.channels):
        bound = np.sqrt(1.0 / (c_in * 9))
        params[f"conv{k}.w"] = Tensor(rng.uniform(-bound, bound, (c_out, c_in, 3, 3)), True)
        params[f"conv{k}.b"] = Tensor(np.zeros(c_out), True)
        c_in = c_out
    bound = np.sqrt(1.0 / c_in)
    params["cls.w"] = Tensor(rng.uniform(-bound, bound, (cfg.num_classes, c_in)), True)
    params["cls.b"] = Tensor(np.zeros(cfg.num_classes), True)
    log.debug("initialized %d parameters", param_count(params))
    return params


def param_count(params):
    return int(sum(p.size for p in params.values()))


def classify(params, features, cfg=NetConfig()):
    """1x1 classifier on a (B, C, N) or (C, N) feature tensor -> logits of the same layout."""
    w, b = params["cls.w"], params["cls.b"]
    if cfg.normalize_features:
        features = features / T.norm(features, axis=-2, keepdims=True) * cfg.logit_scale
    return T.matmul(w, features) + T.reshape(b, (-1, 1))


def standardize(images, eps=1e-6):
    """Per-image, per-channel standardization of a (B, C, H, W) batch."""
    mu = images.mean(axis=(2, 3), keepdims=True)
    sd = images.std(axis=(2, 3), keepdims=True)
    return (images - mu) / (sd + eps)


def forward(params, image, cfg=NetConfig()):
    """Run the network on ``(3, H, W)`` or ``(B, 3, H, W)``; H and W divisible by 4."""
    x = as_tensor(image)
    single = x.ndim == 3
    if single:
        x = T.reshape(x, (1,) + x.shape)
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise T.ShapeError("segnet.forward", x.shape, detail=f"expected (B, {cfg.in_channels}, H, W)")
    if cfg.standardize_input:
        x = Tensor(standardize(x.data))
    ds = cfg.downsample
    if x.shape[2] % ds or x.shape[3] % ds:
        raise ValueError(f"segnet.forward: spatial size {x.shape[2:]} not divisible by {ds}")
    for k, stride in enumerate(cfg.strides):
        x = T.tanh(T.conv2d(x, params[f"conv{k}.w"], params[f"conv{k}.b"], stride))
    b, c, h, w = x.shape
    flat = T.reshape(x, (b, c, h * w))
    logits = T.reshape(classify(params, flat, cfg), (b, -1, h, w))
    probs = T.softmax(logits, axis=1)
    if single:
        x, logits, probs = x[0], logits[0], probs[0]
    return NetOutput(x, logits, probs)


# ---------------------------------------------------------------------------
# checkpoints


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, params, iteration, config):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, p in params.items():
        fname = f"{name}.plt1"
        plt1.save(path / fname, p.data)
        entries.append({"name": name, "shape": list(p.shape), "file": fname})
    manifest = {"iteration": int(iteration), "config_hash": config_hash(config),
                "config": config, "params": entries}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_checkpoint(path):
    """Return ``(params, manifest)``."""
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {mf}")
    manifest = json.loads(mf.read_text())
    params = {}
    for e in manifest["params"]:
        arr = plt1.load(path / e["file"])
        if list(arr.shape) != e["shape"]:
            raise plt1.PLT1Error(path / e["file"], f"shape {arr.shape} != manifest {e['shape']}")
        params[e["name"]] = Tensor(arr, True)
    return params, manifest


def net_config_dict(cfg):
    d = asdict(cfg)
    d["channels"], d["strides"] = list(cfg.channels), list(cfg.strides)
    return d
