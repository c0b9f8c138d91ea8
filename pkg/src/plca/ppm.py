"""Binary PPM (P6) export for eyeballing images, label maps and similarity rows."""

from pathlib import Path

import numpy as np

LABEL_COLORS = np.array([
    [40, 40, 40], [230, 80, 60], [70, 170, 230], [240, 200, 60],
    [120, 200, 110], [190, 110, 220], [250, 150, 200], [110, 110, 240],
], dtype=np.uint8)
IGNORE_COLOR = np.array([255, 255, 255], dtype=np.uint8)


def write_ppm(path, rgb):
    """``rgb``: (H, W, 3) uint8 or floats in [0, 1]."""
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8:
        rgb = np.round(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes())


def read_ppm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=3)
    if len(parts) < 4 or parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    n = h * w * 3
    if len(raw) < n:
        raise ValueError(f"{path}: truncated pixel data")
    # the payload is the trailing block; pixel bytes may look like whitespace
    return np.frombuffer(raw[len(raw) - n:], dtype=np.uint8).reshape(h, w, 3)


def image_to_rgb(img):
    """(3, H, W) float image -> (H, W, 3)."""
    return np.transpose(np.asarray(img), (1, 2, 0))


def labels_to_rgb(labels, ignore_index=255):
    lab = np.asarray(labels).astype(np.int64)
    out = LABEL_COLORS[np.clip(lab, 0, None) % len(LABEL_COLORS)]
    out[lab == ignore_index] = IGNORE_COLOR
    return out


def gray_to_rgb(values, scale=1):
    """Min-max scaled grayscale; ``scale`` repeats pixels for visibility."""
    v = np.asarray(values, dtype=np.float64)
    span = v.max() - v.min()
    v = (v - v.min()) / span if span > 0 else np.zeros_like(v)
    rgb = np.repeat(v[..., None], 3, axis=-1)
    return upscale(rgb, scale)


def upscale(rgb, scale):
    if scale == 1:
        return rgb
    return np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
