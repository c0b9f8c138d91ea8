"""Procedural paired-domain segmentation data.

A scene is a label grid built from rectangles and discs painted back to front
over class-0 background. The same scene can be rendered under different
:class:`DomainStyle` presets; the source and target presets differ in palette,
noise, blur and global tone, which plays the role of the synthetic-to-real gap.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.ndimage import uniform_filter

from . import plt1, ppm
from .association import IGNORE_INDEX


@dataclass(frozen=True)
class GeneratorSpec:
    num_classes: int = 4
    height: int = 48
    width: int = 48
    min_shapes: int = 2
    max_shapes: int = 5
    min_size: int = 6
    max_size: int = 16
    all_classes: bool = True  # every foreground class appears in every scene

    def validate(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.height < 16 or self.width < 16 or self.height % 4 or self.width % 4:
            raise ValueError("height and width must be >= 16 and divisible by 4")
        if not 0 <= self.min_shapes <= self.max_shapes:
            raise ValueError("need 0 <= min_shapes <= max_shapes")
        if not 1 <= self.min_size <= self.max_size:
            raise ValueError("need 1 <= min_size <= max_size")
        if self.all_classes and 0 < self.max_shapes < self.num_classes - 1:
            raise ValueError("all_classes needs max_shapes >= num_classes - 1")


class Shape(NamedTuple):
    kind: str  # "rect" or "disc"
    cls: int
    cy: int
    cx: int
    h: int
    w: int  # for discs h == w == diameter


@dataclass
class Scene:
    labels: np.ndarray
    seed: int
    shapes: list


@dataclass(frozen=True)
class DomainStyle:
    name: str
    palette: tuple  # (M, 3) base colors in [0, 1]
    noise: float = 0.0  # std of additive gaussian noise
    blur: int = 0  # box blur width in pixels, 0 disables
    brightness: float = 0.0
    contrast: float = 1.0
    texture_amp: float = 0.0
    texture_freq: float = 0.0  # cycles per pixel

    def validate(self):
        pal = np.asarray(self.palette, dtype=np.float64)
        if pal.ndim != 2 or pal.shape[1] != 3 or pal.min() < 0 or pal.max() > 1:
            raise ValueError("palette must be (M, 3) with entries in [0, 1]")
        if not (0 <= self.noise <= 1 and 0 <= self.blur <= 9 and -1 <= self.brightness <= 1
                and 0 < self.contrast <= 3 and 0 <= self.texture_amp <= 1
                and 0 <= self.texture_freq <= 0.5):
            raise ValueError(f"style {self.name!r} has a parameter outside its range")

    def as_dict(self):
        d = asdict(self)
        d["palette"] = [list(c) for c in self.palette]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["palette"] = tuple(tuple(float(v) for v in c) for c in d["palette"])
        return cls(**d)


SOURCE_STYLE = DomainStyle(
    name="source",
    palette=((0.25, 0.25, 0.30), (0.85, 0.30, 0.25), (0.30, 0.75, 0.35), (0.30, 0.40, 0.85)),
    noise=0.08, blur=0, brightness=0.0, contrast=1.0, texture_amp=0.08, texture_freq=0.2,
)

TARGET_STYLE = DomainStyle(
    name="target",
    palette=((0.35, 0.30, 0.25), (0.85, 0.60, 0.20), (0.25, 0.65, 0.65), (0.55, 0.35, 0.80)),
    noise=0.15, blur=3, brightness=0.0, contrast=1.0, texture_amp=0.15, texture_freq=0.2,
)

PRESETS = {"source": SOURCE_STYLE, "target": TARGET_STYLE,
           "source_style": SOURCE_STYLE, "target_style": TARGET_STYLE}


def get_style(style):
    if isinstance(style, DomainStyle):
        return style
    if isinstance(style, str):
        return PRESETS[style]
    return DomainStyle.from_dict(style)


def generate_scene(seed, spec=GeneratorSpec()):
    """Label grid fully determined by ``(seed, spec)``; background is class 0."""
    spec.validate()
    rng = np.random.default_rng([seed, 0x5CE])
    h, w = spec.height, spec.width
    labels = np.zeros((h, w), dtype=np.int64)
    yy, xx = np.mgrid[0:h, 0:w]
    shapes = []
    n = int(rng.integers(spec.min_shapes, spec.max_shapes + 1))
    classes = list(rng.integers(1, spec.num_classes, size=n))
    if spec.all_classes and spec.max_shapes > 0:
        n = max(n, spec.num_classes - 1)
        forced = list(rng.permutation(np.arange(1, spec.num_classes)))
        classes = list(rng.integers(1, spec.num_classes, size=n - len(forced))) + forced
    for k in range(n):
        cls = int(classes[k])
        kind = "rect" if rng.random() < 0.5 else "disc"
        sh, sw = (int(v) for v in rng.integers(spec.min_size, spec.max_size + 1, size=2))
        if kind == "disc":
            sw = sh
        cy, cx = int(rng.integers(0, h)), int(rng.integers(0, w))
        shapes.append(Shape(kind, cls, cy, cx, sh, sw))
        if kind == "rect":
            mask = (np.abs(yy - cy) * 2 < sh) & (np.abs(xx - cx) * 2 < sw)
        else:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < (sh / 2.0) ** 2
        labels[mask] = cls
    return Scene(labels, seed, shapes)


def render_domain(scene, style, render_seed, clamp=True):
    """Render a scene as a (3, H, W) image in [0, 1] (unclamped when ``clamp`` is false)."""
    style = get_style(style)
    style.validate()
    pal = np.asarray(style.palette, dtype=np.float64)
    lab = scene.labels
    if lab.max() >= len(pal):
        raise ValueError(f"style {style.name!r} has {len(pal)} colors, scene uses class {lab.max()}")
    rng = np.random.default_rng([render_seed, 0xD0])
    h, w = lab.shape
    img = pal[lab].transpose(2, 0, 1).copy()
    if style.texture_amp > 0:
        yy, xx = np.mgrid[0:h, 0:w]
        theta = np.pi * lab / len(pal)  # class-dependent orientation
        phase = 2 * np.pi * style.texture_freq * (xx * np.cos(theta) + yy * np.sin(theta))
        img += style.texture_amp * np.sin(phase)[None]
    if style.noise > 0:
        img += rng.normal(0.0, style.noise, size=img.shape)
    if style.blur > 1:
        img = uniform_filter(img, size=(1, style.blur, style.blur), mode="nearest")
    img = (img - 0.5) * style.contrast + 0.5 + style.brightness
    return np.clip(img, 0.0, 1.0) if clamp else img


def downsample_labels(labels, factor=4):
    """Nearest-neighbour downsampling taking the top-left pixel of each cell."""
    lab = np.asarray(labels)
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor!r}")
    if lab.shape[-2] % factor or lab.shape[-1] % factor:
        raise ValueError(f"label shape {lab.shape} not divisible by {factor}")
    return lab[..., ::factor, ::factor].copy()


# ---------------------------------------------------------------------------
# datasets


class Item(NamedTuple):
    image: np.ndarray  # (3, H, W)
    labels: np.ndarray  # (H, W) int
    scene_seed: int
    render_seed: int


@dataclass
class SplitSpec:
    count: int
    seed_start: int
    style: str = "source"
    render_offset: int = 1_000_000


@dataclass
class BenchmarkSpec:
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    styles: dict = field(default_factory=lambda: {"source": SOURCE_STYLE.as_dict(),
                                                  "target": TARGET_STYLE.as_dict()})
    splits: dict = field(default_factory=lambda: {
        "source_train": SplitSpec(200, 0, "source"),
        "target_train": SplitSpec(200, 100_000, "target"),
        "target_test": SplitSpec(100, 200_000, "target"),
    })

    @classmethod
    def from_dict(cls, d):
        out = cls()
        if "generator" in d:
            out.generator = GeneratorSpec(**d["generator"])
        if "styles" in d:
            out.styles = {**out.styles, **d["styles"]}
        if "splits" in d:
            out.splits = {k: SplitSpec(**v) for k, v in d["splits"].items()}
        return out

    def as_dict(self):
        return {"generator": asdict(self.generator), "styles": self.styles,
                "splits": {k: asdict(v) for k, v in self.splits.items()}}


def generate_split(split, gen, style):
    style = get_style(style)
    items = []
    for k in range(split.count):
        seed = split.seed_start + k
        scene = generate_scene(seed, gen)
        rseed = seed + split.render_offset
        items.append(Item(render_domain(scene, style, rseed), scene.labels, seed, rseed))
    return items


def write_dataset(path, items, meta=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, it in enumerate(items):
        img, lbl = f"img_{k:05d}.plt1", f"lbl_{k:05d}.plt1"
        plt1.save(path / img, it.image)
        plt1.save(path / lbl, np.asarray(it.labels, dtype=np.float64))
        entries.append({"image": img, "label": lbl, "scene_seed": int(it.scene_seed),
                        "render_seed": int(it.render_seed)})
    manifest = {"count": len(items), "items": entries, **(meta or {})}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def read_manifest(path):
    mf = Path(path) / "manifest.json"
    if not mf.exists():
        raise FileNotFoundError(f"no dataset manifest at {mf}")
    manifest = json.loads(mf.read_text())
    if manifest.get("count") != len(manifest.get("items", [])):
        raise ValueError(f"{mf}: count does not match the item list")
    return manifest


def read_dataset(path):
    path = Path(path)
    manifest = read_manifest(path)
    items = []
    for e in manifest["items"]:
        img = plt1.load(path / e["image"])
        lbl = plt1.load(path / e["label"])
        if img.ndim != 3 or img.shape[0] != 3 or lbl.shape != img.shape[1:]:
            raise plt1.PLT1Error(path / e["image"], f"image {img.shape} / label {lbl.shape} mismatch")
        items.append(Item(img, lbl.astype(np.int64), e["scene_seed"], e["render_seed"]))
    return items


def regenerate(path):
    """Re-render a written split from the generator and style recorded in its manifest."""
    manifest = read_manifest(path)
    gen = GeneratorSpec(**manifest["generator"])
    style = DomainStyle.from_dict(manifest["style"])
    return [Item(render_domain(generate_scene(e["scene_seed"], gen), style, e["render_seed"]),
                 generate_scene(e["scene_seed"], gen).labels, e["scene_seed"], e["render_seed"])
            for e in manifest["items"]]


def write_benchmark(out, spec=BenchmarkSpec(), export_ppm=4):
    """Generate every split into ``out/<split>/``; returns ``{split: manifest}``."""
    out = Path(out)
    gen = spec.generator
    gen.validate()
    _check_disjoint(spec.splits)
    result = {}
    for name, split in spec.splits.items():
        style = get_style(spec.styles.get(split.style, split.style))
        items = generate_split(split, gen, style)
        meta = {"split": name, "generator": asdict(gen), "style": style.as_dict(),
                "num_classes": gen.num_classes, "ignore_index": IGNORE_INDEX}
        result[name] = write_dataset(out / name, items, meta)
        for k, it in enumerate(items[:export_ppm]):
            ppm.write_ppm(out / name / f"img_{k:05d}.ppm", ppm.image_to_rgb(it.image))
            ppm.write_ppm(out / name / f"lbl_{k:05d}.ppm", ppm.labels_to_rgb(it.labels))
    (out / "benchmark.json").write_text(json.dumps(spec.as_dict(), indent=2))
    return result


def _check_disjoint(splits):
    ranges = sorted((s.seed_start, s.seed_start + s.count, n) for n, s in splits.items())
    for (a0, a1, an), (b0, b1, bn) in zip(ranges, ranges[1:]):
        if b0 < a1:
            raise ValueError(f"splits {an!r} and {bn!r} share layout seeds")
