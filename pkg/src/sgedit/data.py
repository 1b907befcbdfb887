"""CLEVR-lite synthetic scenes: renderer, geometric relations, dataset storage.

Scenes are 64x64 RGB canvases with 2-5 anti-aliased shapes (square, circle,
triangle) in an 8-color palette at two sizes. Ground truth comes for free:
tight boxes from the rendered masks and predicate edges from center geometry.

Directory layout: ``images/*.png``, ``graphs/*.json``, ``masks/*.png``,
``vocab.json``, ``manifest.json``. Masks are 8-bit PNGs with values 0/255.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .graph import (
    Edge,
    GraphValidationError,
    Node,
    SceneGraph,
    Vocabulary,
    graph_from_dict,
    graph_to_dict,
)

SHAPES = ("square", "circle", "triangle")
COLORS = (
    ("red", (214, 48, 49)),
    ("green", (0, 168, 107)),
    ("blue", (9, 132, 227)),
    ("yellow", (253, 203, 58)),
    ("purple", (108, 92, 231)),
    ("cyan", (0, 206, 201)),
    ("orange", (230, 126, 34)),
    ("white", (236, 240, 241)),
)
SIZES = (("small", 5.0), ("large", 9.0))
BACKGROUND_CLASS = "background"
BACKGROUND_RGB = (96, 96, 96)
PREDICATES = ("left of", "right of", "above", "below")


class DatasetError(RuntimeError):
    """Missing or inconsistent dataset files."""


@dataclass
class SynthConfig:
    canvas: int = 64
    min_objects: int = 2
    max_objects: int = 5
    min_center_distance: float = 6.0
    supersample: int = 4
    edge_max_distance: float = 40.0
    max_edges: int = 8


@dataclass
class SceneObject:
    shape: str
    color: str
    size: str
    center: tuple[float, float]


@dataclass
class DatasetRecord:
    image: np.ndarray  # uint8 (H, W, 3)
    graph: SceneGraph
    masks: list[np.ndarray]  # uint8 (H, W), values 0/255
    objects: list[SceneObject] = field(default_factory=list)


def build_vocabulary() -> Vocabulary:
    """48 object classes (size x color x shape) plus a background class."""
    objects = [
        f"{size} {color} {shape}"
        for shape in SHAPES
        for color, _ in COLORS
        for size, _ in SIZES
    ]
    objects.append(BACKGROUND_CLASS)
    return Vocabulary(objects=objects, predicates=list(PREDICATES))


def class_name(shape: str, color: str, size: str) -> str:
    return f"{size} {color} {shape}"


def relation_of(center_a: tuple[float, float], center_b: tuple[float, float]) -> str:
    """Predicate from a's viewpoint; ties between axes resolve to the x axis."""
    dx = center_b[0] - center_a[0]
    dy = center_b[1] - center_a[1]
    if abs(dx) >= abs(dy):
        return "left of" if dx > 0 else "right of"
    return "above" if dy > 0 else "below"


def _shape_coverage(shape: str, cx: float, cy: float, radius: float, xs, ys) -> np.ndarray:
    if shape == "square":
        return (np.abs(xs - cx) <= radius) & (np.abs(ys - cy) <= radius)
    if shape == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2
    if shape == "triangle":
        v0 = (cx, cy - radius)
        v1 = (cx + 0.866 * radius, cy + 0.5 * radius)
        v2 = (cx - 0.866 * radius, cy + 0.5 * radius)

        def half_plane(a, b):
            return (b[0] - a[0]) * (ys - a[1]) - (b[1] - a[1]) * (xs - a[0])

        d0, d1, d2 = half_plane(v0, v1), half_plane(v1, v2), half_plane(v2, v0)
        return (d0 >= 0) & (d1 >= 0) & (d2 >= 0)
    raise ValueError(f"unknown shape {shape!r}")


def _downsample(block: np.ndarray, factor: int) -> np.ndarray:
    h, w = block.shape[:2]
    view = block.reshape(h // factor, factor, w // factor, factor, -1)
    return view.mean(axis=(1, 3)).squeeze(-1) if block.ndim == 2 else view.mean(axis=(1, 3))


def render_scene(objects: list[SceneObject], cfg: SynthConfig) -> tuple[np.ndarray, list[np.ndarray]]:
    """Rasterize at supersampled resolution, then box-average down."""
    ss = cfg.supersample
    side = cfg.canvas * ss
    ys, xs = np.mgrid[0:side, 0:side]
    xs = (xs + 0.5) / ss
    ys = (ys + 0.5) / ss
    canvas = np.empty((side, side, 3), dtype=np.float64)
    canvas[:] = np.asarray(BACKGROUND_RGB, dtype=np.float64) / 255.0

    sizes = dict(SIZES)
    colors = dict(COLORS)
    coverages = []
    for obj in objects:
        cov = _shape_coverage(obj.shape, obj.center[0], obj.center[1], sizes[obj.size], xs, ys)
        coverages.append(cov)
        canvas[cov] = np.asarray(colors[obj.color], dtype=np.float64) / 255.0

    image = _downsample(canvas, ss)
    image_u8 = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    masks = []
    for cov in coverages:
        soft = _downsample(cov.astype(np.float64), ss)
        masks.append(np.where(soft >= 0.5, 255, 0).astype(np.uint8))
    return image_u8, masks


def _tight_bbox(mask: np.ndarray, canvas: int) -> tuple[float, float, float, float]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1]) + 1
    x0, x1 = int(cols[0]), int(cols[-1]) + 1
    return (x0 / canvas, y0 / canvas, x1 / canvas, y1 / canvas)


def derive_edges(objects: list[SceneObject], vocab: Vocabulary, cfg: SynthConfig) -> list[Edge]:
    pairs = []
    for i, a in enumerate(objects):
        for j, b in enumerate(objects):
            if i == j:
                continue
            dist = float(np.hypot(b.center[0] - a.center[0], b.center[1] - a.center[1]))
            if dist <= cfg.edge_max_distance:
                pairs.append((dist, i, j))
    pairs.sort()
    edges = []
    for dist, i, j in pairs[: cfg.max_edges]:
        pred = relation_of(objects[i].center, objects[j].center)
        edges.append(Edge(subject_idx=i, predicate_id=vocab.predicate_id(pred), object_idx=j))
    return edges


def sample_objects(rng: np.random.Generator, cfg: SynthConfig) -> list[SceneObject]:
    count = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    sizes = dict(SIZES)
    objects: list[SceneObject] = []
    attempts = 0
    while len(objects) < count:
        attempts += 1
        if attempts > 1000:
            raise RuntimeError("could not place objects with the required spacing")
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        color = COLORS[int(rng.integers(len(COLORS)))][0]
        size = SIZES[int(rng.integers(len(SIZES)))][0]
        margin = sizes[size] + 2.0
        cx = float(rng.uniform(margin, cfg.canvas - margin))
        cy = float(rng.uniform(margin, cfg.canvas - margin))
        if any(
            np.hypot(cx - o.center[0], cy - o.center[1]) < cfg.min_center_distance
            for o in objects
        ):
            continue
        objects.append(SceneObject(shape=shape, color=color, size=size, center=(cx, cy)))
    return objects


def generate_scene(
    rng: np.random.Generator,
    cfg: Optional[SynthConfig] = None,
    vocab: Optional[Vocabulary] = None,
) -> DatasetRecord:
    cfg = cfg or SynthConfig()
    vocab = vocab or build_vocabulary()
    objects = sample_objects(rng, cfg)
    image, masks = render_scene(objects, cfg)
    nodes = [
        Node(
            class_id=vocab.object_id(class_name(o.shape, o.color, o.size)),
            bbox=_tight_bbox(mask, cfg.canvas),
        )
        for o, mask in zip(objects, masks)
    ]
    graph = SceneGraph(nodes=nodes, edges=derive_edges(objects, vocab, cfg))
    graph.validate(vocab)
    return DatasetRecord(image=image, graph=graph, masks=masks, objects=objects)


# --------------------------------------------------------------------------
# storage


def _record_id(index: int) -> str:
    return f"scene_{index:05d}"


class Dataset:
    """Handle over an on-disk dataset; records load lazily by index."""

    def __init__(self, root: str):
        self.root = root
        vocab_path = os.path.join(root, "vocab.json")
        manifest_path = os.path.join(root, "manifest.json")
        if not os.path.exists(vocab_path):
            raise DatasetError(f"missing vocab.json under {root}")
        if not os.path.exists(manifest_path):
            raise DatasetError(f"missing manifest.json under {root}")
        with open(vocab_path) as fh:
            self.vocab = Vocabulary.from_dict(json.load(fh))
        with open(manifest_path) as fh:
            self.manifest = json.load(fh)
        for key in ("count", "ids", "image_size", "channel_mean", "channel_std"):
            if key not in self.manifest:
                raise DatasetError(f"manifest.json missing {key!r}")
        if len(self.manifest["ids"]) != self.manifest["count"]:
            raise DatasetError("manifest count does not match its id list")
        self.image_size = int(self.manifest["image_size"])
        self.channel_mean = np.asarray(self.manifest["channel_mean"], dtype=np.float32)
        self.channel_std = np.asarray(self.manifest["channel_std"], dtype=np.float32)

    def __len__(self) -> int:
        return int(self.manifest["count"])

    def ids(self) -> list[str]:
        return list(self.manifest["ids"])

    def load(self, index: int) -> DatasetRecord:
        rid = self.manifest["ids"][index]
        image = np.asarray(Image.open(os.path.join(self.root, "images", f"{rid}.png")).convert("RGB"))
        with open(os.path.join(self.root, "graphs", f"{rid}.json")) as fh:
            graph = graph_from_dict(json.load(fh), self.vocab)
        masks = []
        k = 0
        while True:
            path = os.path.join(self.root, "masks", f"{rid}_{k:02d}.png")
            if not os.path.exists(path):
                break
            masks.append(np.asarray(Image.open(path).convert("L")))
            k += 1
        return DatasetRecord(image=image, graph=graph, masks=masks)

    def normalize(self, image_u8: np.ndarray) -> np.ndarray:
        """uint8 HWC -> standardized float32 CHW (zero mean, unit variance)."""
        img = image_u8.astype(np.float32) / 255.0
        img = (img - self.channel_mean) / self.channel_std
        return np.ascontiguousarray(img.transpose(2, 0, 1))

    def denormalize(self, image_chw: np.ndarray) -> np.ndarray:
        """Standardized float CHW -> float HWC clipped to [0, 1]."""
        img = np.asarray(image_chw).transpose(1, 2, 0)
        img = img * self.channel_std + self.channel_mean
        return np.clip(img, 0.0, 1.0)


def write_dataset(
    records: Iterable[DatasetRecord],
    out_dir: str,
    vocab: Vocabulary,
    seed: Optional[int] = None,
) -> Dataset:
    for sub in ("images", "graphs", "masks"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    ids = []
    mean_acc = np.zeros(3, dtype=np.float64)
    sq_acc = np.zeros(3, dtype=np.float64)
    pixels = 0
    image_size = None
    for index, record in enumerate(records):
        rid = record.graph.image_id or _record_id(index)
        record.graph.image_id = rid
        ids.append(rid)
        image_size = record.image.shape[0]
        Image.fromarray(record.image).save(os.path.join(out_dir, "images", f"{rid}.png"))
        with open(os.path.join(out_dir, "graphs", f"{rid}.json"), "w") as fh:
            json.dump(graph_to_dict(record.graph, vocab), fh, indent=1)
        for k, mask in enumerate(record.masks):
            Image.fromarray(mask, mode="L").save(
                os.path.join(out_dir, "masks", f"{rid}_{k:02d}.png")
            )
        img = record.image.astype(np.float64) / 255.0
        mean_acc += img.sum(axis=(0, 1))
        sq_acc += (img**2).sum(axis=(0, 1))
        pixels += img.shape[0] * img.shape[1]
    if not ids:
        raise DatasetError("refusing to write an empty dataset")
    mean = mean_acc / pixels
    std = np.sqrt(np.maximum(sq_acc / pixels - mean**2, 1e-8))
    manifest = {
        "format_version": 1,
        "count": len(ids),
        "ids": ids,
        "image_size": int(image_size),
        "channel_mean": [float(v) for v in mean],
        "channel_std": [float(v) for v in std],
        "seed": seed,
    }
    with open(os.path.join(out_dir, "vocab.json"), "w") as fh:
        json.dump(vocab.to_dict(), fh, indent=1)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
    return Dataset(out_dir)


def read_dataset(root: str) -> Dataset:
    return Dataset(root)


def generate_dataset(
    n: int,
    seed: int,
    out_dir: str,
    cfg: Optional[SynthConfig] = None,
) -> Dataset:
    """Render n scenes with per-record seeds derived from the master seed."""
    cfg = cfg or SynthConfig()
    vocab = build_vocabulary()
    children = np.random.SeedSequence(seed).spawn(n)
    records = (
        generate_scene(np.random.default_rng(child), cfg, vocab) for child in children
    )
    return write_dataset(records, out_dir, vocab, seed=seed)


def import_external(src_dir: str, out_dir: str, target_size: int = 64) -> Dataset:
    """Validate a dataset exported in the shared format and normalize it.

    Images are resized to ``target_size`` and the manifest's normalization
    statistics are recomputed. Records with out-of-range boxes are rejected
    with the offending index in the error.
    """
    vocab_path = os.path.join(src_dir, "vocab.json")
    if not os.path.exists(vocab_path):
        raise DatasetError(f"missing vocab.json under {src_dir}")
    with open(vocab_path) as fh:
        vocab = Vocabulary.from_dict(json.load(fh))
    graphs_dir = os.path.join(src_dir, "graphs")
    images_dir = os.path.join(src_dir, "images")
    if not (os.path.isdir(graphs_dir) and os.path.isdir(images_dir)):
        raise DatasetError(f"{src_dir} lacks images/ or graphs/")
    ids = sorted(os.path.splitext(name)[0] for name in os.listdir(graphs_dir))

    def records():
        for index, rid in enumerate(ids):
            with open(os.path.join(graphs_dir, f"{rid}.json")) as fh:
                data = json.load(fh)
            try:
                graph = graph_from_dict(data, vocab)
            except GraphValidationError as exc:
                raise DatasetError(f"record {index} ({rid}): {exc}") from exc
            image = Image.open(os.path.join(images_dir, f"{rid}.png")).convert("RGB")
            if image.size != (target_size, target_size):
                image = image.resize((target_size, target_size), Image.BILINEAR)
            graph.image_id = rid
            masks = []
            k = 0
            while True:
                path = os.path.join(src_dir, "masks", f"{rid}_{k:02d}.png")
                if not os.path.exists(path):
                    break
                m = Image.open(path).convert("L")
                if m.size != (target_size, target_size):
                    m = m.resize((target_size, target_size), Image.NEAREST)
                masks.append(np.asarray(m))
                k += 1
            yield DatasetRecord(image=np.asarray(image), graph=graph, masks=masks)

    return write_dataset(records(), out_dir, vocab)
