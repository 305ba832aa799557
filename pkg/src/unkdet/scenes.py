"""Synthetic two-domain detection benchmark.

Scenes are 64x64 RGB images of simple shapes on a textured background.
Known classes (both domains): 1 square, 2 circle, 3 triangle.  Novel classes
(target domain only): 4 cross, 5 ring.  Target scenes additionally receive a
fog blend toward gray plus pixel noise, standing in for a weather shift.

Datasets serialize to ``manifest.json`` plus ``images.bin`` (little-endian
float32, one C x H x W record per scene); images are float32 end to end so
a round trip is bit-identical.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, UsageError
from .model import Box

KNOWN_CLASSES = {1: "square", 2: "circle", 3: "triangle"}
NOVEL_CLASSES = {4: "cross", 5: "ring"}

_BASE_COLORS = {
    1: (0.85, 0.20, 0.20),
    2: (0.20, 0.80, 0.25),
    3: (0.20, 0.30, 0.90),
    4: (0.90, 0.85, 0.20),
    5: (0.80, 0.20, 0.80),
}

_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 64
    min_objects: int = 1
    max_objects: int = 5
    max_overlap: float = 0.3    # pairwise IoU ceiling between placed boxes
    min_shape: int = 10         # pixels
    max_shape: int = 22
    fog_low: float = 0.3
    fog_high: float = 0.5
    fog_gray: float = 0.7
    noise_sigma: float = 0.02

    def __post_init__(self):
        if not 1 <= self.min_objects <= self.max_objects:
            raise ConfigError("need 1 <= min_objects <= max_objects")
        if not 2 <= self.min_shape <= self.max_shape < self.image_size:
            raise ConfigError("shape size range invalid")


@dataclass(frozen=True)
class DataConfig:
    source_train: int = 2000
    target_train: int = 1000
    target_eval: int = 300
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)


@dataclass(frozen=True)
class Scene:
    image: np.ndarray       # 3 x S x S float32 in [0,1]
    classes: np.ndarray     # (n,) ints in 1..5
    boxes: np.ndarray       # (n,4) normalized cx,cy,w,h
    domain: str             # "source" | "target"

    @property
    def annotations(self) -> list[tuple[Box, int]]:
        return [(Box(*b), int(c)) for b, c in zip(self.boxes, self.classes)]


def _shape_mask(kind: str, size: int, span: int) -> np.ndarray:
    """Boolean pixel mask of one shape on a span x span canvas, centered."""
    c = (span - 1) / 2.0
    yy, xx = np.mgrid[0:span, 0:span].astype(np.float64)
    dx, dy = xx - c, yy - c
    half = size / 2.0
    if kind == "square":
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if kind == "circle":
        return dx * dx + dy * dy <= half * half
    if kind == "triangle":
        # apex up: width grows linearly from the top edge
        top = dy + half
        return (top >= 0) & (dy <= half) & (np.abs(dx) <= top / 2.0)
    if kind == "cross":
        arm = max(size / 6.0, 1.0)
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= half)) | (
            (np.abs(dy) <= arm) & (np.abs(dx) <= half)
        )
    if kind == "ring":
        d2 = dx * dx + dy * dy
        inner = 0.55 * half
        return (d2 <= half * half) & (d2 >= inner * inner)
    raise ConfigError(f"unknown shape kind {kind!r}")


def _mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask)
    return xs.min(), ys.min(), xs.max(), ys.max()


def _iou_xyxy(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def generate_scene(rng: np.random.Generator, domain: str,
                   config: SceneConfig = SceneConfig(),
                   return_masks: bool = False):
    """One scene with 1..5 non-overlapping shapes; target gets fog + noise."""
    if domain not in ("source", "target"):
        raise ConfigError(f"unknown domain {domain!r}")
    s = config.image_size
    names = dict(KNOWN_CLASSES)
    if domain == "target":
        names.update(NOVEL_CLASSES)
    class_ids = sorted(names)

    # textured background: muted base color plus two soft gradients
    base = rng.uniform(0.08, 0.30, 3)
    ramp = np.linspace(0.0, 1.0, s)
    image = (
        base[:, None, None]
        + rng.uniform(-0.05, 0.05, 3)[:, None, None] * ramp[None, :, None]
        + rng.uniform(-0.05, 0.05, 3)[:, None, None] * ramp[None, None, :]
    )
    image = np.clip(image, 0.0, 1.0)

    count = int(rng.integers(config.min_objects, config.max_objects + 1))
    classes: list[int] = []
    boxes_px: list[tuple[int, int, int, int]] = []
    masks: list[np.ndarray] = []
    for _ in range(count):
        for _attempt in range(40):
            cls = int(class_ids[rng.integers(len(class_ids))])
            size = int(rng.integers(config.min_shape, config.max_shape + 1))
            span = size + 2
            stamp = _shape_mask(names[cls], size, span)
            x0 = int(rng.integers(0, s - span + 1))
            y0 = int(rng.integers(0, s - span + 1))
            full = np.zeros((s, s), dtype=bool)
            full[y0:y0 + span, x0:x0 + span] = stamp
            bx0, by0, bx1, by1 = _mask_bbox(full)
            bbox = (bx0, by0, bx1 + 1, by1 + 1)  # half-open pixel bounds
            if all(_iou_xyxy(bbox, prev) <= config.max_overlap for prev in boxes_px):
                color = np.clip(
                    np.asarray(_BASE_COLORS[cls]) + rng.uniform(-0.05, 0.05, 3),
                    0.0, 1.0,
                )
                image[:, full] = color[:, None]
                classes.append(cls)
                boxes_px.append(bbox)
                masks.append(full)
                break

    if domain == "target":
        fog = rng.uniform(config.fog_low, config.fog_high)
        image = (1.0 - fog) * image + fog * config.fog_gray
        image = image + rng.normal(0.0, config.noise_sigma, image.shape)
    image = np.clip(image, 0.0, 1.0)

    boxes = np.array(
        [
            [(x0 + x1) / 2.0 / s, (y0 + y1) / 2.0 / s, (x1 - x0) / s, (y1 - y0) / s]
            for x0, y0, x1, y1 in boxes_px
        ]
    ).reshape(-1, 4)
    scene = Scene(
        image=image.astype(np.float32),
        classes=np.asarray(classes, dtype=np.intp),
        boxes=boxes,
        domain=domain,
    )
    return (scene, masks) if return_masks else scene


def _record_bytes(config: SceneConfig) -> int:
    return 3 * config.image_size * config.image_size * 4


def render_dataset(config: DataConfig, out_dir) -> dict:
    """Generate all splits and write manifest.json + images.bin; returns manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create dataset directory {out}: {exc}") from exc
    rng = np.random.default_rng(config.seed)
    plan = [
        ("source_train", "source", config.source_train),
        ("target_train", "target", config.target_train),
        ("target_eval", "target", config.target_eval),
    ]
    records = []
    offset = 0
    length = _record_bytes(config.scene)
    try:
        with open(out / "images.bin", "wb") as blob:
            for split, domain, count in plan:
                for _ in range(count):
                    scene = generate_scene(rng, domain, config.scene)
                    raw = np.ascontiguousarray(scene.image, dtype="<f4").tobytes()
                    blob.write(raw)
                    records.append({
                        "offset": offset,
                        "length": length,
                        "split": split,
                        "domain": domain,
                        "classes": [int(c) for c in scene.classes],
                        "boxes": [[float(v) for v in row] for row in scene.boxes],
                    })
                    offset += length
        manifest = {
            "version": _FORMAT_VERSION,
            "config": asdict(config),
            "image_shape": [3, config.scene.image_size, config.scene.image_size],
            "records": records,
        }
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise UsageError(f"cannot write dataset under {out}: {exc}") from exc
    return manifest


def load_dataset(data_dir, split: str | None = None) -> list[Scene]:
    """Read scenes back; optionally filter to one split."""
    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise UsageError(f"no manifest.json under {root}; run gen-data first")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    shape = tuple(manifest["image_shape"])
    blob = (root / "images.bin").read_bytes()
    scenes = []
    for rec in manifest["records"]:
        if split is not None and rec["split"] != split:
            continue
        raw = blob[rec["offset"]:rec["offset"] + rec["length"]]
        image = np.frombuffer(raw, dtype="<f4").reshape(shape)
        scenes.append(Scene(
            image=image,
            classes=np.asarray(rec["classes"], dtype=np.intp),
            boxes=np.asarray(rec["boxes"], dtype=np.float64).reshape(-1, 4),
            domain=rec["domain"],
        ))
    if split is not None and not scenes:
        raise UsageError(f"split {split!r} has no records in {root}")
    return scenes
