"""Datasets: manifest files, ground truth, splitting, self-labeling and synthetic scenes.

Manifest lines look like

    images/a_00001.png;stop_sign=0.531250,0.187500,0.781250,0.437500;car=...

with boxes in normalized [0, 1] coordinates printed at 6 decimals. Lines
starting with '#' are comments. Two optional comment directives carry
metadata: ``#! classes=a,b,c`` declares the class dictionary and
``#! source=tag`` sets the source tag of the records that follow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from PIL import Image

from .boxes import iou, pairwise_iou


class ManifestError(ValueError):
    pass


class SplitError(ValueError):
    pass


# -- in-memory ground truth --------------------------------------------------

@dataclass(frozen=True)
class GroundTruth:
    """Boxes (k, 4) in pixels and integer class labels (k,) for one image."""

    boxes: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(boxes) != len(labels):
            raise ValueError("boxes and labels differ in length")
        if len(boxes) and not np.all((boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])):
            raise ValueError("ground-truth boxes must have positive area")
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    def is_target(self, target_class: int) -> np.ndarray:
        return self.labels == target_class

    def check_bounds(self, width: int, height: int) -> None:
        b = self.boxes
        if len(b) and (b[:, 0].min() < 0 or b[:, 1].min() < 0 or b[:, 2].max() > width or b[:, 3].max() > height):
            raise ValueError(f"ground-truth box outside the {width}x{height} frame")

    @classmethod
    def empty(cls) -> "GroundTruth":
        return cls(np.zeros((0, 4)), np.zeros(0, dtype=np.int64))


@dataclass
class SceneSet:
    """A batch-ready dataset: images (N, 3, H, W) in [0, 1] plus per-image ground truth."""

    images: torch.Tensor
    truths: list[GroundTruth]
    class_names: tuple[str, ...]
    ids: list[str] = field(default_factory=list)
    sources: list[str] = field(default_factory=list)

    def __post_init__(self):
        n = self.images.shape[0]
        if not self.ids:
            self.ids = [f"scene_{k:05d}" for k in range(n)]
        if not self.sources:
            self.sources = ["unknown"] * n
        if not (len(self.truths) == len(self.ids) == len(self.sources) == n):
            raise ValueError("SceneSet fields have inconsistent lengths")
        self.class_names = tuple(self.class_names)

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return int(self.images.shape[-1]), int(self.images.shape[-2])

    def subset(self, indices: Sequence[int]) -> "SceneSet":
        idx = list(indices)
        return SceneSet(
            self.images[idx] if idx else self.images[:0],
            [self.truths[i] for i in idx],
            self.class_names,
            [self.ids[i] for i in idx],
            [self.sources[i] for i in idx],
        )

    def batches(self, batch_size: int, generator: torch.Generator | None = None):
        """Yield (indices, images, truths); shuffled when a generator is given."""
        n = len(self)
        order = torch.randperm(n, generator=generator).tolist() if generator is not None else list(range(n))
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            yield idx, self.images[idx], [self.truths[i] for i in idx]

    def class_id(self, name: str) -> int:
        return self.class_names.index(name)


def concat_scenes(parts: Sequence[SceneSet]) -> SceneSet:
    return SceneSet(
        torch.cat([p.images for p in parts]),
        [t for p in parts for t in p.truths],
        parts[0].class_names,
        [i for p in parts for i in p.ids],
        [s for p in parts for s in p.sources],
    )


# -- manifest ----------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    objects: tuple[tuple[str, tuple[float, float, float, float]], ...]
    source: str = "default"


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    class_names: tuple[str, ...]
    source: str = "default"
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.records)

    def resolve(self, record: ManifestRecord) -> Path:
        p = Path(record.image_path)
        return p if p.is_absolute() or self.root is None else self.root / p


def _format_box(box) -> str:
    return ",".join(f"{v:.6f}" for v in box)


def format_manifest(manifest: DatasetManifest) -> str:
    lines = [f"#! classes={','.join(manifest.class_names)}"]
    current = None
    for rec in manifest.records:
        if rec.source != current:
            lines.append(f"#! source={rec.source}")
            current = rec.source
        fields = [rec.image_path] + [f"{name}={_format_box(box)}" for name, box in rec.objects]
        lines.append(";".join(fields))
    return "\n".join(lines) + "\n"


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_manifest(manifest), encoding="utf-8")
    return path


def load_manifest(path: str | Path, class_names: Sequence[str] | None = None,
                  source: str | None = None, check_images: bool = True) -> DatasetManifest:
    """Parse and validate a manifest file.

    The class dictionary comes from `class_names`, else from a ``#! classes=``
    directive, else it is collected from the records in order of appearance.
    """
    path = Path(path)
    root = path.parent
    declared = tuple(class_names) if class_names is not None else None
    current_source = source or path.stem
    records: list[ManifestRecord] = []
    seen: list[str] = []

    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("#!"):
                key, _, value = line[2:].strip().partition("=")
                if key.strip() == "classes" and class_names is None:
                    declared = tuple(v.strip() for v in value.split(",") if v.strip())
                elif key.strip() == "source" and source is None:
                    current_source = value.strip()
            continue
        parts = line.split(";")
        image_path = parts[0].strip()
        if not image_path:
            raise ManifestError(f"{path}:{lineno}: missing image path")
        objects = []
        for item in parts[1:]:
            name, sep, coords = item.partition("=")
            name = name.strip()
            if not sep or not name:
                raise ManifestError(f"{path}:{lineno}: malformed object entry {item!r}")
            try:
                box = tuple(float(v) for v in coords.split(","))
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: non-numeric box {coords!r}") from None
            if len(box) != 4:
                raise ManifestError(f"{path}:{lineno}: box needs 4 values, got {len(box)}")
            x0, y0, x1, y1 = box
            if not all(0.0 <= v <= 1.0 for v in box):
                raise ManifestError(f"{path}:{lineno}: box {box} outside [0, 1]")
            if x1 <= x0 or y1 <= y0:
                raise ManifestError(f"{path}:{lineno}: invalid box {box} (needs x_min < x_max and y_min < y_max)")
            if declared is not None and name not in declared:
                raise ManifestError(f"{path}:{lineno}: unknown class name {name!r}")
            if name not in seen:
                seen.append(name)
            objects.append((name, box))
        if check_images and not (root / image_path).exists() and not Path(image_path).is_absolute():
            raise ManifestError(f"{path}:{lineno}: missing image file {image_path}")
        if check_images and Path(image_path).is_absolute() and not Path(image_path).exists():
            raise ManifestError(f"{path}:{lineno}: missing image file {image_path}")
        records.append(ManifestRecord(image_path, tuple(objects), current_source))

    names = declared if declared is not None else tuple(seen)
    return DatasetManifest(records, names, source or path.stem, root)


def load_image(path: str | Path) -> torch.Tensor:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def save_image(image: torch.Tensor, path: str | Path) -> None:
    arr = np.round(image.detach().cpu().clamp(0, 1).numpy().transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path)


def _truth_from_record(rec: ManifestRecord, names: Sequence[str], width: int, height: int) -> GroundTruth:
    if not rec.objects:
        return GroundTruth.empty()
    scale = np.array([width, height, width, height], dtype=np.float64)
    boxes = np.array([box for _, box in rec.objects], dtype=np.float64) * scale
    labels = np.array([list(names).index(n) for n, _ in rec.objects], dtype=np.int64)
    return GroundTruth(boxes, labels)


def scenes_from_manifest(manifest: DatasetManifest, images: torch.Tensor | None = None) -> SceneSet:
    """Attach images (loaded from disk unless given) to the manifest's boxes."""
    if images is None:
        if not manifest.records:
            raise ManifestError("manifest has no records")
        images = torch.stack([load_image(manifest.resolve(r)) for r in manifest.records])
    height, width = images.shape[-2:]
    truths = [_truth_from_record(r, manifest.class_names, width, height) for r in manifest.records]
    ids = [Path(r.image_path).stem for r in manifest.records]
    return SceneSet(images, truths, manifest.class_names, ids, [r.source for r in manifest.records])


def manifest_from_scenes(scenes: SceneSet, image_paths: Sequence[str] | None = None) -> DatasetManifest:
    width, height = scenes.dims
    scale = np.array([width, height, width, height], dtype=np.float64)
    paths = list(image_paths) if image_paths is not None else [f"images/{i}.png" for i in scenes.ids]
    records = []
    for path, truth, src in zip(paths, scenes.truths, scenes.sources):
        objs = tuple(
            (scenes.class_names[int(lab)], tuple(float(v) for v in np.clip(box / scale, 0.0, 1.0)))
            for box, lab in zip(truth.boxes, truth.labels)
        )
        records.append(ManifestRecord(path, objs, src))
    return DatasetManifest(records, scenes.class_names, scenes.sources[0] if scenes.sources else "default")


def write_scenes(scenes: SceneSet, directory: str | Path, name: str = "manifest.txt") -> Path:
    """Write PNG images and a manifest under `directory`; returns the manifest path."""
    directory = Path(directory)
    manifest = manifest_from_scenes(scenes)
    for rec, img in zip(manifest.records, scenes.images):
        save_image(img, directory / rec.image_path)
    return save_manifest(manifest, directory / name)


# -- splitting ---------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    val_fraction: float = 0.1
    test_sources: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "test_sources", tuple(self.test_sources))
        for name in ("train_fraction", "val_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise SplitError(f"{name} must lie in (0, 1), got {v}")
        if self.train_fraction + self.val_fraction > 1.0 + 1e-9:
            raise SplitError("train_fraction + val_fraction must not exceed 1")


def split_indices(sources: Sequence[str], spec: SplitSpec) -> tuple[list[int], list[int], list[int]]:
    test = [i for i, s in enumerate(sources) if s in spec.test_sources]
    pool = [i for i, s in enumerate(sources) if s not in spec.test_sources]
    rng = np.random.default_rng(spec.seed)
    pool = [pool[k] for k in rng.permutation(len(pool))]
    n_train = int(math.floor(spec.train_fraction * len(pool) + 0.5))
    if abs(spec.train_fraction + spec.val_fraction - 1.0) < 1e-9:
        n_val = len(pool) - n_train
    else:
        n_val = int(math.floor(spec.val_fraction * len(pool) + 0.5))
    train, val = pool[:n_train], pool[n_train:n_train + n_val]
    for name, part in (("train", train), ("val", val), ("test", test)):
        if not part:
            raise SplitError(f"split produced an empty {name} set")
    return train, val, test


def split_dataset(manifest: DatasetManifest, spec: SplitSpec):
    """Held-out sources become the test set; the rest is shuffled into train/val."""
    train, val, test = split_indices([r.source for r in manifest.records], spec)

    def pick(idx):
        return DatasetManifest([manifest.records[i] for i in idx], manifest.class_names, manifest.source, manifest.root)

    return pick(train), pick(val), pick(test)


def split_scenes(scenes: SceneSet, spec: SplitSpec) -> tuple[SceneSet, SceneSet, SceneSet]:
    train, val, test = split_indices(scenes.sources, spec)
    return scenes.subset(train), scenes.subset(val), scenes.subset(test)


# -- self-labeling -----------------------------------------------------------

def self_label(manifest: DatasetManifest, images: torch.Tensor, detector,
               conf_threshold: float = 0.4, nms_iou: float = 0.45,
               conflict_iou: float = 0.5) -> DatasetManifest:
    """Add detector outputs as ground truth where no same-class annotation overlaps.

    Existing annotations win: a detection whose IoU with an existing box of the
    same class is >= `conflict_iou` is dropped.
    """
    from .detector import decode

    if not 0.0 <= conf_threshold <= 1.0:
        raise ValueError("conf_threshold must lie in [0, 1]")
    height, width = images.shape[-2:]
    names = list(manifest.class_names)
    det_names = list(detector.class_names)
    out = []
    with torch.no_grad():
        for start in range(0, len(manifest.records), 32):
            grid = detector.detect_raw(images[start:start + 32])
            for rec, dets in zip(manifest.records[start:start + 32], decode(grid, conf_threshold, nms_iou)):
                objects = list(rec.objects)
                for det in dets:
                    name = det_names[det.class_id]
                    if name not in names:
                        continue
                    x0, y0, x1, y1 = det.box
                    box = (min(max(x0 / width, 0.0), 1.0), min(max(y0 / height, 0.0), 1.0),
                           min(max(x1 / width, 0.0), 1.0), min(max(y1 / height, 0.0), 1.0))
                    if box[2] <= box[0] or box[3] <= box[1]:
                        continue
                    if any(n == name and iou(b, box) >= conflict_iou for n, b in objects):
                        continue
                    objects.append((name, box))
                out.append(ManifestRecord(rec.image_path, tuple(objects), rec.source))
    return DatasetManifest(out, manifest.class_names, manifest.source, manifest.root)


# -- synthetic scenes ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    n_scenes: int = 600
    width: int = 64
    height: int = 64
    class_names: tuple[str, ...] = ("stop_sign", "car", "traffic_light")
    target_class: str = "stop_sign"
    max_objects: int = 4
    target_prob: float = 0.7
    seed: int = 0
    source: str = "synthetic"


_SS = 4  # supersampling factor for object coverage masks


def _coverage(inside: Callable, box, width: int, height: int) -> np.ndarray:
    """Anti-aliased coverage in [0, 1] of the region `inside(x, y)` over the frame."""
    cov = np.zeros((height, width))
    x0, y0 = max(int(math.floor(box[0])), 0), max(int(math.floor(box[1])), 0)
    x1, y1 = min(int(math.ceil(box[2])), width), min(int(math.ceil(box[3])), height)
    if x1 <= x0 or y1 <= y0:
        return cov
    offs = (np.arange(_SS) + 0.5) / _SS
    xs = (np.arange(x0, x1)[:, None] + offs[None, :]).reshape(-1)
    ys = (np.arange(y0, y1)[:, None] + offs[None, :]).reshape(-1)
    X, Y = np.meshgrid(xs, ys)
    hit = inside(X, Y).astype(np.float64)
    hit = hit.reshape(y1 - y0, _SS, x1 - x0, _SS).mean(axis=(1, 3))
    cov[y0:y1, x0:x1] = hit
    return cov


def _paint(img: np.ndarray, cov: np.ndarray, color) -> None:
    img[:] = img * (1.0 - cov[..., None]) + np.asarray(color)[None, None, :] * cov[..., None]


def _octagon(cx, cy, apothem):
    k = apothem * math.sqrt(2.0)
    return lambda X, Y: (np.abs(X - cx) <= apothem) & (np.abs(Y - cy) <= apothem) & (
        np.abs(X - cx) + np.abs(Y - cy) <= k)


def _rect(x0, y0, x1, y1):
    return lambda X, Y: (X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)


def _disc(cx, cy, r):
    return lambda X, Y: (X - cx) ** 2 + (Y - cy) ** 2 <= r * r


def _draw_stop_sign(img, rng, cx, cy):
    apothem = rng.uniform(5.0, 8.5)
    frame = (cx - apothem - 1, cy - apothem - 1, cx + apothem + 1, cy + apothem + 1)
    h, w = img.shape[:2]
    outer = _coverage(_octagon(cx, cy, apothem), frame, w, h)
    inner = _coverage(_octagon(cx, cy, apothem * 0.8), frame, w, h)
    _paint(img, outer, (0.95, 0.95, 0.95))
    red = (rng.uniform(0.75, 0.95), rng.uniform(0.03, 0.15), rng.uniform(0.05, 0.15))
    _paint(img, inner, red)
    return outer


def _draw_car(img, rng, cx, cy):
    w_body, h_body = rng.uniform(14.0, 22.0), rng.uniform(6.0, 8.0)
    palette = [(0.15, 0.3, 0.75), (0.2, 0.6, 0.3), (0.6, 0.6, 0.62), (0.92, 0.92, 0.9),
               (0.1, 0.1, 0.12), (0.9, 0.8, 0.2)]
    body = np.asarray(palette[rng.integers(len(palette))]) * rng.uniform(0.85, 1.0)
    h, w = img.shape[:2]
    x0, x1 = cx - w_body / 2, cx + w_body / 2
    y_top = cy - h_body / 2 + 1.5
    y_bot = cy + h_body / 2 + 1.5
    cabin_h = rng.uniform(3.5, 5.0)
    frame = (x0 - 1, y_top - cabin_h - 1, x1 + 1, y_bot + 3)
    body_cov = _coverage(_rect(x0, y_top, x1, y_bot), frame, w, h)
    cab = _coverage(_rect(x0 + w_body * 0.22, y_top - cabin_h, x1 - w_body * 0.22, y_top + 0.5), frame, w, h)
    win = _coverage(_rect(x0 + w_body * 0.27, y_top - cabin_h + 1.0, x1 - w_body * 0.27, y_top), frame, w, h)
    wr = 2.2
    wheels = np.maximum(
        _coverage(_disc(x0 + w_body * 0.22, y_bot, wr), frame, w, h),
        _coverage(_disc(x1 - w_body * 0.22, y_bot, wr), frame, w, h),
    )
    _paint(img, np.maximum(body_cov, cab), body)
    _paint(img, win, (0.55, 0.75, 0.85))
    _paint(img, wheels, (0.05, 0.05, 0.05))
    return np.maximum.reduce([body_cov, cab, wheels])


def _draw_traffic_light(img, rng, cx, cy):
    w_box, h_box = rng.uniform(6.0, 8.0), rng.uniform(15.0, 20.0)
    h, w = img.shape[:2]
    x0, y0, x1, y1 = cx - w_box / 2, cy - h_box / 2, cx + w_box / 2, cy + h_box / 2
    frame = (x0 - 1, y0 - 1, x1 + 1, y1 + 1)
    housing = _coverage(_rect(x0, y0, x1, y1), frame, w, h)
    _paint(img, housing, (0.12, 0.12, 0.1) * np.ones(3) * rng.uniform(0.8, 1.3))
    lit = rng.integers(3)
    lamps = [(0.9, 0.1, 0.1), (0.95, 0.8, 0.1), (0.1, 0.9, 0.35)]
    r = w_box / 2 - 1.2
    for k, col in enumerate(lamps):
        ly = y0 + h_box * (2 * k + 1) / 6
        shade = 1.0 if k == lit else 0.3
        _paint(img, _coverage(_disc(cx, ly, r), frame, w, h), np.asarray(col) * shade)
    return housing


_DRAWERS = {
    "stop_sign": (_draw_stop_sign, (0.55, 0.93), (0.12, 0.6)),
    "car": (_draw_car, (0.1, 0.9), (0.55, 0.88)),
    "traffic_light": (_draw_traffic_light, (0.1, 0.9), (0.15, 0.55)),
}
"""class name -> (drawer, center-x range, center-y range) as frame fractions."""


def _background(rng, width, height) -> np.ndarray:
    horizon = rng.uniform(0.35, 0.55) * height
    rows = np.arange(height)[:, None, None] + 0.5
    sky_top = np.array([rng.uniform(0.45, 0.7), rng.uniform(0.6, 0.8), rng.uniform(0.8, 0.95)])
    sky_bot = np.clip(sky_top + rng.uniform(0.05, 0.15), 0, 1)
    t = np.clip(rows / max(horizon, 1.0), 0, 1)
    sky = sky_top * (1 - t) + sky_bot * t
    ground = np.array([0.38, 0.38, 0.4]) * rng.uniform(0.75, 1.2) + rng.uniform(-0.03, 0.03, size=3)
    img = np.where(rows < horizon, sky, ground) * np.ones((height, width, 3))

    # buildings / foliage along the horizon, muted colors only
    for _ in range(rng.integers(2, 6)):
        bw, bh = rng.uniform(6, 18), rng.uniform(4, 14)
        bx = rng.uniform(0, width)
        col = [(0.45, 0.42, 0.4), (0.3, 0.45, 0.3), (0.55, 0.55, 0.5), (0.35, 0.35, 0.45)][rng.integers(4)]
        cov = _coverage(_rect(bx, horizon - bh, bx + bw, horizon), (bx - 1, horizon - bh - 1, bx + bw + 1, horizon + 1), width, height)
        _paint(img, cov, np.asarray(col) * rng.uniform(0.8, 1.1))
    # dashed lane marking
    lane_x = width / 2 + rng.uniform(-6, 6)
    for y in np.arange(horizon + 3, height, 8.0):
        cov = _coverage(_rect(lane_x - 0.8, y, lane_x + 0.8, y + 4), (lane_x - 2, y - 1, lane_x + 2, y + 5), width, height)
        _paint(img, cov, (0.85, 0.85, 0.8))

    coarse = rng.normal(0.0, 1.0, size=(8, 8, 3)).astype(np.float32)
    up = np.stack([
        np.asarray(Image.fromarray(coarse[..., c], mode="F").resize((width, height), Image.BILINEAR))
        for c in range(3)
    ], axis=-1)
    img = img + 0.04 * up + rng.normal(0.0, 0.012, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _place(rng, drawer_spec, width, height, taken, img):
    drawer, xr, yr = drawer_spec
    for _ in range(60):
        cx = rng.uniform(*xr) * width
        cy = rng.uniform(*yr) * height
        trial = img.copy()
        cov = drawer(trial, rng, cx, cy)
        ys, xs = np.nonzero(cov > 0.5)
        if len(xs) == 0:
            continue
        box = (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
        if box[0] < 0 or box[1] < 0 or box[2] > width or box[3] > height:
            continue
        # require a 1-pixel gap to every existing object
        grown = np.array([[box[0] - 1, box[1] - 1, box[2] + 1, box[3] + 1]])
        if taken and pairwise_iou(grown, np.array(taken)).max() > 0:
            continue
        if np.any(cov[:1, :] > 0) or np.any(cov[-1:, :] > 0) or np.any(cov[:, :1] > 0) or np.any(cov[:, -1:] > 0):
            continue
        img[:] = trial
        return box
    return None


def generate_synthetic(config: SyntheticConfig = SyntheticConfig()):
    """Render `config.n_scenes` road-like scenes with 1-4 non-overlapping objects.

    Returns (images, manifest): images is a float32 tensor (N, 3, H, W) already
    quantized to 8 bits, so writing and reloading the PNGs is lossless.
    """
    names = tuple(config.class_names)
    if len(names) < 2 or config.target_class not in names:
        raise ValueError("need at least two classes including the target class")
    unknown = [n for n in names if n not in _DRAWERS]
    if unknown:
        raise ValueError(f"no synthetic drawer for classes {unknown}; available: {sorted(_DRAWERS)}")
    others = [n for n in names if n != config.target_class]

    rng = np.random.default_rng(config.seed)
    images, records = [], []
    for k in range(config.n_scenes):
        img = _background(rng, config.width, config.height)
        wanted = []
        if rng.random() < config.target_prob:
            wanted.append(config.target_class)
        n_other = rng.integers(0 if wanted else 1, config.max_objects - len(wanted) + 1)
        wanted += [others[rng.integers(len(others))] for _ in range(n_other)]
        taken, objects = [], []
        for name in wanted:
            box = _place(rng, _DRAWERS[name], config.width, config.height, taken, img)
            if box is None:
                continue
            taken.append(box)
            scale = (config.width, config.height, config.width, config.height)
            objects.append((name, tuple(v / s for v, s in zip(box, scale))))
        img = np.round(np.clip(img, 0, 1) * 255.0) / 255.0
        images.append(torch.from_numpy(img.transpose(2, 0, 1).astype(np.float32)))
        records.append(ManifestRecord(f"images/{config.source}_{k:05d}.png", tuple(objects), config.source))
    manifest = DatasetManifest(records, names, config.source)
    return torch.stack(images), manifest


def synthetic_scenes(config: SyntheticConfig = SyntheticConfig()) -> SceneSet:
    images, manifest = generate_synthetic(config)
    return scenes_from_manifest(manifest, images)
