"""Detector abstraction, a small single-scale grid detector, decoding and NMS.

Any object with `class_names` and a `detect_raw(images) -> DetectionGrid`
method whose output is differentiable in the input pixels can be attacked.
Black-box detectors that only satisfy the signature are evaluation-only.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .boxes import iou_torch, pairwise_iou

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lenspatch-grid-detector/1"


class DetectorError(RuntimeError):
    pass


@dataclass(frozen=True)
class CandidateBox:
    box: tuple[float, float, float, float]
    objectness: float
    class_scores: tuple[float, ...]


@dataclass
class DetectionGrid:
    """Raw detector output for a batch.

    boxes (B, N, 4) in pixels, objectness (B, N), class_scores (B, N, C),
    with N = grid_h * grid_w * anchors fixed per detector.
    """

    boxes: torch.Tensor
    objectness: torch.Tensor
    class_scores: torch.Tensor
    image_dims: tuple[int, int]
    class_names: tuple[str, ...]

    @property
    def num_candidates(self) -> int:
        return self.boxes.shape[1]

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def confidences(self) -> torch.Tensor:
        """Per-class products objectness * class score, (B, N, C)."""
        return self.objectness.unsqueeze(-1) * self.class_scores

    def candidates(self, b: int = 0) -> list[CandidateBox]:
        boxes = self.boxes[b].detach().cpu().tolist()
        obj = self.objectness[b].detach().cpu().tolist()
        cls = self.class_scores[b].detach().cpu().tolist()
        return [CandidateBox(tuple(bx), o, tuple(c)) for bx, o, c in zip(boxes, obj, cls)]

    def select(self, idx) -> "DetectionGrid":
        return DetectionGrid(self.boxes[idx], self.objectness[idx], self.class_scores[idx],
                             self.image_dims, self.class_names)


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]
    class_id: int
    confidence: float


class Detector(Protocol):
    class_names: tuple[str, ...]

    def detect_raw(self, images: torch.Tensor) -> DetectionGrid: ...


# -- decoding ----------------------------------------------------------------

def _nms_one(boxes: np.ndarray, scores: np.ndarray, classes: np.ndarray, nms_iou: float) -> list[int]:
    # descending score, ties broken lexicographically on box coordinates, then class
    order = np.lexsort((classes, boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0], -scores))
    keep: list[int] = []
    for i in order:
        same = [k for k in keep if classes[k] == classes[i]]
        if same and pairwise_iou(boxes[i:i + 1], boxes[same]).max() >= nms_iou:
            continue
        keep.append(int(i))
    return keep


def decode(grid: DetectionGrid, conf_threshold: float = 0.4, nms_iou: float = 0.45) -> list[list[Detection]]:
    """Threshold and non-max suppress every image of the grid.

    Confidence is objectness times the best class score; a candidate is kept
    only if its confidence strictly exceeds `conf_threshold`.
    """
    if not (0.0 <= conf_threshold <= 1.0 and 0.0 <= nms_iou <= 1.0):
        raise ValueError("thresholds must lie in [0, 1]")
    with torch.no_grad():
        conf = grid.confidences()
        best, cls = conf.max(dim=-1)
        boxes_all = grid.boxes.detach().double().cpu().numpy()
        best_all = best.double().cpu().numpy()
        cls_all = cls.cpu().numpy()
    out = []
    for b in range(len(grid)):
        mask = best_all[b] > conf_threshold
        boxes, scores, classes = boxes_all[b][mask], best_all[b][mask], cls_all[b][mask]
        keep = _nms_one(boxes, scores, classes, nms_iou) if len(scores) else []
        out.append([Detection(tuple(float(v) for v in boxes[k]), int(classes[k]), float(scores[k])) for k in keep])
    return out


# -- toy grid detector ---------------------------------------------------------

@dataclass(frozen=True)
class DetectorConfig:
    input_width: int = 64
    input_height: int = 64
    stride: int = 8
    width: int = 32
    anchor: float = 14.0
    epochs: int = 25
    batch_size: int = 32
    lr: float = 3e-3
    weight_decay: float = 1e-4
    seed: int = 0
    ap_floor: float = 0.9
    label_smoothing: float = 0.1


class GridDetector(nn.Module):
    """Single-scale grid detector: one box per cell, sigmoid objectness and class scores."""

    def __init__(self, class_names: Sequence[str], config: DetectorConfig = DetectorConfig()):
        super().__init__()
        if config.input_width % config.stride or config.input_height % config.stride:
            raise ValueError("input dims must be multiples of the stride")
        if config.stride != 8:
            raise ValueError("the toy backbone downsamples by exactly 8")
        self.class_names = tuple(class_names)
        self.config = config
        c = config.width
        self.backbone = nn.Sequential(
            nn.Conv2d(3, c // 2, 3, padding=1), nn.SiLU(),
            nn.Conv2d(c // 2, c, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(c, c, 3, padding=1), nn.SiLU(),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * c, 2 * c, 3, padding=1), nn.SiLU(),
            nn.Conv2d(2 * c, 2 * c, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * c, 2 * c, 3, padding=1), nn.SiLU(),
            nn.Conv2d(2 * c, 2 * c, 3, padding=1), nn.SiLU(),
        )
        self.head = nn.Conv2d(2 * c, 5 + len(self.class_names), 1)

    @property
    def grid_dims(self) -> tuple[int, int]:
        return self.config.input_width // self.config.stride, self.config.input_height // self.config.stride

    @property
    def num_candidates(self) -> int:
        gw, gh = self.grid_dims
        return gw * gh

    def raw_outputs(self, images: torch.Tensor) -> torch.Tensor:
        """Head activations (B, gh*gw, 5 + C) in row-major cell order."""
        if images.dim() == 3:
            images = images.unsqueeze(0)
        expected = (self.config.input_height, self.config.input_width)
        if images.shape[1] != 3 or tuple(images.shape[-2:]) != expected:
            raise DetectorError(f"expected images (B, 3, {expected[0]}, {expected[1]}), got {tuple(images.shape)}")
        feats = self.head(self.backbone(images))
        return feats.flatten(2).transpose(1, 2)

    def _decode_boxes(self, out: torch.Tensor) -> torch.Tensor:
        gw, gh = self.grid_dims
        stride = self.config.stride
        gy, gx = torch.meshgrid(torch.arange(gh, dtype=out.dtype), torch.arange(gw, dtype=out.dtype), indexing="ij")
        gx, gy = gx.reshape(1, -1), gy.reshape(1, -1)
        cx = (gx + torch.sigmoid(out[..., 0])) * stride
        cy = (gy + torch.sigmoid(out[..., 1])) * stride
        w = self.config.anchor * torch.exp(out[..., 2].clamp(-4.0, 4.0))
        h = self.config.anchor * torch.exp(out[..., 3].clamp(-4.0, 4.0))
        return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1)

    def detect_raw(self, images: torch.Tensor) -> DetectionGrid:
        out = self.raw_outputs(images)
        return DetectionGrid(
            boxes=self._decode_boxes(out),
            objectness=torch.sigmoid(out[..., 4]),
            class_scores=torch.sigmoid(out[..., 5:]),
            image_dims=(self.config.input_width, self.config.input_height),
            class_names=self.class_names,
        )

    forward = detect_raw


def _build_targets(truths, detector: GridDetector):
    """Assign each ground-truth box to the grid cell containing its center."""
    gw, gh = detector.grid_dims
    stride, anchor = detector.config.stride, detector.config.anchor
    n_cls = len(detector.class_names)
    b = len(truths)
    obj = torch.zeros(b, gh * gw)
    cls = torch.zeros(b, gh * gw, n_cls)
    box = torch.zeros(b, gh * gw, 4)
    gt = torch.zeros(b, gh * gw, 4)
    for i, t in enumerate(truths):
        for (x0, y0, x1, y1), lab in zip(t.boxes, t.labels):
            cx, cy = (x0 + x1) / 2 / stride, (y0 + y1) / 2 / stride
            col, row = min(int(cx), gw - 1), min(int(cy), gh - 1)
            k = row * gw + col
            obj[i, k] = 1.0
            cls[i, k, lab] = 1.0
            box[i, k] = torch.tensor([
                cx - col, cy - row, np.log((x1 - x0) / anchor), np.log((y1 - y0) / anchor)
            ], dtype=torch.float32)
            gt[i, k] = torch.tensor([x0, y0, x1, y1], dtype=torch.float32)
    return obj, cls, box, gt


def detector_loss(detector: GridDetector, images: torch.Tensor, truths) -> torch.Tensor:
    """YOLO-style loss; the objectness target of a positive cell is the IoU of its box.

    IoU-valued objectness and smoothed class targets keep scores calibrated
    below 1, which leaves usable gradients for attacks on the trained model.
    """
    out = detector.raw_outputs(images)
    obj_t, cls_t, box_t, gt = _build_targets(truths, detector)
    pos = obj_t > 0
    smooth = detector.config.label_smoothing
    if pos.any():
        with torch.no_grad():
            pred = detector._decode_boxes(out)
            obj_t = obj_t.clone()
            obj_t[pos] = iou_torch(pred[pos], gt[pos]).clamp(min=0.0).to(obj_t.dtype)
        loss_cls = F.binary_cross_entropy_with_logits(
            out[..., 5:][pos], cls_t[pos] * (1.0 - smooth) + smooth / 2)
        xy = torch.sigmoid(out[..., 0:2][pos])
        loss_box = F.smooth_l1_loss(xy, box_t[..., 0:2][pos], beta=0.1) * 2.0 + \
            F.smooth_l1_loss(out[..., 2:4][pos], box_t[..., 2:4][pos], beta=0.1)
    else:
        loss_cls = loss_box = out.sum() * 0.0
    loss_obj = F.binary_cross_entropy_with_logits(out[..., 4], obj_t, reduction="mean") * 5.0
    return loss_obj + loss_cls + loss_box


def train_toy_detector(train, config: DetectorConfig = DetectorConfig(), holdout=None,
                       log_every: int = 10) -> GridDetector:
    """Fit a GridDetector on a SceneSet; deterministic for a fixed seed.

    When `holdout` is given, clean per-class AP is measured there and a
    DetectorError is raised if any class falls below `config.ap_floor`.
    """
    if train is None or len(train) == 0:
        raise DetectorError("training set is empty")
    if len(train.class_names) < 2:
        raise DetectorError("need at least two classes")
    torch.manual_seed(config.seed)
    detector = GridDetector(train.class_names, config)
    opt = torch.optim.AdamW(detector.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    steps = config.epochs * ((len(train) + config.batch_size - 1) // config.batch_size)
    sched = torch.optim.lr_scheduler.OneCycleLR(opt, max_lr=config.lr, total_steps=max(steps, 1), pct_start=0.15)
    gen = torch.Generator().manual_seed(config.seed)
    detector.train()
    for epoch in range(config.epochs):
        total = 0.0
        for _, images, truths in train.batches(config.batch_size, gen):
            loss = detector_loss(detector, images, truths)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += float(loss.detach()) * len(truths)
        if log_every and (epoch + 1) % log_every == 0:
            logger.info("detector epoch %d loss %.4f", epoch + 1, total / len(train))
    detector.eval()
    for p in detector.parameters():
        p.requires_grad_(False)

    if holdout is not None:
        from .evaluation import evaluate_condition

        report = evaluate_condition(detector, holdout, None, "CLEAN", target_class=0)
        failing = {n: ap for n, ap in report.per_class_ap.items() if ap < config.ap_floor}
        if failing:
            raise DetectorError(f"clean AP below floor {config.ap_floor}: {failing}")
    return detector


def save_detector(detector: GridDetector, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format_version": CHECKPOINT_FORMAT,
        "class_names": list(detector.class_names),
        "config": asdict(detector.config),
        "state_dict": detector.state_dict(),
    }, path)
    return path


def load_detector(path: str | Path) -> GridDetector:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"detector checkpoint not found: {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=True)
    version = ckpt.get("format_version") if isinstance(ckpt, dict) else None
    if version != CHECKPOINT_FORMAT:
        raise DetectorError(f"checkpoint format {version!r} does not match {CHECKPOINT_FORMAT!r}")
    detector = GridDetector(ckpt["class_names"], DetectorConfig(**ckpt["config"]))
    detector.load_state_dict(ckpt["state_dict"])
    detector.eval()
    for p in detector.parameters():
        p.requires_grad_(False)
    return detector
