"""Axis-aligned box helpers. Boxes are (x_min, y_min, x_max, y_max)."""

from __future__ import annotations

import numpy as np
import torch


def iou(box_a, box_b) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    ax0, ay0, ax1, ay1 = (float(v) for v in box_a)
    bx0, by0, bx1, by1 = (float(v) for v in box_b)
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return out


def iou_torch(boxes: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    """Differentiable IoU of `boxes` (..., 4) against broadcastable `ref` (..., 4)."""
    iw = (torch.minimum(boxes[..., 2], ref[..., 2]) - torch.maximum(boxes[..., 0], ref[..., 0])).clamp(min=0)
    ih = (torch.minimum(boxes[..., 3], ref[..., 3]) - torch.maximum(boxes[..., 1], ref[..., 1])).clamp(min=0)
    inter = iw * ih
    area_a = (boxes[..., 2] - boxes[..., 0]).clamp(min=0) * (boxes[..., 3] - boxes[..., 1]).clamp(min=0)
    area_b = (ref[..., 2] - ref[..., 0]).clamp(min=0) * (ref[..., 3] - ref[..., 1]).clamp(min=0)
    union = area_a + area_b - inter
    safe = torch.where(union > 0, union, torch.ones_like(union))
    return torch.where(union > 0, inter / safe, torch.zeros_like(union))
