"""Attack objective: target confidence, IoU, untargeted drift and printability terms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .boxes import iou_torch
from .detector import DetectionGrid
from .patch_model import PatchParams

PAPER_WEIGHTS = (0.74, 0.15, 0.1, 0.01)
DEFAULT_RELEVANCE_FLOOR = 0.1


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    w1: float = PAPER_WEIGHTS[0]
    w2: float = PAPER_WEIGHTS[1]
    w3: float = PAPER_WEIGHTS[2]
    w4: float = PAPER_WEIGHTS[3]

    def __post_init__(self):
        ws = self.as_tuple()
        if any(not math.isfinite(w) or w < 0 for w in ws):
            raise LossError(f"loss weights must be finite and non-negative, got {ws}")
        if abs(math.fsum(ws) - 1.0) > 1e-9:
            raise LossError(f"loss weights must sum to 1, got {math.fsum(ws)!r}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w1, self.w2, self.w3, self.w4)

    @classmethod
    def normalized(cls, values: Sequence[float]) -> "LossWeights":
        total = math.fsum(values)
        if total <= 0:
            raise LossError("weights must have a positive sum")
        return cls(*(float(v) / total for v in values))


@dataclass
class LossBreakdown:
    target_conf: torch.Tensor | float
    iou: torch.Tensor | float
    untargeted_conf: torch.Tensor | float
    nps: torch.Tensor | float
    total: torch.Tensor | float

    def as_floats(self) -> dict[str, float]:
        return {k: float(torch.as_tensor(getattr(self, k)).detach()) for k in ("target_conf", "iou", "untargeted_conf", "nps", "total")}


def target_conf_loss(grid: DetectionGrid, target_class: int) -> torch.Tensor:
    """Strongest objectness * target-class score per image, averaged over the batch."""
    if not 0 <= target_class < grid.class_scores.shape[-1]:
        raise LossError(f"target class {target_class} out of range")
    prod = grid.objectness * grid.class_scores[..., target_class]
    return prod.max(dim=1).values.mean()


def iou_loss(grid: DetectionGrid, truths, target_class: int,
             relevance_floor: float = DEFAULT_RELEVANCE_FLOOR) -> torch.Tensor:
    """Best IoU between each target ground-truth box and the relevant candidates.

    Candidates whose target-class product is below `relevance_floor` are
    ignored. Per image: mean over target boxes (0 without any); batch: mean.
    """
    prod = grid.objectness * grid.class_scores[..., target_class]
    per_image = []
    for b, truth in enumerate(truths):
        mask = truth.labels == target_class
        relevant = prod[b] >= relevance_floor
        if not mask.any() or not bool(relevant.any()):
            per_image.append(grid.boxes.new_zeros(()))
            continue
        gt = torch.as_tensor(truth.boxes[mask], dtype=grid.boxes.dtype)
        boxes = grid.boxes[b][relevant]
        ious = iou_torch(boxes.unsqueeze(0), gt.unsqueeze(1))  # (k, n_relevant)
        per_image.append(ious.max(dim=1).values.mean())
    return torch.stack(per_image).mean()


def class_confidence(grid: DetectionGrid, b: int, cls: int) -> torch.Tensor:
    return (grid.objectness[b] * grid.class_scores[b, :, cls]).max()


def untargeted_conf_loss(clean_grid: DetectionGrid, patched_grid: DetectionGrid, truths,
                         target_class: int) -> torch.Tensor:
    """Mean absolute confidence drift of the untargeted classes present in each image."""
    per_image = []
    for b, truth in enumerate(truths):
        present = sorted({int(c) for c in truth.labels if int(c) != target_class})
        if not present:
            per_image.append(patched_grid.objectness.new_zeros(()))
            continue
        diffs = [torch.abs(class_confidence(clean_grid, b, c) - class_confidence(patched_grid, b, c))
                 for c in present]
        per_image.append(torch.stack(diffs).sum() / len(present))
    return torch.stack(per_image).mean()


def untargeted_drift(clean: Mapping[str, float], patched: Mapping[str, float]) -> float:
    """Scalar drift for one image from per-class confidences.

    `clean` holds the untargeted classes present in the clean image. Inputs
    are read as the decimals they print as, so e.g. {car: 0.9, person: 0.8}
    against {car: 0.7, person: 0.8} gives exactly 0.1.
    """
    if not clean:
        return 0.0
    missing = [c for c in clean if c not in patched]
    if missing:
        raise LossError(f"patched confidences lack classes {missing}")
    total = sum((abs(_dec(clean[c]) - _dec(patched[c])) for c in clean), Decimal(0))
    return float(total / len(clean))


def _dec(x) -> Decimal:
    return Decimal(repr(float(x)))


def _safe_norm(x: torch.Tensor, dim: int) -> torch.Tensor:
    sq = (x * x).sum(dim=dim)
    pos = sq > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def nps_loss(colors, printable) -> torch.Tensor:
    """Sum over shape colors of the Euclidean RGB distance to the nearest printable color.

    `colors` is PatchParams or an (n, 3) tensor. The gradient is exactly zero
    for a color that coincides with a printable one.
    """
    if isinstance(colors, PatchParams):
        colors = colors.to_tensors()["color"]
    printable = torch.as_tensor(np.asarray(printable, dtype=np.float64), dtype=colors.dtype).reshape(-1, 3)
    if printable.shape[0] == 0:
        raise LossError("printable color set is empty")
    if colors.shape[0] == 0:
        return colors.new_zeros(())
    dist = _safe_norm(colors.unsqueeze(1) - printable.unsqueeze(0), dim=-1)
    return dist.min(dim=1).values.sum()


def total_loss(target_conf, iou_value, untargeted_conf, nps, weights: LossWeights) -> LossBreakdown:
    if not isinstance(weights, LossWeights):
        raise LossError("weights must be a LossWeights instance")
    w1, w2, w3, w4 = weights.as_tuple()
    parts = (target_conf, iou_value, untargeted_conf, nps)
    if any(isinstance(p, torch.Tensor) for p in parts):
        total = w1 * target_conf + w2 * iou_value + w3 * untargeted_conf + w4 * nps
    else:
        # plain floats: exact decimal arithmetic, rounded once at the end
        total = float(sum((_dec(w) * _dec(p) for w, p in zip(weights.as_tuple(), parts)), Decimal(0)))
    return LossBreakdown(target_conf, iou_value, untargeted_conf, nps, total)


# -- printable colors --------------------------------------------------------

def parse_printable_colors(text: str) -> np.ndarray:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise LossError(f"line {lineno}: expected 'r g b', got {raw!r}")
        rgb = [float(p) for p in parts]
        if not all(0.0 <= v <= 1.0 for v in rgb):
            raise LossError(f"line {lineno}: values must lie in [0, 1]")
        rows.append(rgb)
    if not rows:
        raise LossError("printable color set is empty")
    return np.array(rows, dtype=np.float64)


def load_printable_colors(path: str | Path | None = None) -> np.ndarray:
    """Read an 'r g b' per line color file; the bundled 30-color set when path is None."""
    if path is None:
        text = resources.files("lenspatch").joinpath("printable_colors.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_printable_colors(text)
