"""Patch optimization loop and loss-weight grid search."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .evaluation import evaluate_condition
from .losses import (
    DEFAULT_RELEVANCE_FLOOR,
    LossBreakdown,
    LossWeights,
    iou_loss,
    load_printable_colors,
    nps_loss,
    target_conf_loss,
    total_loss,
    untargeted_conf_loss,
)
from .patch_model import ManualParams, PatchParams, init_free_params, project_tensors_, validate_manual
from .renderer import render_and_apply_tensors

logger = logging.getLogger(__name__)

COMPONENTS = ("target_conf", "iou", "untargeted_conf", "nps", "total")


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr_main: float = 5e-3
    lr_radius: float = 8e-4
    epochs: int = 15
    batch_size: int = 16
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    conf_threshold: float = 0.4
    relevance_floor: float = DEFAULT_RELEVANCE_FLOOR
    untargeted_floor: float = 0.8
    init_candidates: int = 5

    def __post_init__(self):
        if not (self.lr_main > 0 and self.lr_radius > 0):
            raise ValueError("learning rates must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.init_candidates < 1:
            raise ValueError("init_candidates must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train: dict[str, float]
    val: dict[str, float]
    val_target_ap: float
    val_untargeted_ap: float


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    clean_val_target_ap: float = math.nan
    clean_val_untargeted_ap: float = math.nan
    best_epoch: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def header(self) -> list[str]:
        return (["epoch"] + [f"train_{c}" for c in COMPONENTS] + [f"val_{c}" for c in COMPONENTS]
                + ["val_target_ap", "val_untargeted_ap"])

    def rows(self) -> list[list[str]]:
        out = []
        for r in self.records:
            vals = [r.train[c] for c in COMPONENTS] + [r.val[c] for c in COMPONENTS] + \
                [r.val_target_ap, r.val_untargeted_ap]
            out.append([str(r.epoch)] + [f"{v:.8f}" for v in vals])
        return out

    def save_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            w.writerows(self.rows())
        return path


def _param_tensors(params: PatchParams, dtype) -> dict[str, torch.Tensor]:
    return {k: v.clone().requires_grad_(True) for k, v in params.to_tensors(dtype).items()}


def batch_loss(tensors, manual: ManualParams, images, clean_grid, truths, detector,
               target_class: int, weights: LossWeights, printable, relevance_floor: float) -> LossBreakdown:
    """Render, detect and score one batch; differentiable in `tensors`."""
    patched = render_and_apply_tensors(tensors, manual, images)
    grid = detector.detect_raw(patched)
    return total_loss(
        target_conf_loss(grid, target_class),
        iou_loss(grid, truths, target_class, relevance_floor),
        untargeted_conf_loss(clean_grid, grid, truths, target_class),
        nps_loss(tensors["color"], printable),
        weights,
    )


def _clean_grids(detector, scenes, batch_size):
    with torch.no_grad():
        parts = [detector.detect_raw(images) for _, images, _ in scenes.batches(batch_size)]
    return type(parts[0])(
        torch.cat([p.boxes for p in parts]), torch.cat([p.objectness for p in parts]),
        torch.cat([p.class_scores for p in parts]), parts[0].image_dims, parts[0].class_names,
    )


def _dataset_loss(params: PatchParams, scenes, clean, detector, config: OptimizerConfig,
                  target_class: int, printable) -> float:
    tensors = params.to_tensors(scenes.images.dtype)
    total = 0.0
    with torch.no_grad():
        for idx, images, truths in scenes.batches(config.batch_size):
            br = batch_loss(tensors, params.manual, images, clean.select(idx), truths, detector,
                            target_class, config.weights, printable, config.relevance_floor)
            total += float(br.total) * len(idx)
    return total / len(scenes)


def select_initialization(manual: ManualParams, scenes, clean, detector, config: OptimizerConfig,
                          target_class: int, printable) -> PatchParams:
    """Best of `config.init_candidates` uniform draws (seeds seed, seed+1, ...) by training loss."""
    draws = [init_free_params(manual, config.seed + j) for j in range(config.init_candidates)]
    if len(draws) == 1:
        return draws[0]
    losses = [_dataset_loss(p, scenes, clean, detector, config, target_class, printable) for p in draws]
    return draws[int(np.argmin(losses))]


def _mean_breakdown(sums: dict[str, float], count: int) -> dict[str, float]:
    return {k: sums[k] / max(count, 1) for k in COMPONENTS}


def _select(candidates, clean_untargeted: float, floor: float) -> int:
    """Index of the lowest target AP whose untargeted AP clears the floor.

    Falls back to the highest untargeted AP when none clears it.
    """
    passing = [i for i, (_, t, u) in enumerate(candidates) if u >= floor * clean_untargeted]
    if passing:
        return min(passing, key=lambda i: (candidates[i][1], i))
    return max(range(len(candidates)), key=lambda i: (candidates[i][2], -i))


def optimize_patch(train, val, detector, config: OptimizerConfig, manual: ManualParams,
                   target_class: int, printable=None, init: PatchParams | None = None):
    """Optimize the free shape parameters against `detector`.

    The starting point is the best of `config.init_candidates` uniform random
    draws unless `init` is given. Each batch blends the current patch over the images, runs the detector on
    clean and patched versions, and takes one Adam step on the weighted loss
    (radius group at `lr_radius`, everything else at `lr_main`) followed by a
    projection onto the parameter box. Returns the parameters of the best
    validation epoch and the per-epoch history.
    """
    validate_manual(manual)
    history = TrainingHistory()
    if config.epochs == 0:
        return (init if init is not None else init_free_params(manual, config.seed)), history

    printable = load_printable_colors() if printable is None else np.asarray(printable)
    torch.manual_seed(config.seed)
    dtype = train.images.dtype
    clean_train = _clean_grids(detector, train, config.batch_size)
    clean_val = _clean_grids(detector, val, config.batch_size)
    params = init if init is not None else select_initialization(
        manual, train, clean_train, detector, config, target_class, printable)
    tensors = _param_tensors(params, dtype)
    opt = torch.optim.Adam([
        {"params": [tensors["center"], tensors["shear"], tensors["color"]], "lr": config.lr_main},
        {"params": [tensors["radius"]], "lr": config.lr_radius},
    ], betas=(0.9, 0.999), eps=1e-8)
    gen = torch.Generator().manual_seed(config.seed)

    clean_rep = evaluate_condition(detector, val, None, "CLEAN", target_class, config.conf_threshold)
    history.clean_val_target_ap = clean_rep.target_ap
    history.clean_val_untargeted_ap = clean_rep.untargeted_ap

    init_rep = evaluate_condition(detector, val, params, "PATCH", target_class, config.conf_threshold)
    snapshots = [params]
    candidates = [(0, init_rep.target_ap, init_rep.untargeted_ap)]

    for epoch in range(1, config.epochs + 1):
        sums = dict.fromkeys(COMPONENTS, 0.0)
        seen = 0
        for b, (idx, images, truths) in enumerate(train.batches(config.batch_size, gen)):
            br = batch_loss(tensors, manual, images, clean_train.select(idx), truths, detector,
                            target_class, config.weights, printable, config.relevance_floor)
            if not torch.isfinite(br.total):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch}, batch {b} (images {[train.ids[i] for i in idx]})")
            opt.zero_grad()
            br.total.backward()
            opt.step()
            project_tensors_(tensors, manual)
            for k, v in br.as_floats().items():
                sums[k] += v * len(idx)
            seen += len(idx)

        current = PatchParams.from_tensors(tensors, manual)
        with torch.no_grad():
            vsums = dict.fromkeys(COMPONENTS, 0.0)
            for idx, images, truths in val.batches(config.batch_size):
                br = batch_loss(tensors, manual, images, clean_val.select(idx), truths, detector,
                                target_class, config.weights, printable, config.relevance_floor)
                for k, v in br.as_floats().items():
                    vsums[k] += v * len(idx)
        rep = evaluate_condition(detector, val, current, "PATCH", target_class, config.conf_threshold)
        rec = EpochRecord(epoch, _mean_breakdown(sums, seen), _mean_breakdown(vsums, len(val)),
                          rep.target_ap, rep.untargeted_ap)
        history.records.append(rec)
        snapshots.append(current)
        candidates.append((epoch, rep.target_ap, rep.untargeted_ap))
        logger.info("epoch %d train total %.4f val target AP %.3f untargeted AP %.3f",
                    epoch, rec.train["total"], rep.target_ap, rep.untargeted_ap)

    best = _select(candidates, history.clean_val_untargeted_ap, config.untargeted_floor)
    history.best_epoch = candidates[best][0]
    return snapshots[best], history


# -- weight grid search ------------------------------------------------------

PAPER_WEIGHT_TUPLE = (0.74, 0.15, 0.1, 0.01)


def default_weight_grid() -> list[tuple[float, float, float, float]]:
    """Product grid over (w1, w2, w3) with w4 = 0.01, normalized; includes zeroed w1 and w2."""
    grid = []
    for w1, w2, w3 in itertools.product((0.0, 0.25, 0.5, 0.74), (0.0, 0.15, 0.3), (0.1, 0.2)):
        if w1 == 0.0 and w2 == 0.0:
            continue
        raw = (w1, w2, w3, 0.01)
        total = math.fsum(raw)
        grid.append(tuple(v / total for v in raw) if abs(total - 1.0) > 1e-12 else raw)
    return grid


@dataclass(frozen=True)
class GridSearchRow:
    weights: tuple[float, float, float, float]
    val_target_ap: float
    val_untargeted_ap: float
    passes_floor: bool


def select_weights(rows: Sequence[GridSearchRow]) -> GridSearchRow:
    """Lowest target AP among rows clearing the untargeted floor (else best untargeted AP)."""
    if not rows:
        raise ValueError("empty weight grid")
    passing = [r for r in rows if r.passes_floor]
    if passing:
        return min(passing, key=lambda r: r.val_target_ap)
    return max(rows, key=lambda r: r.val_untargeted_ap)


def grid_search_weights(candidate_grid, train, val, detector, base_config: OptimizerConfig,
                        manual: ManualParams, target_class: int, printable=None,
                        budget_fraction: float = 0.2):
    """Short optimization run per weight tuple; returns (LossWeights, summary rows)."""
    grid = list(candidate_grid)
    if not grid:
        raise ValueError("empty weight grid")
    epochs = max(1, int(round(base_config.epochs * budget_fraction)))
    clean = evaluate_condition(detector, val, None, "CLEAN", target_class, base_config.conf_threshold)
    rows = []
    for raw in grid:
        weights = LossWeights.normalized(raw)
        cfg = replace(base_config, weights=weights, epochs=epochs)
        params, _ = optimize_patch(train, val, detector, cfg, manual, target_class, printable)
        rep = evaluate_condition(detector, val, params, "PATCH", target_class, base_config.conf_threshold)
        passes = rep.untargeted_ap >= base_config.untargeted_floor * clean.untargeted_ap
        rows.append(GridSearchRow(weights.as_tuple(), rep.target_ap, rep.untargeted_ap, passes))
        logger.info("weights %s -> target AP %.3f untargeted AP %.3f", weights.as_tuple(),
                    rep.target_ap, rep.untargeted_ap)
    best = select_weights(rows)
    return LossWeights(*best.weights), rows


def save_grid_summary(rows: Sequence[GridSearchRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["w1", "w2", "w3", "w4", "val_target_ap", "val_untargeted_ap", "passes_floor"])
        for r in rows:
            w.writerow([f"{v:.6f}" for v in r.weights] + [f"{r.val_target_ap:.6f}",
                                                           f"{r.val_untargeted_ap:.6f}", int(r.passes_floor)])
    return path
