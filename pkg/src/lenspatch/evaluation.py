"""Detection metrics (matching, all-point AP, fooling rate), baselines and sweeps."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .boxes import pairwise_iou
from .detector import Detection, decode
from .patch_model import ManualParams, PatchParams, init_free_params
from .renderer import UniformPatch, render_and_apply

CONDITIONS = ("CLEAN", "PATCH", "RANDOM", "RED", "CYAN")
DECODE_THRESHOLD = 0.4
MATCH_IOU = 0.5


@dataclass
class MatchResult:
    """Per-detection TP flags plus ground-truth bookkeeping.

    When pooled over a dataset, `image_ids` tells which image each detection
    came from and `gt_labels`/`gt_matched` cover every ground-truth box.
    """

    tp: np.ndarray
    confidences: np.ndarray
    class_ids: np.ndarray
    gt_labels: np.ndarray
    gt_matched: np.ndarray
    image_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_tp(self) -> int:
        return int(self.tp.sum())

    @property
    def n_fp(self) -> int:
        return int((~self.tp).sum())

    @property
    def n_fn(self) -> int:
        return int((~self.gt_matched).sum())

    def total_gt(self, classes: int | Iterable[int]) -> int:
        return int(np.isin(self.gt_labels, _as_set(classes)).sum())


def _as_set(classes) -> list[int]:
    if isinstance(classes, (int, np.integer)):
        return [int(classes)]
    return [int(c) for c in classes]


def _sorted_detections(dets: Sequence[Detection]) -> list[Detection]:
    return sorted(dets, key=lambda d: (-d.confidence, *d.box))


def match_detections(dets: Sequence[Detection], truth, iou_thresh: float = MATCH_IOU) -> MatchResult:
    """Greedy matching in descending confidence order.

    A detection is a true positive if it overlaps a still-unmatched ground
    truth of its class with IoU >= `iou_thresh`; the best such box is taken.
    """
    dets = _sorted_detections(dets)
    n_gt = len(truth.labels)
    matched = np.zeros(n_gt, dtype=bool)
    tp = np.zeros(len(dets), dtype=bool)
    if dets and n_gt:
        ious = pairwise_iou(np.array([d.box for d in dets]), truth.boxes)
        for k, d in enumerate(dets):
            cand = (truth.labels == d.class_id) & ~matched & (ious[k] >= iou_thresh)
            if cand.any():
                j = int(np.argmax(np.where(cand, ious[k], -1.0)))
                matched[j] = True
                tp[k] = True
    return MatchResult(
        tp=tp,
        confidences=np.array([d.confidence for d in dets], dtype=np.float64),
        class_ids=np.array([d.class_id for d in dets], dtype=np.int64),
        gt_labels=np.asarray(truth.labels, dtype=np.int64).copy(),
        gt_matched=matched,
        image_ids=np.zeros(len(dets), dtype=np.int64),
    )


def pool_matches(results: Sequence[MatchResult]) -> MatchResult:
    if not results:
        empty = np.zeros(0)
        return MatchResult(empty.astype(bool), empty, empty.astype(np.int64),
                           empty.astype(np.int64), empty.astype(bool), empty.astype(np.int64))
    return MatchResult(
        tp=np.concatenate([r.tp for r in results]),
        confidences=np.concatenate([r.confidences for r in results]),
        class_ids=np.concatenate([r.class_ids for r in results]),
        gt_labels=np.concatenate([r.gt_labels for r in results]),
        gt_matched=np.concatenate([r.gt_matched for r in results]),
        image_ids=np.concatenate([np.full(len(r.tp), i, dtype=np.int64) for i, r in enumerate(results)]),
    )


def average_precision(matches: MatchResult, class_id, total_gt: int | None = None):
    """All-point interpolated AP for one class (or a pooled group of classes).

    Returns (ap, pr) where pr is an (k, 2) array of (recall, precision)
    points, one per distinct confidence level. Detections that share a
    confidence enter the curve together, so the result is order-invariant.
    """
    classes = _as_set(class_id)
    if total_gt is None:
        total_gt = matches.total_gt(classes)
    sel = np.isin(matches.class_ids, classes)
    conf = matches.confidences[sel]
    tp = matches.tp[sel]
    if total_gt == 0:
        return (0.0 if len(conf) else 1.0), np.zeros((0, 2))
    if len(conf) == 0:
        return 0.0, np.zeros((0, 2))

    order = np.argsort(-conf, kind="stable")
    conf, tp = conf[order], tp[order]
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(~tp)
    # last index of every run of equal confidence
    ends = np.flatnonzero(np.append(conf[1:] != conf[:-1], True))
    precision = cum_tp[ends] / (cum_tp[ends] + cum_fp[ends])
    recall = cum_tp[ends] / float(total_gt)

    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    widths = np.diff(np.concatenate([[0.0], recall]))
    ap = float(np.sum(widths * envelope))
    return ap, np.stack([recall, precision], axis=1)


def fooling_rate(dets_per_image: Sequence[Sequence[Detection]], truths, class_group,
                 iou_thresh: float = MATCH_IOU) -> float:
    """Fraction of ground-truth objects in `class_group` left without a matching detection.

    Detections must already be decoded at the reporting threshold. Returns NaN
    when the group has no ground-truth objects (the rate is undefined).
    """
    group = _as_set(class_group)
    fooled = total = 0
    for dets, truth in zip(dets_per_image, truths):
        m = match_detections(dets, truth, iou_thresh)
        in_group = np.isin(m.gt_labels, group)
        total += int(in_group.sum())
        fooled += int((in_group & ~m.gt_matched).sum())
    if total == 0:
        return math.nan
    return fooled / total


# -- baselines -----------------------------------------------------------------

def make_baseline_patch(kind: str, manual: ManualParams, seed: int = 0):
    """CLEAN -> empty patch, RANDOM -> random shapes, RED/CYAN -> uniform full-frame tint."""
    kind = kind.upper()
    if kind == "CLEAN":
        return PatchParams.empty(manual)
    if kind == "RANDOM":
        return init_free_params(manual, seed)
    if kind == "RED":
        return UniformPatch((1.0, 0.0, 0.0), manual.alpha_max)
    if kind == "CYAN":
        return UniformPatch((0.0, 1.0, 1.0), manual.alpha_max)
    raise ValueError(f"unknown baseline kind {kind!r}; expected CLEAN, RANDOM, RED or CYAN")


# -- reports -------------------------------------------------------------------

@dataclass
class EvalReport:
    condition: str
    class_names: tuple[str, ...]
    target_class: int
    per_class_ap: dict[str, float]
    target_ap: float
    untargeted_ap: float
    fooling_rate: dict[str, float]
    detection_counts: dict[str, int]
    pr_curves: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "class_names": list(self.class_names),
            "target_class": self.class_names[self.target_class],
            "target_ap": self.target_ap,
            "untargeted_ap": self.untargeted_ap,
            "per_class_ap": self.per_class_ap,
            "fooling_rate": {k: (None if math.isnan(v) else v) for k, v in self.fooling_rate.items()},
            "detection_counts": self.detection_counts,
        }


def detect_scenes(detector, scenes, patch=None, conf_threshold: float = DECODE_THRESHOLD,
                  nms_iou: float = 0.45, batch_size: int = 64) -> list[list[Detection]]:
    out: list[list[Detection]] = []
    with torch.no_grad():
        for _, images, _ in scenes.batches(batch_size):
            if patch is not None:
                images = render_and_apply(patch, images)
            out.extend(decode(detector.detect_raw(images), conf_threshold, nms_iou))
    return out


def report_from_detections(dets, truths, class_names, target_class: int, condition: str,
                           fooling_dets=None) -> EvalReport:
    matches = pool_matches([match_detections(d, t) for d, t in zip(dets, truths)])
    others = [c for c in range(len(class_names)) if c != target_class]
    per_class, curves = {}, {}
    for c, name in enumerate(class_names):
        ap, pr = average_precision(matches, c)
        per_class[name] = ap
        curves[name] = pr
    target_ap, curves["target"] = average_precision(matches, target_class)
    untargeted_ap, curves["untargeted"] = average_precision(matches, others)
    fdets = dets if fooling_dets is None else fooling_dets
    return EvalReport(
        condition=condition,
        class_names=tuple(class_names),
        target_class=target_class,
        per_class_ap=per_class,
        target_ap=target_ap,
        untargeted_ap=untargeted_ap,
        fooling_rate={
            "target": fooling_rate(fdets, truths, target_class),
            "untargeted": fooling_rate(fdets, truths, others),
        },
        detection_counts={
            "detections": int(len(matches.tp)),
            "true_positives": matches.n_tp,
            "false_positives": matches.n_fp,
            "missed": matches.n_fn,
        },
        pr_curves=curves,
    )


def evaluate_condition(detector, scenes, patch, condition: str, target_class: int,
                       ap_threshold: float = DECODE_THRESHOLD, nms_iou: float = 0.45) -> EvalReport:
    """Apply `patch` (None for clean) to every scene and score the detector.

    AP is computed from detections decoded at `ap_threshold`; fooling rates
    always use the 0.4 reporting threshold.
    """
    dets = detect_scenes(detector, scenes, patch, ap_threshold, nms_iou)
    fdets = None
    if ap_threshold != DECODE_THRESHOLD:
        fdets = detect_scenes(detector, scenes, patch, DECODE_THRESHOLD, nms_iou)
    return report_from_detections(dets, scenes.truths, scenes.class_names, target_class, condition, fdets)


def save_report(report: EvalReport, directory: str | Path) -> list[Path]:
    """Write <condition>.json plus one two-column PR csv per class / group."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [directory / f"{report.condition}.json"]
    written[0].write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    for name, pr in report.pr_curves.items():
        path = directory / f"{report.condition}_pr_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["recall", "precision"])
            w.writerows([[f"{r:.6f}", f"{p:.6f}"] for r, p in pr])
        written.append(path)
    return written


def plot_pr_curves(reports: Sequence[EvalReport], group: str, path: str | Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 4))
    for rep in reports:
        pr = rep.pr_curves.get(group, np.zeros((0, 2)))
        ap = rep.target_ap if group == "target" else rep.untargeted_ap if group == "untargeted" \
            else rep.per_class_ap.get(group, float("nan"))
        if len(pr):
            r = np.concatenate([[0.0], pr[:, 0]])
            p = np.concatenate([[pr[0, 1]], pr[:, 1]])
            ax.step(r, p, where="post", label=f"{rep.condition} (AP {100 * ap:.1f})")
        else:
            ax.plot([], [], label=f"{rep.condition} (AP {100 * ap:.1f})")
    ax.set_xlim(0, 1.0)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title(group)
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


# -- sweeps ----------------------------------------------------------------------

PAPER_SWEEPS = {
    "n_shapes": (3, 5, 7, 10, 15),
    "alpha_max": (0.1, 0.3, 0.5, 0.7, 0.9),
}


@dataclass(frozen=True)
class SweepRow:
    value: float
    target_ap: float
    untargeted_ap: float


def run_sweep(axis: str, values: Sequence, train, val, test, detector, config,
              manual: ManualParams, target_class: int, cache: dict | None = None,
              printable=None) -> list[SweepRow]:
    """Optimize then evaluate on `test` once per value of `axis`; rows in input order.

    `cache` (optional) maps (n_shapes, alpha_max) to an already-optimized
    PatchParams so overlapping sweep points are not retrained.
    """
    from .optimizer import optimize_patch

    if axis not in PAPER_SWEEPS:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {sorted(PAPER_SWEEPS)}")
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for value in values:
        m = replace(manual, n_shapes=int(value)) if axis == "n_shapes" else replace(manual, alpha_max=float(value))
        key = (m.n_shapes, m.alpha_max)
        if cache is not None and key in cache:
            params = cache[key]
        else:
            params, _ = optimize_patch(train, val, detector, config, m, target_class, printable)
            if cache is not None:
                cache[key] = params
        rep = evaluate_condition(detector, test, params, f"{axis}={value}", target_class)
        rows.append(SweepRow(float(value), rep.target_ap, rep.untargeted_ap))
    return rows


def save_sweep(rows: Sequence[SweepRow], axis: str, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([axis, "target_ap", "untargeted_ap"])
        for r in rows:
            w.writerow([f"{r.value:g}", f"{r.target_ap:.6f}", f"{r.untargeted_ap:.6f}"])
    return path
