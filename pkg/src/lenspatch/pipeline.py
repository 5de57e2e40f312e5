"""Glue between a RunConfig and the modules: datasets, detector, attack and evaluation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .data import (
    SceneSet,
    SyntheticConfig,
    concat_scenes,
    load_manifest,
    scenes_from_manifest,
    split_scenes,
    synthetic_scenes,
)
from .detector import GridDetector, load_detector, save_detector, train_toy_detector
from .evaluation import EvalReport, evaluate_condition, make_baseline_patch
from .losses import load_printable_colors
from .optimizer import TrainingHistory, optimize_patch
from .patch_model import PatchParams

logger = logging.getLogger(__name__)

TEST_SOURCE_SUFFIX = "-test"


@dataclass
class AttackData:
    train: SceneSet
    val: SceneSet
    test: SceneSet

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.train.class_names


def attack_scenes(cfg: RunConfig) -> SceneSet:
    """All scenes the attack works on (train/val pool plus held-out test sources)."""
    if cfg.data.manifests:
        parts = []
        class_names = None
        for m in cfg.data.manifests:
            path = cfg.path(m)
            if not path.is_file():
                raise FileNotFoundError(f"manifest not found: {path}")
            manifest = load_manifest(path, class_names=class_names)
            class_names = manifest.class_names
            parts.append(scenes_from_manifest(manifest))
        return concat_scenes(parts)
    pool = synthetic_scenes(SyntheticConfig(n_scenes=cfg.data.synthetic_scenes, seed=cfg.data.synthetic_seed,
                                            source="synthetic"))
    if cfg.data.synthetic_test_scenes == 0:
        return pool
    test = synthetic_scenes(SyntheticConfig(n_scenes=cfg.data.synthetic_test_scenes,
                                            seed=cfg.data.synthetic_seed + 1,
                                            source="synthetic" + TEST_SOURCE_SUFFIX))
    return concat_scenes([pool, test])


def attack_data(cfg: RunConfig) -> AttackData:
    train, val, test = split_scenes(attack_scenes(cfg), cfg.split)
    return AttackData(train, val, test)


def detector_data(cfg: RunConfig) -> tuple[SceneSet, SceneSet]:
    """Detector training scenes and a held-out set for the clean-AP floor check.

    Drawn with their own seeds so they never overlap the attack scenes.
    """
    d = cfg.detector
    train = synthetic_scenes(SyntheticConfig(n_scenes=d.train_scenes, seed=d.data_seed, source="detector"))
    holdout = synthetic_scenes(SyntheticConfig(n_scenes=d.holdout_scenes, seed=d.data_seed + 1,
                                               source="detector-holdout"))
    return train, holdout


def train_detector(cfg: RunConfig) -> GridDetector:
    train, holdout = detector_data(cfg)
    return train_toy_detector(train, cfg.detector.model, holdout=holdout)


def detector_for(cfg: RunConfig) -> GridDetector:
    path = cfg.path(cfg.detector.checkpoint)
    if not path.is_file():
        raise FileNotFoundError(f"detector checkpoint not found: {path} (run train-detector first)")
    return load_detector(path)


def ensure_detector(cfg: RunConfig) -> GridDetector:
    """Load the configured checkpoint, training and saving it first when absent."""
    path = cfg.path(cfg.detector.checkpoint)
    if path.is_file():
        return load_detector(path)
    logger.info("no checkpoint at %s, training the toy detector", path)
    det = train_detector(cfg)
    save_detector(det, path)
    return det


def target_index(cfg: RunConfig, class_names) -> int:
    names = list(class_names)
    if cfg.run.target_class not in names:
        raise ConfigError(f"target class {cfg.run.target_class!r} not among classes {names}")
    return names.index(cfg.run.target_class)


def printable_colors(cfg: RunConfig) -> np.ndarray:
    path = cfg.path(cfg.run.printable_colors)
    if path is not None and not path.is_file():
        raise FileNotFoundError(f"printable color file not found: {path}")
    return load_printable_colors(path)


def check_compatible(detector: GridDetector, scenes: SceneSet) -> None:
    if tuple(detector.class_names) != tuple(scenes.class_names):
        raise ConfigError(f"detector classes {list(detector.class_names)} differ from dataset classes "
                          f"{list(scenes.class_names)}")
    w, h = scenes.dims
    if (w, h) != (detector.config.input_width, detector.config.input_height):
        raise ConfigError(f"scenes are {w}x{h} but the detector expects "
                          f"{detector.config.input_width}x{detector.config.input_height}")


def run_attack(cfg: RunConfig, data: AttackData, detector) -> tuple[PatchParams, TrainingHistory]:
    check_compatible(detector, data.train)
    return optimize_patch(data.train, data.val, detector, cfg.optimizer, cfg.patch,
                          target_index(cfg, data.class_names), printable_colors(cfg))


def condition_patch(condition: str, cfg: RunConfig, patch: PatchParams | None):
    condition = condition.upper()
    if condition == "PATCH":
        if patch is None:
            raise ConfigError("PATCH condition needs a patch file")
        return patch
    manual = patch.manual if patch is not None else cfg.patch
    return make_baseline_patch(condition, manual, cfg.run.seed)


def evaluate_conditions(cfg: RunConfig, scenes: SceneSet, detector, patch: PatchParams | None,
                        conditions=None) -> dict[str, EvalReport]:
    conditions = [c.upper() for c in (conditions or cfg.eval.conditions)]
    target = target_index(cfg, scenes.class_names)
    reports = {}
    for cond in conditions:
        reports[cond] = evaluate_condition(detector, scenes, condition_patch(cond, cfg, patch), cond, target,
                                           cfg.eval.ap_threshold, cfg.eval.nms_iou)
    return reports


def write_summary(path: str | Path, summary: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
