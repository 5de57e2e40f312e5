"""Translucent lens patches built from a few alpha-blended shapes, attacked against a grid detector."""

from .patch_model import ManualParams, PatchParams, ShapeParams, init_free_params, load_patch, save_patch
from .renderer import PatchImage, UniformPatch, alpha_blend, render_and_apply, render_patch
from .detector import DetectionGrid, Detection, GridDetector, decode, train_toy_detector
from .losses import LossWeights, total_loss
from .optimizer import OptimizerConfig, TrainingHistory, optimize_patch
from .evaluation import EvalReport, average_precision, evaluate_condition, fooling_rate
from .data import GroundTruth, SceneSet, SplitSpec, SyntheticConfig, synthetic_scenes

__version__ = "0.1.0"

__all__ = [
    "ManualParams", "PatchParams", "ShapeParams", "init_free_params", "load_patch", "save_patch",
    "PatchImage", "UniformPatch", "alpha_blend", "render_and_apply", "render_patch",
    "DetectionGrid", "Detection", "GridDetector", "decode", "train_toy_detector",
    "LossWeights", "total_loss", "OptimizerConfig", "TrainingHistory", "optimize_patch",
    "EvalReport", "average_precision", "evaluate_condition", "fooling_rate",
    "GroundTruth", "SceneSet", "SplitSpec", "SyntheticConfig", "synthetic_scenes",
]
