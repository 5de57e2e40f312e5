"""Patch parameterization: free per-shape parameters and the fixed manual block.

A patch is an ordered list of blurry oval shapes. Each shape carries a
center, radius, shear and RGB color (the free parameters the attack
optimizes); opacity parameters and radius bounds are shared by every shape.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

PATCH_FORMAT = "lenspatch-patch/1"

CENTER_BOUNDS = (-1.0, 1.0)
SHEAR_BOUNDS = (-1.0, 1.0)
COLOR_BOUNDS = (0.0, 1.0)


class PatchParamError(ValueError):
    """Raised when a parameter falls outside its admissible domain."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


@dataclass(frozen=True)
class ShapeParams:
    center_x: float
    center_y: float
    radius: float
    shear_x: float
    shear_y: float
    color: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "color", tuple(float(c) for c in self.color))
        if len(self.color) != 3:
            raise PatchParamError("color", "expected an RGB triplet")


@dataclass(frozen=True)
class ManualParams:
    alpha_max: float = 0.4
    s: float = 0.9
    beta: float = 2.5
    r_min: float = 0.03
    r_max: float = 0.25
    n_shapes: int = 8

    @property
    def alpha_min(self) -> float:
        return self.alpha_max * (1.0 - self.s)


@dataclass(frozen=True)
class PatchParams:
    shapes: tuple[ShapeParams, ...]
    manual: ManualParams = field(default_factory=ManualParams)

    def __post_init__(self):
        object.__setattr__(self, "shapes", tuple(self.shapes))
        if len(self.shapes) != self.manual.n_shapes:
            raise PatchParamError(
                "shapes",
                f"got {len(self.shapes)} shapes but manual.n_shapes={self.manual.n_shapes}",
            )

    @classmethod
    def empty(cls, manual: ManualParams | None = None) -> "PatchParams":
        """Zero-shape patch; renders as full transparency."""
        manual = manual or ManualParams()
        return cls((), replace(manual, n_shapes=0))

    def to_tensors(self, dtype=torch.float64) -> dict[str, torch.Tensor]:
        """Stack the free parameters into per-field tensors (leading dim = shape)."""
        n = len(self.shapes)
        center = torch.tensor([[s.center_x, s.center_y] for s in self.shapes], dtype=dtype)
        shear = torch.tensor([[s.shear_x, s.shear_y] for s in self.shapes], dtype=dtype)
        return {
            "center": center.reshape(n, 2),
            "radius": torch.tensor([s.radius for s in self.shapes], dtype=dtype).reshape(n),
            "shear": shear.reshape(n, 2),
            "color": torch.tensor([s.color for s in self.shapes], dtype=dtype).reshape(n, 3),
        }

    @classmethod
    def from_tensors(cls, tensors: dict[str, torch.Tensor], manual: ManualParams) -> "PatchParams":
        center = tensors["center"].detach().cpu().tolist()
        radius = tensors["radius"].detach().cpu().tolist()
        shear = tensors["shear"].detach().cpu().tolist()
        color = tensors["color"].detach().cpu().tolist()
        shapes = [
            ShapeParams(c[0], c[1], r, sh[0], sh[1], tuple(col))
            for c, r, sh, col in zip(center, radius, shear, color)
        ]
        return cls(tuple(shapes), manual)


def validate_manual(params: ManualParams) -> ManualParams:
    """Check the manual block; raise PatchParamError naming the first bad field."""
    checks = [
        ("alpha_max", 0.0 <= params.alpha_max <= 1.0, "must lie in [0, 1]"),
        ("s", 0.0 <= params.s <= 1.0, "must lie in [0, 1]"),
        ("beta", params.beta > 0.0, "must be > 0"),
        ("r_min", 0.0 < params.r_min < 1.0, "must lie in (0, 1)"),
        ("r_max", params.r_min < params.r_max <= 1.0, "radius bounds require r_min < r_max <= 1"),
        ("n_shapes", isinstance(params.n_shapes, (int, np.integer)) and params.n_shapes >= 1,
         "must be a positive integer"),
    ]
    for name, ok, message in checks:
        if not ok or not np.isfinite(float(getattr(params, name))):
            raise PatchParamError(name, f"{message} (got {getattr(params, name)!r})")
    return params


def init_free_params(manual: ManualParams, seed: int) -> PatchParams:
    """Draw every free field uniformly inside its interval."""
    validate_manual(manual)
    rng = np.random.default_rng(seed)
    n = manual.n_shapes
    center = rng.uniform(*CENTER_BOUNDS, size=(n, 2))
    radius = rng.uniform(manual.r_min, manual.r_max, size=n)
    shear = rng.uniform(*SHEAR_BOUNDS, size=(n, 2))
    color = rng.uniform(*COLOR_BOUNDS, size=(n, 3))
    shapes = tuple(
        ShapeParams(
            float(center[k, 0]), float(center[k, 1]), float(radius[k]),
            float(shear[k, 0]), float(shear[k, 1]), tuple(float(c) for c in color[k]),
        )
        for k in range(n)
    )
    return PatchParams(shapes, manual)


def _clip(value: float, lo: float, hi: float) -> float:
    return min(max(float(value), lo), hi)


def project_free_params(params: PatchParams) -> PatchParams:
    """Clamp every free field to its closed interval (idempotent)."""
    m = params.manual
    shapes = tuple(
        ShapeParams(
            _clip(s.center_x, *CENTER_BOUNDS),
            _clip(s.center_y, *CENTER_BOUNDS),
            _clip(s.radius, m.r_min, m.r_max),
            _clip(s.shear_x, *SHEAR_BOUNDS),
            _clip(s.shear_y, *SHEAR_BOUNDS),
            tuple(_clip(c, *COLOR_BOUNDS) for c in s.color),
        )
        for s in params.shapes
    )
    return PatchParams(shapes, m)


@torch.no_grad()
def project_tensors_(tensors: dict[str, torch.Tensor], manual: ManualParams) -> None:
    """In-place tensor counterpart of project_free_params, used after optimizer steps."""
    tensors["center"].clamp_(*CENTER_BOUNDS)
    tensors["radius"].clamp_(manual.r_min, manual.r_max)
    tensors["shear"].clamp_(*SHEAR_BOUNDS)
    tensors["color"].clamp_(*COLOR_BOUNDS)


def within_bounds(params: PatchParams) -> bool:
    m = params.manual
    for s in params.shapes:
        values = [
            (s.center_x, *CENTER_BOUNDS), (s.center_y, *CENTER_BOUNDS),
            (s.radius, m.r_min, m.r_max),
            (s.shear_x, *SHEAR_BOUNDS), (s.shear_y, *SHEAR_BOUNDS),
        ] + [(c, *COLOR_BOUNDS) for c in s.color]
        if not all(np.isfinite(v) and lo <= v <= hi for v, lo, hi in values):
            return False
    return True


# -- serialization -----------------------------------------------------------

def patch_to_dict(params: PatchParams) -> dict:
    return {
        "format": PATCH_FORMAT,
        "manual": asdict(params.manual),
        "shapes": [
            {
                "center_x": s.center_x, "center_y": s.center_y, "radius": s.radius,
                "shear_x": s.shear_x, "shear_y": s.shear_y, "color": list(s.color),
            }
            for s in params.shapes
        ],
    }


def patch_from_dict(doc: dict) -> PatchParams:
    if doc.get("format") != PATCH_FORMAT:
        raise PatchParamError("format", f"unsupported patch format {doc.get('format')!r}")
    manual = ManualParams(**doc["manual"])
    shapes = tuple(ShapeParams(**{**rec, "color": tuple(rec["color"])}) for rec in doc["shapes"])
    return PatchParams(shapes, manual)


def save_patch(params: PatchParams, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(patch_to_dict(params), indent=2) + "\n", encoding="utf-8")
    return path


def load_patch(path: str | Path) -> PatchParams:
    return patch_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
