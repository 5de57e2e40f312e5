"""Differentiable rendering of translucent oval patches and lens-style alpha blending.

Pixel (i, j) means (column, row) with the origin at the top-left corner.
All functions accept torch tensors and keep the autograd graph intact, so
gradients flow from blended images back to every free shape parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .patch_model import ManualParams, PatchParams, ShapeParams

# Lower bound on the shear matrix determinant 1 - sh_x * sh_y; the map is
# singular at sh_x = sh_y = +-1.
SHEAR_DET_FLOOR = 0.05


class RenderError(ValueError):
    pass


@dataclass
class PatchImage:
    """Full-frame RGBA patch: color (3, H, W) and alpha (H, W)."""

    color: torch.Tensor
    alpha: torch.Tensor

    @property
    def width(self) -> int:
        return self.alpha.shape[-1]

    @property
    def height(self) -> int:
        return self.alpha.shape[-2]


@dataclass(frozen=True)
class UniformPatch:
    """A single full-frame region of one color at constant opacity."""

    color: tuple[float, float, float]
    alpha: float


def _pixel_grid(dims: tuple[int, int], dtype, device=None):
    p_w, p_h = dims
    cols = torch.arange(p_w, dtype=dtype, device=device)
    rows = torch.arange(p_h, dtype=dtype, device=device)
    return cols.view(1, 1, p_w), rows.view(1, p_h, 1)


def shape_alpha_maps(
    tensors: dict[str, torch.Tensor], manual: ManualParams, dims: tuple[int, int]
) -> torch.Tensor:
    """Per-shape opacity fields, shape (n, p_h, p_w).

    The pixel offset from the shape center is pulled back through the inverse
    of the shear matrix [[1, sh_x], [sh_y, 1]] before the squared normalized
    distance d is taken, so level sets of alpha are sheared ovals.
    """
    p_w, p_h = int(dims[0]), int(dims[1])
    if p_w < 1 or p_h < 1:
        raise RenderError(f"patch dims must be positive, got {dims}")
    half_min = min(p_w, p_h) // 2
    if half_min == 0:
        raise RenderError(f"patch dims {dims} give a zero normalized radius")

    center, radius, shear = tensors["center"], tensors["radius"], tensors["shear"]
    n = radius.shape[0]
    if n == 0:
        return torch.zeros((0, p_h, p_w), dtype=radius.dtype, device=radius.device)

    cols, rows = _pixel_grid((p_w, p_h), radius.dtype, radius.device)
    x_c = (1.0 - center[:, 0]).view(n, 1, 1) * (p_w // 2)
    y_c = (1.0 - center[:, 1]).view(n, 1, 1) * (p_h // 2)
    r_norm = radius.view(n, 1, 1) * half_min

    u = cols - x_c
    v = rows - y_c
    sh_x = shear[:, 0].view(n, 1, 1)
    sh_y = shear[:, 1].view(n, 1, 1)
    det = torch.clamp(1.0 - sh_x * sh_y, min=SHEAR_DET_FLOOR)
    q_x = (u - sh_x * v) / det
    q_y = (v - sh_y * u) / det

    d = (q_x**2 + q_y**2) / r_norm**2
    return radial_alpha(d, manual)


def radial_alpha(d: torch.Tensor, manual: ManualParams) -> torch.Tensor:
    """alpha_max * (1 - s * d**beta), clamped below at zero; d is the squared normalized distance."""
    return torch.clamp(manual.alpha_max * (1.0 - manual.s * d**manual.beta), min=0.0)


def shape_alpha_map(shape: ShapeParams, manual: ManualParams, dims: tuple[int, int],
                    dtype=torch.float64) -> torch.Tensor:
    """Opacity field (p_h, p_w) of a single shape."""
    one = PatchParams((shape,), replace(manual, n_shapes=1))
    return shape_alpha_maps(one.to_tensors(dtype), manual, dims)[0]


def composite_tensors(
    tensors: dict[str, torch.Tensor], manual: ManualParams, dims: tuple[int, int]
) -> PatchImage:
    """Alpha-over accumulation of the shapes in list order onto transparency."""
    layers = shape_alpha_maps(tensors, manual, dims)
    color, acc_alpha = accumulate_over(layers, tensors["color"])
    return PatchImage(color, torch.clamp(acc_alpha, 0.0, manual.alpha_max))


def accumulate_over(layers: torch.Tensor, colors: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Alpha-over of (n, H, W) layers with (n, 3) colors; returns (color, alpha) before any clamp.

    Color is un-premultiplied and set to 0 where nothing covers the pixel.
    """
    n, p_h, p_w = layers.shape
    acc_alpha = layers.new_zeros((p_h, p_w))
    premult = layers.new_zeros((3, p_h, p_w))
    for k in range(n):
        a_k = layers[k]
        premult = colors[k].view(3, 1, 1) * a_k + premult * (1.0 - a_k)
        acc_alpha = a_k + acc_alpha * (1.0 - a_k)
    covered = acc_alpha > 0
    safe = torch.where(covered, acc_alpha, torch.ones_like(acc_alpha))
    return torch.where(covered, premult / safe, torch.zeros_like(premult)), acc_alpha


def composite_shapes(params: PatchParams, dims: tuple[int, int], dtype=torch.float64) -> PatchImage:
    return composite_tensors(params.to_tensors(dtype), params.manual, dims)


def render_patch(patch, dims: tuple[int, int], dtype=torch.float64) -> PatchImage:
    """Render PatchParams or a UniformPatch to a full-frame PatchImage."""
    if isinstance(patch, UniformPatch):
        p_w, p_h = dims
        color = torch.tensor(patch.color, dtype=dtype).view(3, 1, 1).expand(3, p_h, p_w).clone()
        alpha = torch.full((p_h, p_w), float(patch.alpha), dtype=dtype)
        return PatchImage(color, alpha)
    if isinstance(patch, PatchParams):
        return composite_shapes(patch, dims, dtype)
    if isinstance(patch, PatchImage):
        return patch
    raise TypeError(f"cannot render {type(patch).__name__}")


def alpha_blend(scene: torch.Tensor, patch: PatchImage) -> torch.Tensor:
    """perturbed = original * (1 - alpha) + color * alpha, per channel.

    `scene` is (3, H, W) or (B, 3, H, W); the patch broadcasts over the batch.
    """
    if tuple(scene.shape[-2:]) != tuple(patch.alpha.shape):
        raise RenderError(
            f"scene is {tuple(scene.shape[-2:])} (H, W) but patch is {tuple(patch.alpha.shape)}"
        )
    alpha = patch.alpha.to(scene.dtype).unsqueeze(0)
    color = patch.color.to(scene.dtype)
    return scene * (1.0 - alpha) + color * alpha


def render_and_apply(patch, scene: torch.Tensor) -> torch.Tensor:
    """Render `patch` at the scene resolution and blend it over every image."""
    dims = (scene.shape[-1], scene.shape[-2])
    if isinstance(patch, PatchParams) and not patch.shapes:
        return scene
    return alpha_blend(scene, render_patch(patch, dims, scene.dtype))


def render_and_apply_tensors(tensors, manual: ManualParams, scene: torch.Tensor) -> torch.Tensor:
    dims = (scene.shape[-1], scene.shape[-2])
    return alpha_blend(scene, composite_tensors(tensors, manual, dims))


# -- raster export -----------------------------------------------------------

def patch_to_rgba(patch: PatchImage) -> np.ndarray:
    rgba = torch.cat([patch.color, patch.alpha.unsqueeze(0)], dim=0).detach().cpu().numpy()
    rgba = np.clip(rgba, 0.0, 1.0)
    return np.round(rgba.transpose(1, 2, 0) * 255.0).astype(np.uint8)


def save_patch_png(patch: PatchImage, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(patch_to_rgba(patch), mode="RGBA").save(path)
    return path


def load_patch_png(path: str | Path) -> PatchImage:
    arr = np.asarray(Image.open(path).convert("RGBA"), dtype=np.float64) / 255.0
    t = torch.from_numpy(arr.transpose(2, 0, 1).copy())
    return PatchImage(t[:3], t[3])
