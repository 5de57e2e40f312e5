from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from lenspatch.patch_model import ManualParams, PatchParams, ShapeParams, init_free_params
from lenspatch.renderer import (
    PatchImage,
    RenderError,
    UniformPatch,
    accumulate_over,
    alpha_blend,
    composite_shapes,
    load_patch_png,
    radial_alpha,
    render_and_apply,
    render_and_apply_tensors,
    render_patch,
    save_patch_png,
    shape_alpha_map,
    shape_alpha_maps,
)

from oracles import alpha_pixel, alpha_scalar, central_differences, over_scalar, relative_error

M = ManualParams()  # 0.4, 0.9, 2.5, 0.03, 0.25, 8
ONE = replace(M, n_shapes=1)


def single(cx=0.0, cy=0.0, r=0.25, shx=0.0, shy=0.0, color=(1.0, 1.0, 1.0), manual=ONE):
    return PatchParams((ShapeParams(cx, cy, r, shx, shy, color),), manual)


# -- radial profile ---------------------------------------------------------------

def test_profile_at_d_quarter_matches_exact_rational():
    # 0.25 ** 2.5 = 1/32 exactly, so the whole expression is rational
    exact = Fraction(2, 5) * (1 - Fraction(9, 10) * Fraction(1, 32))
    assert exact == Fraction(38875, 100000)
    got = float(radial_alpha(torch.tensor(0.25, dtype=torch.float64), M))
    assert abs(got - float(exact)) < 1e-12


@pytest.mark.parametrize("d,expected", [(0.0, 0.4), (1.0, 0.04), (2.0, 0.0)])
def test_profile_reference_points(d, expected):
    got = float(radial_alpha(torch.tensor(d, dtype=torch.float64), M))
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(alpha_scalar(d, 0.4, 0.9, 2.5), abs=1e-15)


def test_far_point_raw_value_is_negative_before_clamp():
    assert 0.4 * (1 - 0.9 * 2 ** 2.5) < 0


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0.0, 0.999), st.floats(0.1, 6.0))
def test_profile_non_increasing_in_d(d1, d2, s, beta):
    m = replace(M, s=s, beta=beta)
    lo, hi = sorted((d1, d2))
    a = radial_alpha(torch.tensor([lo, hi], dtype=torch.float64), m)
    assert a[0] >= a[1]


# -- single-shape field ------------------------------------------------------------

def test_exact_d_pixels_on_a_64_grid():
    # center (0, 0) -> pixel (32, 32); r = 0.25 -> r_norm = 8 px
    alpha = shape_alpha_map(single().shapes[0], M, (64, 64))
    assert alpha[32, 32].item() == pytest.approx(0.4, abs=1e-12)
    assert alpha[32, 36].item() == pytest.approx(0.38875, abs=1e-12)  # offset 4 px -> d = 0.25
    assert alpha[32, 40].item() == pytest.approx(0.04, abs=1e-12)  # offset 8 px -> d = 1


def test_center_zero_peaks_at_frame_middle():
    alpha = shape_alpha_map(single(r=0.1).shapes[0], M, (65, 47))
    row, col = divmod(int(torch.argmax(alpha)), 65)
    assert (col, row) == (65 // 2, 47 // 2)


def test_plus_one_center_maps_to_column_zero():
    alpha = shape_alpha_map(single(cx=1.0, cy=1.0, r=0.1).shapes[0], M, (64, 64))
    assert alpha[0, 0].item() == pytest.approx(0.4)


@settings(max_examples=30)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.03, 0.25), st.floats(-1, 1), st.floats(-1, 1),
       st.sampled_from([(16, 16), (20, 13), (9, 31)]))
def test_field_matches_per_pixel_oracle(cx, cy, r, shx, shy, dims):
    shape = ShapeParams(cx, cy, r, shx, shy, (0.5, 0.5, 0.5))
    got = shape_alpha_map(shape, M, dims).numpy()
    p_w, p_h = dims
    want = np.array([[alpha_pixel(c, rr, cx, cy, r, shx, shy, p_w, p_h, 0.4, 0.9, 2.5)
                      for c in range(p_w)] for rr in range(p_h)])
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_shear_tilts_the_oval():
    plain = shape_alpha_map(single().shapes[0], M, (64, 64))
    sheared = shape_alpha_map(single(shx=0.6).shapes[0], M, (64, 64))
    assert torch.allclose(plain, plain.T)
    assert not torch.allclose(sheared, plain)
    # sheared oval keeps its peak at the center
    assert sheared[32, 32].item() == pytest.approx(0.4)


def test_degenerate_dims_are_reported():
    with pytest.raises(RenderError):
        shape_alpha_map(single().shapes[0], M, (1, 1))
    with pytest.raises(RenderError):
        shape_alpha_map(single().shapes[0], M, (0, 10))


# -- compositing ---------------------------------------------------------------------

def test_over_operator_worked_example():
    layers = torch.full((2, 1, 1), 0.3, dtype=torch.float64)
    colors = torch.tensor([[1.0, 0, 0], [0, 0, 1.0]], dtype=torch.float64)
    color, alpha = accumulate_over(layers, colors)
    want_a, want_c = over_scalar([(0.3, (1, 0, 0)), (0.3, (0, 0, 1))])
    assert alpha.item() == pytest.approx(0.51, abs=1e-15)
    assert want_a == pytest.approx(0.51, abs=1e-15)
    np.testing.assert_allclose(color[:, 0, 0].numpy(), want_c, atol=1e-15)
    np.testing.assert_allclose(want_c, np.array([0.21, 0, 0.3]) / 0.51, atol=1e-15)


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(0, 1), st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))),
                min_size=1, max_size=6))
def test_over_accumulation_matches_scalar_oracle(layers):
    t_layers = torch.tensor([[[a]] for a, _ in layers], dtype=torch.float64)
    t_colors = torch.tensor([c for _, c in layers], dtype=torch.float64)
    color, alpha = accumulate_over(t_layers, t_colors)
    want_a, want_c = over_scalar(layers)
    assert alpha.item() == pytest.approx(want_a, abs=1e-12)
    if want_a > 1e-9:
        np.testing.assert_allclose(color[:, 0, 0].numpy(), want_c, atol=1e-9)


def test_single_shape_composite_is_identity_over_transparency():
    p = single(color=(0.2, 0.7, 0.1))
    img = composite_shapes(p, (64, 64))
    alpha = shape_alpha_map(p.shapes[0], M, (64, 64))
    assert torch.equal(img.alpha, alpha)
    covered = alpha > 0
    for ch, val in enumerate((0.2, 0.7, 0.1)):
        assert torch.allclose(img.color[ch][covered], torch.tensor(val, dtype=torch.float64))


def test_disjoint_shapes_render_independently():
    m2 = replace(M, n_shapes=2)
    a = ShapeParams(0.6, 0.6, 0.1, 0, 0, (1.0, 0, 0))
    b = ShapeParams(-0.6, -0.6, 0.1, 0, 0, (0, 0, 1.0))
    both = composite_shapes(PatchParams((a, b), m2), (64, 64))
    only_a = composite_shapes(PatchParams((a,), ONE), (64, 64))
    only_b = composite_shapes(PatchParams((b,), ONE), (64, 64))
    assert torch.equal(both.alpha, only_a.alpha + only_b.alpha)
    region_a = only_a.alpha > 0
    assert torch.equal(both.color[:, region_a], only_a.color[:, region_a])


def test_overlap_is_clamped_to_alpha_max():
    m2 = replace(M, n_shapes=2)
    s = ShapeParams(0.0, 0.0, 0.2, 0, 0, (1.0, 1.0, 1.0))
    img = composite_shapes(PatchParams((s, s), m2), (64, 64))
    assert img.alpha.max().item() == pytest.approx(0.4)


@st.composite
def patches(draw, max_shapes=6):
    n = draw(st.integers(1, max_shapes))
    seed = draw(st.integers(0, 2**31 - 1))
    manual = replace(M, n_shapes=n, alpha_max=draw(st.floats(0.0, 1.0)), s=draw(st.floats(0, 1)),
                     beta=draw(st.floats(0.2, 5.0)))
    return init_free_params(manual, seed)


@settings(max_examples=40)
@given(patches(), st.integers(0, 2**31 - 1))
def test_output_ranges(p, seed):
    img = composite_shapes(p, (24, 18))
    assert float(img.alpha.min()) >= 0.0
    assert float(img.alpha.max()) <= p.manual.alpha_max + 1e-12
    assert float(img.color.min()) >= -1e-12 and float(img.color.max()) <= 1 + 1e-12
    scene = torch.from_numpy(np.random.default_rng(seed).uniform(0, 1, (3, 18, 24)))
    out = render_and_apply(p, scene)
    assert float(out.min()) >= -1e-12 and float(out.max()) <= 1 + 1e-12


# -- blending ------------------------------------------------------------------------

def _flat_patch(alpha, color, h=4, w=5):
    return PatchImage(torch.tensor(color, dtype=torch.float64).view(3, 1, 1).expand(3, h, w).clone(),
                      torch.full((h, w), alpha, dtype=torch.float64))


def test_blend_identity_and_opaque_cases():
    scene = torch.rand(3, 4, 5, dtype=torch.float64)
    assert torch.equal(alpha_blend(scene, _flat_patch(0.0, (0.3, 0.2, 0.9))), scene)
    opaque = alpha_blend(scene, _flat_patch(1.0, (0.3, 0.2, 0.9)))
    assert torch.equal(opaque, _flat_patch(1.0, (0.3, 0.2, 0.9)).color)


def test_blend_worked_pixel():
    scene = torch.full((3, 4, 5), 0.6, dtype=torch.float64)
    out = alpha_blend(scene, _flat_patch(0.25, (0.2, 0.2, 0.2)))
    assert out[0, 0, 0].item() == pytest.approx(0.5, abs=1e-15)


def test_blend_dimension_mismatch():
    with pytest.raises(RenderError):
        alpha_blend(torch.zeros(3, 5, 5), _flat_patch(0.5, (1, 1, 1)))


def test_empty_patch_leaves_scene_untouched():
    scene = torch.rand(2, 3, 16, 16)
    assert torch.equal(render_and_apply(PatchParams.empty(M), scene), scene)


def test_white_shape_on_black_scene_center_value():
    out = render_and_apply(single(), torch.zeros(3, 64, 64, dtype=torch.float64))
    np.testing.assert_allclose(out[:, 32, 32].numpy(), [0.4, 0.4, 0.4], atol=1e-15)


def test_red_uniform_on_white():
    out = render_and_apply(UniformPatch((1.0, 0.0, 0.0), 0.4), torch.ones(3, 8, 8, dtype=torch.float64))
    np.testing.assert_allclose(out[:, 3, 3].numpy(), [1.0, 0.6, 0.6], atol=1e-15)


def test_patch_is_universal_across_a_batch():
    p = init_free_params(M, 4)
    scenes = torch.rand(3, 3, 32, 32, dtype=torch.float64)
    batch = render_and_apply(p, scenes)
    for k in range(3):
        assert torch.equal(batch[k], render_and_apply(p, scenes[k]))
    assert torch.equal(render_patch(p, (32, 32)).alpha, render_patch(p, (32, 32)).alpha)


def test_tensor_path_matches_value_path():
    p = init_free_params(M, 9)
    scene = torch.rand(2, 3, 32, 32, dtype=torch.float64)
    assert torch.equal(render_and_apply(p, scene), render_and_apply_tensors(p.to_tensors(), M, scene))


# -- gradients -----------------------------------------------------------------------

def _params_away_from_kinks(rng, n):
    while True:
        center = rng.uniform(-0.7, 0.7, (n, 2))
        shear = rng.uniform(-0.6, 0.6, (n, 2))
        if np.all(1 - shear[:, 0] * shear[:, 1] > 0.2):
            break
    return {
        "center": torch.tensor(center),
        "radius": torch.tensor(rng.uniform(0.08, 0.25, n)),
        "shear": torch.tensor(shear),
        "color": torch.tensor(rng.uniform(0.1, 0.9, (n, 3))),
    }


@pytest.mark.parametrize("seed", range(6))
def test_render_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n = 2
    manual = replace(M, n_shapes=n, alpha_max=0.9)  # high cap keeps the overlap clamp inactive
    scene = torch.from_numpy(rng.uniform(0, 1, (3, 24, 24)))
    weights = torch.from_numpy(rng.normal(size=(3, 24, 24)))
    params = _params_away_from_kinks(rng, n)

    def f(p):
        return (render_and_apply_tensors(p, manual, scene) * weights).sum()

    leaves = {k: v.clone().requires_grad_(True) for k, v in params.items()}
    f(leaves).backward()
    numeric = central_differences(f, {k: v.clone() for k, v in params.items()}, step=1e-5)
    for name in params:
        assert relative_error(leaves[name].grad, numeric[name]) < 1e-4, name


# -- raster round trip -----------------------------------------------------------------

def test_png_round_trip_within_one_level(tmp_path):
    img = composite_shapes(init_free_params(M, 2), (40, 30))
    back = load_patch_png(save_patch_png(img, tmp_path / "p.png"))
    assert back.alpha.shape == (30, 40)
    assert float((back.alpha - img.alpha).abs().max()) <= 0.5 / 255 + 1e-12
    assert float((back.color - img.color).abs().max()) <= 0.5 / 255 + 1e-12


def test_maps_shape_and_empty_input():
    p = init_free_params(M, 0)
    assert shape_alpha_maps(p.to_tensors(), M, (20, 10)).shape == (8, 10, 20)
    empty = PatchParams.empty(M).to_tensors()
    assert shape_alpha_maps(empty, M, (20, 10)).shape == (0, 10, 20)
