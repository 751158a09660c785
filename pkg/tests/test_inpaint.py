import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pixprune.inpaint import (InpaintConfig, InpaintError, diffusion_inpaint, fmm_distance,
                              telea_inpaint)


def laplace_direct(image, mask):
    """Harmonic fill by solving the 4-neighbor Laplace system directly (replicated borders)."""
    H, W = mask.shape
    holes = [tuple(p) for p in np.argwhere(~mask)]
    index = {p: i for i, p in enumerate(holes)}
    A = np.zeros((len(holes), len(holes)))
    rhs = np.zeros((len(holes),) + image.shape[2:])
    for i, (r, c) in enumerate(holes):
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = min(max(r + dr, 0), H - 1), min(max(c + dc, 0), W - 1)
            A[i, i] += 1
            if (rr, cc) in index:
                A[i, index[rr, cc]] -= 1
            else:
                rhs[i] += image[rr, cc]
    out = image.astype(np.float64).copy()
    sol = np.linalg.solve(A, rhs)
    for i, p in enumerate(holes):
        out[p] = sol[i]
    return out


def test_fmm_no_pruned_pixels():
    np.testing.assert_array_equal(fmm_distance(np.ones((4, 5), dtype=bool)), 0.0)


def test_fmm_single_pruned_pixel():
    mask = np.ones((5, 5), dtype=bool)
    mask[2, 2] = False
    d = fmm_distance(mask)
    assert d[2, 2] == 1.0
    assert np.all(d[mask] == 0)


def test_fmm_row_segment_rises_then_falls():
    mask = np.ones((1, 11), dtype=bool)
    mask[0, 2:9] = False
    d = fmm_distance(mask)[0, 2:9]
    np.testing.assert_allclose(d, [1, 2, 3, 4, 3, 2, 1])


def test_fmm_all_pruned_raises():
    with pytest.raises(InpaintError):
        fmm_distance(np.zeros((3, 3), dtype=bool))


def test_fmm_approximates_euclidean_distance():
    mask = np.ones((41, 41), dtype=bool)
    mask[5:36, 5:36] = False
    d = fmm_distance(mask)
    # exact distance inside an axis-aligned square hole is to the nearest edge
    r, c = np.mgrid[0:41, 0:41]
    exact = np.minimum.reduce([r - 4, 36 - r, c - 4, 36 - c]).astype(float)
    hole = ~mask
    assert np.abs(d[hole] - exact[hole]).max() <= 1.0


def test_telea_constant_ring_fills_constant():
    img = np.full((12, 12, 3), 0.25)
    img[4:8, 4:8] = np.random.default_rng(0).random((4, 4, 3))
    mask = np.ones((12, 12), dtype=bool)
    mask[4:8, 4:8] = False
    out = telea_inpaint(img, mask)
    np.testing.assert_allclose(out[4:8, 4:8], 0.25, atol=1e-6)


def test_telea_empty_mask_is_identity(rng):
    img = rng.random((6, 7, 3)).astype(np.float32)
    out = telea_inpaint(img, np.ones((6, 7), dtype=bool))
    np.testing.assert_array_equal(out, img)
    assert out.dtype == img.dtype


def test_telea_all_pruned_raises():
    with pytest.raises(InpaintError):
        telea_inpaint(np.zeros((3, 3)), np.zeros((3, 3), dtype=bool))


@pytest.mark.parametrize("r, c", [(5, 5), (3, 8), (7, 2)])
def test_telea_single_pixel_on_ramp_matches_diffusion(r, c):
    y, x = np.mgrid[0:11, 0:11]
    img = (0.03 * x + 0.05 * y)[..., None].repeat(3, axis=-1)
    mask = np.ones((11, 11), dtype=bool)
    mask[r, c] = False
    t = telea_inpaint(img, mask)
    d = diffusion_inpaint(img, mask)
    assert np.abs(t[r, c] - d[r, c]).max() <= 0.02


def test_telea_is_deterministic(rng):
    img = rng.random((16, 16, 3))
    mask = rng.random((16, 16)) > 0.5
    np.testing.assert_array_equal(telea_inpaint(img, mask), telea_inpaint(img, mask))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (10, 9, 3), elements=st.floats(-2, 2)),
       arrays(np.bool_, (10, 9)), st.integers(1, 4))
def test_inpainters_preserve_kept_pixels_and_range(img, mask, radius):
    if not mask.any():
        mask[0, 0] = True
    cfg = InpaintConfig(radius=radius)
    lo, hi = img[mask].min(axis=0), img[mask].max(axis=0)
    for fn in (telea_inpaint, diffusion_inpaint):
        out = fn(img, mask, cfg)
        np.testing.assert_array_equal(out[mask], img[mask])
        assert np.all(out >= lo - 1e-9) and np.all(out <= hi + 1e-9)


def test_diffusion_constant_boundary():
    img = np.full((8, 8), 0.6)
    mask = np.ones((8, 8), dtype=bool)
    mask[2:6, 1:7] = False
    img[~mask] = 0.0
    np.testing.assert_allclose(diffusion_inpaint(img, mask)[~mask], 0.6, atol=1e-5)


def test_diffusion_width_one_gap_matches_direct_solve():
    # a pruned column between values a and b, replicated at the top and bottom
    a, b = 0.2, 0.9
    img = np.array([[a, 0.0, b]] * 3)
    mask = np.array([[True, False, True]] * 3)
    out = diffusion_inpaint(img, mask)
    np.testing.assert_allclose(out, laplace_direct(img, mask), atol=1e-4)
    np.testing.assert_allclose(out[:, 1], (a + b) / 2, atol=1e-4)


def test_diffusion_random_hole_matches_direct_solve(rng):
    img = rng.random((12, 10, 3))
    mask = rng.random((12, 10)) > 0.35
    np.testing.assert_allclose(diffusion_inpaint(img, mask), laplace_direct(img, mask), atol=1e-4)


def test_diffusion_reports_non_convergence(rng):
    img = rng.random((20, 20))
    mask = np.ones((20, 20), dtype=bool)
    mask[2:18, 2:18] = False
    with pytest.raises(InpaintError):
        diffusion_inpaint(img, mask, InpaintConfig(max_iters=3))


def test_config_validation():
    with pytest.raises(ValueError):
        InpaintConfig(radius=0)
    with pytest.raises(ValueError):
        InpaintConfig(tol=0.0)
