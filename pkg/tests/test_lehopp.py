import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pixprune import lehopp, scenegen
from pixprune.lehopp import AccumState

from conftest import scene_inputs


def test_proxy_constant_image():
    X = np.full((5, 4, 3), 0.7)
    np.testing.assert_allclose(lehopp.inpaint_proxy(X), 0.7)


def test_proxy_center_of_ring():
    X = np.ones((3, 3, 1))
    X[1, 1] = 0.0
    assert lehopp.inpaint_proxy(X)[1, 1, 0] == pytest.approx(1.0)


def test_proxy_single_pixel():
    X = np.array([[[0.2, -1.0, 3.0]]])
    np.testing.assert_allclose(lehopp.inpaint_proxy(X), X)


def test_proxy_matches_explicit_neighbor_loop(rng):
    X = rng.normal(size=(6, 7, 3))
    P = np.pad(X, ((1, 1), (1, 1), (0, 0)), mode="edge")
    expect = np.zeros_like(X)
    for r in range(6):
        for c in range(7):
            nb = [P[r + 1 + i, c + 1 + j] for i in (-1, 0, 1) for j in (-1, 0, 1) if i or j]
            expect[r, c] = np.mean(nb, axis=0)
    np.testing.assert_allclose(lehopp.inpaint_proxy(X), expect, atol=1e-12)


def test_importance_single_cases():
    X = np.zeros((1, 1, 3))
    grad = np.ones((1, 1, 3))
    assert lehopp.importance_single(grad, X, X)[0, 0] == 0.0
    Xi = X + 0.4
    assert lehopp.importance_single(np.zeros_like(grad), X, Xi)[0, 0] == 0.0
    g = np.array([[[0.5, 0.0, 0.0]]])
    Xi = np.array([[[0.2, 0.0, 0.0]]])
    assert lehopp.importance_single(g, X, Xi)[0, 0] == pytest.approx(0.1)


def test_importance_single_validation():
    X = np.zeros((2, 2, 3))
    with pytest.raises(ValueError):
        lehopp.importance_single(np.ones((2, 3, 3)), X, X)
    with pytest.raises(ValueError):
        lehopp.importance_single(-np.ones((2, 2, 3)), X, X)


def test_first_order_estimate_mirrors_importance(rng):
    X = rng.normal(size=(4, 4, 3))
    Xi = lehopp.inpaint_proxy(X)
    grad = rng.normal(size=X.shape)
    imp = lehopp.importance_single(np.abs(grad), X, Xi)
    for r, c in [(0, 0), (1, 2), (3, 3)]:
        assert lehopp.first_order_estimate(grad, X, Xi, (r, c)) == pytest.approx(imp[r, c])
    assert lehopp.first_order_estimate(np.zeros_like(X), X, Xi, (1, 1)) == 0.0
    assert lehopp.first_order_estimate(grad, X, X, (1, 1)) == 0.0


def test_finalize_single_target_is_abs_grads(rng):
    g = {0: rng.normal(size=(3, 3, 3)), 1: rng.normal(size=(3, 3, 3))}
    out = lehopp.finalize_targets(lehopp.accumulate_targets(AccumState(), g))
    for vid in g:
        np.testing.assert_array_equal(out[vid], np.abs(g[vid]))


def test_finalize_mean_of_equal_targets(rng):
    g = rng.normal(size=(2, 2, 3))
    st_ = AccumState().add({0: g}).add({0: g})
    np.testing.assert_allclose(lehopp.finalize_targets(st_)[0], np.abs(g))


def test_finalize_uses_per_view_divisor(rng):
    g = rng.normal(size=(2, 2, 3))
    st_ = AccumState().add({0: g, 1: g}).add({1: g})
    assert st_.target_count == 2
    out = lehopp.finalize_targets(st_)
    np.testing.assert_allclose(out[0], np.abs(g))
    np.testing.assert_allclose(out[1], np.abs(g))


def test_finalize_without_targets_raises():
    with pytest.raises(ValueError):
        lehopp.finalize_targets(AccumState())


def test_accumulate_rejects_non_finite():
    with pytest.raises(ValueError):
        AccumState().add({0: np.array([[[np.nan, 0, 0]]])})


def test_accumulate_frames_cases(rng):
    m = rng.random((3, 4))
    np.testing.assert_array_equal(lehopp.accumulate_frames([m]), m)
    np.testing.assert_allclose(lehopp.accumulate_frames([m, m]), 2 * m)
    maps = [rng.random((3, 4)) for _ in range(5)]
    np.testing.assert_allclose(lehopp.accumulate_frames(maps),
                               lehopp.accumulate_frames(maps[::-1]), rtol=1e-12)
    with pytest.raises(ValueError):
        lehopp.accumulate_frames([m, m], view_ids=[0, 1])
    with pytest.raises(ValueError):
        lehopp.accumulate_frames([m, m, m], intra_period=2)


def test_build_mask_cases():
    assert lehopp.build_mask(np.arange(6.0).reshape(2, 3), 0.0).all()
    mask = lehopp.build_mask(np.array([[1.0, 2.0], [3.0, 4.0]]), 0.5)
    np.testing.assert_array_equal(mask, [[False, False], [True, True]])
    mask = lehopp.build_mask(np.zeros((2, 2)), 0.25)
    np.testing.assert_array_equal(mask, [[False, True], [True, True]])
    assert not lehopp.build_mask(np.ones((3, 3)), 1.0).any()
    with pytest.raises(ValueError):
        lehopp.build_mask(np.ones((2, 2)), 1.5)


def test_prune_count_rounds_half_up():
    assert lehopp.prune_count(0.5, 3) == 2
    assert lehopp.prune_count(0.1, 4096) == 410
    assert lehopp.prune_count(0.05, 1024) == 51


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.floats(0, 100)),
       st.floats(0, 1))
def test_build_mask_exact_count_and_rank_invariance(imp, gamma):
    mask = lehopp.build_mask(imp, gamma)
    assert (~mask).sum() == lehopp.prune_count(gamma, imp.size)
    # strictly monotone rescaling leaves the mask unchanged
    np.testing.assert_array_equal(lehopp.build_mask(np.exp(imp / 50.0) * 3 + 1, gamma), mask)
    if (~mask).any() and mask.any():
        assert imp[~mask].max() <= imp[mask].min()


def test_global_scope_ranks_jointly_with_view_tie_break():
    maps = {1: np.zeros((2, 2)), 0: np.array([[0.0, 5.0], [5.0, 5.0]])}
    out = lehopp.build_masks(maps, 0.5, scope="global")
    # 4 pruned among 8: the five zeros tie; view 0's zero comes first
    np.testing.assert_array_equal(out[0], [[False, True], [True, True]])
    np.testing.assert_array_equal(out[1], [[False, False], [False, True]])
    per = lehopp.build_masks(maps, 0.5)
    assert all((~m).sum() == 2 for m in per.values())
    with pytest.raises(ValueError):
        lehopp.build_masks(maps, 0.5, scope="nope")


def test_apply_mask_cases(rng):
    img = rng.random((6, 6, 3)).astype(np.float32)
    keep = np.ones((6, 6), dtype=bool)
    for fill in ("inpaint", "hold"):
        np.testing.assert_array_equal(lehopp.apply_mask(img, keep, fill), img)
    np.testing.assert_array_equal(lehopp.apply_mask(img, ~keep, "hold"), 0.5)
    mask = rng.random((6, 6)) > 0.4
    for fill in ("inpaint", "hold"):
        out = lehopp.apply_mask(img, mask, fill)
        np.testing.assert_array_equal(out[mask], img[mask])
    with pytest.raises(ValueError):
        lehopp.apply_mask(img, np.ones((5, 6), dtype=bool))
    with pytest.raises(ValueError):
        lehopp.apply_mask(img, mask, "blur")


def test_rank_correlation_cases():
    assert lehopp.rank_correlation([3, 1, 2], [3, 1, 2]) == pytest.approx(1.0)
    assert lehopp.rank_correlation([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    # hand evaluation: rank differences (0, 1, 1), rho = 1 - 6*2 / (3*8)
    assert lehopp.rank_correlation([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        lehopp.rank_correlation([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        lehopp.rank_correlation([1, 1, 1], [1, 2, 3])


def test_rank_correlation_average_ranks_for_ties():
    from scipy.stats import spearmanr

    a = [1, 2, 2, 3, 5, 5]
    b = [2, 1, 4, 3, 6, 5]
    assert lehopp.rank_correlation(a, b) == pytest.approx(spearmanr(a, b).statistic)


def test_prune_config_validation():
    with pytest.raises(ValueError):
        lehopp.PruneConfig(gamma=-0.1)
    with pytest.raises(ValueError):
        lehopp.PruneConfig(intra_period=0)
    with pytest.raises(ValueError):
        lehopp.PruneConfig(scope="local")


# -- renders against ground truth ------------------------------------------


@pytest.fixture(scope="module")
def tiny():
    images, geometry, task = scene_inputs(scenegen.desk_scene(0, n_views=3, width=24))
    # an exactly flat patch (0 sums without rounding) in the first source
    vid = task.source_ids[0]
    images[vid] = images[vid].copy()
    images[vid][8:16, 8:16] = 0.0
    return images, geometry, task


def test_frame_importance_is_nonnegative_and_zero_on_flat_areas(tiny):
    images, geometry, task = tiny
    maps = lehopp.frame_importance(images, geometry, [task])
    assert set(maps) == set(images)
    np.testing.assert_array_equal(maps[task.target_id], 0.0)
    for vid, m in maps.items():
        assert m.shape == images[vid].shape[:2]
        assert np.all(m >= 0) and np.all(np.isfinite(m))
        X = images[vid]
        flat = np.all(X == lehopp.inpaint_proxy(X), axis=-1)
        assert np.all(m[flat] == 0)
    assert np.all(maps[task.source_ids[0]][9:15, 9:15] == 0)


def test_frame_importance_target_order_invariant(tiny):
    images, geometry, _ = tiny
    tasks = []
    for tid in sorted(images):
        others = tuple(v for v in sorted(images) if v != tid)
        tasks.append(lehopp.TargetTask(tid, geometry[tid][1], geometry[tid][0], images[tid], others))
    a = lehopp.frame_importance(images, geometry, tasks)
    b = lehopp.frame_importance(images, geometry, tasks[::-1])
    for vid in a:
        np.testing.assert_array_equal(a[vid], b[vid])


def test_oracle_flat_pixel_is_noop(tiny):
    images, geometry, task = tiny
    vid = task.source_ids[0]
    X = images[vid]
    flat = np.argwhere(np.all(X == lehopp.inpaint_proxy(X), axis=-1))
    assert flat.size
    dl = lehopp.oracle_delta_loss(images, geometry, vid, tuple(flat[0]), [task])
    assert abs(dl) <= 1e-10


def test_oracle_unsampled_pixel_has_zero_estimate_and_change(tiny):
    images, geometry, task = tiny
    _, grads = lehopp.target_gradients(images, geometry, task)
    vid = task.source_ids[0]
    X = images[vid]
    resid = np.abs(X - lehopp.inpaint_proxy(X)).sum(axis=-1)
    idle = np.argwhere((np.abs(grads[vid]).sum(axis=-1) == 0) & (resid > 0))
    assert idle.size
    px = tuple(idle[0])
    assert lehopp.first_order_estimate(grads[vid], X, lehopp.inpaint_proxy(X), px) == 0.0
    # the renderer is linear in colors, so a pixel off every footprint cannot move the loss
    assert lehopp.oracle_delta_loss(images, geometry, vid, px, [task]) == pytest.approx(0, abs=1e-12)


def test_estimate_tracks_oracle_on_textured_pixels(tiny):
    images, geometry, task = tiny
    _, grads = lehopp.target_gradients(images, geometry, task)
    vid = task.source_ids[0]
    X = images[vid]
    Xi = lehopp.inpaint_proxy(X)
    imp = lehopp.importance_single(np.abs(grads[vid]), X, Xi)
    pix = np.argwhere(imp > 0)
    pick = pix[np.random.default_rng(0).choice(len(pix), 30, replace=False)]
    est = [imp[tuple(p)] for p in pick]
    dl = [abs(lehopp.oracle_delta_loss(images, geometry, vid, tuple(p), [task])) for p in pick]
    assert lehopp.rank_correlation(est, dl) > 0.5
