"""Loss-gradient pixel importance and quantile pruning masks.

The importance of a source pixel is a first-order estimate of how much the
rendering loss moves when the pixel is replaced by an inpainted guess::

    importance(u, v) = sum_c |dL/dX(u, v, c)| * |X(u, v, c) - X_inp(u, v, c)|

with ``X_inp`` the 8-neighbor mean. Gradients from several target renders are
averaged per source view before the product; importance is then summed over
the frames sharing one mask, and the ``gamma`` fraction of least important
pixels is pruned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import inpaint
from .imgio import check_mask
from .renderer import RenderConfig, Source, backward_render, forward_render, mse_loss

HOLD_VALUE = 0.5


@dataclass(frozen=True)
class PruneConfig:
    gamma: float = 0.1
    scope: str = "per-view"  # "per-view" | "global"
    intra_period: int = 16
    fill: str = "inpaint"  # "inpaint" | "hold"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.scope not in ("per-view", "global"):
            raise ValueError(f"unknown scope {self.scope!r}")
        if self.intra_period < 1:
            raise ValueError("intra_period must be >= 1")
        if self.fill not in ("inpaint", "hold"):
            raise ValueError(f"unknown fill {self.fill!r}")


def prune_count(gamma: float, n: int) -> int:
    """``round(gamma * n)`` with halves rounded up."""
    return int(math.floor(gamma * n + 0.5))


def inpaint_proxy(X: np.ndarray) -> np.ndarray:
    """Mean of the 8 neighbors of every pixel, with replicated borders."""
    X = np.asarray(X, dtype=np.float64)
    pad = [(1, 1), (1, 1)] + [(0, 0)] * (X.ndim - 2)
    p = np.pad(X, pad, mode="edge")
    H, W = X.shape[:2]
    # summing differences keeps the residual exactly 0 on locally constant regions
    diff = sum(X - p[i:i + H, j:j + W] for i in range(3) for j in range(3) if (i, j) != (1, 1))
    return X - diff / 8.0


def importance_single(grad_abs: np.ndarray, X: np.ndarray, X_inp: np.ndarray) -> np.ndarray:
    """Channel-summed ``|grad| * |X - X_inp|``; returns an ``(H, W)`` map."""
    grad_abs = np.asarray(grad_abs, dtype=np.float64)
    if not (grad_abs.shape == np.shape(X) == np.shape(X_inp)):
        raise ValueError(f"shape mismatch: {grad_abs.shape}, {np.shape(X)}, {np.shape(X_inp)}")
    if (grad_abs < 0).any():
        raise ValueError("gradient magnitudes must be non-negative")
    return (grad_abs * np.abs(np.asarray(X, np.float64) - X_inp)).sum(axis=-1)


def first_order_estimate(grad, X, X_inp, pixel) -> float:
    """Importance of a single pixel ``(row, col)`` from a (signed or absolute) gradient."""
    r, c = pixel
    g = np.abs(np.asarray(grad, dtype=np.float64)[r, c])
    d = np.abs(np.asarray(X, dtype=np.float64)[r, c] - np.asarray(X_inp, dtype=np.float64)[r, c])
    return float((g * d).sum())


@dataclass
class AccumState:
    """Running sums of ``|dL/dX|`` per source view across target renders."""

    sums: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    target_count: int = 0

    def add(self, grads: dict) -> "AccumState":
        """Fold in the gradients of one target render (``view_id -> (H, W, 3)``)."""
        for vid in sorted(grads):
            g = np.abs(np.asarray(grads[vid], dtype=np.float64))
            if not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient for view {vid}")
            if vid in self.sums:
                if self.sums[vid].shape != g.shape:
                    raise ValueError(f"gradient shape changed for view {vid}")
                self.sums[vid] = self.sums[vid] + g
                self.counts[vid] += 1
            else:
                self.sums[vid] = g
                self.counts[vid] = 1
        self.target_count += 1
        return self


def accumulate_targets(state: AccumState, grads: dict) -> AccumState:
    return state.add(grads)


def finalize_targets(state: AccumState) -> dict:
    """Per-view mean ``|grad|``, dividing by the renders that view took part in."""
    if state.target_count == 0:
        raise ValueError("no target renders accumulated")
    return {vid: state.sums[vid] / state.counts[vid] for vid in sorted(state.sums)}


def accumulate_frames(maps, intra_period: int = 16, view_ids=None) -> np.ndarray:
    """Sum per-frame importance maps of one view over an intra-period."""
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    if not maps:
        raise ValueError("no importance maps given")
    if len(maps) > intra_period:
        raise ValueError(f"{len(maps)} frames exceed the intra-period of {intra_period}")
    if view_ids is not None and len(set(view_ids)) > 1:
        raise ValueError(f"maps belong to different views: {sorted(set(view_ids))}")
    if len({m.shape for m in maps}) > 1:
        raise ValueError("importance maps differ in shape")
    total = np.zeros_like(maps[0])
    for m in maps:
        total = total + m
    return total


def _smallest(flat: np.ndarray, k: int) -> np.ndarray:
    # stable sort: equal values keep flat (row-major) order
    return np.argsort(flat, kind="stable")[:k]


def build_mask(importance: np.ndarray, gamma: float) -> np.ndarray:
    """Keep-mask pruning exactly ``round(gamma * H * W)`` least important pixels."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    importance = np.asarray(importance)
    flat = importance.ravel()
    keep = np.ones(flat.size, dtype=bool)
    keep[_smallest(flat, prune_count(gamma, flat.size))] = False
    return keep.reshape(importance.shape)


def build_masks(maps: dict, gamma: float, scope: str = "per-view") -> dict:
    """Masks for several views; ``global`` ranks all views jointly (tie order: view id, row, col)."""
    if scope == "per-view":
        return {vid: build_mask(maps[vid], gamma) for vid in sorted(maps)}
    if scope != "global":
        raise ValueError(f"unknown scope {scope!r}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    vids = sorted(maps)
    flat = np.concatenate([np.asarray(maps[v]).ravel() for v in vids])
    keep = np.ones(flat.size, dtype=bool)
    keep[_smallest(flat, prune_count(gamma, flat.size))] = False
    out = {}
    start = 0
    for v in vids:
        n = np.asarray(maps[v]).size
        out[v] = keep[start:start + n].reshape(np.shape(maps[v]))
        start += n
    return out


def apply_mask(image: np.ndarray, mask: np.ndarray, fill: str = "inpaint",
               cfg: inpaint.InpaintConfig = inpaint.InpaintConfig()) -> np.ndarray:
    """Replace pruned pixels by Telea inpainting or by the constant hold value."""
    mask = check_mask(mask, np.shape(image)[:2])
    if fill == "hold":
        out = np.array(image, copy=True)
        out[~mask] = HOLD_VALUE
        return out
    if fill == "inpaint":
        return inpaint.telea_inpaint(image, mask, cfg)
    raise ValueError(f"unknown fill {fill!r}")


def rank_correlation(a, b) -> float:
    """Spearman rank correlation with average ranks for ties."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("inputs must be 1-D and of equal length")
    if a.size < 2:
        raise ValueError("need at least two values")
    ra, rb = rankdata(a), rankdata(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float((ra * ra).sum() * (rb * rb).sum()))
    if denom == 0:
        raise ValueError("rank correlation is undefined for constant input")
    return float((ra * rb).sum() / denom)


# ---------------------------------------------------------------------------
# renders against ground truth


@dataclass
class TargetTask:
    """One target render: the target camera/depth, its normalized ground truth,
    and the ids of the sources used to render it."""

    target_id: int
    camera: object
    depth: np.ndarray
    truth: np.ndarray
    source_ids: tuple


def _render_loss(images, sources, task, cfg):
    srcs = [Source(vid, images[vid], *sources[vid]) for vid in task.source_ids]
    result = forward_render(srcs, task.camera, task.depth, cfg)
    if not result.hole_mask.any():
        return None, result
    return mse_loss(result.image, task.truth, result.hole_mask), result


def target_gradients(images: dict, sources: dict, task: TargetTask,
                     cfg: RenderConfig = RenderConfig()):
    """Forward, loss and backward for one target.

    ``images`` maps view id to a normalized image; ``sources`` maps view id to
    ``(depth, camera)``. Returns ``(loss, {view_id: dL/dX})``; a target no
    source can see gives ``(None, {})``.
    """
    loss, result = _render_loss(images, sources, task, cfg)
    if loss is None:
        return None, {}
    grads = backward_render(result, task.truth)
    return loss, dict(zip(task.source_ids, grads))


def frame_importance(images: dict, sources: dict, tasks: list,
                     cfg: RenderConfig = RenderConfig()) -> dict:
    """Importance maps of every source view for one frame.

    Views that no target used get an all-zero map.
    """
    state = AccumState()
    for task in sorted(tasks, key=lambda t: t.target_id):
        _, grads = target_gradients(images, sources, task, cfg)
        if grads:
            state.add(grads)
    mean_abs = finalize_targets(state)
    out = {}
    for vid in sorted(images):
        X = images[vid]
        if vid in mean_abs:
            out[vid] = importance_single(mean_abs[vid], X, inpaint_proxy(X))
        else:
            out[vid] = np.zeros(X.shape[:2])
    return out


def mean_loss(images: dict, sources: dict, tasks: list, cfg: RenderConfig = RenderConfig()) -> float:
    losses = [loss for loss, _ in (_render_loss(images, sources, t, cfg) for t in tasks)
              if loss is not None]
    if not losses:
        raise ValueError("no target received any source coverage")
    return float(np.mean(losses))


def oracle_delta_loss(images: dict, sources: dict, view_id: int, pixel, tasks: list,
                      cfg: RenderConfig = RenderConfig()) -> float:
    """Exact loss change from replacing one pixel by its 8-neighbor mean.

    Re-renders every target from scratch and returns the change of the loss
    averaged over targets.
    """
    r, c = pixel
    before = mean_loss(images, sources, tasks, cfg)
    X = images[view_id]
    changed = X.copy()
    changed[r, c] = inpaint_proxy(X)[r, c]
    after = mean_loss({**images, view_id: changed}, sources, tasks, cfg)
    return after - before
