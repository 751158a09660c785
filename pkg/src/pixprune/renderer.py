"""Differentiable depth-guided image-based renderer.

Each target pixel with known depth is lifted to 3D, projected into every source
view, tested for visibility against the source depth map, and colored as a
normalized blend of bilinear source samples. Blend weights depend on geometry
only, so the rendered image is linear in the source colors and the reverse
pass is an exact scatter of the loss gradient through the cached footprints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenegen import Camera


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class RenderConfig:
    n_src: int = 9
    angle_weight: float = 1.0
    distance_weight: float = 1.0
    visibility_tol: float = 0.01

    def __post_init__(self):
        if self.n_src < 1:
            raise ValueError("n_src must be >= 1")
        if self.angle_weight < 0 or self.distance_weight < 0:
            raise ValueError("blend weights must be non-negative")
        if self.visibility_tol <= 0:
            raise ValueError("visibility_tol must be positive")

    def to_dict(self):
        return {"n_src": self.n_src, "angle_weight": self.angle_weight,
                "distance_weight": self.distance_weight, "visibility_tol": self.visibility_tol}


@dataclass(frozen=True)
class ViewSelection:
    target_id: int
    source_ids: tuple


@dataclass
class Source:
    """A source view as the renderer sees it: normalized colors, depth, camera."""

    view_id: int
    image: np.ndarray
    depth: np.ndarray
    camera: Camera


@dataclass
class Footprint:
    """How one source contributes to the target.

    ``pixels``: flat target indices that see this source; ``taps``: ``(n, 4)``
    flat source indices of the bilinear neighbors; ``coef``: ``(n, 4)`` blend
    weight times bilinear weight.
    """

    view_id: int
    pixels: np.ndarray
    taps: np.ndarray
    coef: np.ndarray
    weight: np.ndarray


@dataclass
class RenderResult:
    image: np.ndarray
    hole_mask: np.ndarray
    footprints: list
    source_shapes: list

    @property
    def shape(self):
        return self.image.shape


def select_sources(target: Camera, cameras: dict, n_src: int = 9, target_id=None) -> ViewSelection:
    """The ``n_src`` cameras closest to ``target`` (by center distance, ties by view id).

    ``cameras`` maps view id to :class:`Camera`; ``target_id`` is excluded.
    """
    candidates = [(vid, cam) for vid, cam in sorted(cameras.items()) if vid != target_id]
    if not candidates:
        raise RenderError("no candidate source views")
    c0 = target.center
    ranked = sorted(candidates, key=lambda vc: (float(np.linalg.norm(vc[1].center - c0)), vc[0]))
    return ViewSelection(target_id, tuple(vid for vid, _ in ranked[:n_src]))


def _bilinear_footprint(x, y, width, height):
    x0 = np.clip(np.floor(x), 0, width - 2).astype(np.int64)
    y0 = np.clip(np.floor(y), 0, height - 2).astype(np.int64)
    ax = x - x0
    ay = y - y0
    taps = np.stack([y0 * width + x0, y0 * width + x0 + 1,
                     (y0 + 1) * width + x0, (y0 + 1) * width + x0 + 1], axis=-1)
    wts = np.stack([(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay], axis=-1)
    return taps, wts


def forward_render(sources: list[Source], target: Camera, target_depth: np.ndarray,
                   cfg: RenderConfig = RenderConfig()) -> RenderResult:
    """Render the target view from ``sources``.

    Pixels no source can see are holes (value 0, ``hole_mask`` False); a result
    that is all holes is returned as such rather than raised.
    """
    target_depth = np.asarray(target_depth, dtype=np.float64)
    if target_depth.ndim != 2:
        raise RenderError("target depth must be (H, W)")
    H, W = target_depth.shape
    for s in sources:
        if s.image.ndim != 3 or s.image.shape[2] != 3 or s.image.shape[:2] != s.depth.shape:
            raise RenderError(f"source {s.view_id}: image/depth dimension mismatch")
        if min(s.depth.shape) < 2:
            raise RenderError(f"source {s.view_id}: needs at least 2x2 pixels")

    flat_depth = target_depth.ravel()
    valid = np.flatnonzero(flat_depth > 0)
    vv, uu = np.divmod(valid, W)
    points = target.unproject(uu, vv, flat_depth[valid])
    c_t = target.center
    ray_t = points - c_t
    ray_t /= np.linalg.norm(ray_t, axis=-1, keepdims=True)

    raw = []
    total = np.zeros(valid.size)
    for s in sources:
        h, w = s.depth.shape
        x, y, z = s.camera.project(points)
        inside = (z > 0) & (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
        idx = np.flatnonzero(inside)
        taps, bil = _bilinear_footprint(x[idx], y[idx], w, h)
        sdepth = s.depth.ravel().astype(np.float64)
        tap_depth = sdepth[taps]
        d_interp = (tap_depth * bil).sum(axis=-1)
        zi = z[idx]
        visible = np.all(tap_depth > 0, axis=-1) & (np.abs(zi - d_interp) <= cfg.visibility_tol * zi)
        idx, taps, bil = idx[visible], taps[visible], bil[visible]

        c_s = s.camera.center
        ray_s = points[idx] - c_s
        ray_s /= np.linalg.norm(ray_s, axis=-1, keepdims=True)
        cos = np.clip((ray_s * ray_t[idx]).sum(axis=-1), -1.0, 1.0)
        theta = np.arccos(cos)
        dist = float(np.linalg.norm(c_s - c_t))
        w_k = np.exp(-cfg.angle_weight * theta - cfg.distance_weight * dist)
        total[idx] += w_k
        raw.append((s.view_id, idx, taps, bil, w_k))

    image = np.zeros((H * W, 3))
    covered = np.zeros(H * W, dtype=bool)
    footprints = []
    for s, (vid, idx, taps, bil, w_k) in zip(sources, raw):
        w_norm = w_k / total[idx]
        coef = bil * w_norm[:, None]
        pixels = valid[idx]
        img = s.image.reshape(-1, 3).astype(np.float64)
        image[pixels] += np.einsum("nk,nkc->nc", coef, img[taps])
        covered[pixels] = True
        footprints.append(Footprint(vid, pixels, taps, coef, w_norm))
    return RenderResult(image.reshape(H, W, 3), covered.reshape(H, W), footprints,
                        [s.image.shape for s in sources])


def rerender(result: RenderResult, images: list[np.ndarray]) -> np.ndarray:
    """Re-apply the cached blend of ``result`` to new source colors."""
    if [im.shape for im in images] != result.source_shapes:
        raise RenderError("source images do not match the cached footprints")
    H, W, _ = result.image.shape
    out = np.zeros((H * W, 3))
    for fp, img in zip(result.footprints, images):
        flat = np.asarray(img, dtype=np.float64).reshape(-1, 3)
        out[fp.pixels] += np.einsum("nk,nkc->nc", fp.coef, flat[fp.taps])
    return out.reshape(H, W, 3)


def mse_loss(Y: np.ndarray, T: np.ndarray, mask: np.ndarray) -> float:
    """Mean of ``(Y - T)**2`` over masked pixels and all channels."""
    if Y.shape != T.shape:
        raise RenderError(f"shape mismatch {Y.shape} vs {T.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != Y.shape[:2]:
        raise RenderError("mask does not match image shape")
    if not mask.any():
        raise RenderError("loss mask is empty")
    diff = (Y[mask] - T[mask]).astype(np.float64)
    return float(np.mean(diff * diff))


def loss_grad_image(result: RenderResult, T: np.ndarray) -> np.ndarray:
    """d(mse_loss)/dY for the hole-masked loss."""
    if T.shape != result.image.shape:
        raise RenderError(f"target shape {T.shape} does not match render {result.image.shape}")
    mask = result.hole_mask
    m = int(mask.sum()) * T.shape[2]
    if m == 0:
        raise RenderError("loss mask is empty")
    return np.where(mask[..., None], 2.0 / m * (result.image - T), 0.0)


def backward_render(result: RenderResult, T: np.ndarray) -> list[np.ndarray]:
    """Exact gradient of ``mse_loss(forward_render(...), T, hole_mask)`` per source image.

    Scatter is serialized per source view with target pixels in row-major order.
    """
    dY = loss_grad_image(result, T).reshape(-1, 3)
    grads = []
    for fp, shape in zip(result.footprints, result.source_shapes):
        n = shape[0] * shape[1]
        g = np.zeros((n, 3))
        if fp.pixels.size:
            contrib = fp.coef[..., None] * dY[fp.pixels][:, None, :]  # (n, 4, 3)
            taps = fp.taps.ravel()
            contrib = contrib.reshape(-1, 3)
            for c in range(3):
                g[:, c] = np.bincount(taps, weights=contrib[:, c], minlength=n)
        grads.append(g.reshape(shape))
    return grads
