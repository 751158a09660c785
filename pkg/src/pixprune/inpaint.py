"""Hole filling for pruned source images.

``telea_inpaint`` fills pruned pixels in fast-marching order, each as a
weighted average of already-known pixels within a radius (direction, distance
and level-set weights). The image-gradient extrapolation term of the original
method is left out so every fill stays a convex combination of known values.
``diffusion_inpaint`` is the harmonic (Laplace) fill used as a reference.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .imgio import check_mask


class InpaintError(ValueError):
    pass


@dataclass(frozen=True)
class InpaintConfig:
    radius: int = 3
    max_iters: int = 10000
    tol: float = 1e-6

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")

    def to_dict(self):
        return {"radius": self.radius, "max_iters": self.max_iters, "tol": self.tol}


_KNOWN, _BAND, _INSIDE = 0, 1, 2
_NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def _eikonal(dist, flag, r, c, H, W):
    """First-order upwind update of the distance at ``(r, c)`` from frozen neighbors."""
    best = math.inf
    vals = []
    for axis in ((0, -1), (0, 1)), ((-1, 0), (1, 0)):
        a = math.inf
        for dr, dc in axis:
            rr, cc = r + dr, c + dc
            if 0 <= rr < H and 0 <= cc < W and flag[rr, cc] == _KNOWN:
                a = min(a, dist[rr, cc])
        vals.append(a)
    a, b = vals
    if math.isfinite(a) and math.isfinite(b) and abs(a - b) < 1.0:
        best = 0.5 * (a + b + math.sqrt(2.0 - (a - b) ** 2))
    else:
        best = min(a, b) + 1.0
    return best


def _march(mask):
    """Yield pruned pixels in fast-marching order while maintaining distances.

    Kept pixels are frozen at distance 0; pruned pixels 4-adjacent to a kept
    pixel start at their exact distance 1, and the front grows from there.
    Heap ties break on ``(row, col)``.
    """
    H, W = mask.shape
    dist = np.where(mask, 0.0, np.inf)
    flag = np.where(mask, _KNOWN, _INSIDE).astype(np.int8)
    fixed = mask.copy()
    heap = []
    for r, c in zip(*np.nonzero(~mask)):
        for dr, dc in _NEIGHBORS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < H and 0 <= cc < W and mask[rr, cc]:
                dist[r, c] = 1.0
                flag[r, c] = _BAND
                fixed[r, c] = True
                heap.append((1.0, int(r), int(c)))
                break
    heapq.heapify(heap)
    while heap:
        d, r, c = heapq.heappop(heap)
        if flag[r, c] == _KNOWN or d > dist[r, c]:
            continue
        flag[r, c] = _KNOWN
        yield r, c, dist, flag
        for dr, dc in _NEIGHBORS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < H and 0 <= cc < W and not fixed[rr, cc] and flag[rr, cc] != _KNOWN:
                nd = _eikonal(dist, flag, rr, cc, H, W)
                if nd < dist[rr, cc]:
                    dist[rr, cc] = nd
                    flag[rr, cc] = _BAND
                    heapq.heappush(heap, (nd, rr, cc))


def fmm_distance(mask) -> np.ndarray:
    """Fast-marching distance from each pruned pixel to the kept set (kept pixels: 0)."""
    mask = check_mask(mask)
    if mask.all():
        return np.zeros(mask.shape, dtype=np.float32)
    if not mask.any():
        raise InpaintError("mask has no kept pixels to march from")
    dist = None
    for _, _, dist, _ in _march(mask):
        pass
    return dist.astype(np.float32)


def _dist_gradient(dist, known, r, c):
    H, W = dist.shape
    grad = []
    for dr, dc in ((0, 1), (1, 0)):
        fwd = (r + dr, c + dc)
        bwd = (r - dr, c - dc)
        ok_f = fwd[0] < H and fwd[1] < W and known[fwd]
        ok_b = bwd[0] >= 0 and bwd[1] >= 0 and known[bwd]
        if ok_f and ok_b:
            grad.append(0.5 * (dist[fwd] - dist[bwd]))
        elif ok_f:
            grad.append(dist[fwd] - dist[r, c])
        elif ok_b:
            grad.append(dist[r, c] - dist[bwd])
        else:
            grad.append(0.0)
    return grad[1], grad[0]  # (d/drow, d/dcol)


def telea_inpaint(image, mask, cfg: InpaintConfig = InpaintConfig()) -> np.ndarray:
    """Fill pruned pixels of ``image`` (``(H, W)`` or ``(H, W, C)``); kept pixels are untouched."""
    image = np.asarray(image)
    mask = check_mask(mask, image.shape[:2])
    out = image.copy()
    if mask.all():
        return out
    if not mask.any():
        raise InpaintError("mask has no kept pixels")
    H, W = mask.shape
    rad = cfg.radius
    # padded copies so neighborhood lookups need no bounds checks
    work = np.zeros((H + 2 * rad, W + 2 * rad, out.reshape(H, W, -1).shape[2]))
    work[rad:rad + H, rad:rad + W] = out.reshape(H, W, -1)
    known = np.zeros((H + 2 * rad, W + 2 * rad), dtype=bool)
    known[rad:rad + H, rad:rad + W] = mask
    offsets = [(dr, dc) for dr in range(-rad, rad + 1) for dc in range(-rad, rad + 1)
               if (dr or dc) and dr * dr + dc * dc <= rad * rad]
    dr = np.array([o[0] for o in offsets])
    dc = np.array([o[1] for o in offsets])
    len2 = (dr * dr + dc * dc).astype(np.float64)
    length = np.sqrt(len2)
    inner = known[rad:rad + H, rad:rad + W]
    for r, c, dist, _ in _march(mask):
        gr, gc = _dist_gradient(dist, inner, r, c)
        gnorm = math.hypot(gr, gc)
        rr = r + rad + dr
        cc = c + rad + dc
        sel = known[rr, cc]
        rr, cc = rr[sel], cc[sel]
        if gnorm > 0:
            # vector from the neighbor to the pixel being filled is (-dr, -dc)
            direction = np.abs(dr[sel] * gr + dc[sel] * gc) / (length[sel] * gnorm)
            direction = np.maximum(direction, 1e-6)
        else:
            direction = np.ones(rr.size)
        level = 1.0 / (1.0 + np.abs(dist[rr - rad, cc - rad] - dist[r, c]))
        w = direction * level / len2[sel]
        work[r + rad, c + rad] = (w @ work[rr, cc]) / w.sum()
        known[r + rad, c + rad] = True
    return work[rad:rad + H, rad:rad + W].reshape(out.shape).astype(out.dtype)


def diffusion_inpaint(image, mask, cfg: InpaintConfig = InpaintConfig()) -> np.ndarray:
    """Harmonic fill: Jacobi iterations of the 4-neighbor Laplace equation.

    Kept pixels are Dirichlet data; image borders replicate (zero-flux).
    Pruned pixels start at the mean of the kept values.
    """
    image = np.asarray(image)
    mask = check_mask(mask, image.shape[:2])
    out = image.copy()
    if mask.all():
        return out
    if not mask.any():
        raise InpaintError("mask has no kept pixels")
    H, W = mask.shape
    u = image.astype(np.float64).reshape(H, W, -1).copy()
    hole = ~mask
    u[hole] = u[mask].mean(axis=0)
    for _ in range(cfg.max_iters):
        p = np.pad(u, ((1, 1), (1, 1), (0, 0)), mode="edge")
        avg = 0.25 * (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:])
        change = np.abs(avg[hole] - u[hole]).max()
        u[hole] = avg[hole]
        if change < cfg.tol:
            break
    else:
        raise InpaintError(f"Jacobi iteration did not reach tol {cfg.tol} in {cfg.max_iters} sweeps")
    res = out.astype(np.float64).reshape(H, W, -1)
    res[hole] = u[hole]
    return res.reshape(out.shape).astype(out.dtype)
