"""Random block-pruning baselines, PSNR/SSIM, pixel-rate accounting and BD-rate."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .lehopp import prune_count

PIXEL_RATE_LIMIT_MPXS = 32.0
PIXEL_RATE_REF_FPS = 30.0


class CurveError(ValueError):
    """Invalid or incompatible rate-distortion curves."""


def random_block_mask(width: int, height: int, block: int, gamma: float, seed) -> np.ndarray:
    """Keep-mask pruning ``round(gamma * W * H)`` pixels in random ``block x block`` cells.

    Cells (border cells truncated) are visited in a seeded random order and
    pruned whole; the cell that would overshoot is pruned row-major up to the
    exact count.
    """
    if block < 1:
        raise ValueError("block must be >= 1")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    keep = np.ones((height, width), dtype=bool)
    k = prune_count(gamma, width * height)
    if k == 0:
        return keep
    cells = [(r, c) for r in range(0, height, block) for c in range(0, width, block)]
    order = np.random.default_rng(seed).permutation(len(cells))
    pruned = 0
    for i in order:
        r, c = cells[i]
        cell = keep[r:r + block, c:c + block]
        size = cell.size
        if pruned + size <= k:
            cell[...] = False
            pruned += size
        else:
            rows, cols = cell.shape
            flat = cell.reshape(-1)
            flat[:k - pruned] = False
            keep[r:r + rows, c:c + cols] = flat.reshape(rows, cols)
            pruned = k
        if pruned == k:
            break
    return keep


def psnr(a, b, peak: float = 1.0, mask=None) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs.

    With ``mask``, the error is averaged over the masked pixels only.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("empty PSNR mask")
        d = d[mask]
    mse = float(np.mean(d * d))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _luma(img):
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=-1) if img.ndim == 3 else img


def _filter_valid(x, g):
    half = len(g) // 2
    y = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return y[half:x.shape[0] - half, half:x.shape[1] - half]


def ssim_map(a, b, window: int = 11, K1: float = 0.01, K2: float = 0.03, peak: float = 1.0,
             sigma: float = 1.5) -> np.ndarray:
    """Local SSIM on the channel-mean luma, over windows fully inside the image."""
    x, y = _luma(a), _luma(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < window:
        raise ValueError(f"image {x.shape} smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1 = (K1 * peak) ** 2
    c2 = (K2 * peak) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))


def ssim(a, b, window: int = 11, K1: float = 0.01, K2: float = 0.03, peak: float = 1.0) -> float:
    return float(ssim_map(a, b, window, K1, K2, peak).mean())


@dataclass(frozen=True)
class PixelRateReport:
    views: int
    width: int
    height: int
    fps: float
    gamma: float
    raw_mpx_s: float
    pruned_mpx_s: float
    limit_mpx_s: float
    within_limit: bool


def pixel_rate(views: int, width: int, height: int, fps: float = 30.0, gamma: float = 0.0,
               limit: float = PIXEL_RATE_LIMIT_MPXS) -> PixelRateReport:
    """Luma pixel rate in Mpx/s, checked against ``limit`` (given at 30 fps, scaled with fps)."""
    if views <= 0 or width <= 0 or height <= 0 or fps <= 0:
        raise ValueError("views, width, height and fps must be positive")
    raw = views * width * height * fps / 1e6
    pruned = raw * (1.0 - gamma)
    lim = limit * fps / PIXEL_RATE_REF_FPS
    return PixelRateReport(views, width, height, fps, gamma, raw, pruned, lim, pruned <= lim)


# ---------------------------------------------------------------------------
# BD-rate


@dataclass(frozen=True)
class RDPoint:
    rate: float  # kbps
    quality: float  # dB

    def __post_init__(self):
        if not self.rate > 0:
            raise CurveError(f"rate must be positive, got {self.rate}")
        if not math.isfinite(self.quality):
            raise CurveError("quality must be finite")


def _curve(points):
    pts = sorted(points, key=lambda p: p.rate)
    if len(pts) < 4:
        raise CurveError(f"need at least 4 RD points, got {len(pts)}")
    q = np.array([p.quality for p in pts])
    if np.any(np.diff(q) <= 0):
        raise CurveError("quality must increase strictly with rate")
    return np.log10([p.rate for p in pts]), q


def bd_rate(anchor, test) -> float:
    """Average bitrate difference of ``test`` vs ``anchor`` at equal quality, in percent.

    Cubic fits of log10(rate) against quality, integrated over the common
    quality interval.
    """
    lr_a, q_a = _curve(anchor)
    lr_t, q_t = _curve(test)
    lo = max(q_a.min(), q_t.min())
    hi = min(q_a.max(), q_t.max())
    if lo >= hi:
        raise CurveError("RD curves do not overlap in quality")
    p_a = np.polyint(np.polyfit(q_a, lr_a, 3))
    p_t = np.polyint(np.polyfit(q_t, lr_t, 3))
    int_a = np.polyval(p_a, hi) - np.polyval(p_a, lo)
    int_t = np.polyval(p_t, hi) - np.polyval(p_t, lo)
    avg = (int_t - int_a) / (hi - lo)
    return float((10.0 ** avg - 1.0) * 100.0)


def read_rd_csv(path) -> dict:
    """Curves from a ``label,rate_kbps,psnr_db`` CSV, keyed by label."""
    curves: dict = {}
    with open(Path(path), newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["label", "rate_kbps", "psnr_db"]:
            raise CurveError(f"{path}: expected header 'label,rate_kbps,psnr_db', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise CurveError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                pt = RDPoint(float(row[1]), float(row[2]))
            except ValueError as exc:
                raise CurveError(f"{path}:{lineno}: {exc}") from None
            curves.setdefault(row[0].strip(), []).append(pt)
    if not curves:
        raise CurveError(f"{path}: no RD points")
    return curves
