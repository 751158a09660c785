"""File-to-file pipeline stages.

Every stage reads its inputs from disk and writes its outputs atomically, so
stages can be re-run independently. Layout of a full run directory::

    scene/manifest.json, scene/images/*.ppm, scene/depth/*.pfm
    importance/p00/v00.pfm ...          per-view importance, one dir per intra-period
    importance/p00/histogram.csv
    variants/<method>/g0.100/masks/v00_p00.pgm
    variants/<method>/g0.100/inpaint/v00_f000.ppm
    variants/<method>/g0.100/hold/v00_f000.ppm
    report.csv, summary.json
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, evalkit, imgio, lehopp, scenegen
from .inpaint import InpaintConfig
from .renderer import RenderConfig, Source, forward_render, select_sources

log = logging.getLogger(__name__)

REPORT_HEADER = ["method", "gamma", "target", "frame", "psnr_db", "ssim", "pruned_pixels",
                 "pixel_rate_mpxs", "runtime_ms"]
HIST_BINS = 64
ORACLE_MAX_PIXELS = 10_000
DEFAULT_BASELINES = (("base1", 32), ("base2", 4))


class StageError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


@dataclass
class RunConfig:
    out: Path
    manifest: Path | None = None
    spec: dict | None = None
    targets: list | None = None
    gammas: tuple = (0.05, 0.10, 0.20)
    prune: lehopp.PruneConfig = lehopp.PruneConfig()
    render: RenderConfig = RenderConfig()
    inpaint: InpaintConfig = InpaintConfig()
    baselines: tuple = DEFAULT_BASELINES
    seed: int = 0
    fps: float = 30.0
    timing: bool = False
    hold_variants: bool = False

    def to_dict(self):
        return {
            "manifest": str(self.manifest) if self.manifest else None,
            "spec": self.spec,
            "targets": self.targets,
            "gammas": list(self.gammas),
            "scope": self.prune.scope,
            "intra_period": self.prune.intra_period,
            "fill": self.prune.fill,
            "render": self.render.to_dict(),
            "inpaint": self.inpaint.to_dict(),
            "baselines": [{"method": m, "block": b} for m, b in self.baselines],
            "seed": self.seed,
            "fps": self.fps,
        }


def gamma_tag(gamma: float) -> str:
    return f"g{gamma:.3f}"


def _periods(frames: list[int], intra_period: int) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for f in frames:
        out.setdefault(f // intra_period, []).append(f)
    return out


def _frame_inputs(manifest: scenegen.Manifest, frame: int, images=None):
    views = manifest.frame(frame)
    norm = manifest.norm_params
    src_images = images if images is not None else {vid: v.image for vid, v in views.items()}
    normed = {vid: imgio.preprocess(src_images[vid], norm) for vid in sorted(views)}
    geometry = {vid: (v.depth.astype(np.float64), v.camera) for vid, v in views.items()}
    return views, normed, geometry


def _tasks(manifest, frame, targets, n_src, views=None, normed=None):
    if views is None:
        views, normed, _ = _frame_inputs(manifest, frame)
    cams = {vid: v.camera for vid, v in views.items()}
    tasks = []
    for t in targets:
        if t not in views:
            raise StageError(f"target view {t} not in manifest frame {frame}")
        sel = select_sources(views[t].camera, cams, n_src, target_id=t)
        tasks.append(lehopp.TargetTask(t, views[t].camera, views[t].depth.astype(np.float64),
                                       normed[t], sel.source_ids))
    return tasks


def _targets(manifest, targets):
    ids = manifest.view_ids
    if len(ids) < 2:
        raise StageError("need at least 2 views for leave-one-out rendering")
    if targets is None:
        return ids
    missing = sorted(set(targets) - set(ids))
    if missing:
        raise StageError(f"unknown target views {missing}")
    return sorted(set(targets))


# ---------------------------------------------------------------------------
# synth


def cmd_synth(spec, out_dir) -> Path:
    """Generate a scene from a spec (dict, :class:`SceneSpec` or JSON path)."""
    if isinstance(spec, (str, Path)):
        path = Path(spec)
        if not path.is_file():
            raise StageError(f"synth: spec file {path} not found")
        try:
            spec = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise StageError(f"synth: invalid JSON in {path}: {exc}") from None
    if isinstance(spec, dict):
        try:
            spec = scenegen.SceneSpec.from_dict(spec)
        except (KeyError, TypeError, ValueError) as exc:
            raise StageError(f"synth: invalid scene spec: {exc}") from None
    return scenegen.write_scene(spec, out_dir)


# ---------------------------------------------------------------------------
# importance


def histogram_rows(values: np.ndarray, bins: int = HIST_BINS):
    """Log-spaced histogram; the first bin starts at 0 so zero importance is counted."""
    values = np.asarray(values, dtype=np.float64).ravel()
    pos = values[values > 0]
    if pos.size == 0:
        return [(0.0, 0.0, int(values.size))]
    lo, hi = pos.min(), pos.max()
    if hi <= lo:
        hi = lo * (1 + 1e-9)
    edges = np.logspace(np.log10(lo), np.log10(hi), bins + 1)
    edges[0] = 0.0
    counts, _ = np.histogram(values, bins=edges)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def importance_path(importance_dir, period: int, view_id: int) -> Path:
    return Path(importance_dir) / f"p{period:02d}" / f"v{view_id:02d}.pfm"


def compute_importance(manifest: scenegen.Manifest, targets=None,
                       render: RenderConfig = RenderConfig(), intra_period: int = 16) -> dict:
    """``{period: {view_id: importance map}}`` for a loaded scene."""
    targets = _targets(manifest, targets)
    out = {}
    for period, frames in _periods(manifest.frame_ids, intra_period).items():
        per_frame = []
        for frame in frames:
            views, normed, geometry = _frame_inputs(manifest, frame)
            tasks = _tasks(manifest, frame, targets, render.n_src, views, normed)
            try:
                per_frame.append(lehopp.frame_importance(normed, geometry, tasks, render))
            except ValueError as exc:
                raise StageError(f"importance: frame {frame}: {exc}") from None
        out[period] = {vid: lehopp.accumulate_frames([m[vid] for m in per_frame], intra_period)
                       for vid in sorted(per_frame[0])}
    return out


def cmd_importance(manifest_path, out_dir, targets=None, render: RenderConfig = RenderConfig(),
                   intra_period: int = 16) -> Path:
    manifest = scenegen.load_manifest(manifest_path)
    maps = compute_importance(manifest, targets, render, intra_period)
    out_dir = Path(out_dir)
    for period, per_view in maps.items():
        for vid, m in per_view.items():
            imgio.write_pfm(m.astype(np.float32), importance_path(out_dir, period, vid))
        pooled = np.concatenate([m.ravel() for m in per_view.values()]).astype(np.float32)
        imgio.atomic_write_text(out_dir / f"p{period:02d}" / "histogram.csv",
                                _csv_text(["bin_lower", "bin_upper", "count"],
                                          [(f"{a:.9g}", f"{b:.9g}", c)
                                           for a, b, c in histogram_rows(pooled)]))
    return out_dir


def load_importance(importance_dir, manifest: scenegen.Manifest, intra_period: int) -> dict:
    maps = {}
    for period in _periods(manifest.frame_ids, intra_period):
        maps[period] = {}
        for vid in manifest.view_ids:
            path = importance_path(importance_dir, period, vid)
            if not path.is_file():
                raise StageError(f"prune: missing importance map {path}")
            maps[period][vid] = imgio.read_pfm(path)
    return maps


# ---------------------------------------------------------------------------
# prune


def mask_path(variant_dir, view_id, period) -> Path:
    return Path(variant_dir) / "masks" / f"v{view_id:02d}_p{period:02d}.pgm"


def variant_image_path(variant_dir, fill, view_id, frame) -> Path:
    return Path(variant_dir) / fill / f"v{view_id:02d}_f{frame:03d}.ppm"


def write_variant(manifest: scenegen.Manifest, masks: dict, variant_dir, intra_period: int,
                  inpaint_cfg: InpaintConfig = InpaintConfig(), fills=("inpaint", "hold")) -> Path:
    """Write masks plus pruned images (one subdir per fill policy) for every view and frame."""
    variant_dir = Path(variant_dir)
    for period, per_view in masks.items():
        for vid, mask in per_view.items():
            imgio.write_pgm(mask, mask_path(variant_dir, vid, period))
    for view in manifest.views:
        mask = masks[view.frame_id // intra_period][view.view_id]
        for fill in fills:
            img = lehopp.apply_mask(view.image, mask, fill, inpaint_cfg)
            imgio.write_ppm(img, variant_image_path(variant_dir, fill, view.view_id, view.frame_id))
    return variant_dir


def lehopp_masks(importance: dict, gamma: float, scope: str) -> dict:
    return {p: lehopp.build_masks(per_view, gamma, scope) for p, per_view in importance.items()}


def baseline_masks(manifest: scenegen.Manifest, gamma: float, block: int, seed: int,
                   intra_period: int) -> dict:
    """Random block masks; each (view, period) draws from its own seeded stream."""
    out = {}
    for period in _periods(manifest.frame_ids, intra_period):
        out[period] = {vid: evalkit.random_block_mask(manifest.width, manifest.height, block, gamma,
                                                      [seed, block, vid, period])
                       for vid in manifest.view_ids}
    return out


def cmd_prune(manifest_path, out_dir, gammas, importance_dir=None, block=None, seed=0,
              method=None, scope="per-view", intra_period=16,
              inpaint_cfg: InpaintConfig = InpaintConfig(), fills=("inpaint", "hold")) -> dict:
    """Write one variant per gamma, from importance maps or (with ``block``) random blocks.

    Returns ``{gamma: variant_dir}``.
    """
    if (importance_dir is None) == (block is None):
        raise StageError("prune: give exactly one of importance_dir or block")
    manifest = scenegen.load_manifest(manifest_path)
    if method is None:
        method = "lehopp" if block is None else {32: "base1", 4: "base2"}.get(block, f"block{block}")
    importance = None
    if importance_dir is not None:
        importance = load_importance(importance_dir, manifest, intra_period)
    out = {}
    for gamma in gammas:
        if importance is not None:
            masks = lehopp_masks(importance, gamma, scope)
        else:
            masks = baseline_masks(manifest, gamma, block, seed, intra_period)
        vdir = Path(out_dir) / method / gamma_tag(gamma)
        out[gamma] = write_variant(manifest, masks, vdir, intra_period, inpaint_cfg, fills)
    return out


# ---------------------------------------------------------------------------
# eval


@dataclass
class Variant:
    method: str
    gamma: float
    path: Path | None = None  # None: the unpruned scene images


@dataclass
class ReportRecord:
    method: str
    gamma: float
    target: object
    frame: object
    psnr: float
    ssim: float
    pruned_pixels: float
    pixel_rate: float
    runtime_ms: float | None = None

    def row(self):
        def num(x, fmt):
            if x is None:
                return ""
            if isinstance(x, float) and math.isinf(x):
                return "inf" if x > 0 else "-inf"
            return format(x, fmt)

        pruned = self.pruned_pixels
        pruned = str(int(pruned)) if float(pruned).is_integer() else f"{pruned:.3f}"
        return [self.method, f"{self.gamma:.4f}", str(self.target), str(self.frame),
                num(self.psnr, ".6f"), num(self.ssim, ".6f"), pruned,
                num(self.pixel_rate, ".6f"), num(self.runtime_ms, ".3f")]


def _variant_images(manifest, variant: Variant, fill: str, frame: int):
    views = manifest.frame(frame)
    if variant.path is None:
        return {vid: v.image for vid, v in views.items()}
    imgs = {}
    for vid in views:
        path = variant_image_path(variant.path, fill, vid, frame)
        if not path.is_file():
            raise StageError(f"eval: variant {variant.method} gamma {variant.gamma} missing {path}")
        imgs[vid] = imgio.read_ppm(path)
    return imgs


def _variant_pruned(manifest, variant: Variant, intra_period: int, frame: int, source_ids) -> int:
    if variant.path is None:
        return 0
    period = frame // intra_period
    total = 0
    for vid in source_ids:
        path = mask_path(variant.path, vid, period)
        if not path.is_file():
            raise StageError(f"eval: missing mask {path}")
        total += int((~imgio.read_pgm(path)).sum())
    return total


def render_view(manifest, images: dict, target: int, frame: int, render: RenderConfig):
    """Render ``target`` from the other views' ``images``; returns (rgb in [0,1], hole mask, source ids)."""
    views = manifest.frame(frame)
    cams = {vid: v.camera for vid, v in views.items()}
    sel = select_sources(views[target].camera, cams, render.n_src, target_id=target)
    norm = manifest.norm_params
    srcs = [Source(vid, imgio.preprocess(images[vid], norm), views[vid].depth.astype(np.float64),
                   views[vid].camera) for vid in sel.source_ids]
    res = forward_render(srcs, views[target].camera, views[target].depth, render)
    return imgio.depreprocess(res.image, norm), res.hole_mask, sel.source_ids


def evaluate(manifest: scenegen.Manifest, variants, targets=None,
             render: RenderConfig = RenderConfig(), intra_period: int = 16, fill: str = "inpaint",
             fps: float = 30.0, timing: bool = False) -> list[ReportRecord]:
    """Per-(method, gamma, target, frame) records followed by per-(method, gamma) means."""
    targets = _targets(manifest, targets)
    records = []
    for variant in variants:
        for frame in manifest.frame_ids:
            images = _variant_images(manifest, variant, fill, frame)
            for t in targets:
                start = time.perf_counter()
                rgb, holes, src_ids = render_view(manifest, images, t, frame, render)
                elapsed = (time.perf_counter() - start) * 1e3
                truth = manifest.view(t, frame).image
                q = evalkit.psnr(rgb, truth, mask=holes) if holes.any() else math.nan
                s = evalkit.ssim(rgb, truth)
                rate = evalkit.pixel_rate(len(src_ids), manifest.width, manifest.height, fps,
                                          variant.gamma).pruned_mpx_s
                pruned = _variant_pruned(manifest, variant, intra_period, frame, src_ids)
                records.append(ReportRecord(variant.method, variant.gamma, t, frame, q, s, pruned,
                                            rate, elapsed if timing else None))
    return records + aggregate(records)


def aggregate(records: list[ReportRecord]) -> list[ReportRecord]:
    groups: dict = {}
    for r in records:
        groups.setdefault((r.method, r.gamma), []).append(r)
    out = []
    for (method, gamma), rs in groups.items():
        rt = None if any(r.runtime_ms is None for r in rs) else float(np.mean([r.runtime_ms for r in rs]))
        out.append(ReportRecord(method, gamma, "mean", "all",
                                float(np.mean([r.psnr for r in rs])),
                                float(np.mean([r.ssim for r in rs])),
                                float(np.mean([r.pruned_pixels for r in rs])),
                                float(np.mean([r.pixel_rate for r in rs])), rt))
    return out


def write_report(records, path) -> Path:
    imgio.atomic_write_text(path, _csv_text(REPORT_HEADER, [r.row() for r in records]))
    return Path(path)


def read_report(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def cmd_eval(manifest_path, variants, out_csv, targets=None, render: RenderConfig = RenderConfig(),
             intra_period=16, fill="inpaint", fps=30.0, timing=False) -> list[ReportRecord]:
    manifest = scenegen.load_manifest(manifest_path)
    records = evaluate(manifest, variants, targets, render, intra_period, fill, fps, timing)
    write_report(records, out_csv)
    return records


# ---------------------------------------------------------------------------
# pipeline


def cmd_pipeline(cfg: RunConfig) -> Path:
    """Synthesize or load a scene, then importance, prune, baselines, eval and reports."""
    out = Path(cfg.out)
    ip = cfg.prune.intra_period
    try:
        if cfg.spec is not None:
            manifest_path = cmd_synth(cfg.spec, out / "scene")
        elif cfg.manifest is not None:
            manifest_path = Path(cfg.manifest)
        else:
            raise StageError("pipeline: need a scene spec or a manifest")
        manifest = scenegen.load_manifest(manifest_path)
        targets = _targets(manifest, cfg.targets)
    except StageError:
        raise
    except (OSError, ValueError) as exc:
        raise StageError(f"synth/load: {exc}") from exc

    fills = ("inpaint", "hold") if cfg.hold_variants else (cfg.prune.fill,)
    log.info("importance: %d targets, %d frames", len(targets), len(manifest.frame_ids))
    cmd_importance(manifest_path, out / "importance", targets, cfg.render, ip)

    variants = [Variant("anchor", 0.0, None)]
    try:
        made = cmd_prune(manifest_path, out / "variants", cfg.gammas, importance_dir=out / "importance",
                         scope=cfg.prune.scope, intra_period=ip, inpaint_cfg=cfg.inpaint, fills=fills)
        variants += [Variant("lehopp", g, made[g]) for g in cfg.gammas]
        for method, block in cfg.baselines:
            made = cmd_prune(manifest_path, out / "variants", cfg.gammas, block=block, seed=cfg.seed,
                             method=method, intra_period=ip, inpaint_cfg=cfg.inpaint, fills=fills)
            variants += [Variant(method, g, made[g]) for g in cfg.gammas]
    except StageError:
        raise
    except (OSError, ValueError) as exc:
        raise StageError(f"prune: {exc}") from exc

    try:
        records = evaluate(manifest, variants, targets, cfg.render, ip, cfg.prune.fill, cfg.fps,
                           cfg.timing)
    except StageError:
        raise
    except (OSError, ValueError) as exc:
        raise StageError(f"eval: {exc}") from exc
    write_report(records, out / "report.csv")
    summary = {
        "version": __version__,
        "numpy": np.__version__,
        "config": cfg.to_dict(),
        "norm_params": manifest.norm_params.to_dict(),
        "scene": {"width": manifest.width, "height": manifest.height,
                  "views": len(manifest.view_ids), "frames": len(manifest.frame_ids)},
        "targets": targets,
        "bd_rate_fit": "cubic polynomial, log10 rate vs PSNR",
        "averages": [{"method": r.method, "gamma": r.gamma, "psnr_db": r.psnr, "ssim": r.ssim}
                     for r in records if r.target == "mean"],
    }
    imgio.atomic_write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out


# ---------------------------------------------------------------------------
# oracle


@dataclass
class OracleResult:
    rows: list = field(default_factory=list)  # (view_id, row, col, estimate, delta_l)
    rho: float = math.nan
    zero_variance: bool = False


def run_oracle(manifest: scenegen.Manifest, n_pixels: int, seed: int, targets=None,
               render: RenderConfig = RenderConfig(), frame: int | None = None,
               force: bool = False) -> OracleResult:
    """Compare first-order importance with brute-force loss changes at random textured pixels.

    Pixels are drawn from views that at least one target renders from, among
    pixels whose 8-neighbor residual is nonzero (any pixel if none is).
    ``rho`` is the rank correlation of the estimate with ``|delta_l|``.
    """
    if manifest.width * manifest.height > ORACLE_MAX_PIXELS and not force:
        raise StageError(f"oracle: {manifest.width}x{manifest.height} exceeds "
                         f"{ORACLE_MAX_PIXELS} pixels per view; pass force to run anyway")
    frame = manifest.frame_ids[0] if frame is None else frame
    targets = _targets(manifest, targets)
    views, normed, geometry = _frame_inputs(manifest, frame)
    tasks = _tasks(manifest, frame, targets, render.n_src, views, normed)
    state = lehopp.AccumState()
    for task in tasks:
        _, grads = lehopp.target_gradients(normed, geometry, task, render)
        if grads:
            state.add(grads)
    mean_abs = lehopp.finalize_targets(state)

    proxies = {vid: lehopp.inpaint_proxy(normed[vid]) for vid in mean_abs}
    pool = []
    for vid in sorted(mean_abs):
        resid = np.abs(normed[vid] - proxies[vid]).sum(axis=-1)
        pool += [(vid, int(r), int(c)) for r, c in zip(*np.nonzero(resid > 1e-12))]
    if not pool:
        pool = [(vid, r, c) for vid in sorted(mean_abs)
                for r in range(manifest.height) for c in range(manifest.width)]
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(len(pool), size=min(n_pixels, len(pool)), replace=False))

    result = OracleResult()
    for i in picks:
        vid, r, c = pool[i]
        est = lehopp.first_order_estimate(mean_abs[vid], normed[vid], proxies[vid], (r, c))
        dl = lehopp.oracle_delta_loss(normed, geometry, vid, (r, c), tasks, render)
        result.rows.append((vid, r, c, est, dl))
    est = [row[3] for row in result.rows]
    mag = [abs(row[4]) for row in result.rows]
    try:
        result.rho = lehopp.rank_correlation(est, mag)
    except ValueError:
        result.rho = math.nan
        result.zero_variance = True
    return result


def cmd_oracle(manifest_path, out_csv, n_pixels=100, seed=0, targets=None,
               render: RenderConfig = RenderConfig(), force=False) -> OracleResult:
    manifest = scenegen.load_manifest(manifest_path)
    res = run_oracle(manifest, n_pixels, seed, targets, render, force=force)
    rows = [(v, f"{r},{c}", f"{e:.9e}", f"{d:.9e}") for v, r, c, e, d in res.rows]
    text = _csv_text(["view", "pixel", "estimate", "delta_l"], rows)
    rho = "nan" if math.isnan(res.rho) else f"{res.rho:.6f}"
    text += f"# spearman_rho={rho} zero_variance={str(res.zero_variance).lower()}\n"
    imgio.atomic_write_text(out_csv, text)
    return res


# ---------------------------------------------------------------------------
# bdrate


def _single_curve(curves: dict, label, path):
    if label is not None:
        if label not in curves:
            raise evalkit.CurveError(f"{path}: no curve labelled {label!r}")
        return curves[label]
    if len(curves) != 1:
        raise evalkit.CurveError(f"{path}: holds curves {sorted(curves)}; pick one with a label")
    return next(iter(curves.values()))


def cmd_bdrate(anchor_csv, test_csv, anchor_label=None, test_label=None) -> float:
    anchor = _single_curve(evalkit.read_rd_csv(anchor_csv), anchor_label, anchor_csv)
    test = _single_curve(evalkit.read_rd_csv(test_csv), test_label, test_csv)
    return evalkit.bd_rate(anchor, test)
