"""Command line entry point: ``pixprune <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import evalkit, imgio, pipeline, scenegen
from .inpaint import InpaintConfig
from .lehopp import PruneConfig
from .renderer import RenderConfig

DEFAULT_GAMMAS = [0.05, 0.10, 0.20]


def _render_cfg(args) -> RenderConfig:
    return RenderConfig(n_src=args.n_src, angle_weight=args.angle_weight,
                        distance_weight=args.distance_weight, visibility_tol=args.visibility_tol)


def _add_render(p):
    p.add_argument("--n-src", type=int, default=9, help="source views per target render")
    p.add_argument("--angle-weight", type=float, default=1.0)
    p.add_argument("--distance-weight", type=float, default=1.0)
    p.add_argument("--visibility-tol", type=float, default=0.01)
    p.add_argument("--targets", type=int, nargs="+", default=None,
                   help="leave-one-out target view ids (default: all views)")


def _add_prune(p):
    p.add_argument("--gamma", type=float, action="append", default=None,
                   help="pruned fraction; repeatable")
    p.add_argument("--scope", choices=["per-view", "global"], default="per-view")
    p.add_argument("--intra-period", type=int, default=16)
    p.add_argument("--radius", type=int, default=3, help="inpainting radius in pixels")


def _spec_from_args(args):
    if args.spec:
        return str(args.spec)
    return scenegen.desk_scene(args.seed, n_views=args.views, width=args.width,
                               frames=args.frames).to_dict()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pixprune", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a procedural multi-view scene")
    p.add_argument("--spec", type=Path, help="scene spec JSON (default: seeded desk scene)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", type=int, default=5)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("importance", help="per-pixel importance maps")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--intra-period", type=int, default=16)
    _add_render(p)

    p = sub.add_parser("prune", help="masks and pruned images from importance or random blocks")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--importance", type=Path, help="importance directory (LeHoPP masks)")
    p.add_argument("--block", type=int, help="random block size (baseline masks)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", help="variant name (default: lehopp, base1, base2 or blockN)")
    p.add_argument("--fill", choices=["inpaint", "hold", "both"], default="both")
    _add_prune(p)

    p = sub.add_parser("eval", help="render targets from variants and write the report CSV")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="report CSV path")
    p.add_argument("--variant", action="append", default=[], metavar="METHOD:GAMMA:DIR",
                   help="variant to evaluate; repeatable (the anchor is always included)")
    p.add_argument("--fill", choices=["inpaint", "hold"], default="inpaint")
    p.add_argument("--intra-period", type=int, default=16)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--timing", action="store_true", help="record runtime_ms (breaks byte determinism)")
    _add_render(p)

    p = sub.add_parser("pipeline", help="synth/load, importance, prune, baselines, eval")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--manifest", type=Path)
    src.add_argument("--spec", type=Path)
    p.add_argument("--seed", type=int, default=0, help="scene and baseline seed")
    p.add_argument("--views", type=int, default=5)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--block", type=int, action="append", default=None,
                   help="baseline block sizes (default: 32 and 4)")
    p.add_argument("--fill", choices=["inpaint", "hold"], default="inpaint")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--timing", action="store_true")
    _add_prune(p)
    _add_render(p)

    p = sub.add_parser("oracle", help="brute-force loss change vs first-order estimate")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-pixels", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true", help="allow views above 10^4 pixels")
    _add_render(p)

    p = sub.add_parser("bdrate", help="Bjontegaard delta rate between two RD curves")
    p.add_argument("anchor", type=Path)
    p.add_argument("test", type=Path)
    p.add_argument("--anchor-label")
    p.add_argument("--test-label")
    return parser


def _variant(text: str) -> pipeline.Variant:
    try:
        method, gamma, path = text.split(":", 2)
        return pipeline.Variant(method, float(gamma), Path(path))
    except ValueError:
        raise SystemExit(f"bad --variant {text!r}; expected METHOD:GAMMA:DIR") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (pipeline.StageError, imgio.ImageFormatError, evalkit.CurveError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "synth":
        path = pipeline.cmd_synth(_spec_from_args(args), args.out)
        print(path)
    elif cmd == "importance":
        pipeline.cmd_importance(args.manifest, args.out, args.targets, _render_cfg(args),
                                args.intra_period)
    elif cmd == "prune":
        fills = ("inpaint", "hold") if args.fill == "both" else (args.fill,)
        made = pipeline.cmd_prune(args.manifest, args.out, args.gamma or DEFAULT_GAMMAS,
                                  importance_dir=args.importance, block=args.block, seed=args.seed,
                                  method=args.method, scope=args.scope,
                                  intra_period=args.intra_period,
                                  inpaint_cfg=InpaintConfig(radius=args.radius), fills=fills)
        for gamma, path in made.items():
            print(f"{gamma:.4f} {path}")
    elif cmd == "eval":
        variants = [pipeline.Variant("anchor", 0.0, None)] + [_variant(v) for v in args.variant]
        pipeline.cmd_eval(args.manifest, variants, args.out, args.targets, _render_cfg(args),
                          args.intra_period, args.fill, args.fps, args.timing)
    elif cmd == "pipeline":
        blocks = args.block or [32, 4]
        names = {32: "base1", 4: "base2"}
        cfg = pipeline.RunConfig(
            out=args.out,
            manifest=args.manifest,
            spec=None if args.manifest else _spec_from_args(args),
            targets=args.targets,
            gammas=tuple(args.gamma or DEFAULT_GAMMAS),
            prune=PruneConfig(gamma=0.0, scope=args.scope, intra_period=args.intra_period,
                              fill=args.fill),
            render=_render_cfg(args),
            inpaint=InpaintConfig(radius=args.radius),
            baselines=tuple((names.get(b, f"block{b}"), b) for b in blocks),
            seed=args.seed,
            fps=args.fps,
            timing=args.timing,
        )
        out = pipeline.cmd_pipeline(cfg)
        print(out / "report.csv")
    elif cmd == "oracle":
        res = pipeline.cmd_oracle(args.manifest, args.out, args.n_pixels, args.seed, args.targets,
                                  _render_cfg(args), args.force)
        rho = "nan (zero variance)" if math.isnan(res.rho) else f"{res.rho:.4f}"
        print(f"spearman rho: {rho}")
    elif cmd == "bdrate":
        value = pipeline.cmd_bdrate(args.anchor, args.test, args.anchor_label, args.test_label)
        print(f"{value:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
