"""Command-line interface.

Every subcommand prints a JSON result to stdout; rasters travel in the
AMAP binary format and manifests as JSON-lines.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import attn_math, geometry
from .core_io import (Annotation, load_manifest, read_raster, save_manifest)
from .detector import DetectorModel, SearchGrid, fit, pseudo_label
from .evalkit import EvalMode, evaluate_manifests
from .refine import RefineConfig, refine_manifest
from .sampler import SplitConfig, TileRecord, build_split
from .scenegen import SceneConfig, gen_dataset
from .store import DiskStore


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def cmd_geom(args) -> int:
    a = geometry.solve_box_size(args.radius, args.alpha)
    est = geometry.region_disagreement(args.radius, a, args.alpha,
                                       n_samples=args.samples, seed=args.seed)
    _emit({
        "radius": args.radius,
        "alpha": args.alpha,
        "box_side": a,
        "quadrant_area": geometry.isocontour_area_quadrant(a, args.alpha),
        "disagreement_fraction": est.fraction,
        "disagreement_stderr": est.stderr,
    })
    return 0


def cmd_attn(args) -> int:
    out = {}
    if args.stack:
        stack = attn_math.AttentionStack.from_raster(read_raster(args.stack))
        out["reg_loss"] = attn_math.reg_loss(stack)
        out["obj_loss"] = attn_math.obj_loss(stack.foreground, stack.category)
        out["bg_loss"] = attn_math.bg_loss(stack.background, stack.category)
    if args.p and args.q:
        p = attn_math.to_distribution(read_raster(args.p))
        q = attn_math.to_distribution(read_raster(args.q))
        out["tv_distance"] = attn_math.tv_distance(p, q)
    if not out:
        print("attn: provide --stack and/or both --p and --q", file=sys.stderr)
        return 2
    _emit(out)
    return 0


def cmd_scenegen(args) -> int:
    cfg = SceneConfig(style=args.style, seed=args.seed,
                      attn_sigma=args.attn_sigma, attn_noise=args.attn_noise,
                      attn_offset_jitter=args.attn_jitter)
    out_dir = Path(args.out)
    manifest = gen_dataset(cfg, args.n, args.pos_fraction, out_dir)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    _emit({"n_images": len(manifest),
           "n_positive": sum(e.has_vehicles for e in manifest),
           "manifest": str(out_dir / "manifest.jsonl")})
    return 0


def _load_labels(path: str) -> list[Annotation]:
    with open(path, "r", encoding="utf-8") as f:
        return [Annotation.from_json(d) for d in json.load(f)]


def cmd_sample(args) -> int:
    tile = read_raster(args.tile)
    gts = _load_labels(args.labels) if args.labels else []
    out_dir = Path(args.out)
    store = DiskStore(out_dir)
    cfg = SplitConfig(n_windows=args.n, w=args.window, seed=args.seed,
                      to_gsd=args.gsd_out, domain_tag=args.domain)
    manifest = build_split([TileRecord(tile, gts, args.gsd_in)], cfg, store)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    _emit({"n_windows": len(manifest),
           "n_positive": sum(e.has_vehicles for e in manifest),
           "manifest": str(out_dir / "manifest.jsonl")})
    return 0


def cmd_detect(args) -> int:
    model = DetectorModel.from_json(Path(args.model).read_text())
    manifest = load_manifest(args.manifest)
    store = DiskStore(args.raster_dir)
    labeled = pseudo_label(model, manifest, store, source=args.on,
                           conf_min=args.conf_min)
    save_manifest(labeled, args.out)
    _emit({"n_entries": len(labeled),
           "n_annotations": sum(len(e.annotations) for e in labeled),
           "manifest": args.out})
    return 0


def cmd_fit(args) -> int:
    manifest = load_manifest(args.manifest)
    store = DiskStore(args.raster_dir)
    grid = SearchGrid(
        bin_thresholds=tuple(args.thresholds),
        min_areas=tuple(args.min_areas),
        max_areas=tuple(args.max_areas),
        merge_radii=tuple(args.merge_radii),
        channel_reduces=tuple(args.reduces),
    )
    training = []
    for e in manifest:
        path = e.image_path if args.on == "image" else e.map_path
        training.append((store.get(path), e.annotations))
    model = fit(training, grid, match_radius=args.match_radius)
    Path(args.out).write_text(model.to_json())
    _emit(json.loads(model.to_json()))
    return 0


def cmd_refine(args) -> int:
    manifest = load_manifest(args.manifest)
    store = DiskStore(args.images)
    cfg = RefineConfig(lambda_high=args.lambda_high, lambda_low=args.lambda_low,
                       epochs=args.epochs, learning_rate=args.lr, seed=args.seed)
    result = refine_manifest(manifest, store, cfg)
    save_manifest(result.manifest, args.out)
    _emit({
        "manifest": args.out,
        "fallback": result.fallback,
        "n_positive": result.n_positive,
        "n_uncertain": result.n_uncertain,
        "n_negative": result.n_negative,
        "n_kept": sum(len(e.annotations) for e in result.manifest),
    })
    return 0


def cmd_eval(args) -> int:
    pred = load_manifest(args.pred)
    gt = load_manifest(args.gt)
    if args.mode == "circle":
        mode = EvalMode(kind="circle", radius=args.radius)
    else:
        mode = EvalMode(kind="iou", radius=args.radius,
                        a=geometry.solve_box_size(args.radius, args.alpha),
                        alpha=args.alpha)
    report = evaluate_manifests(pred, gt, mode)
    if args.plot:
        _write_pr_plot(report, args.plot)
    _emit(report.to_json())
    return 0


def _write_pr_plot(report, path: str) -> None:
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    if report.pr_curve:
        rs = [r for _, _, r, _ in report.pr_curve]
        ps = [p for _, p, _, _ in report.pr_curve]
        ax.plot(rs, ps, marker="o")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.05)
    ax.set_ylim(0, 1.05)
    ax.set_title(f"AP50 = {report.ap50:.4f}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_pipeline(args) -> int:
    from .pipeline import PipelineConfig, persist_result, run_all, run_batch

    if args.config:
        raw = json.loads(Path(args.config).read_text())
        cfg = _pipeline_config_from_dict(raw)
    else:
        cfg = PipelineConfig(seed=args.seed)
    if args.seeds > 1:
        summary = run_batch(cfg, list(range(args.seed, args.seed + args.seeds)),
                            ablate=args.ablate)
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / "summary.json").write_text(json.dumps(summary, indent=2))
        _emit(summary)
        return 0
    res = run_all(dataclasses.replace(cfg, seed=args.seed), ablate=args.ablate)
    if args.out:
        persist_result(res, args.out)
    _emit(res.summary)
    return 0


def _pipeline_config_from_dict(raw: dict):
    from .pipeline import PipelineConfig

    kwargs = dict(raw)
    for key, cls in (("source_scene", SceneConfig), ("target_scene", SceneConfig),
                     ("image_grid", SearchGrid), ("refine", RefineConfig),
                     ("eval_mode", EvalMode)):
        if key in kwargs:
            sub = dict(kwargs[key])
            for k, v in sub.items():
                if isinstance(v, list):
                    sub[k] = tuple(v)
            kwargs[key] = cls(**sub)
    if "map_grid_thresholds" in kwargs:
        kwargs["map_grid_thresholds"] = tuple(kwargs["map_grid_thresholds"])
    return PipelineConfig(**kwargs)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aerolabel")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("geom", help="decision-circle / pseudo-box geometry")
    g.add_argument("--radius", type=float, default=12.0)
    g.add_argument("--alpha", type=float, default=0.5)
    g.add_argument("--samples", type=int, default=1_000_000)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_geom)

    a = sub.add_parser("attn", help="attention-map losses on raster files")
    a.add_argument("--stack", help="3-channel attention stack raster")
    a.add_argument("--p", help="first 1-channel raster for TV distance")
    a.add_argument("--q", help="second 1-channel raster for TV distance")
    a.set_defaults(func=cmd_attn)

    s = sub.add_parser("scenegen", help="generate a procedural corpus")
    s.add_argument("--style", choices=("source", "target"), default="source")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--pos-fraction", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--attn-sigma", type=float, default=4.0)
    s.add_argument("--attn-noise", type=float, default=0.25)
    s.add_argument("--attn-jitter", type=float, default=1.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scenegen)

    w = sub.add_parser("sample", help="rotated window sampling from a tile")
    w.add_argument("--tile", required=True)
    w.add_argument("--labels", help="JSON list of {cx, cy} tile-frame centers")
    w.add_argument("--n", type=int, required=True)
    w.add_argument("--window", type=int, default=112)
    w.add_argument("--gsd-in", type=float, required=True)
    w.add_argument("--gsd-out", type=float, default=12.5)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--domain", choices=("source", "target"), default="source")
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sample)

    d = sub.add_parser("detect", help="pseudo-label a manifest with a fitted model")
    d.add_argument("--model", required=True, help="DetectorModel JSON file")
    d.add_argument("--manifest", required=True)
    d.add_argument("--raster-dir", required=True)
    d.add_argument("--on", choices=("image", "map"), default="image")
    d.add_argument("--conf-min", type=float, default=0.0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_detect)

    f = sub.add_parser("fit", help="grid-search a blob detector")
    f.add_argument("--manifest", required=True)
    f.add_argument("--raster-dir", required=True)
    f.add_argument("--on", choices=("image", "map"), default="image")
    f.add_argument("--thresholds", type=float, nargs="+",
                   default=[0.35, 0.45, 0.55, 0.65, 0.75])
    f.add_argument("--min-areas", type=float, nargs="+", default=[20.0])
    f.add_argument("--max-areas", type=float, nargs="+", default=[800.0])
    f.add_argument("--merge-radii", type=float, nargs="+", default=[6.0])
    f.add_argument("--reduces", nargs="+", default=["luminance"])
    f.add_argument("--match-radius", type=float, default=12.0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("refine", help="classifier refinement of pseudo-labels")
    r.add_argument("--manifest", required=True)
    r.add_argument("--images", required=True, help="raster directory")
    r.add_argument("--lambda-high", type=float, default=0.7)
    r.add_argument("--lambda-low", type=float, default=0.3)
    r.add_argument("--epochs", type=int, default=300)
    r.add_argument("--lr", type=float, default=2.0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_refine)

    e = sub.add_parser("eval", help="location-based AP50 evaluation")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--mode", choices=("circle", "iou"), default="circle")
    e.add_argument("--radius", type=float, default=12.0)
    e.add_argument("--alpha", type=float, default=0.5)
    e.add_argument("--plot", help="optional PR-curve SVG path")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("pipeline", help="run the full three-stage pipeline")
    pl.add_argument("action", choices=("run",))
    pl.add_argument("--config", help="PipelineConfig JSON file")
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--seeds", type=int, default=1, help="number of seeds (batch mode)")
    pl.add_argument("--ablate", action="store_true")
    pl.add_argument("--out", help="output directory for manifests and summary")
    pl.set_defaults(func=cmd_pipeline)

    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
