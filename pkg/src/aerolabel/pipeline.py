"""End-to-end orchestration of the three-stage auto-labeling pipeline.

Stage 1 fits a detector on labeled source-domain images and pseudo-labels
synthetic source images.  Stage 2 fits a detector on the synthetic source
attention stacks against those pseudo-labels and transfers them to the
synthetic target stacks (attention maps carry far less style than RGB, so
this crosses the domain gap).  Stage 3 refines the target pseudo-labels
with a patch classifier, fits the final detector on synthetic target
images, and evaluates on held-out target data.

Target-domain ground truth is never visible to the stages: the orchestrator
hands them annotation-stripped manifests (weak image-level flags only) and
asserts as much.  Full annotations are used only for the held-out
evaluation and for explicit oracle baselines.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core_io import DatasetManifest, ManifestEntry, save_manifest
from .detector import DetectorModel, SearchGrid, detect, fit, pseudo_label
from .evalkit import EvalMode, EvalReport, evaluate_manifests
from .refine import RefineConfig, refine_manifest
from .scenegen import SceneConfig, gen_dataset
from .store import DiskStore, MemoryStore

FIXED_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)
SUMMARY_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    n_source_real: int = 200
    n_source_synth: int = 200
    n_target_synth: int = 400
    n_target_eval: int = 100
    pos_fraction: float = 0.5
    source_scene: SceneConfig = field(default_factory=lambda: SceneConfig(style="source"))
    target_scene: SceneConfig = field(default_factory=lambda: SceneConfig(style="target"))
    image_grid: SearchGrid = field(default_factory=SearchGrid)
    map_grid_thresholds: tuple[float, ...] = (0.35, 0.45, 0.55, 0.65, 0.75)
    map_channels: str = "stacked"  # "stacked" | "single"
    conf_min: float = 0.0
    refine: RefineConfig = field(default_factory=RefineConfig)
    match_radius: float = 12.0
    eval_mode: EvalMode = field(default_factory=EvalMode)
    workers: int = 1

    def __post_init__(self):
        if self.map_channels not in ("stacked", "single"):
            raise ValueError(f"map_channels must be 'stacked' or 'single', got {self.map_channels!r}")
        for n in (self.n_source_real, self.n_source_synth, self.n_target_synth,
                  self.n_target_eval):
            if n < 1:
                raise ValueError("corpus sizes must be >= 1")
        if self.source_scene.style != "source" or self.target_scene.style != "target":
            raise ValueError("scene styles must match their domain")

    def map_grid(self) -> SearchGrid:
        reduce = "stack-mean" if self.map_channels == "stacked" else "single-channel"
        return SearchGrid(bin_thresholds=self.map_grid_thresholds,
                          min_areas=(20.0,), max_areas=(2000.0,),
                          merge_radii=(6.0,), channel_reduces=(reduce,))

    @classmethod
    def benchmark(cls, seed: int = 0, **overrides) -> "PipelineConfig":
        """The published desk-scale benchmark configuration.

        2000 source-train scenes (1000 labeled "real" + 1000 synthetic with
        attention stacks), 2000 target-train scenes, 500 held-out target
        eval scenes; attention fidelity degraded (smooth noise 0.45, 2 px
        center jitter, blob amplitudes from [0.45, 1]) so the stacking and
        refinement stages have real work to do.
        """
        attn = dict(attn_noise=0.45, attn_offset_jitter=2.0, attn_peak_min=0.45)
        overrides.setdefault("source_scene", SceneConfig(style="source", **attn))
        overrides.setdefault("target_scene", SceneConfig(style="target", **attn))
        return cls(seed=seed, n_source_real=1000, n_source_synth=1000,
                   n_target_synth=2000, n_target_eval=500, **overrides)


def _corpus_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def strip_annotations(m: DatasetManifest) -> DatasetManifest:
    """Weak-label view of a manifest: image-level flags only."""
    entries = [replace(e, annotations=[], weak_only=e.has_vehicles) for e in m]
    out = DatasetManifest(entries)
    out.validate()
    return out


def assert_weak_only(m: DatasetManifest, context: str) -> None:
    for e in m:
        if e.annotations:
            raise AssertionError(
                f"data-access audit: {context} received annotated entry {e.image_path!r}")


@dataclass
class Corpora:
    source_real: DatasetManifest        # fully labeled, visible to stage 1
    source_synth_weak: DatasetManifest  # images + maps, annotations stripped
    target_synth_weak: DatasetManifest  # images + maps, weak flags only
    target_eval_truth: DatasetManifest  # held-out, full labels (evaluation only)
    source_synth_truth: DatasetManifest
    target_synth_truth: DatasetManifest


def generate_corpora(cfg: PipelineConfig, store) -> Corpora:
    src = replace(cfg.source_scene, seed=_corpus_seed(cfg.seed, 1))
    src_synth = replace(cfg.source_scene, seed=_corpus_seed(cfg.seed, 2))
    tgt_synth = replace(cfg.target_scene, seed=_corpus_seed(cfg.seed, 3))
    tgt_eval = replace(cfg.target_scene, seed=_corpus_seed(cfg.seed, 4))

    source_real = gen_dataset(src, cfg.n_source_real, cfg.pos_fraction,
                              None, store=store, stage_tag="real", with_maps=False)
    source_synth = gen_dataset(src_synth, cfg.n_source_synth, cfg.pos_fraction,
                               None, store=store, stage_tag="synthetic")
    # distinct path prefixes per corpus: rename via prefix baked into paths
    target_synth = gen_dataset(tgt_synth, cfg.n_target_synth, cfg.pos_fraction,
                               None, store=store, stage_tag="synthetic")
    target_eval = gen_dataset(tgt_eval, cfg.n_target_eval, cfg.pos_fraction,
                              None, store=store, stage_tag="real", with_maps=False)
    return Corpora(
        source_real=source_real,
        source_synth_weak=strip_annotations(source_synth),
        target_synth_weak=strip_annotations(target_synth),
        target_eval_truth=target_eval,
        source_synth_truth=source_synth,
        target_synth_truth=target_synth,
    )


def _training_pairs(manifest: DatasetManifest, store, source: str = "image"):
    pairs = []
    for e in manifest:
        path = e.image_path if source == "image" else e.map_path
        pairs.append((store.get(path), e.annotations))
    return pairs


def _merge_labels(base: DatasetManifest, labels: DatasetManifest) -> DatasetManifest:
    """Attach the annotations of ``labels`` onto ``base``'s entries by path."""
    by_path = {e.image_path: e for e in labels}
    entries = [replace(e, annotations=by_path[e.image_path].annotations,
                       stage_tag=by_path[e.image_path].stage_tag,
                       weak_only=e.has_vehicles != bool(by_path[e.image_path].annotations))
               for e in base]
    out = DatasetManifest(entries)
    out.validate()
    return out


def run_stage_source_detector(cfg: PipelineConfig, store,
                              corpora: Corpora) -> tuple[DetectorModel, DatasetManifest]:
    """Stage 1: fit on labeled source images, pseudo-label synthetic source."""
    f_s = fit(_training_pairs(corpora.source_real, store), cfg.image_grid,
              match_radius=cfg.match_radius)
    assert_weak_only(corpora.source_synth_weak, "stage 1 pseudo-labeling")
    y_gs = pseudo_label(f_s, corpora.source_synth_weak, store,
                        source="image", conf_min=cfg.conf_min, workers=cfg.workers)
    return f_s, y_gs


def run_stage_map_detector(cfg: PipelineConfig, store, corpora: Corpora,
                           y_gs: DatasetManifest) -> tuple[DetectorModel, DatasetManifest]:
    """Stage 2: fit on source attention stacks vs stage-1 pseudo-labels,
    transfer to target attention stacks."""
    f_a = fit(_training_pairs(y_gs, store, source="map"), cfg.map_grid(),
              match_radius=cfg.match_radius)
    assert_weak_only(corpora.target_synth_weak, "stage 2 pseudo-labeling")
    y_gt = pseudo_label(f_a, corpora.target_synth_weak, store,
                        source="map", conf_min=cfg.conf_min, workers=cfg.workers)
    return f_a, y_gt


def predict_manifest(model: DetectorModel, manifest: DatasetManifest, store,
                     workers: int = 1) -> DatasetManifest:
    """Detections for every entry (no weak-label veto: pure inference)."""
    paths = [e.image_path for e in manifest]

    def work(path):
        return detect(model, store.get(path))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            all_dets = list(pool.map(work, paths))
    else:
        all_dets = [work(p) for p in paths]
    entries = [replace(e, annotations=dets, stage_tag="pseudo-labeled",
                       weak_only=e.has_vehicles != bool(dets))
               for e, dets in zip(manifest, all_dets)]
    out = DatasetManifest(entries)
    out.validate()
    return out


def run_stage_final(cfg: PipelineConfig, store, corpora: Corpora,
                    y_gt: DatasetManifest) -> tuple[DetectorModel, EvalReport, DatasetManifest]:
    """Stage 3: refine target pseudo-labels, fit the final detector on target
    images, evaluate on held-out target data."""
    refined = refine_manifest(y_gt, store, cfg.refine).manifest
    f_t = fit(_training_pairs(refined, store), cfg.image_grid,
              match_radius=cfg.match_radius)
    pred = predict_manifest(f_t, corpora.target_eval_truth, store, workers=cfg.workers)
    report = evaluate_manifests(pred, corpora.target_eval_truth, cfg.eval_mode)
    return f_t, report, refined


def evaluate_detector(model: DetectorModel, eval_truth: DatasetManifest, store,
                      mode: EvalMode, workers: int = 1) -> EvalReport:
    pred = predict_manifest(model, eval_truth, store, workers=workers)
    return evaluate_manifests(pred, eval_truth, mode)


def filter_by_confidence(m: DatasetManifest, threshold: float) -> DatasetManifest:
    entries = []
    for e in m:
        kept = [a for a in e.annotations if a.confidence is not None
                and a.confidence >= threshold]
        entries.append(replace(e, annotations=kept,
                               weak_only=e.has_vehicles != bool(kept)))
    out = DatasetManifest(entries)
    out.validate()
    return out


@dataclass
class PipelineResult:
    summary: dict
    f_s: DetectorModel
    f_a: DetectorModel
    f_t: DetectorModel
    y_gs: DatasetManifest
    y_gt: DatasetManifest
    refined: DatasetManifest
    report: EvalReport
    corpora: Corpora


def run_all(cfg: PipelineConfig, store=None, out_dir: str | Path | None = None,
            ablate: bool = False, baselines: bool = True) -> PipelineResult:
    """Generate corpora, run the three stages, and assemble a summary.

    With ``ablate``, also runs {stacked, single} x {refined, fixed
    thresholds} label variants and reports their held-out AP50.
    """
    if store is None:
        store = DiskStore(out_dir) if out_dir is not None else MemoryStore()
    corpora = generate_corpora(cfg, store)
    f_s, y_gs = run_stage_source_detector(cfg, store, corpora)
    f_a, y_gt = run_stage_map_detector(cfg, store, corpora, y_gs)
    f_t, report, refined = run_stage_final(cfg, store, corpora, y_gt)

    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "seed": cfg.seed,
        "map_channels": cfg.map_channels,
        "corpus_sizes": {
            "source_real": cfg.n_source_real,
            "source_synth": cfg.n_source_synth,
            "target_synth": cfg.n_target_synth,
            "target_eval": cfg.n_target_eval,
        },
        "stages": {
            "source_detector": {"model": json.loads(f_s.to_json())},
            "map_detector": {"model": json.loads(f_a.to_json())},
            "final_detector": {"model": json.loads(f_t.to_json())},
        },
        "eval": report.to_json(),
    }

    if baselines:
        source_only = evaluate_detector(f_s, corpora.target_eval_truth, store,
                                        cfg.eval_mode, cfg.workers)
        oracle_model = fit(_training_pairs(corpora.target_synth_truth, store),
                           cfg.image_grid, match_radius=cfg.match_radius)
        oracle = evaluate_detector(oracle_model, corpora.target_eval_truth, store,
                                   cfg.eval_mode, cfg.workers)
        summary["baselines"] = {
            "source_only_ap50": source_only.ap50,
            "oracle_ap50": oracle.ap50,
        }

    if ablate:
        summary["ablation"] = _run_ablation(cfg, store, corpora, y_gs)

    return PipelineResult(summary=summary, f_s=f_s, f_a=f_a, f_t=f_t,
                          y_gs=y_gs, y_gt=y_gt, refined=refined,
                          report=report, corpora=corpora)


def _run_ablation(cfg: PipelineConfig, store, corpora: Corpora,
                  y_gs: DatasetManifest) -> list[dict]:
    rows = []
    for channels in ("stacked", "single"):
        vcfg = replace(cfg, map_channels=channels)
        _, y_gt = run_stage_map_detector(vcfg, store, corpora, y_gs)
        label_sets = {"refined": refine_manifest(y_gt, store, cfg.refine).manifest}
        for thr in FIXED_THRESHOLDS:
            label_sets[f"fixed_{thr:.1f}"] = filter_by_confidence(y_gt, thr)
        for label_name, labels in label_sets.items():
            model = fit(_training_pairs(labels, store), cfg.image_grid,
                        match_radius=cfg.match_radius)
            rep = evaluate_detector(model, corpora.target_eval_truth, store,
                                    cfg.eval_mode, cfg.workers)
            rows.append({"map_channels": channels, "labels": label_name,
                         "ap50": rep.ap50, "best_f1": rep.best_f1})
    return rows


def run_batch(cfg: PipelineConfig, seeds: list[int], store_factory=None,
              ablate: bool = False) -> dict:
    """Run the pipeline once per seed and aggregate mean AP50s."""
    per_seed = []
    for s in seeds:
        store = store_factory() if store_factory is not None else MemoryStore()
        res = run_all(replace(cfg, seed=s), store=store, ablate=ablate)
        per_seed.append(res.summary)
    out = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "seeds": list(seeds),
        "per_seed": per_seed,
        "mean_ap50": float(np.mean([s["eval"]["ap50"] for s in per_seed])),
    }
    if per_seed and "baselines" in per_seed[0]:
        out["mean_source_only_ap50"] = float(np.mean(
            [s["baselines"]["source_only_ap50"] for s in per_seed]))
        out["mean_oracle_ap50"] = float(np.mean(
            [s["baselines"]["oracle_ap50"] for s in per_seed]))
    return out


def persist_result(res: PipelineResult, out_dir: str | Path) -> None:
    """Write stage manifests, models, and the summary under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_manifest(res.corpora.source_real, out / "source_real.jsonl")
    save_manifest(res.y_gs, out / "pseudo_source.jsonl")
    save_manifest(res.y_gt, out / "pseudo_target.jsonl")
    save_manifest(res.refined, out / "refined_target.jsonl")
    save_manifest(res.corpora.target_eval_truth, out / "target_eval.jsonl")
    for name, model in (("f_s", res.f_s), ("f_a", res.f_a), ("f_t", res.f_t)):
        (out / f"{name}.json").write_text(model.to_json())
    (out / "summary.json").write_text(json.dumps(res.summary, indent=2))
