"""Three-stage orchestration at smoke scale."""

import io
import json

import numpy as np
import pytest

from aerolabel.core_io import save_manifest
from aerolabel.evalkit import EvalMode, match_detections
from aerolabel.pipeline import (Corpora, PipelineConfig, PipelineResult,
                                assert_weak_only, filter_by_confidence,
                                generate_corpora, persist_result, run_all,
                                run_batch, strip_annotations)
from aerolabel.scenegen import SceneConfig
from aerolabel.store import MemoryStore

CLEAN_ATTN = dict(attn_noise=0.0, attn_offset_jitter=0.0)


def small_config(seed=0, **kw):
    kw.setdefault("n_source_real", 30)
    kw.setdefault("n_source_synth", 30)
    kw.setdefault("n_target_synth", 40)
    kw.setdefault("n_target_eval", 16)
    return PipelineConfig(seed=seed, **kw)


def clean_config(seed=0, **kw):
    kw.setdefault("source_scene", SceneConfig(style="source", **CLEAN_ATTN))
    kw.setdefault("target_scene", SceneConfig(style="target", **CLEAN_ATTN))
    return small_config(seed, **kw)


def manifest_bytes(m):
    buf = io.StringIO()
    m.validate()
    for e in m:
        buf.write(json.dumps(e.to_json()) + "\n")
    return buf.getvalue()


@pytest.fixture(scope="module")
def smoke_result():
    return run_all(clean_config(seed=1), ablate=False)


class TestConfig:
    def test_invalid_channels(self):
        with pytest.raises(ValueError):
            PipelineConfig(map_channels="both")

    def test_styles_must_match_domains(self):
        with pytest.raises(ValueError):
            PipelineConfig(source_scene=SceneConfig(style="target"))

    def test_benchmark_sizes(self):
        cfg = PipelineConfig.benchmark(seed=3)
        assert (cfg.n_source_real + cfg.n_source_synth,
                cfg.n_target_synth, cfg.n_target_eval) == (2000, 2000, 500)


class TestCorpora:
    def test_weak_views_carry_no_annotations(self):
        store = MemoryStore()
        corpora = generate_corpora(small_config(), store)
        assert_weak_only(corpora.source_synth_weak, "test")
        assert_weak_only(corpora.target_synth_weak, "test")

    def test_audit_rejects_annotated_manifest(self):
        store = MemoryStore()
        corpora = generate_corpora(small_config(), store)
        with pytest.raises(AssertionError, match="audit"):
            assert_weak_only(corpora.target_synth_truth, "test")

    def test_strip_preserves_flags(self):
        store = MemoryStore()
        corpora = generate_corpora(small_config(), store)
        stripped = strip_annotations(corpora.target_synth_truth)
        for e0, e1 in zip(corpora.target_synth_truth, stripped):
            assert e1.has_vehicles == e0.has_vehicles and not e1.annotations


class TestRunAll:
    def test_smoke_run_summary_schema(self, smoke_result):
        s = smoke_result.summary
        assert {"schema_version", "seed", "map_channels", "corpus_sizes",
                "stages", "eval", "baselines"} <= set(s)
        assert {"source_detector", "map_detector", "final_detector"} <= set(s["stages"])

    def test_source_detector_separates_training_data(self, smoke_result):
        # source scenes are separable by construction
        assert smoke_result.f_s.fitted_f1 == 1.0

    def test_clean_maps_recover_stage1_labels(self, smoke_result):
        # with zero attention noise, the map detector reproduces the
        # stage-1 pseudo-labels on its own training set
        assert smoke_result.f_a.fitted_f1 == 1.0

    def test_final_beats_source_only(self, smoke_result):
        s = smoke_result.summary
        assert s["eval"]["ap50"] >= s["baselines"]["source_only_ap50"]

    def test_target_pseudo_label_recall(self, smoke_result):
        # planted target ground truth is recovered by the map stage
        mode = EvalMode(kind="circle", radius=12.0)
        truth = {e.image_path: e for e in smoke_result.corpora.target_synth_truth}
        tp = n_gt = 0
        for e in smoke_result.y_gt:
            gts = truth[e.image_path].annotations
            recs = match_detections(e.annotations, gts, mode)
            tp += sum(1 for r in recs
                      if r.det_index is not None and r.gt_index is not None)
            n_gt += len(gts)
        assert n_gt > 0 and tp / n_gt >= 0.9

    def test_deterministic_rerun(self):
        cfg = clean_config(seed=5)
        r1 = run_all(cfg, baselines=False)
        r2 = run_all(cfg, baselines=False)
        for m1, m2 in ((r1.y_gs, r2.y_gs), (r1.y_gt, r2.y_gt),
                       (r1.refined, r2.refined)):
            assert manifest_bytes(m1) == manifest_bytes(m2)
        assert r1.summary["eval"] == r2.summary["eval"]

    def test_zero_positive_fraction_gives_all_negative_labels(self):
        cfg = clean_config(seed=2, pos_fraction=0.0)
        res = run_all(cfg, baselines=False)
        assert all(not e.annotations for e in res.y_gs)
        assert res.f_s.no_positives

    def test_single_channel_variant_runs(self):
        res = run_all(clean_config(seed=3, map_channels="single"),
                      baselines=False)
        assert res.summary["map_channels"] == "single"
        assert 0.0 <= res.summary["eval"]["ap50"] <= 1.0


class TestAblationAndBatch:
    def test_ablation_rows(self):
        res = run_all(clean_config(seed=4), ablate=True, baselines=False)
        rows = res.summary["ablation"]
        labels = {(r["map_channels"], r["labels"]) for r in rows}
        expected_labels = {"refined"} | {f"fixed_{t:.1f}"
                                         for t in (0.3, 0.4, 0.5, 0.6, 0.7)}
        assert labels == {(c, l) for c in ("stacked", "single")
                          for l in expected_labels}
        assert all(0.0 <= r["ap50"] <= 1.0 for r in rows)

    def test_batch_reports_per_seed_and_mean(self):
        out = run_batch(clean_config(), seeds=[0, 1])
        assert out["seeds"] == [0, 1]
        assert len(out["per_seed"]) == 2
        expected = np.mean([s["eval"]["ap50"] for s in out["per_seed"]])
        assert out["mean_ap50"] == pytest.approx(expected)
        assert "mean_source_only_ap50" in out and "mean_oracle_ap50" in out


class TestFilterByConfidence:
    def test_threshold_filtering(self, smoke_result):
        strict = filter_by_confidence(smoke_result.y_gt, 0.99)
        loose = filter_by_confidence(smoke_result.y_gt, 0.0)
        n_strict = sum(len(e.annotations) for e in strict)
        n_loose = sum(len(e.annotations) for e in loose)
        assert n_strict <= n_loose


class TestPersist:
    def test_writes_expected_files(self, tmp_path):
        res = run_all(clean_config(seed=6), baselines=False)
        persist_result(res, tmp_path)
        for name in ("source_real.jsonl", "pseudo_source.jsonl",
                     "pseudo_target.jsonl", "refined_target.jsonl",
                     "target_eval.jsonl", "f_s.json", "f_a.json", "f_t.json",
                     "summary.json"):
            assert (tmp_path / name).exists(), name
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["schema_version"] == res.summary["schema_version"]
