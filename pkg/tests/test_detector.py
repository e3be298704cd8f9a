"""Blob detector: channel reduction, detection, grid fitting, pseudo-labeling."""

import numpy as np
import pytest

from aerolabel.core_io import Annotation, DatasetManifest, ManifestEntry, Raster
from aerolabel.detector import (DetectorModel, SearchGrid, detect, fit,
                                pseudo_label, reduce_channels)
from aerolabel.store import MemoryStore
from conftest import gaussian_blob


def blob_raster(centers, size=112, sigma=3.0, peak=1.0, base=0.0):
    field = np.full((size, size), base, dtype=np.float32)
    for cx, cy in centers:
        field += gaussian_blob(size, cx, cy, sigma, peak=peak)
    return Raster(np.clip(field, 0.0, 1.0))


class TestDetectorModel:
    def test_json_roundtrip(self):
        m = DetectorModel(channel_reduce="stack-mean", bin_threshold=0.4,
                          min_area=10.0, max_area=500.0, merge_radius=8.0,
                          fitted_f1=0.9)
        assert DetectorModel.from_json(m.to_json()) == m

    def test_validation(self):
        with pytest.raises(ValueError):
            DetectorModel(channel_reduce="fourier")
        with pytest.raises(ValueError):
            DetectorModel(bin_threshold=1.5)
        with pytest.raises(ValueError):
            DetectorModel(min_area=10.0, max_area=5.0)
        with pytest.raises(ValueError):
            DetectorModel(merge_radius=-1.0)


class TestReduceChannels:
    def test_luminance_weights(self):
        r = Raster(np.stack([np.full((2, 2), 1.0), np.zeros((2, 2)),
                             np.zeros((2, 2))]).astype(np.float32))
        assert np.allclose(reduce_channels(r, "luminance"), 0.299)

    def test_luminance_passthrough_single_channel(self):
        r = Raster(np.full((1, 2, 2), 0.7, dtype=np.float32))
        assert np.allclose(reduce_channels(r, "luminance"), 0.7)

    def test_single_channel_takes_first(self):
        data = np.zeros((3, 2, 2), dtype=np.float32)
        data[0] = 0.9
        assert np.allclose(reduce_channels(Raster(data), "single-channel"), 0.9)

    def test_stack_mean_inverts_background_channel(self):
        # channels: category 0.6, foreground 0.6, background 0.3
        data = np.stack([np.full((2, 2), 0.6), np.full((2, 2), 0.6),
                         np.full((2, 2), 0.3)]).astype(np.float32)
        out = reduce_channels(Raster(data), "stack-mean")
        assert np.allclose(out, (0.6 + 0.6 + 0.7) / 3)

    def test_stack_min(self):
        data = np.stack([np.full((2, 2), 0.6), np.full((2, 2), 0.8),
                         np.full((2, 2), 0.1)]).astype(np.float32)
        assert np.allclose(reduce_channels(Raster(data), "stack-min"), 0.6)

    def test_stack_reduce_requires_three_channels(self):
        with pytest.raises(ValueError):
            reduce_channels(Raster(np.zeros((1, 2, 2), dtype=np.float32)),
                            "stack-mean")


class TestDetect:
    def test_uniform_below_threshold(self):
        m = DetectorModel(bin_threshold=0.6, min_area=1.0)
        r = Raster(np.full((1, 50, 50), 0.5, dtype=np.float32))
        assert detect(m, r) == []

    def test_single_gaussian_blob(self):
        m = DetectorModel(channel_reduce="single-channel", bin_threshold=0.5,
                          min_area=4.0)
        dets = detect(m, blob_raster([(30.0, 40.0)]))
        assert len(dets) == 1
        d = dets[0]
        assert abs(d.cx - 30.0) <= 1.0 and abs(d.cy - 40.0) <= 1.0
        # the peak sits between pixel centers, so the peak pixel reads
        # slightly below the analytic maximum
        assert d.confidence == pytest.approx(1.0, abs=0.05)

    def test_two_separated_blobs_survive_merge(self):
        m = DetectorModel(channel_reduce="single-channel", bin_threshold=0.5,
                          min_area=4.0, merge_radius=10.0)
        dets = detect(m, blob_raster([(30.0, 30.0), (70.0, 30.0)]))
        assert len(dets) == 2

    def test_close_blobs_merge_keeping_stronger(self):
        size = 112
        field = gaussian_blob(size, 40.0, 40.0, 3.0, peak=1.0)
        field += gaussian_blob(size, 45.0, 40.0, 3.0, peak=0.7)
        r = Raster(np.clip(field, 0.0, 1.0))
        loose = DetectorModel(channel_reduce="single-channel", bin_threshold=0.6,
                              min_area=1.0, merge_radius=0.0)
        merged = DetectorModel(channel_reduce="single-channel", bin_threshold=0.6,
                               min_area=1.0, merge_radius=12.0)
        n_loose = len(detect(loose, r))
        dets = detect(merged, r)
        assert len(dets) <= n_loose and len(dets) == 1
        assert abs(dets[0].cx - 40.0) < 3.0

    def test_area_filter(self):
        m = DetectorModel(channel_reduce="single-channel", bin_threshold=0.5,
                          min_area=50.0, max_area=60.0)
        # sigma-3 blob above 0.5 covers ~pi*(3*sqrt(2 ln 2))^2 ~= 39 px
        assert detect(m, blob_raster([(30.0, 30.0)])) == []

    def test_intensity_weighted_centroid_oracle(self):
        # asymmetric response: hand-compute the weighted centroid
        resp = np.zeros((1, 10, 10), dtype=np.float32)
        resp[0, 4, 4] = 0.9
        resp[0, 4, 5] = 0.6
        m = DetectorModel(channel_reduce="single-channel", bin_threshold=0.5,
                          min_area=1.0)
        d = detect(m, Raster(resp))[0]
        assert d.cx == pytest.approx((4.5 * 0.9 + 5.5 * 0.6) / 1.5, abs=1e-5)
        assert d.cy == pytest.approx(4.5, abs=1e-6)
        assert d.confidence == pytest.approx(0.9, abs=1e-6)

    def test_output_sorted_by_confidence(self):
        size = 112
        field = gaussian_blob(size, 30.0, 30.0, 3.0, peak=0.8)
        field += gaussian_blob(size, 80.0, 80.0, 3.0, peak=1.0)
        m = DetectorModel(channel_reduce="single-channel", bin_threshold=0.5,
                          min_area=1.0)
        dets = detect(m, Raster(np.clip(field, 0, 1)))
        confs = [d.confidence for d in dets]
        assert confs == sorted(confs, reverse=True)


def training_set(rng, n=12, peak=0.9, base=0.15):
    """Separable blobs-on-background training pairs."""
    pairs = []
    for i in range(n):
        k = int(rng.integers(1, 4))
        centers = [(float(rng.uniform(20, 92)), float(rng.uniform(20, 92)))
                   for _ in range(k)]
        # enforce separation
        centers = [c for j, c in enumerate(centers)
                   if all(np.hypot(c[0] - o[0], c[1] - o[1]) > 25
                          for o in centers[:j])]
        r = blob_raster(centers, peak=peak, base=base)
        pairs.append((r, [Annotation(cx, cy) for cx, cy in centers]))
    return pairs


class TestFit:
    def test_separable_case_picks_first_perfect_threshold(self, rng):
        pairs = training_set(rng)
        grid = SearchGrid(bin_thresholds=(0.3, 0.5, 0.7),
                          min_areas=(4.0,), max_areas=(2000.0,),
                          merge_radii=(6.0,), channel_reduces=("single-channel",))
        model = fit(pairs, grid)
        assert model.fitted_f1 == 1.0
        assert model.bin_threshold == 0.3  # first grid point achieving F1=1

    def test_all_negative_training_set(self, rng):
        pairs = [(blob_raster([], base=0.1), []) for _ in range(3)]
        grid = SearchGrid(channel_reduces=("single-channel",))
        model = fit(pairs, grid)
        assert model.no_positives is True
        assert model.fitted_f1 == 0.0

    def test_refit_identical(self, rng):
        pairs = training_set(rng)
        grid = SearchGrid(channel_reduces=("single-channel",))
        assert fit(pairs, grid) == fit(pairs, grid)

    def test_empty_training_rejected(self):
        with pytest.raises(ValueError):
            fit([], SearchGrid())


def _manifest_with(store, rasters_and_flags):
    entries = []
    for i, (r, has) in enumerate(rasters_and_flags):
        path = f"img_{i}.amap"
        store.put(path, r)
        entries.append(ManifestEntry(
            image_path=path, width=r.width, height=r.height,
            gsd_cm_per_px=12.5, has_vehicles=has, annotations=[],
            domain_tag="source", stage_tag="synthetic", weak_only=has))
    return DatasetManifest(entries)


class TestPseudoLabel:
    MODEL = DetectorModel(channel_reduce="single-channel", bin_threshold=0.5,
                          min_area=4.0)

    def test_conf_min_above_one_drops_everything(self, rng):
        store = MemoryStore()
        m = _manifest_with(store, [(blob_raster([(30, 30)]), True)])
        out = pseudo_label(self.MODEL, m, store, conf_min=1.0 + 1e-9)
        assert all(not e.annotations for e in out)
        assert all(e.weak_only == e.has_vehicles for e in out)

    def test_conf_min_zero_keeps_raw_detections(self):
        store = MemoryStore()
        r = blob_raster([(30.0, 30.0)])
        m = _manifest_with(store, [(r, True)])
        out = pseudo_label(self.MODEL, m, store, conf_min=0.0)
        assert out.entries[0].annotations == detect(self.MODEL, r)
        assert out.entries[0].stage_tag == "pseudo-labeled"

    def test_weak_negative_flag_vetoes_spurious_detections(self):
        store = MemoryStore()
        r = blob_raster([(40.0, 40.0)])  # visible blob, but flagged empty
        m = _manifest_with(store, [(r, False)])
        out = pseudo_label(self.MODEL, m, store)
        assert out.entries[0].annotations == []
        assert out.entries[0].weak_only is False

    def test_parallel_matches_serial(self, rng):
        store = MemoryStore()
        pairs = [(blob_raster([(float(rng.uniform(20, 90)),
                                float(rng.uniform(20, 90)))]), True)
                 for _ in range(16)]
        m = _manifest_with(store, pairs)
        serial = pseudo_label(self.MODEL, m, store, workers=1)
        parallel = pseudo_label(self.MODEL, m, store, workers=4)
        assert serial.entries == parallel.entries

    def test_invalid_source_rejected(self):
        with pytest.raises(ValueError):
            pseudo_label(self.MODEL, DatasetManifest([]), MemoryStore(),
                         source="dreams")
