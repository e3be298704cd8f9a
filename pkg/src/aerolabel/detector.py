"""Pluggable blob/peak detector used for every detection stage.

The pipeline contract is train-on-X / predict-on-Y; at desk scale the
trainable model is a parameter-searched connected-component blob detector
rather than a deep network, which keeps multi-thousand-image grid searches
in seconds while preserving the abstraction boundary for heavier detectors.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, asdict, replace

import numpy as np
from scipy import ndimage

from .core_io import Annotation, DatasetManifest, ManifestEntry, Raster

CHANNEL_REDUCES = ("luminance", "single-channel", "stack-mean", "stack-min")

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class DetectorModel:
    """Blob-detector parameterization applicable to any raster reduction."""

    channel_reduce: str = "luminance"
    bin_threshold: float = 0.5
    min_area: float = 4.0
    max_area: float = 2000.0
    merge_radius: float = 6.0
    fitted_f1: float | None = None
    no_positives: bool = False  # set by fit() on an all-negative training set

    def __post_init__(self):
        if self.channel_reduce not in CHANNEL_REDUCES:
            raise ValueError(f"unknown channel_reduce {self.channel_reduce!r}")
        if not (0.0 < self.bin_threshold < 1.0):
            raise ValueError(f"bin_threshold must lie in (0, 1), got {self.bin_threshold}")
        if not (0.0 < self.min_area <= self.max_area):
            raise ValueError(f"need 0 < min_area <= max_area, got {self.min_area}, {self.max_area}")
        if self.merge_radius < 0:
            raise ValueError("merge_radius must be non-negative")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, s: str) -> "DetectorModel":
        return cls(**json.loads(s))


def reduce_channels(r: Raster, channel_reduce: str) -> np.ndarray:
    """Collapse a raster to one response map."""
    d = r.data
    if channel_reduce == "luminance":
        if r.channels == 1:
            return d[0]
        if r.channels != 3:
            raise ValueError(f"luminance reduce needs 1 or 3 channels, got {r.channels}")
        return 0.299 * d[0] + 0.587 * d[1] + 0.114 * d[2]
    if channel_reduce == "single-channel":
        return d[0]
    if r.channels != 3:
        raise ValueError(f"{channel_reduce} reduce needs a 3-channel stack, got {r.channels}")
    # background channel votes for objectness once inverted
    voters = np.stack([d[0], d[1], 1.0 - d[2]])
    if channel_reduce == "stack-mean":
        return voters.mean(axis=0)
    return voters.min(axis=0)


def detect_response(m: DetectorModel, response: np.ndarray) -> list[Annotation]:
    """Run the component stage of :func:`detect` on a prepared response map."""
    mask = response > m.bin_threshold
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel())[1:]
    keep = np.flatnonzero((areas >= m.min_area) & (areas <= m.max_area)) + 1
    if keep.size == 0:
        return []
    cand = []
    ys, xs = np.nonzero(mask)
    lab = labels[ys, xs]
    vals = response[ys, xs].astype(np.float64)
    order = np.argsort(lab, kind="stable")
    ys, xs, lab, vals = ys[order], xs[order], lab[order], vals[order]
    bounds = np.searchsorted(lab, np.arange(1, n + 2))
    for k in keep:
        s, e = bounds[k - 1], bounds[k]
        v = vals[s:e]
        wsum = v.sum()
        cx = float(((xs[s:e] + 0.5) * v).sum() / wsum)
        cy = float(((ys[s:e] + 0.5) * v).sum() / wsum)
        cand.append(Annotation(cx=cx, cy=cy, confidence=float(np.clip(v.max(), 0.0, 1.0))))
    # radius merge, higher confidence wins
    cand.sort(key=lambda a: (-a.confidence, a.cy, a.cx))
    kept: list[Annotation] = []
    for a in cand:
        if all((a.cx - b.cx) ** 2 + (a.cy - b.cy) ** 2 >= m.merge_radius ** 2 for b in kept):
            kept.append(a)
    return kept


def detect(m: DetectorModel, raster: Raster) -> list[Annotation]:
    """Threshold, 8-connected components, area filter, intensity-weighted
    centroids, peak-value confidence, radius merging.

    Output is sorted by confidence descending with (cy, cx) tie-breaks.
    """
    return detect_response(m, reduce_channels(raster, m.channel_reduce))


@dataclass(frozen=True)
class SearchGrid:
    """Exhaustive fit grid; iteration order is the deterministic tie-break order."""

    bin_thresholds: tuple[float, ...] = (0.35, 0.45, 0.55, 0.65, 0.75)
    min_areas: tuple[float, ...] = (20.0,)
    max_areas: tuple[float, ...] = (800.0,)
    merge_radii: tuple[float, ...] = (6.0,)
    channel_reduces: tuple[str, ...] = ("luminance",)

    def models(self):
        for reduce, thr, mn, mx, mr in itertools.product(
                self.channel_reduces, self.bin_thresholds, self.min_areas,
                self.max_areas, self.merge_radii):
            if mn <= mx:
                yield DetectorModel(channel_reduce=reduce, bin_threshold=thr,
                                    min_area=mn, max_area=mx, merge_radius=mr)


def _pooled_f1(models_dets: list[list[Annotation]], gt_sets: list[list[Annotation]],
               match_radius: float) -> float:
    from .evalkit import EvalMode, match_detections

    mode = EvalMode(kind="circle", radius=match_radius)
    tp = fp = 0
    n_gt = sum(len(g) for g in gt_sets)
    for dets, gts in zip(models_dets, gt_sets):
        recs = match_detections(dets, gts, mode)
        matched = sum(1 for r in recs
                      if r.det_index is not None and r.gt_index is not None)
        tp += matched
        fp += len(dets) - matched
    fn = n_gt - tp
    if tp == 0 or tp + fp == 0:
        return 0.0
    p = tp / (tp + fp)
    r = tp / (tp + fn)
    return 2 * p * r / (p + r)


def fit(training: list[tuple[Raster, list[Annotation]]], grid: SearchGrid,
        match_radius: float = 12.0, seed: int = 0) -> DetectorModel:
    """Exhaustive grid search maximizing pooled F1 at ``match_radius``.

    Deterministic: ties resolve to the first grid point in iteration order.
    ``seed`` is accepted for interface stability; the search itself is
    exhaustive and needs no randomness.
    """
    if not training:
        raise ValueError("empty training set")
    models = list(grid.models())
    if not models:
        raise ValueError("empty search grid")
    gt_sets = [gts for _, gts in training]
    no_positives = all(len(g) == 0 for g in gt_sets)
    # reduction is grid-point independent given the reduce name; cache it
    responses: dict[str, list[np.ndarray]] = {}
    best = None
    best_f1 = -1.0
    for m in models:
        if m.channel_reduce not in responses:
            responses[m.channel_reduce] = [
                reduce_channels(r, m.channel_reduce) for r, _ in training]
        dets = [detect_response(m, resp) for resp in responses[m.channel_reduce]]
        f1 = _pooled_f1(dets, gt_sets, match_radius)
        if f1 > best_f1:
            best, best_f1 = m, f1
    return replace(best, fitted_f1=best_f1, no_positives=no_positives)


def pseudo_label(m: DetectorModel, manifest: DatasetManifest, store,
                 source: str = "image", conf_min: float = 0.0,
                 workers: int = 1) -> DatasetManifest:
    """Detect on every entry's raster and keep detections with confidence >= conf_min.

    Entries flagged has_vehicles=False keep zero annotations regardless of
    detections: the target domain's image-level labels veto spurious output.
    Parallel execution preserves entry order, so results are identical to a
    serial run.
    """
    if source not in ("image", "map"):
        raise ValueError(f"source must be 'image' or 'map', got {source!r}")

    def label_entry(e: ManifestEntry) -> list[Annotation]:
        path = e.image_path if source == "image" else e.map_path
        if path is None:
            raise ValueError(f"entry {e.image_path!r} has no {source} raster")
        if not e.has_vehicles:
            return []
        return [d for d in detect(m, store.get(path)) if d.confidence >= conf_min]

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            all_dets = list(pool.map(label_entry, manifest.entries))
    else:
        all_dets = [label_entry(e) for e in manifest]
    entries = []
    for e, dets in zip(manifest, all_dets):
        entries.append(ManifestEntry(
            image_path=e.image_path,
            map_path=e.map_path,
            width=e.width,
            height=e.height,
            gsd_cm_per_px=e.gsd_cm_per_px,
            has_vehicles=e.has_vehicles,
            annotations=dets,
            domain_tag=e.domain_tag,
            stage_tag="pseudo-labeled",
            weak_only=e.has_vehicles != bool(dets),
        ))
    out = DatasetManifest(entries)
    out.validate()
    return out
