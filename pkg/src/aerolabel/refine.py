"""Classifier-based pseudo-label refinement.

Labels above lambda_high are trusted positives, below lambda_low trusted
negatives; a small patch classifier trained on those extremes adjudicates
the intermediate band.  The classifier is logistic regression on
downsampled grayscale patches: trainable from scratch, gradient-checkable,
and sufficient for procedural scenes (a deep classifier can replace it
behind the same interface).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_io import Annotation, DatasetManifest, ManifestEntry, Raster
from .resample import resize_bilinear

DEFAULT_PATCH_SIZE = 42  # round(solve_box_size(12, 0.5))


@dataclass(frozen=True)
class RefineConfig:
    lambda_high: float = 0.7
    lambda_low: float = 0.3
    patch_size: int = DEFAULT_PATCH_SIZE
    feature_size: int = 16
    epochs: int = 300
    learning_rate: float = 2.0
    keep_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.lambda_low < self.lambda_high <= 1.0):
            raise ValueError(
                f"need 0 <= lambda_low < lambda_high <= 1, got "
                f"({self.lambda_low}, {self.lambda_high})")


def partition(anns: list[Annotation], cfg: RefineConfig
              ) -> tuple[list[Annotation], list[Annotation], list[Annotation]]:
    """Split by confidence into (positives, uncertain, negatives).

    Boundary equality routes to the uncertain bucket.
    """
    pos, unc, neg = [], [], []
    for a in anns:
        if a.confidence is None:
            raise ValueError("partition requires confidences on every annotation")
        if a.confidence > cfg.lambda_high:
            pos.append(a)
        elif a.confidence < cfg.lambda_low:
            neg.append(a)
        else:
            unc.append(a)
    return pos, unc, neg


def crop_patch(image: Raster, c: Annotation, patch_size: int) -> Raster:
    """Grayscale patch_size x patch_size crop centered at c, edge-replicated
    at image borders."""
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    d = image.data
    gray = (0.299 * d[0] + 0.587 * d[1] + 0.114 * d[2]) if image.channels == 3 else d[0]
    x0 = int(round(c.cx)) - patch_size // 2
    y0 = int(round(c.cy)) - patch_size // 2
    x1, y1 = x0 + patch_size, y0 + patch_size
    h, w = gray.shape
    sub = gray[max(0, y0):min(h, y1), max(0, x0):min(w, x1)]
    pad = ((max(0, -y0), max(0, y1 - h)), (max(0, -x0), max(0, x1 - w)))
    if any(p for pair in pad for p in pair):
        sub = np.pad(sub, pad, mode="edge")
    return Raster(sub.astype(np.float32))


def _features(patch: Raster, feature_size: int) -> np.ndarray:
    small = resize_bilinear(patch.data[0].astype(np.float64), feature_size, feature_size)
    return np.concatenate([small.ravel(), [1.0]])


def logistic_loss_and_grad(weights: np.ndarray, X: np.ndarray,
                           y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of sigmoid(X @ w) against y in {0, 1}, with gradient."""
    z = X @ weights
    # log(1 + e^z) computed stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    p = 1.0 / (1.0 + np.exp(-z))
    grad = X.T @ (p - y) / X.shape[0]
    return loss, grad


@dataclass
class PatchClassifier:
    weights: np.ndarray
    feature_size: int
    training_loss_trace: list[float] = field(default_factory=list)

    def predict_proba(self, patch: Raster) -> float:
        x = _features(patch, self.feature_size)
        return float(1.0 / (1.0 + np.exp(-(x @ self.weights))))


def train_classifier(pos_patches: list[Raster], neg_patches: list[Raster],
                     cfg: RefineConfig) -> PatchClassifier:
    """Full-batch gradient descent on the logistic loss; deterministic."""
    if not pos_patches or not neg_patches:
        raise ValueError("need at least one sample of each class")
    X = np.stack([_features(p, cfg.feature_size)
                  for p in pos_patches + neg_patches])
    y = np.concatenate([np.ones(len(pos_patches)), np.zeros(len(neg_patches))])
    w = np.zeros(cfg.feature_size ** 2 + 1)
    trace = []
    for _ in range(cfg.epochs):
        loss, grad = logistic_loss_and_grad(w, X, y)
        trace.append(loss)
        w = w - cfg.learning_rate * grad
    return PatchClassifier(weights=w, feature_size=cfg.feature_size,
                           training_loss_trace=trace)


def refine_labels(clf: PatchClassifier,
                  uncertain: list[tuple[Annotation, Raster]],
                  keep_threshold: float = 0.5) -> list[Annotation]:
    """Keep an uncertain annotation iff the classifier probability of its
    patch is >= keep_threshold; kept annotations retain their confidence."""
    return [a for a, patch in uncertain if clf.predict_proba(patch) >= keep_threshold]


@dataclass
class RefineResult:
    manifest: DatasetManifest
    classifier: PatchClassifier | None
    fallback: bool                # True when too few confident samples to train
    n_positive: int
    n_uncertain: int
    n_negative: int


def refine_manifest(manifest: DatasetManifest, store, cfg: RefineConfig) -> RefineResult:
    """Partition all pseudo-labels in the manifest, train on the confident
    extremes, and adjudicate the intermediate band.

    Output annotations per entry are its positives plus kept-uncertain; the
    refiner only filters, it never invents detections.  With no usable
    positive or negative extremes, it falls back to keeping positives only.
    """
    per_entry: list[tuple[ManifestEntry, list[Annotation], list[tuple[Annotation, Raster]]]] = []
    pos_patches: list[Raster] = []
    neg_patches: list[Raster] = []
    n_pos = n_unc = n_neg = 0
    for e in manifest:
        pos, unc, neg = partition(e.annotations, cfg)
        n_pos += len(pos)
        n_unc += len(unc)
        n_neg += len(neg)
        image = store.get(e.image_path) if (pos or unc or neg) else None
        pos_patches.extend(crop_patch(image, a, cfg.patch_size) for a in pos)
        neg_patches.extend(crop_patch(image, a, cfg.patch_size) for a in neg)
        unc_patches = [(a, crop_patch(image, a, cfg.patch_size)) for a in unc]
        per_entry.append((e, pos, unc_patches))

    fallback = not pos_patches or not neg_patches
    clf = None if fallback else train_classifier(pos_patches, neg_patches, cfg)

    entries = []
    for e, pos, unc_patches in per_entry:
        kept = list(pos)
        if clf is not None:
            kept.extend(refine_labels(clf, unc_patches, cfg.keep_threshold))
        kept.sort(key=lambda a: (-a.confidence, a.cy, a.cx))
        entries.append(ManifestEntry(
            image_path=e.image_path,
            map_path=e.map_path,
            width=e.width,
            height=e.height,
            gsd_cm_per_px=e.gsd_cm_per_px,
            has_vehicles=e.has_vehicles,
            annotations=kept,
            domain_tag=e.domain_tag,
            stage_tag="refined",
            weak_only=e.has_vehicles != bool(kept),
        ))
    out = DatasetManifest(entries)
    out.validate()
    return RefineResult(manifest=out, classifier=clf, fallback=fallback,
                        n_positive=n_pos, n_uncertain=n_unc, n_negative=n_neg)


def auto_lambdas(dets: list[Annotation], gts: list[Annotation], mode,
                 margin: float = 0.2) -> tuple[float, float]:
    """(lambda_high, lambda_low) derived from the optimal-F1 confidence
    threshold plus/minus a margin, clipped to [0, 1]."""
    from .evalkit import f1_optimal_threshold

    thr, _ = f1_optimal_threshold(dets, gts, mode)
    return (min(1.0, thr + margin), max(0.0, thr - margin))
