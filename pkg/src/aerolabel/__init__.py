"""aerolabel: attention-map auto-labeling pipeline for aerial vehicle
detection, with decision-circle geometry, rotated tile sampling,
pseudo-label propagation, classifier refinement, and location-based AP50
evaluation."""

from .core_io import (Annotation, DatasetManifest, ManifestEntry, Raster,
                      load_manifest, read_raster, save_manifest, write_raster)
from .geometry import (BoxGeometry, center_match, center_to_box,
                       iou_square_offset, isocontour_area_quadrant,
                       region_disagreement, solve_box_size)
from .evalkit import EvalMode, EvalReport, ap50, evaluate_manifests

__version__ = "0.1.0"

__all__ = [
    "Annotation", "DatasetManifest", "ManifestEntry", "Raster",
    "load_manifest", "read_raster", "save_manifest", "write_raster",
    "BoxGeometry", "center_match", "center_to_box", "iou_square_offset",
    "isocontour_area_quadrant", "region_disagreement", "solve_box_size",
    "EvalMode", "EvalReport", "ap50", "evaluate_manifests",
    "__version__",
]
