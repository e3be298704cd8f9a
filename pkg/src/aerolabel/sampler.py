"""Dataset construction from large tiles: GSD rescaling, randomly rotated
square sampling windows, window extraction, and label transformation.

Window-frame convention: the window is ``w`` x ``w`` pixels, continuous
coordinates in [0, w) with the pixel (row i, col j) centered at
(j + 0.5, i + 0.5) and the window center at (w/2, w/2).  A pose maps window
coordinates into the tile frame by rotating about the window center and
translating to (cx, cy).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .core_io import Annotation, DatasetManifest, ManifestEntry, Raster
from .resample import resize_bilinear


@dataclass(frozen=True)
class WindowPose:
    cx: float
    cy: float
    theta: float
    w: int = 112

    def margin(self) -> float:
        return 0.5 * self.w * (abs(math.cos(self.theta)) + abs(math.sin(self.theta)))

    def contained_in(self, tile_w: int, tile_h: int) -> bool:
        m = self.margin()
        return m <= self.cx <= tile_w - m and m <= self.cy <= tile_h - m


def rescale_gsd(tile: Raster, from_gsd: float, to_gsd: float) -> Raster:
    """Bilinear resample by from_gsd/to_gsd; the caller scales annotations the same way."""
    if from_gsd <= 0 or to_gsd <= 0:
        raise ValueError("GSD values must be positive")
    if from_gsd == to_gsd:
        return tile
    factor = from_gsd / to_gsd
    out_h = int(round(tile.height * factor))
    out_w = int(round(tile.width * factor))
    if out_h < 1 or out_w < 1:
        raise ValueError(f"rescale to {out_w}x{out_h} px is degenerate")
    out = np.stack([resize_bilinear(tile.data[c], out_h, out_w)
                    for c in range(tile.channels)])
    return Raster(out)


def sample_windows(tile_w: int, tile_h: int, n: int, w: int,
                   seed: int) -> list[WindowPose]:
    """n poses with theta uniform on [0, 2pi) and centers uniform over the
    admissible region for that theta, via rejection from the full tile."""
    if min(tile_w, tile_h) < w * math.sqrt(2.0):
        raise ValueError(
            f"tile {tile_w}x{tile_h} too small for {w}-px rotated windows "
            f"(needs min dimension >= {w * math.sqrt(2.0):.1f})")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A9]))
    poses = []
    while len(poses) < n:
        theta = float(rng.uniform(0.0, 2.0 * math.pi))
        m = 0.5 * w * (abs(math.cos(theta)) + abs(math.sin(theta)))
        cx = float(rng.uniform(0.0, tile_w))
        cy = float(rng.uniform(0.0, tile_h))
        if m <= cx <= tile_w - m and m <= cy <= tile_h - m:
            poses.append(WindowPose(cx=cx, cy=cy, theta=theta, w=w))
    return poses


def _window_grid(w: int) -> tuple[np.ndarray, np.ndarray]:
    # offsets of pixel centers from the window center
    off = np.arange(w, dtype=np.float64) + 0.5 - w / 2.0
    return np.meshgrid(off, off)


def extract_window(tile: Raster, pose: WindowPose) -> Raster:
    """Bilinear sampling of the rotated window; exact copy for axis-aligned
    integer-centered poses."""
    if not pose.contained_in(tile.width, tile.height):
        raise ValueError(f"pose {pose} exceeds tile bounds {tile.width}x{tile.height}")
    w = pose.w
    half = w / 2.0
    x0 = pose.cx - half
    y0 = pose.cy - half
    if pose.theta == 0.0 and x0 == int(x0) and y0 == int(y0):
        xi, yi = int(x0), int(y0)
        return Raster(tile.data[:, yi:yi + w, xi:xi + w].copy())
    gx, gy = _window_grid(w)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    tx = (c * gx - s * gy + pose.cx - 0.5).astype(np.float32)
    ty = (s * gx + c * gy + pose.cy - 0.5).astype(np.float32)
    out = np.empty((tile.channels, w, w), dtype=np.float32)
    for ch in range(tile.channels):
        cv2.remap(tile.data[ch], tx, ty, cv2.INTER_LINEAR,
                  dst=out[ch], borderMode=cv2.BORDER_REPLICATE)
    return Raster(out)


def transform_labels(gts: list[Annotation], pose: WindowPose) -> tuple[list[Annotation], bool]:
    """Map tile-frame centers into the window frame; keep those inside [0, w)."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    half = pose.w / 2.0
    kept = []
    for g in gts:
        dx = g.cx - pose.cx
        dy = g.cy - pose.cy
        # rotate by -theta
        x = c * dx + s * dy + half
        y = -s * dx + c * dy + half
        if 0.0 <= x < pose.w and 0.0 <= y < pose.w:
            kept.append(Annotation(cx=x, cy=y, confidence=g.confidence))
    return kept, bool(kept)


@dataclass(frozen=True)
class TileRecord:
    tile: Raster
    gts: list[Annotation]
    gsd_cm_per_px: float


@dataclass(frozen=True)
class SplitConfig:
    n_windows: int = 100
    w: int = 112
    seed: int = 0
    to_gsd: float = 12.5
    domain_tag: str = "source"
    max_source_gsd: float | None = None  # reject tiles coarser than this, if set


def build_split(tiles: list[TileRecord], config: SplitConfig, store,
                prefix: str = "win") -> DatasetManifest:
    """Rescale, sample, extract, and transform each tile into window samples.

    ``config.n_windows`` windows are drawn per accepted tile; entries carry
    stage_tag="real".
    """
    entries = []
    for t_idx, rec in enumerate(tiles):
        if config.max_source_gsd is not None and rec.gsd_cm_per_px > config.max_source_gsd:
            continue
        factor = rec.gsd_cm_per_px / config.to_gsd
        tile = rescale_gsd(rec.tile, rec.gsd_cm_per_px, config.to_gsd)
        gts = [Annotation(g.cx * factor, g.cy * factor, g.confidence) for g in rec.gts]
        poses = sample_windows(tile.width, tile.height, config.n_windows,
                               config.w, seed=config.seed + t_idx)
        for w_idx, pose in enumerate(poses):
            window = extract_window(tile, pose)
            anns, has_vehicles = transform_labels(gts, pose)
            path = f"{prefix}_{t_idx:04d}_{w_idx:06d}.amap"
            store.put(path, window)
            entries.append(ManifestEntry(
                image_path=path,
                width=config.w,
                height=config.w,
                gsd_cm_per_px=config.to_gsd,
                has_vehicles=has_vehicles,
                annotations=anns,
                domain_tag=config.domain_tag,
                stage_tag="real",
            ))
    manifest = DatasetManifest(entries)
    manifest.validate()
    return manifest
