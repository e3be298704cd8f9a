"""Procedural stand-in for the fine-tuned generative model.

Emits paired (image, ground-truth centers, attention stack) samples in two
deliberately different visual styles so the cross-domain value of the
pipeline is measurable: the source style is dark vegetated terrain with
bright vehicles, the target style is bright sandy terrain.  Attention maps
are Gaussian blobs at the vehicle centers with configurable noise and
center jitter, standing in for imperfect model attention.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .attn_math import AttentionStack, minmax_normalize
from .core_io import Annotation, DatasetManifest, ManifestEntry, Raster

# Style palettes: RGB background base, texture amplitude, bright-terrain-patch
# amplitude, car intensity range.  The two styles encode the domain gap: dark
# vegetated source terrain with mid-bright cars vs brighter sandy target
# terrain with bright rock/road patches and brighter cars, so a brightness
# threshold fitted on one domain transfers badly to the other.
_STYLES = {
    "source": {
        "bg_base": (0.16, 0.20, 0.14),
        "texture_amp": 0.08,
        "patch_amp": 0.0,
        "car_lo": 0.50,
        "car_hi": 0.75,
        "car_tint": (1.00, 0.98, 0.96),
    },
    "target": {
        "bg_base": (0.48, 0.45, 0.40),
        "texture_amp": 0.08,
        "patch_amp": 0.18,
        "car_lo": 0.84,
        "car_hi": 0.95,
        "car_tint": (1.00, 0.99, 0.97),
    },
}


class PlacementError(Exception):
    """Raised when non-overlapping car placement fails after bounded retries."""


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 112
    n_cars: tuple[int, int] = (1, 4)
    car_length: tuple[float, float] = (18.0, 30.0)
    car_width: tuple[float, float] = (8.0, 14.0)
    style: str = "source"
    attn_sigma: float = 4.0
    attn_noise: float = 0.25
    attn_offset_jitter: float = 1.0
    attn_peak_min: float = 1.0  # per-car blob amplitude drawn from [attn_peak_min, 1]
    seed: int = 0

    def __post_init__(self):
        if self.style not in _STYLES:
            raise ValueError(f"unknown style {self.style!r}")
        if self.n_cars[0] < 0 or self.n_cars[1] < self.n_cars[0]:
            raise ValueError(f"bad n_cars range {self.n_cars}")
        if max(self.car_length[1], self.car_width[1]) >= self.image_size / 2:
            raise ValueError("car dimensions must stay below image_size/2")
        if not (0.0 <= self.attn_noise < 0.5):
            raise ValueError("attn_noise must lie in [0, 0.5) so blobs dominate noise")


def _geometry_rng(cfg: SceneConfig) -> np.random.Generator:
    # Layout stream is style-independent: same seed => same car layout in
    # either style, which is what makes paired-domain experiments possible.
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA11]))


def _appearance_rng(cfg: SceneConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xB22]))


def _attention_rng(cfg: SceneConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xC33]))


def _smooth_texture(rng: np.random.Generator, size: int, amp: float,
                    coarse: int = 8) -> np.ndarray:
    """Low-frequency texture field in [-amp, amp], built from upsampled coarse noise."""
    from .resample import resize_bilinear

    grid = rng.uniform(-1.0, 1.0, (coarse, coarse))
    return (resize_bilinear(grid, size, size) * amp).astype(np.float32)


def _place_cars(cfg: SceneConfig, rng: np.random.Generator):
    """Random non-overlapping oriented rectangles; centers kept inside the frame."""
    n = int(rng.integers(cfg.n_cars[0], cfg.n_cars[1] + 1))
    cars = []
    size = cfg.image_size
    for _ in range(n):
        placed = False
        for _attempt in range(200):
            length = rng.uniform(*cfg.car_length)
            width = rng.uniform(*cfg.car_width)
            diag = np.hypot(length, width)
            margin = 0.5 * diag
            cx = rng.uniform(margin, size - margin)
            cy = rng.uniform(margin, size - margin)
            theta = rng.uniform(0.0, 2.0 * np.pi)
            # disjoint circumscribed circles => disjoint rectangles
            if all(np.hypot(cx - c["cx"], cy - c["cy"])
                   > 0.5 * (diag + np.hypot(c["length"], c["width"]))
                   for c in cars):
                cars.append({"cx": cx, "cy": cy, "theta": theta,
                             "length": length, "width": width})
                placed = True
                break
        if not placed:
            raise PlacementError(
                f"could not place car {len(cars) + 1}/{n} after 200 attempts "
                f"(density infeasible for image_size={size})")
    return cars


def _paint_car(img: np.ndarray, car: dict, color: np.ndarray) -> None:
    """Rasterize one oriented rectangle with ~1-px soft edges."""
    size = img.shape[1]
    ext = 0.5 * np.hypot(car["length"], car["width"]) + 2.0
    x0 = max(0, int(np.floor(car["cx"] - ext)))
    x1 = min(size, int(np.ceil(car["cx"] + ext)) + 1)
    y0 = max(0, int(np.floor(car["cy"] - ext)))
    y1 = min(size, int(np.ceil(car["cy"] + ext)) + 1)
    xs = np.arange(x0, x1) + 0.5 - car["cx"]
    ys = np.arange(y0, y1) + 0.5 - car["cy"]
    gx, gy = np.meshgrid(xs, ys)
    c, s = np.cos(car["theta"]), np.sin(car["theta"])
    u = c * gx + s * gy
    v = -s * gx + c * gy
    # signed distance outside the rectangle, smoothed into an alpha mask
    du = np.abs(u) - car["length"] / 2.0
    dv = np.abs(v) - car["width"] / 2.0
    d = np.maximum(du, dv)
    alpha = np.clip(0.5 - d, 0.0, 1.0).astype(np.float32)
    patch = img[:, y0:y1, x0:x1]
    img[:, y0:y1, x0:x1] = patch * (1.0 - alpha) + color[:, None, None] * alpha


def gen_scene(cfg: SceneConfig) -> tuple[Raster, list[Annotation], bool]:
    """Render one scene; deterministic in cfg.seed."""
    style = _STYLES[cfg.style]
    geo = _geometry_rng(cfg)
    app = _appearance_rng(cfg)
    size = cfg.image_size
    cars = _place_cars(cfg, geo)

    img = np.empty((3, size, size), dtype=np.float32)
    for ch, base in enumerate(style["bg_base"]):
        img[ch] = base + _smooth_texture(app, size, style["texture_amp"])
    if style["patch_amp"] > 0.0:
        # bright, roughly neutral rock/road patches: positive part of a
        # coarse smooth field, capped at patch_amp
        patches = np.clip(_smooth_texture(app, size, 2.0 * style["patch_amp"],
                                          coarse=6), 0.0, style["patch_amp"])
        img += patches[None, :, :]
    for car in cars:
        level = app.uniform(style["car_lo"], style["car_hi"])
        color = np.array(style["car_tint"], dtype=np.float32) * level
        _paint_car(img, car, color)
    np.clip(img, 0.0, 1.0, out=img)

    gts = [Annotation(cx=float(c["cx"]), cy=float(c["cy"])) for c in cars]
    return Raster(img), gts, bool(gts)


def _gaussian_field(size: int, centers: list[tuple[float, float]], sigma: float,
                    amps: np.ndarray | None = None) -> np.ndarray:
    field = np.zeros((size, size), dtype=np.float64)
    if not centers:
        return field
    xs = np.arange(size) + 0.5
    ys = np.arange(size) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    for k, (cx, cy) in enumerate(centers):
        amp = 1.0 if amps is None else amps[k]
        field += amp * np.exp(-((gx - cx) ** 2 + (gy - cy) ** 2) / (2.0 * sigma * sigma))
    return field


def gen_attention(gts: list[Annotation], cfg: SceneConfig) -> AttentionStack:
    """Gaussian-blob attention maps for a scene's ground truth centers.

    category   = sum of Gaussians at the centers, plus noise
    foreground = same with independently jittered centers and noise
    background = inverted clean category map, plus noise

    Noise is a smooth low-frequency field (amplitude ``attn_noise``) drawn
    independently per map, so stacking maps genuinely suppresses it.  Each
    car's blob amplitude is drawn from [attn_peak_min, 1].
    """
    rng = _attention_rng(cfg)
    size = cfg.image_size
    centers = [(a.cx, a.cy) for a in gts]
    amps = rng.uniform(cfg.attn_peak_min, 1.0, len(centers))
    cat_raw = _gaussian_field(size, centers, cfg.attn_sigma, amps)

    j = cfg.attn_offset_jitter
    jittered = [(cx + rng.uniform(-j, j), cy + rng.uniform(-j, j)) for cx, cy in centers]
    fg_raw = _gaussian_field(size, jittered, cfg.attn_sigma, amps)

    def noisy(field: np.ndarray) -> Raster:
        noise = _smooth_texture(rng, size, 0.5 * cfg.attn_noise, coarse=14) + 0.5 * cfg.attn_noise
        return minmax_normalize(Raster((field + noise).astype(np.float32)))

    category = noisy(cat_raw)
    foreground = noisy(fg_raw)
    inv = 1.0 - minmax_normalize(Raster(cat_raw.astype(np.float32))).data[0]
    background = noisy(inv.astype(np.float64))
    return AttentionStack(category=category, foreground=foreground, background=background)


def scene_seed(base_seed: int, index: int) -> int:
    """Stable per-image seed derived from (corpus seed, image index)."""
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def gen_dataset(cfg: SceneConfig, n_images: int, pos_fraction: float,
                out_dir: str | Path, store=None,
                stage_tag: str = "synthetic", gsd_cm_per_px: float = 12.5,
                with_maps: bool = True) -> DatasetManifest:
    """Generate a corpus of scenes and attention stacks plus its manifest.

    Exactly floor(pos_fraction * n_images) entries are positive.  Each image
    derives its own RNG stream from (cfg.seed, index) so serial and parallel
    generation agree bit-for-bit.  ``store`` may be a RasterStore; by default
    rasters are written under ``out_dir``.
    """
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    if store is None:
        from .store import DiskStore
        store = DiskStore(out_dir)
    n_pos = int(np.floor(pos_fraction * n_images))
    entries = []
    domain = cfg.style
    for i in range(n_images):
        positive = i < n_pos
        icfg = replace(
            cfg,
            seed=scene_seed(cfg.seed, i),
            n_cars=(max(1, cfg.n_cars[0]), cfg.n_cars[1]) if positive else (0, 0),
        )
        image, gts, has_vehicles = gen_scene(icfg)
        image_path = f"{domain}_{stage_tag}_{i:06d}.amap"
        store.put(image_path, image)
        map_path = None
        if with_maps:
            stack = gen_attention(gts, icfg)
            map_path = f"{domain}_{stage_tag}_{i:06d}_attn.amap"
            store.put(map_path, stack.stacked)
        entries.append(ManifestEntry(
            image_path=image_path,
            map_path=map_path,
            width=image.width,
            height=image.height,
            gsd_cm_per_px=gsd_cm_per_px,
            has_vehicles=has_vehicles,
            annotations=gts,
            domain_tag=domain,
            stage_tag=stage_tag,
        ))
    manifest = DatasetManifest(entries)
    manifest.validate()
    return manifest
