"""Pure math over attention maps and latents.

Covers min-max normalization, distribution normalization, total-variation
losses between foreground/background token maps and the category map,
multi-resolution averaging, and the diffusion forward process, all on
plain rasters so a real generative model can be dropped in later.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_io import Raster
from .resample import resize_bilinear


def _single_channel(m: Raster, name: str) -> np.ndarray:
    if m.channels != 1:
        raise ValueError(f"{name} must be 1-channel, got {m.channels}")
    return m.data[0]


def minmax_normalize(m: Raster) -> Raster:
    """(v - min) / (max - min); a constant map normalizes to all 0.5.

    The 0.5 convention keeps the inversion 1 - A symmetric for degenerate maps.
    """
    arr = _single_channel(m, "map")
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        return Raster((arr - lo) / (hi - lo))
    return Raster(np.full_like(arr, 0.5))


def to_distribution(m: Raster) -> Raster:
    """Rescale non-negative values to sum to one, preserving relative differences."""
    arr = _single_channel(m, "map").astype(np.float64)
    if np.any(arr < 0):
        raise ValueError("distribution normalization requires non-negative values")
    total = arr.sum()
    if total <= 0:
        raise ValueError("all-zero map cannot be normalized to a distribution")
    return Raster((arr / total).astype(np.float32))


def tv_distance(p: Raster, q: Raster) -> float:
    """Total variation distance: half the L1 distance between two distributions."""
    if p.data.shape != q.data.shape:
        raise ValueError(f"shape mismatch {p.data.shape} vs {q.data.shape}")
    return 0.5 * float(np.abs(p.data.astype(np.float64) - q.data.astype(np.float64)).sum())


def obj_loss(a_v1: Raster, a_c: Raster) -> float:
    """TV distance between the foreground-token and category maps as distributions."""
    return tv_distance(to_distribution(a_v1), to_distribution(a_c))


def bg_loss(a_bg: Raster, a_c: Raster) -> float:
    """TV distance between the background-token map and the inverted category map."""
    inv = Raster(1.0 - _single_channel(a_c, "category map"))
    return tv_distance(to_distribution(a_bg), to_distribution(inv))


@dataclass(frozen=True)
class AttentionStack:
    """Category, foreground-token, and background-token maps plus their 3-channel stack.

    All maps share one shape and each is min-max normalized to [0, 1].
    Channel order of the stack is fixed: [category, foreground, background].
    """

    category: Raster
    foreground: Raster
    background: Raster

    def __post_init__(self):
        shapes = {self.category.data.shape, self.foreground.data.shape, self.background.data.shape}
        if len(shapes) != 1:
            raise ValueError(f"stack maps disagree in shape: {shapes}")
        for name in ("category", "foreground", "background"):
            m = getattr(self, name).data
            if m.shape[0] != 1:
                raise ValueError(f"{name} map must be 1-channel")
            if m.min() < 0.0 or m.max() > 1.0:
                raise ValueError(f"{name} map not normalized to [0, 1]")

    @property
    def stacked(self) -> Raster:
        return Raster(np.concatenate(
            [self.category.data, self.foreground.data, self.background.data], axis=0))

    @classmethod
    def from_raster(cls, r: Raster) -> "AttentionStack":
        if r.channels != 3:
            raise ValueError(f"stacked raster must have 3 channels, got {r.channels}")
        return cls(Raster(r.data[0]), Raster(r.data[1]), Raster(r.data[2]))


def reg_loss(stack: AttentionStack) -> float:
    """Attention regularization: obj_loss(fg, cat) + bg_loss(bg, cat).

    The denoiser reconstruction loss is composed by the training integrator,
    not here.
    """
    return obj_loss(stack.foreground, stack.category) + bg_loss(stack.background, stack.category)


def average_resolutions(maps: list[Raster], out_size: int) -> Raster:
    """Bilinearly resample each map to out_size x out_size, average, then normalize."""
    if not maps:
        raise ValueError("need at least one map to average")
    acc = np.zeros((out_size, out_size), dtype=np.float64)
    for m in maps:
        arr = _single_channel(m, "map")
        acc += resize_bilinear(arr, out_size, out_size).astype(np.float64)
    return minmax_normalize(Raster((acc / len(maps)).astype(np.float32)))


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule for the diffusion forward process.

    alpha_bar[t] is the running product of (1 - beta) through step t, with
    alpha_bar[0] == 1 by convention.
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if betas[0] <= 0 or betas[-1] >= 1 or np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("betas must lie strictly inside (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars",
                           np.concatenate([[1.0], np.cumprod(1.0 - betas)]))

    @property
    def T(self) -> int:
        return self.betas.size

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 0.00085,
               beta_end: float = 0.012) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, T))


def forward_noise(z0: Raster, t: int, s: NoiseSchedule, eps: Raster) -> Raster:
    """sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps; t=0 returns z0."""
    if eps.data.shape != z0.data.shape:
        raise ValueError("noise shape must match latent shape")
    if not (0 <= t <= s.T):
        raise ValueError(f"step t={t} outside [0, {s.T}]")
    ab = s.alpha_bars[t]
    return Raster(np.sqrt(ab) * z0.data + np.sqrt(1.0 - ab) * eps.data)


def ldm_loss(eps_true: Raster, eps_pred: Raster) -> float:
    """Mean squared error between true and predicted noise."""
    if eps_true.data.shape != eps_pred.data.shape:
        raise ValueError("shape mismatch")
    diff = eps_true.data.astype(np.float64) - eps_pred.data.astype(np.float64)
    return float(np.mean(diff * diff))
