"""Decision-circle / pseudo-bounding-box calculus.

A location label is matched either by a radius-r decision circle around the
ground-truth center or by IoU >= alpha between two axis-aligned squares of
side ``a`` whose centers are offset by (dx, dy).  The square side is chosen
so that the area enclosed by the IoU isocontour equals the circle area,
making the two criteria interchangeable up to a small disagreement band
which :func:`region_disagreement` quantifies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core_io import Annotation

DEFAULT_RADIUS = 12.0
DEFAULT_ALPHA = 0.5


def iou_square_offset(a: float, dx: float, dy: float) -> float:
    """IoU of two axis-aligned squares of side ``a`` with center offset (dx, dy)."""
    if a <= 0:
        raise ValueError(f"square side must be positive, got {a}")
    dx, dy = abs(dx), abs(dy)
    if dx >= a or dy >= a:
        return 0.0
    inter = (a - dx) * (a - dy)
    return inter / (2.0 * a * a - inter)


def _intersection_fraction(alpha: float) -> float:
    # IoU >= alpha  <=>  intersection >= beta * a^2  with beta = 2*alpha/(1+alpha)
    return 2.0 * alpha / (1.0 + alpha)


def isocontour_area_quadrant(a: float, alpha: float) -> float:
    """Area of the first-quadrant region {(dx, dy) >= 0 : IoU >= alpha}.

    Closed form: with beta = 2*alpha/(1+alpha) the boundary is
    dy = a - beta*a^2/(a - dx), and the integral evaluates to
    a^2 * (1 - beta + beta*ln(beta)).
    """
    if a <= 0:
        raise ValueError(f"square side must be positive, got {a}")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    beta = _intersection_fraction(alpha)
    return a * a * (1.0 - beta + beta * math.log(beta))


def quadrant_boundary_dy(a: float, alpha: float, dx: float) -> float:
    """The isocontour curve dy(dx) in the first quadrant (0 <= dx <= a*(1-beta))."""
    beta = _intersection_fraction(alpha)
    return a - beta * a * a / (a - dx)


def solve_box_size(r: float, alpha: float = DEFAULT_ALPHA) -> float:
    """Square side ``a`` whose IoU>=alpha quadrant area equals a quarter disk of radius r.

    The quadrant area scales as a^2, which yields a tight bracket around the
    root; the area is continuous and strictly increasing in ``a`` so
    bracketed root-finding is guaranteed to converge.
    """
    if r <= 0:
        raise ValueError(f"radius must be positive, got {r}")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    target = math.pi * r * r / 4.0
    guess = math.sqrt(target / isocontour_area_quadrant(1.0, alpha))
    return float(brentq(lambda a: isocontour_area_quadrant(a, alpha) - target,
                        0.5 * guess, 2.0 * guess, xtol=1e-12, rtol=1e-15))


def center_match(pred: Annotation, gt: Annotation, r: float = DEFAULT_RADIUS) -> bool:
    """True iff the Euclidean distance between the two centers is <= r."""
    if r <= 0:
        raise ValueError(f"radius must be positive, got {r}")
    return math.hypot(pred.cx - gt.cx, pred.cy - gt.cy) <= r


def center_to_box(c: Annotation, a: float) -> tuple[float, float, float, float]:
    """Axis-aligned (x_min, y_min, x_max, y_max) square of side ``a`` centered at c.

    Deliberately not clipped to image bounds: clipping would break the
    equal-area equivalence with the decision circle.
    """
    if a <= 0:
        raise ValueError(f"square side must be positive, got {a}")
    h = a / 2.0
    return (c.cx - h, c.cy - h, c.cx + h, c.cy + h)


def iou_region_contains(a: float, alpha: float, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Vectorized membership test for the full (4-quadrant) IoU>=alpha region."""
    beta = _intersection_fraction(alpha)
    ax, ay = np.abs(dx), np.abs(dy)
    inside = (ax < a) & (ay < a)
    inter = np.where(inside, (a - ax) * (a - ay), 0.0)
    return inter >= beta * a * a


@dataclass(frozen=True)
class DisagreementEstimate:
    """Monte Carlo estimate of circle-vs-IoU-region mismatch."""

    fraction: float     # sym-difference area / disk area
    stderr: float       # standard error of `fraction`
    n_samples: int
    disk_area: float
    region_area: float  # MC estimate of the full IoU>=alpha region area


def region_disagreement(r: float, a: float, alpha: float = DEFAULT_ALPHA,
                        n_samples: int = 10_000_000, seed: int = 0) -> DisagreementEstimate:
    """Fraction of the disk area occupied by the disk / IoU-region symmetric difference.

    Uniform Monte Carlo over a bounding square covering both regions, with a
    binomial standard error on the reported fraction.
    """
    if r <= 0 or a <= 0:
        raise ValueError("r and a must be positive")
    beta = _intersection_fraction(alpha)
    half = max(r, a * (1.0 - beta)) * 1.001
    rng = np.random.default_rng(seed)
    disk_area = math.pi * r * r
    box_area = (2.0 * half) ** 2
    hits = 0
    region_hits = 0
    done = 0
    chunk = 2_000_000
    while done < n_samples:
        n = min(chunk, n_samples - done)
        dx = rng.uniform(-half, half, n)
        dy = rng.uniform(-half, half, n)
        in_disk = dx * dx + dy * dy <= r * r
        in_region = iou_region_contains(a, alpha, dx, dy)
        hits += int(np.count_nonzero(in_disk != in_region))
        region_hits += int(np.count_nonzero(in_region))
        done += n
    p = hits / n_samples
    sd_area = box_area * p
    stderr = box_area * math.sqrt(p * (1.0 - p) / n_samples) / disk_area
    return DisagreementEstimate(
        fraction=sd_area / disk_area,
        stderr=stderr,
        n_samples=n_samples,
        disk_area=disk_area,
        region_area=box_area * region_hits / n_samples,
    )


@dataclass(frozen=True)
class BoxGeometry:
    """Decision-circle radius, IoU level, and the derived square side."""

    r: float = DEFAULT_RADIUS
    alpha: float = DEFAULT_ALPHA
    a: float = 0.0

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError(f"radius must be positive, got {self.r}")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.a <= 0.0:
            object.__setattr__(self, "a", solve_box_size(self.r, self.alpha))
        else:
            expected = solve_box_size(self.r, self.alpha)
            if abs(self.a - expected) > 1e-6:
                raise ValueError(
                    f"a={self.a} inconsistent with (r={self.r}, alpha={self.alpha}); "
                    f"expected {expected}"
                )
