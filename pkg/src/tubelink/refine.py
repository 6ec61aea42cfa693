"""Tubelet refinement: class re-scoring and coordinate smoothing.

Re-scoring replaces every member's class-confidence vector with the
element-wise mean over the tubelet. Re-coordinating treats each of the
four box coordinates (x, y, w, h) along the tubelet as a noisy time
series and convolves it with a normalized discrete Gaussian.

Kernel construction: the continuous Gaussian is sampled at integer
offsets in [-r, r] with r = ceil(4 * sigma), then renormalized to sum to
one. Boundaries use replicate (nearest) padding so constants are
preserved exactly and box coordinates are never dragged toward zero at
tubelet ends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Sequence

import numpy as np

from .core import BBox, Detection, Tubelet

DEFAULT_SIGMA = 0.6


@dataclass(frozen=True)
class SmoothingConfig:
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def radius(self) -> int:
        return math.ceil(4.0 * self.sigma)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized discrete Gaussian sampled at integers in [-r, r]."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    r = math.ceil(4.0 * sigma)
    offsets = np.arange(-r, r + 1, dtype=np.float64)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def smooth_series(series: Sequence[float], sigma: float) -> np.ndarray:
    """Convolve one series with the Gaussian kernel, replicate padding."""
    arr = np.asarray(series, dtype=np.float64)
    if arr.size <= 1:
        return arr.copy()
    kernel = gaussian_kernel(sigma)
    r = (kernel.size - 1) // 2
    padded = np.pad(arr, r, mode="edge")
    return np.convolve(padded, kernel, mode="valid")


def _member_detections(t: Tubelet, by_id: Dict[int, Detection]) -> List[Detection]:
    return [by_id[det_id] for _, det_id in t.members]


def rescore(t: Tubelet, by_id: Dict[int, Detection]) -> np.ndarray:
    """Element-wise mean of member confidence vectors."""
    dets = _member_detections(t, by_id)
    stacked = np.array([d.confidences for d in dets], dtype=np.float64)
    return stacked.mean(axis=0)


def smooth_coordinates(
    t: Tubelet, by_id: Dict[int, Detection], cfg: SmoothingConfig
) -> List[BBox]:
    """Gaussian-smoothed boxes aligned with the tubelet members."""
    dets = _member_detections(t, by_id)
    coords = np.array([d.bbox.as_tuple() for d in dets], dtype=np.float64)
    if len(dets) > 1:
        for col in range(4):
            coords[:, col] = smooth_series(coords[:, col], cfg.sigma)
    # Convex combinations of valid boxes stay valid; the clamps only guard
    # against pathological float behavior.
    coords[:, 0:2] = np.clip(coords[:, 0:2], 0.0, None)
    coords[:, 2:4] = np.maximum(coords[:, 2:4], np.finfo(np.float64).tiny)
    return [BBox(*row) for row in coords]


def refine_tubelet(
    t: Tubelet,
    by_id: Dict[int, Detection],
    smoothing: SmoothingConfig | None = SmoothingConfig(),
) -> Tubelet:
    """Attach the refined confidences and, unless disabled, smoothed boxes."""
    refined = rescore(t, by_id)
    boxes = None
    if smoothing is not None:
        boxes = tuple(smooth_coordinates(t, by_id, smoothing))
    return replace(t, refined_confidences=refined, smoothed_boxes=boxes)
