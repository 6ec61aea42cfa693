"""Domain types shared by the whole pipeline.

All types are immutable after construction and safe to share between
threads; the geometry helpers are pure functions.

Box convention: top-left anchor plus width/height, i.e. ``(x, y, w, h)``
with ``x`` the left edge and ``y`` the top edge, in pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "BBox",
    "Detection",
    "Tubelet",
    "GroundTruthBox",
    "ClassCatalog",
    "iou",
    "center_distance",
    "as_confidences",
    "as_unit_embedding",
]

# Tolerance for the unit-norm invariant of appearance embeddings.
EMBEDDING_NORM_TOL = 1e-6


def _readonly(values: Sequence[float]) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def as_confidences(values: Sequence[float]) -> np.ndarray:
    """Validate and freeze a class-confidence vector (entries in [0, 1])."""
    arr = _readonly(values)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("confidence vector must be 1-D and non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("confidence vector contains non-finite entries")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("confidence entries must lie in [0, 1]")
    return arr


def as_unit_embedding(values: Sequence[float]) -> np.ndarray:
    """Validate and freeze an appearance embedding (unit L2 norm)."""
    arr = _readonly(values)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("embedding must be 1-D and non-empty")
    norm = float(np.linalg.norm(arr))
    if abs(norm - 1.0) > EMBEDDING_NORM_TOL:
        raise ValueError(f"embedding norm {norm:.8f} is not 1 within {EMBEDDING_NORM_TOL}")
    return arr


@dataclass(frozen=True)
class BBox:
    """Axis-aligned bounding box, top-left anchor plus width/height."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0:
            raise ValueError(f"box origin must be non-negative, got ({self.x}, {self.y})")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sides must be positive, got ({self.w}, {self.h})")

    def center(self) -> Tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True, eq=False)
class Detection:
    """One predicted object in one frame.

    ``confidences`` is the detector's class-confidence vector (not
    renormalized on ingest; detectors differ and the semantic feature uses
    raw dot products). ``raw_feature`` is the detector-supplied descriptor
    the embedding model maps into ``embedding`` (unit L2 norm).
    """

    video_id: str
    frame_index: int
    bbox: BBox
    confidences: np.ndarray
    detection_id: int
    raw_feature: Optional[np.ndarray] = None
    embedding: Optional[np.ndarray] = None
    source_track_id: Optional[int] = None

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        object.__setattr__(self, "confidences", as_confidences(self.confidences))
        if self.raw_feature is not None:
            object.__setattr__(self, "raw_feature", _readonly(self.raw_feature))
        if self.embedding is not None:
            object.__setattr__(self, "embedding", as_unit_embedding(self.embedding))

    @property
    def top_class(self) -> int:
        return int(np.argmax(self.confidences))

    @property
    def top_score(self) -> float:
        return float(np.max(self.confidences))

    def with_embedding(self, embedding: np.ndarray) -> "Detection":
        return Detection(
            video_id=self.video_id,
            frame_index=self.frame_index,
            bbox=self.bbox,
            confidences=self.confidences,
            detection_id=self.detection_id,
            raw_feature=self.raw_feature,
            embedding=embedding,
            source_track_id=self.source_track_id,
        )


@dataclass(frozen=True, eq=False)
class Tubelet:
    """An ordered chain of linked detections with one track identity.

    ``members`` holds ``(frame_index, detection_id)`` pairs with strictly
    increasing frame indices; consecutive members always come from
    temporally adjacent processed frames (the linker never bridges gaps).
    """

    tubelet_id: int
    members: Tuple[Tuple[int, int], ...]
    refined_confidences: Optional[np.ndarray] = None
    smoothed_boxes: Optional[Tuple[BBox, ...]] = None

    def __post_init__(self) -> None:
        members = tuple((int(f), int(d)) for f, d in self.members)
        if not members:
            raise ValueError("tubelet must have at least one member")
        frames = [f for f, _ in members]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("member frame indices must be strictly increasing")
        object.__setattr__(self, "members", members)
        if self.refined_confidences is not None:
            object.__setattr__(
                self, "refined_confidences", as_confidences(self.refined_confidences)
            )
        if self.smoothed_boxes is not None:
            boxes = tuple(self.smoothed_boxes)
            if len(boxes) != len(members):
                raise ValueError("smoothed_boxes must align with members")
            object.__setattr__(self, "smoothed_boxes", boxes)

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class GroundTruthBox:
    """One annotated object instance in one frame."""

    video_id: str
    frame_index: int
    bbox: BBox
    class_id: int
    track_id: int

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        if self.class_id < 0:
            raise ValueError("class_id must be non-negative")


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered list of class names; index == class id."""

    names: Tuple[str, ...]

    def __post_init__(self) -> None:
        names = tuple(self.names)
        if not names:
            raise ValueError("catalog must contain at least one class")
        if any(not n for n in names):
            raise ValueError("class names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.names)

    @staticmethod
    def generic(n_classes: int) -> "ClassCatalog":
        """Catalog with placeholder names, for data without a real one."""
        return ClassCatalog(tuple(f"class_{i:02d}" for i in range(n_classes)))


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = max(a.x, b.x)
    iy = max(a.y, b.y)
    ix2 = min(a.x + a.w, b.x + b.w)
    iy2 = min(a.y + a.h, b.y + b.h)
    iw = ix2 - ix
    ih = iy2 - iy
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area() + b.area() - inter
    return inter / union


def center_distance(a: BBox, b: BBox, frame_diag: float) -> float:
    """Euclidean distance between box centers, divided by the frame diagonal.

    Normalizing by the diagonal makes the feature resolution-invariant and
    bounds it by sqrt(2) for boxes inside the frame.
    """
    if frame_diag <= 0:
        raise ValueError(f"frame_diag must be positive, got {frame_diag}")
    (ax, ay), (bx, by) = a.center(), b.center()
    return math.hypot(ax - bx, ay - by) / frame_diag


def iou_matrix(boxes_a: Sequence[BBox], boxes_b: Sequence[BBox]) -> np.ndarray:
    """Pairwise IoU between two box lists, shape (len(a), len(b))."""
    n, m = len(boxes_a), len(boxes_b)
    if n == 0 or m == 0:
        return np.zeros((n, m), dtype=np.float64)
    a = np.array([bb.as_tuple() for bb in boxes_a], dtype=np.float64)
    b = np.array([bb.as_tuple() for bb in boxes_b], dtype=np.float64)
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = bx1 + b[:, 2], by1 + b[:, 3]
    iw = np.minimum(ax2, bx2[None, :]) - np.maximum(ax1, bx1[None, :])
    ih = np.minimum(ay2, by2[None, :]) - np.maximum(ay1, by1[None, :])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    return inter / (area_a + area_b - inter)
