"""Pairwise features for a candidate link between two detections.

For detections ``a`` and ``b`` from adjacent processed frames:

* location: IoU and center distance normalized by the frame diagonal
* geometry: width and height ratios, min/max so they are symmetric in (a, b)
* appearance: euclidean distance between the unit-norm embeddings (in [0, 2])
* semantic gate: dot product of the class-confidence vectors

The semantic gate is not an input of the learned classifier; it multiplies
its probability downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .core import BBox, Detection, center_distance, iou, iou_matrix
from .errors import InconsistentFeaturesError

FEATURE_NAMES = ("iou", "d_centers", "ratio_w", "ratio_h", "d_app")


@dataclass(frozen=True)
class PairFeatures:
    """Feature vector for one candidate link. ``d_app`` is None when the
    detections carry no appearance embeddings."""

    iou: float
    d_centers: float
    ratio_w: float
    ratio_h: float
    d_app: Optional[float]
    f_sem: float

    def x_vector(self, uses_appearance: bool) -> np.ndarray:
        """Classifier input in fixed order: [iou, d_centers, ratio_w, ratio_h, (d_app)]."""
        if uses_appearance:
            if self.d_app is None:
                raise InconsistentFeaturesError("pair has no appearance distance")
            return np.array(
                [self.iou, self.d_centers, self.ratio_w, self.ratio_h, self.d_app]
            )
        return np.array([self.iou, self.d_centers, self.ratio_w, self.ratio_h])


def pair_features(a: Detection, b: Detection, frame_diag: float) -> PairFeatures:
    """Compute the pairwise features for one candidate link."""
    if (a.embedding is None) != (b.embedding is None):
        raise InconsistentFeaturesError(
            "exactly one of the two detections carries an appearance embedding"
        )
    if a.confidences.size != b.confidences.size:
        raise InconsistentFeaturesError("confidence vectors have different lengths")
    d_app = None
    if a.embedding is not None:
        d_app = float(np.linalg.norm(a.embedding - b.embedding))
    return PairFeatures(
        iou=iou(a.bbox, b.bbox),
        d_centers=center_distance(a.bbox, b.bbox, frame_diag),
        ratio_w=min(a.bbox.w, b.bbox.w) / max(a.bbox.w, b.bbox.w),
        ratio_h=min(a.bbox.h, b.bbox.h) / max(a.bbox.h, b.bbox.h),
        d_app=d_app,
        f_sem=float(np.dot(a.confidences, b.confidences)),
    )


@dataclass(frozen=True)
class PairFeatureMatrices:
    """All pairwise features between two frames as (n, m) arrays."""

    iou: np.ndarray
    d_centers: np.ndarray
    ratio_w: np.ndarray
    ratio_h: np.ndarray
    d_app: Optional[np.ndarray]
    f_sem: np.ndarray

    def x_stack(self, uses_appearance: bool) -> np.ndarray:
        """Classifier inputs stacked along the last axis, shape (n, m, k)."""
        columns = [self.iou, self.d_centers, self.ratio_w, self.ratio_h]
        if uses_appearance:
            if self.d_app is None:
                raise InconsistentFeaturesError("pairs have no appearance distances")
            columns.append(self.d_app)
        return np.stack(columns, axis=-1)


def _embedding_block(dets: Sequence[Detection]) -> Optional[np.ndarray]:
    present = [d.embedding is not None for d in dets]
    if not any(present):
        return None
    if not all(present):
        raise InconsistentFeaturesError("mixed embedding presence within one frame")
    return np.array([d.embedding for d in dets], dtype=np.float64)


def pair_feature_matrices(
    dets_a: Sequence[Detection], dets_b: Sequence[Detection], frame_diag: float
) -> PairFeatureMatrices:
    """Vectorized :func:`pair_features` over all pairs of two frames."""
    if frame_diag <= 0:
        raise ValueError(f"frame_diag must be positive, got {frame_diag}")
    n, m = len(dets_a), len(dets_b)
    if n == 0 or m == 0:
        zeros = np.zeros((n, m))
        return PairFeatureMatrices(zeros, zeros, zeros, zeros, None, zeros)

    boxes_a: List[BBox] = [d.bbox for d in dets_a]
    boxes_b: List[BBox] = [d.bbox for d in dets_b]
    centers_a = np.array([bb.center() for bb in boxes_a])
    centers_b = np.array([bb.center() for bb in boxes_b])
    delta = centers_a[:, None, :] - centers_b[None, :, :]
    d_centers = np.sqrt((delta**2).sum(axis=-1)) / frame_diag

    wa = np.array([bb.w for bb in boxes_a])[:, None]
    wb = np.array([bb.w for bb in boxes_b])[None, :]
    ha = np.array([bb.h for bb in boxes_a])[:, None]
    hb = np.array([bb.h for bb in boxes_b])[None, :]
    ratio_w = np.minimum(wa, wb) / np.maximum(wa, wb)
    ratio_h = np.minimum(ha, hb) / np.maximum(ha, hb)

    emb_a = _embedding_block(dets_a)
    emb_b = _embedding_block(dets_b)
    if (emb_a is None) != (emb_b is None):
        raise InconsistentFeaturesError("embedding presence differs between frames")
    d_app = None
    if emb_a is not None:
        # ||x - y||^2 = ||x||^2 + ||y||^2 - 2 x.y, clipped against tiny negatives
        sq = (
            (emb_a**2).sum(axis=1)[:, None]
            + (emb_b**2).sum(axis=1)[None, :]
            - 2.0 * emb_a @ emb_b.T
        )
        d_app = np.sqrt(np.clip(sq, 0.0, None))

    conf_a = np.array([d.confidences for d in dets_a], dtype=np.float64)
    conf_b = np.array([d.confidences for d in dets_b], dtype=np.float64)
    if conf_a.shape[1] != conf_b.shape[1]:
        raise InconsistentFeaturesError("confidence vectors have different lengths")

    return PairFeatureMatrices(
        iou=iou_matrix(boxes_a, boxes_b),
        d_centers=d_centers,
        ratio_w=ratio_w,
        ratio_h=ratio_h,
        d_app=d_app,
        f_sem=conf_a @ conf_b.T,
    )
