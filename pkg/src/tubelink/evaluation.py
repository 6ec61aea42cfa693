"""Detection evaluation: VOC-style mAP with all-point interpolation,
motion-stratified mAP, frame-subsampling simulation, and the linking
(identity association) accuracy used by the sampling-period harness.

Class assignment: a detection belongs to its argmax class and is ranked
by that class's confidence. Matching is greedy in score order against the
highest-IoU unmatched ground-truth box of the same frame (IoU >= the
threshold; ties go to the earlier ground-truth record).

Motion strata follow the mean self-IoU protocol: each ground-truth box is
compared against its own track's boxes within +/- ``motion_window``
frames; mean self-IoU > slow_threshold is slow, < fast_threshold is fast,
medium otherwise. Boxes with no neighbor inside the window count as slow
(no observable motion). Stratified scoring filters the ground truth by
stratum and evaluates all detections against that filtered set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import BBox, ClassCatalog, Detection, GroundTruthBox, iou
from .errors import DataError
from .io import DetectionsMap, GroundTruthMap, VideosMeta
from .tubelet import FrameDetections, LinkScorer, greedy_match

SLOW, MEDIUM, FAST = "slow", "medium", "fast"
STRATA = (SLOW, MEDIUM, FAST)


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    motion_window: int = 10
    slow_threshold: float = 0.9
    fast_threshold: float = 0.7
    sampling_period_ms: Optional[float] = None
    min_track_len: int = 2

    def __post_init__(self) -> None:
        if not (0.0 < self.iou_threshold < 1.0):
            raise ValueError("iou_threshold must lie in (0, 1)")
        if not (0.0 < self.fast_threshold < self.slow_threshold < 1.0):
            raise ValueError("need 0 < fast_threshold < slow_threshold < 1")
        if self.sampling_period_ms is not None and self.sampling_period_ms <= 0:
            raise ValueError("sampling_period_ms must be positive")
        if self.motion_window <= 0:
            raise ValueError("motion_window must be positive")


@dataclass
class ClassAP:
    class_id: int
    name: str
    ap: float
    n_gt: int
    n_detections: int


@dataclass
class EvalReport:
    map_all: float
    map_slow: float
    map_medium: float
    map_fast: float
    per_class: List[ClassAP] = field(default_factory=list)
    n_videos: int = 0
    n_gt_boxes: int = 0
    n_detections: int = 0
    post_ms_per_frame: Optional[float] = None

    def to_dict(self) -> dict:
        def r(x: Optional[float]):
            return None if x is None else float(f"{x:.9g}")

        return {
            "map_all": r(self.map_all),
            "map_slow": r(self.map_slow),
            "map_medium": r(self.map_medium),
            "map_fast": r(self.map_fast),
            "per_class": [
                {
                    "class_id": c.class_id,
                    "name": c.name,
                    "ap": r(c.ap),
                    "n_gt": c.n_gt,
                    "n_detections": c.n_detections,
                }
                for c in self.per_class
            ],
            "counts": {
                "videos": self.n_videos,
                "gt_boxes": self.n_gt_boxes,
                "detections": self.n_detections,
            },
            "post_ms_per_frame": r(self.post_ms_per_frame),
        }


DetEntry = Tuple[float, str, int, BBox, int]  # score, video, frame, box, tie key
GtEntry = Tuple[str, int, BBox]  # video, frame, box


def average_precision(
    detections: Sequence[DetEntry], gt: Sequence[GtEntry], iou_thr: float
) -> float:
    """All-point interpolated AP for one class."""
    n_gt = len(gt)
    if n_gt == 0:
        raise DataError("AP undefined without ground truth")
    if not detections:
        return 0.0
    by_frame: Dict[Tuple[str, int], List[Tuple[int, BBox]]] = {}
    for gi, (video_id, frame_index, box) in enumerate(gt):
        by_frame.setdefault((video_id, frame_index), []).append((gi, box))
    matched = [False] * n_gt

    order = sorted(
        range(len(detections)),
        key=lambda i: (-detections[i][0], detections[i][1], detections[i][2], detections[i][4]),
    )
    tp = np.zeros(len(order))
    fp = np.zeros(len(order))
    for rank, di in enumerate(order):
        score, video_id, frame_index, box, _ = detections[di]
        best_gi = -1
        best_iou = -1.0
        for gi, gt_box in by_frame.get((video_id, frame_index), ()):
            if matched[gi]:
                continue
            overlap = iou(box, gt_box)
            # ">" keeps the earlier ground-truth index on exact ties.
            if overlap >= iou_thr and overlap > best_iou:
                best_iou = overlap
                best_gi = gi
        if best_gi >= 0:
            matched[best_gi] = True
            tp[rank] = 1.0
        else:
            fp[rank] = 1.0

    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(fp)
    recall = cum_tp / n_gt
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1e-12)

    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changes = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changes + 1] - mrec[changes]) * mpre[changes + 1]))


def classify_track_motion(
    track_boxes: Sequence[GroundTruthBox],
    window: int = 10,
    slow_threshold: float = 0.9,
    fast_threshold: float = 0.7,
) -> List[str]:
    """Motion stratum per box of one track (boxes sorted by frame)."""
    if len(track_boxes) < 2:
        raise DataError("motion classification needs a track with at least 2 frames")
    boxes = sorted(track_boxes, key=lambda b: b.frame_index)
    labels = []
    for i, box in enumerate(boxes):
        overlaps = [
            iou(box.bbox, other.bbox)
            for j, other in enumerate(boxes)
            if j != i and abs(other.frame_index - box.frame_index) <= window
        ]
        score = float(np.mean(overlaps)) if overlaps else 1.0
        if score > slow_threshold:
            labels.append(SLOW)
        elif score < fast_threshold:
            labels.append(FAST)
        else:
            labels.append(MEDIUM)
    return labels


def motion_labels(
    gt: GroundTruthMap, cfg: EvalConfig
) -> Dict[Tuple[str, int, int], str]:
    """Stratum per (video, track, frame); tracks shorter than 2 frames are skipped."""
    labels: Dict[Tuple[str, int, int], str] = {}
    for video_id in gt:
        tracks: Dict[int, List[GroundTruthBox]] = {}
        for box in gt[video_id]:
            tracks.setdefault(box.track_id, []).append(box)
        for track_id, boxes in tracks.items():
            if len(boxes) < 2:
                continue
            boxes = sorted(boxes, key=lambda b: b.frame_index)
            strata = classify_track_motion(
                boxes, cfg.motion_window, cfg.slow_threshold, cfg.fast_threshold
            )
            for box, label in zip(boxes, strata):
                labels[(video_id, track_id, box.frame_index)] = label
    return labels


def subsample_frames(n_frames: int, fps: float, period_ms: float) -> List[int]:
    """Frame indices closest to the times k * period_ms, deduplicated."""
    if period_ms <= 0:
        raise ValueError("period_ms must be positive")
    if fps <= 0:
        raise ValueError("fps must be positive")
    indices: List[int] = []
    k = 0
    while True:
        idx = int(math.floor(k * period_ms * fps / 1000.0 + 0.5))
        if idx >= n_frames:
            break
        if not indices or indices[-1] != idx:
            indices.append(idx)
        k += 1
    return indices


def _filter_to_frames(
    detections: DetectionsMap, gt: GroundTruthMap, processed: Dict[str, List[int]], min_track_len: int
) -> Tuple[DetectionsMap, GroundTruthMap]:
    det_out: DetectionsMap = {}
    for video_id, frames in detections.items():
        keep = set(processed.get(video_id, []))
        filtered = {f: dets for f, dets in frames.items() if f in keep}
        if filtered:
            det_out[video_id] = filtered
    gt_out: GroundTruthMap = {}
    for video_id, boxes in gt.items():
        keep = set(processed.get(video_id, []))
        surviving = [b for b in boxes if b.frame_index in keep]
        per_track: Dict[int, int] = {}
        for b in surviving:
            per_track[b.track_id] = per_track.get(b.track_id, 0) + 1
        kept = [b for b in surviving if per_track[b.track_id] >= min_track_len]
        if kept:
            gt_out[video_id] = kept
    return det_out, gt_out


def _detection_entries(detections: DetectionsMap) -> Dict[int, List[DetEntry]]:
    """Detections grouped by argmax class, ranked by that class's score."""
    per_class: Dict[int, List[DetEntry]] = {}
    for video_id in sorted(detections):
        for frame_index in sorted(detections[video_id]):
            for det in detections[video_id][frame_index]:
                cls = det.top_class
                per_class.setdefault(cls, []).append(
                    (det.top_score, video_id, frame_index, det.bbox, det.detection_id)
                )
    return per_class


def _mean_ap(
    det_entries: Dict[int, List[DetEntry]],
    gt_boxes: Sequence[GroundTruthBox],
    iou_thr: float,
    catalog: ClassCatalog,
    collect: Optional[List[ClassAP]] = None,
) -> float:
    gt_by_class: Dict[int, List[GtEntry]] = {}
    for box in gt_boxes:
        gt_by_class.setdefault(box.class_id, []).append(
            (box.video_id, box.frame_index, box.bbox)
        )
    if not gt_by_class:
        return 0.0
    aps = []
    for class_id in sorted(gt_by_class):
        dets = det_entries.get(class_id, [])
        ap = average_precision(dets, gt_by_class[class_id], iou_thr)
        aps.append(ap)
        if collect is not None:
            name = catalog.names[class_id] if class_id < len(catalog) else f"class_{class_id}"
            collect.append(ClassAP(class_id, name, ap, len(gt_by_class[class_id]), len(dets)))
    return float(np.mean(aps))


def evaluate(
    detections: DetectionsMap,
    gt: GroundTruthMap,
    catalog: ClassCatalog,
    cfg: EvalConfig = EvalConfig(),
    videos_meta: Optional[VideosMeta] = None,
    post_ms_per_frame: Optional[float] = None,
) -> EvalReport:
    """Full report: overall mAP, motion-stratified mAP, per-class table."""
    if cfg.sampling_period_ms is not None:
        if videos_meta is None:
            raise DataError("frame subsampling requires per-video fps metadata")
        processed = {
            video_id: subsample_frames(meta.n_frames, meta.fps, cfg.sampling_period_ms)
            for video_id, meta in videos_meta.items()
        }
        # Motion strata reflect the original footage, not the subsampled view.
        labels = motion_labels(gt, cfg)
        detections, gt = _filter_to_frames(detections, gt, processed, cfg.min_track_len)
    else:
        labels = motion_labels(gt, cfg)

    det_entries = _detection_entries(detections)
    all_gt = [box for video_id in sorted(gt) for box in gt[video_id]]
    per_class: List[ClassAP] = []
    map_all = _mean_ap(det_entries, all_gt, cfg.iou_threshold, catalog, per_class)

    strata_maps = {}
    for stratum in STRATA:
        stratum_gt = [
            box
            for box in all_gt
            if labels.get((box.video_id, box.track_id, box.frame_index)) == stratum
        ]
        strata_maps[stratum] = (
            _mean_ap(det_entries, stratum_gt, cfg.iou_threshold, catalog) if stratum_gt else 0.0
        )

    video_ids = set(gt) | set(detections)
    return EvalReport(
        map_all=map_all,
        map_slow=strata_maps[SLOW],
        map_medium=strata_maps[MEDIUM],
        map_fast=strata_maps[FAST],
        per_class=per_class,
        n_videos=len(video_ids),
        n_gt_boxes=len(all_gt),
        n_detections=sum(len(e) for e in det_entries.values()),
        post_ms_per_frame=post_ms_per_frame,
    )


def association_accuracy(
    frames: Sequence[FrameDetections],
    scorer: LinkScorer,
    link_threshold: float,
    frame_diag: float,
) -> Tuple[int, int]:
    """Identity-association accuracy of a linker on one video.

    Ground truth comes from the detections' ``source_track_id`` provenance
    (false positives carry none). Returns (correctly linked, total
    ground-truth-consecutive pairs).
    """
    correct = 0
    total = 0
    for pos in range(len(frames) - 1):
        _, dets_a = frames[pos]
        _, dets_b = frames[pos + 1]
        truth = set()
        for i, da in enumerate(dets_a):
            if da.source_track_id is None:
                continue
            for j, db in enumerate(dets_b):
                if db.source_track_id == da.source_track_id:
                    truth.add((i, j))
        total += len(truth)
        if not truth or not dets_a or not dets_b:
            continue
        links = set(greedy_match(scorer.score_matrix(dets_a, dets_b, frame_diag), link_threshold))
        correct += len(links & truth)
    return correct, total
