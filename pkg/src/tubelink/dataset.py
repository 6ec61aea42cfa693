"""Triplet training sets from ground-truth tracks, and the labeled link
pairs derived from them.

A triplet is (anchor, positive, negative): the positive comes from the
same track within a +/- ``window`` frame neighborhood of the anchor (never
the anchor frame itself), the negative from any other track, drawn from
the anchor's own video with probability 0.5 and from the whole corpus
otherwise. Each triplet yields one positive and one negative link pair.

Cross-video negatives live in disjoint coordinate spaces: their IoU is 0
by definition, while center distance and size ratios are computed
literally on the raw coordinates, normalizing by the anchor's frame
diagonal.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import BBox, Detection, GroundTruthBox
from .embed import EmbeddingModel, embed as embed_feature
from .errors import DataError, DatasetTooSmallError, SchemaError
from .linkfeat import PairFeatures, pair_features

DEFAULT_WINDOW = 25


@dataclass(frozen=True)
class TrackSample:
    """One ground-truth box with its raw feature, as used in triplets."""

    video_id: str
    frame_index: int
    track_id: int
    class_id: int
    bbox: BBox
    feature: np.ndarray
    frame_diag: float


@dataclass(frozen=True)
class Triplet:
    anchor: TrackSample
    positive: TrackSample
    negative: TrackSample

    def __post_init__(self) -> None:
        if (self.anchor.video_id, self.anchor.track_id) != (
            self.positive.video_id,
            self.positive.track_id,
        ):
            raise ValueError("anchor and positive must share a track")
        if (self.anchor.video_id, self.anchor.track_id) == (
            self.negative.video_id,
            self.negative.track_id,
        ):
            raise ValueError("negative must come from a different track")
        if self.positive.frame_index == self.anchor.frame_index:
            raise ValueError("positive must come from a different frame")

    def feature_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.anchor.feature, self.positive.feature, self.negative.feature)


@dataclass(frozen=True)
class LinkPair:
    features: PairFeatures
    label: int

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


def triplet_feature_tensors(
    triplets: Sequence[Triplet],
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack triplet raw features into (anchors, positives, negatives) arrays."""
    A = np.array([t.anchor.feature for t in triplets], dtype=np.float64)
    P = np.array([t.positive.feature for t in triplets], dtype=np.float64)
    N = np.array([t.negative.feature for t in triplets], dtype=np.float64)
    return A, P, N


def _build_track_index(
    gt: Dict[str, List[GroundTruthBox]],
) -> Dict[Tuple[str, int], List[GroundTruthBox]]:
    tracks: Dict[Tuple[str, int], List[GroundTruthBox]] = {}
    for video_id in gt:
        for box in gt[video_id]:
            tracks.setdefault((video_id, box.track_id), []).append(box)
    for boxes in tracks.values():
        boxes.sort(key=lambda b: b.frame_index)
    return tracks


def _sample_from_box(
    box: GroundTruthBox,
    features: Dict[Tuple[str, int, int], np.ndarray],
    frame_diags: Dict[str, float],
) -> TrackSample:
    key = (box.video_id, box.frame_index, box.track_id)
    if key in features:
        feature = features[key]
    else:
        raise DataError(f"no raw feature for ground-truth box {key}")
    return TrackSample(
        video_id=box.video_id,
        frame_index=box.frame_index,
        track_id=box.track_id,
        class_id=box.class_id,
        bbox=box.bbox,
        feature=feature,
        frame_diag=frame_diags[box.video_id],
    )


def sample_triplets(
    gt: Dict[str, List[GroundTruthBox]],
    features: Dict[Tuple[str, int, int], np.ndarray],
    frame_diags: Dict[str, float],
    n: int,
    window: int = DEFAULT_WINDOW,
    seed: int = 0,
    same_video_negative_prob: float = 0.5,
) -> List[Triplet]:
    """Draw ``n`` triplets from ground-truth tracks; reproducible given ``seed``.

    The anchor track is uniform over tracks that have at least one frame
    with another same-track frame within ``window``; the anchor frame is
    uniform over those frames; the positive is uniform over the same-track
    frames within the window (excluding the anchor frame).
    """
    if n <= 0:
        raise DataError("triplet count must be positive")
    tracks = _build_track_index(gt)
    track_keys = sorted(tracks.keys())
    if len(track_keys) < 2:
        raise DatasetTooSmallError("need at least two tracks to sample negatives")

    # Anchor frames that have a positive candidate within the window.
    eligible_anchor_frames: Dict[Tuple[str, int], List[GroundTruthBox]] = {}
    for key in track_keys:
        boxes = tracks[key]
        frames = [b.frame_index for b in boxes]
        good = [
            b
            for i, b in enumerate(boxes)
            if any(0 < abs(f - b.frame_index) <= window for f in frames)
        ]
        if good:
            eligible_anchor_frames[key] = good
    eligible_keys = sorted(eligible_anchor_frames.keys())
    if not eligible_keys:
        raise DatasetTooSmallError(
            f"no track has two annotated frames within a {window}-frame window"
        )

    tracks_by_video: Dict[str, List[Tuple[str, int]]] = {}
    for key in track_keys:
        tracks_by_video.setdefault(key[0], []).append(key)

    rng = random.Random(seed)
    triplets: List[Triplet] = []
    for _ in range(n):
        track_key = eligible_keys[rng.randrange(len(eligible_keys))]
        anchors = eligible_anchor_frames[track_key]
        anchor_box = anchors[rng.randrange(len(anchors))]
        positive_candidates = [
            b
            for b in tracks[track_key]
            if b.frame_index != anchor_box.frame_index
            and abs(b.frame_index - anchor_box.frame_index) <= window
        ]
        positive_box = positive_candidates[rng.randrange(len(positive_candidates))]

        same_video = [k for k in tracks_by_video[track_key[0]] if k != track_key]
        if rng.random() < same_video_negative_prob and same_video:
            negative_track = same_video[rng.randrange(len(same_video))]
        else:
            others = [k for k in track_keys if k != track_key]
            negative_track = others[rng.randrange(len(others))]
        negative_boxes = tracks[negative_track]
        negative_box = negative_boxes[rng.randrange(len(negative_boxes))]

        triplets.append(
            Triplet(
                anchor=_sample_from_box(anchor_box, features, frame_diags),
                positive=_sample_from_box(positive_box, features, frame_diags),
                negative=_sample_from_box(negative_box, features, frame_diags),
            )
        )
    return triplets


def _as_detection(
    sample: TrackSample, n_classes: int, embed_model: Optional[EmbeddingModel]
) -> Detection:
    confidences = np.zeros(n_classes)
    confidences[sample.class_id] = 1.0
    embedding = embed_feature(embed_model, sample.feature) if embed_model is not None else None
    return Detection(
        video_id=sample.video_id,
        frame_index=sample.frame_index,
        bbox=sample.bbox,
        confidences=confidences,
        detection_id=0,
        raw_feature=sample.feature,
        embedding=embedding,
    )


def _pair(
    a: TrackSample,
    b: TrackSample,
    n_classes: int,
    embed_model: Optional[EmbeddingModel],
    label: int,
) -> LinkPair:
    det_a = _as_detection(a, n_classes, embed_model)
    det_b = _as_detection(b, n_classes, embed_model)
    pf = pair_features(det_a, det_b, a.frame_diag)
    if a.video_id != b.video_id:
        # Disjoint coordinate spaces: overlap is 0 by definition.
        pf = PairFeatures(
            iou=0.0,
            d_centers=pf.d_centers,
            ratio_w=pf.ratio_w,
            ratio_h=pf.ratio_h,
            d_app=pf.d_app,
            f_sem=pf.f_sem,
        )
    return LinkPair(features=pf, label=label)


def triplets_to_link_pairs(
    triplets: Sequence[Triplet],
    n_classes: Optional[int] = None,
    embed_model: Optional[EmbeddingModel] = None,
) -> List[LinkPair]:
    """Each triplet yields (anchor, positive) labeled 1 and (anchor, negative)
    labeled 0. With an embedding model the pairs carry appearance distances."""
    triplets = list(triplets)
    if not triplets:
        return []
    if n_classes is None:
        n_classes = 1 + max(
            max(t.anchor.class_id, t.positive.class_id, t.negative.class_id) for t in triplets
        )
    pairs: List[LinkPair] = []
    for t in triplets:
        pairs.append(_pair(t.anchor, t.positive, n_classes, embed_model, label=1))
        pairs.append(_pair(t.anchor, t.negative, n_classes, embed_model, label=0))
    return pairs


def _sample_record(sample: TrackSample) -> dict:
    return {
        "video_id": sample.video_id,
        "frame_index": sample.frame_index,
        "track_id": sample.track_id,
        "class_id": sample.class_id,
        "bbox": [float(f"{v:.9g}") for v in sample.bbox.as_tuple()],
        "feature": [float(f"{v:.9g}") for v in sample.feature],
        "frame_diag": float(f"{sample.frame_diag:.9g}"),
    }


def _record_sample(raw: dict, path: str, line_no: int) -> TrackSample:
    try:
        return TrackSample(
            video_id=str(raw["video_id"]),
            frame_index=int(raw["frame_index"]),
            track_id=int(raw["track_id"]),
            class_id=int(raw["class_id"]),
            bbox=BBox(*(float(v) for v in raw["bbox"])),
            feature=np.asarray(raw["feature"], dtype=np.float64),
            frame_diag=float(raw["frame_diag"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}:{line_no}: bad triplet sample: {exc}") from exc


def save_triplets(path: Union[str, Path], triplets: Sequence[Triplet]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for t in triplets:
            record = {
                "anchor": _sample_record(t.anchor),
                "positive": _sample_record(t.positive),
                "negative": _sample_record(t.negative),
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_triplets(path: Union[str, Path]) -> List[Triplet]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"triplets file not found: {path}")
    triplets: List[Triplet] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{line_no}: malformed JSON: {exc.msg}") from exc
            try:
                triplets.append(
                    Triplet(
                        anchor=_record_sample(raw["anchor"], str(path), line_no),
                        positive=_record_sample(raw["positive"], str(path), line_no),
                        negative=_record_sample(raw["negative"], str(path), line_no),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise SchemaError(f"{path}:{line_no}: bad triplet: {exc}") from exc
    return triplets


def save_link_pairs(path: Union[str, Path], pairs: Sequence[LinkPair]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for p in pairs:
            record = {
                "iou": float(f"{p.features.iou:.9g}"),
                "d_centers": float(f"{p.features.d_centers:.9g}"),
                "ratio_w": float(f"{p.features.ratio_w:.9g}"),
                "ratio_h": float(f"{p.features.ratio_h:.9g}"),
                "f_sem": float(f"{p.features.f_sem:.9g}"),
                "label": p.label,
            }
            if p.features.d_app is not None:
                record["d_app"] = float(f"{p.features.d_app:.9g}")
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_link_pairs(path: Union[str, Path]) -> List[LinkPair]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"pairs file not found: {path}")
    pairs: List[LinkPair] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                pf = PairFeatures(
                    iou=float(raw["iou"]),
                    d_centers=float(raw["d_centers"]),
                    ratio_w=float(raw["ratio_w"]),
                    ratio_h=float(raw["ratio_h"]),
                    d_app=float(raw["d_app"]) if "d_app" in raw else None,
                    f_sem=float(raw["f_sem"]),
                )
                pairs.append(LinkPair(features=pf, label=int(raw["label"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{line_no}: bad link pair: {exc}") from exc
    return pairs
