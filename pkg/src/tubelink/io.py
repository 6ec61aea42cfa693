"""File formats: detections, ground truth, catalogs, models, refined output.

Everything is line-oriented JSON (one record per line) except the class
catalog, the videos metadata map and model files, which are single JSON
documents. Reals are serialized with 9 significant digits; round-trips are
exact within 1e-7 relative tolerance.

Record schemas
--------------
detections.jsonl::

    {"video_id": str, "frame_index": int, "bbox": [x, y, w, h],
     "scores": [C floats], "feature": [D floats]?, "detection_id": int?,
     "source_track_id": int?}

gt.jsonl::

    {"video_id": str, "frame_index": int, "bbox": [x, y, w, h],
     "class_id": int, "track_id": int}

features.jsonl (per ground-truth box raw feature)::

    {"video_id": str, "frame_index": int, "track_id": int, "feature": [D floats]}

videos.json (a.k.a. the fps map)::

    {video_id: {"fps": float, "width": int, "height": int, "n_frames": int}}

Refined output reuses the detection schema plus ``track_id`` and an
``orig`` sub-record preserving the raw box/scores for audit, so it can be
fed straight back into the evaluator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import BBox, ClassCatalog, Detection, GroundTruthBox, Tubelet
from .errors import DataError, ModelCompatibilityError, SchemaError

MODEL_FILE_VERSION = 1

DetectionsMap = Dict[str, Dict[int, List[Detection]]]
GroundTruthMap = Dict[str, List[GroundTruthBox]]


def _round9(x: float) -> float:
    # 9 significant decimal digits; keeps files readable and round-trips
    # within 1e-7 relative error.
    return float(f"{float(x):.9g}")


def _reals(values: Sequence[float]) -> List[float]:
    return [_round9(v) for v in values]


def _require(record: dict, key: str, path: str, line_no: int):
    if key not in record:
        raise SchemaError(f"{path}:{line_no}: missing required key '{key}'")
    return record[key]


def _parse_bbox(raw, path: str, line_no: int) -> BBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise SchemaError(f"{path}:{line_no}: bbox must be a [x, y, w, h] list")
    try:
        return BBox(float(raw[0]), float(raw[1]), float(raw[2]), float(raw[3]))
    except ValueError as exc:
        raise SchemaError(f"{path}:{line_no}: invalid bbox: {exc}") from exc


def _iter_jsonl(path: Union[str, Path]):
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{line_no}: malformed JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise SchemaError(f"{path}:{line_no}: record must be a JSON object")
            yield line_no, record


def _write_jsonl(path: Union[str, Path], records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, separators=(",", ":")))
            fh.write("\n")


@dataclass
class LoadStats:
    """Ingest accounting for one detections file."""

    kept: int = 0
    dropped: int = 0


@dataclass(frozen=True)
class VideoMeta:
    """Per-video geometry and timing needed by linking and evaluation."""

    fps: float
    width: int
    height: int
    n_frames: int

    def __post_init__(self) -> None:
        if self.fps <= 0 or self.width <= 0 or self.height <= 0 or self.n_frames <= 0:
            raise SchemaError("video metadata entries must be positive")

    @property
    def frame_diag(self) -> float:
        return math.hypot(self.width, self.height)


VideosMeta = Dict[str, VideoMeta]


def load_catalog(path: Union[str, Path]) -> ClassCatalog:
    path = Path(path)
    if not path.exists():
        raise DataError(f"catalog file not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    names = doc.get("names")
    if not isinstance(names, list):
        raise SchemaError(f"{path}: catalog must contain a 'names' list")
    try:
        return ClassCatalog(tuple(str(n) for n in names))
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def save_catalog(path: Union[str, Path], catalog: ClassCatalog) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps({"names": list(catalog.names)}, indent=2) + "\n")


def load_videos_meta(path: Union[str, Path]) -> VideosMeta:
    path = Path(path)
    if not path.exists():
        raise DataError(f"videos metadata file not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: videos metadata must be a JSON object")
    meta: VideosMeta = {}
    for video_id, entry in doc.items():
        try:
            meta[video_id] = VideoMeta(
                fps=float(entry["fps"]),
                width=int(entry["width"]),
                height=int(entry["height"]),
                n_frames=int(entry["n_frames"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: bad entry for video '{video_id}': {exc}") from exc
    return meta


def save_videos_meta(path: Union[str, Path], meta: VideosMeta) -> None:
    doc = {
        vid: {
            "fps": _round9(m.fps),
            "width": m.width,
            "height": m.height,
            "n_frames": m.n_frames,
        }
        for vid, m in meta.items()
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_detections(
    path: Union[str, Path],
    catalog: Optional[ClassCatalog] = None,
    conf_threshold: float = 0.005,
) -> Tuple[DetectionsMap, LoadStats]:
    """Load a detections file, dropping records below the confidence threshold.

    When ``catalog`` is given, score-vector lengths are validated against it;
    otherwise the first record fixes the expected length. Per-frame lists are
    ordered by detection id; missing ids are assigned sequentially per video
    in file order. Fails fast on the first malformed line.
    """
    path = Path(path)
    expected_c = len(catalog) if catalog is not None else None
    stats = LoadStats()
    result: DetectionsMap = {}
    auto_ids: Dict[str, int] = {}
    seen_ids: Dict[str, set] = {}
    for line_no, record in _iter_jsonl(path):
        video_id = str(_require(record, "video_id", str(path), line_no))
        frame_index = int(_require(record, "frame_index", str(path), line_no))
        bbox = _parse_bbox(_require(record, "bbox", str(path), line_no), str(path), line_no)
        scores = _require(record, "scores", str(path), line_no)
        if not isinstance(scores, list) or not scores:
            raise SchemaError(f"{path}:{line_no}: scores must be a non-empty list")
        if expected_c is None:
            expected_c = len(scores)
        if len(scores) != expected_c:
            raise SchemaError(
                f"{path}:{line_no}: scores length {len(scores)} does not match catalog size {expected_c}"
            )
        next_auto = auto_ids.get(video_id, 0)
        auto_ids[video_id] = next_auto + 1
        detection_id = int(record.get("detection_id", next_auto))
        ids = seen_ids.setdefault(video_id, set())
        if detection_id in ids:
            raise SchemaError(f"{path}:{line_no}: duplicate detection_id {detection_id} in video '{video_id}'")
        ids.add(detection_id)
        feature = record.get("feature")
        source_track = record.get("source_track_id")
        try:
            det = Detection(
                video_id=video_id,
                frame_index=frame_index,
                bbox=bbox,
                confidences=np.asarray(scores, dtype=np.float64),
                detection_id=detection_id,
                raw_feature=np.asarray(feature, dtype=np.float64) if feature is not None else None,
                source_track_id=int(source_track) if source_track is not None else None,
            )
        except ValueError as exc:
            raise SchemaError(f"{path}:{line_no}: {exc}") from exc
        if det.top_score < conf_threshold:
            stats.dropped += 1
            continue
        stats.kept += 1
        result.setdefault(video_id, {}).setdefault(frame_index, []).append(det)
    for frames in result.values():
        for dets in frames.values():
            dets.sort(key=lambda d: d.detection_id)
    # Re-insert frames in ascending order so iteration order is deterministic.
    ordered: DetectionsMap = {}
    for video_id in result:
        ordered[video_id] = {f: result[video_id][f] for f in sorted(result[video_id])}
    return ordered, stats


def save_detections(path: Union[str, Path], detections: DetectionsMap) -> None:
    def records():
        for video_id in detections:
            for frame_index in detections[video_id]:
                for det in detections[video_id][frame_index]:
                    record = {
                        "video_id": det.video_id,
                        "frame_index": det.frame_index,
                        "bbox": _reals(det.bbox.as_tuple()),
                        "scores": _reals(det.confidences),
                        "detection_id": det.detection_id,
                    }
                    if det.raw_feature is not None:
                        record["feature"] = _reals(det.raw_feature)
                    if det.source_track_id is not None:
                        record["source_track_id"] = det.source_track_id
                    yield record

    _write_jsonl(path, records())


def load_ground_truth(path: Union[str, Path], catalog: Optional[ClassCatalog] = None) -> GroundTruthMap:
    """Load ground-truth boxes grouped by video, in file order."""
    result: GroundTruthMap = {}
    seen = set()
    for line_no, record in _iter_jsonl(path):
        video_id = str(_require(record, "video_id", str(path), line_no))
        frame_index = int(_require(record, "frame_index", str(path), line_no))
        bbox = _parse_bbox(_require(record, "bbox", str(path), line_no), str(path), line_no)
        class_id = int(_require(record, "class_id", str(path), line_no))
        track_id = int(_require(record, "track_id", str(path), line_no))
        if catalog is not None and not (0 <= class_id < len(catalog)):
            raise SchemaError(f"{path}:{line_no}: class_id {class_id} outside catalog range")
        key = (video_id, frame_index, track_id)
        if key in seen:
            raise SchemaError(f"{path}:{line_no}: duplicate (video, frame, track) {key}")
        seen.add(key)
        result.setdefault(video_id, []).append(
            GroundTruthBox(video_id, frame_index, bbox, class_id, track_id)
        )
    return result


def save_ground_truth(path: Union[str, Path], gt: GroundTruthMap) -> None:
    def records():
        for video_id in gt:
            for box in gt[video_id]:
                yield {
                    "video_id": box.video_id,
                    "frame_index": box.frame_index,
                    "bbox": _reals(box.bbox.as_tuple()),
                    "class_id": box.class_id,
                    "track_id": box.track_id,
                }

    _write_jsonl(path, records())


FeatureKey = Tuple[str, int, int]  # (video_id, frame_index, track_id)


def load_gt_features(path: Union[str, Path]) -> Dict[FeatureKey, np.ndarray]:
    """Load per-ground-truth-box raw feature vectors."""
    result: Dict[FeatureKey, np.ndarray] = {}
    dim = None
    for line_no, record in _iter_jsonl(path):
        video_id = str(_require(record, "video_id", str(path), line_no))
        frame_index = int(_require(record, "frame_index", str(path), line_no))
        track_id = int(_require(record, "track_id", str(path), line_no))
        feature = _require(record, "feature", str(path), line_no)
        if not isinstance(feature, list) or not feature:
            raise SchemaError(f"{path}:{line_no}: feature must be a non-empty list")
        if dim is None:
            dim = len(feature)
        elif len(feature) != dim:
            raise SchemaError(f"{path}:{line_no}: feature length {len(feature)} != {dim}")
        result[(video_id, frame_index, track_id)] = np.asarray(feature, dtype=np.float64)
    return result


def save_gt_features(path: Union[str, Path], features: Dict[FeatureKey, np.ndarray]) -> None:
    def records():
        for (video_id, frame_index, track_id), vec in features.items():
            yield {
                "video_id": video_id,
                "frame_index": frame_index,
                "track_id": track_id,
                "feature": _reals(vec),
            }

    _write_jsonl(path, records())


def save_refined(
    path: Union[str, Path],
    tubelets_by_video: Dict[str, List[Tubelet]],
    detections: DetectionsMap,
) -> int:
    """Write refined detections; returns the number of records written.

    Refined boxes/scores replace the originals; the raw values are kept
    under ``orig`` for audit.
    """
    n = 0

    def records():
        nonlocal n
        for video_id in sorted(tubelets_by_video):
            frames = detections.get(video_id, {})
            by_id = {d.detection_id: d for dets in frames.values() for d in dets}
            for tub in tubelets_by_video[video_id]:
                boxes = tub.smoothed_boxes
                for pos, (frame_index, det_id) in enumerate(tub.members):
                    det = by_id[det_id]
                    scores = tub.refined_confidences if tub.refined_confidences is not None else det.confidences
                    box = boxes[pos] if boxes is not None else det.bbox
                    record = {
                        "video_id": video_id,
                        "frame_index": frame_index,
                        "bbox": _reals(box.as_tuple()),
                        "scores": _reals(scores),
                        "detection_id": det_id,
                        "track_id": tub.tubelet_id,
                        "orig": {
                            "bbox": _reals(det.bbox.as_tuple()),
                            "scores": _reals(det.confidences),
                        },
                    }
                    if det.source_track_id is not None:
                        record["source_track_id"] = det.source_track_id
                    n += 1
                    yield record

    _write_jsonl(path, records())
    return n


def save_model(path: Union[str, Path], model) -> None:
    """Serialize an embedding or link-scorer model to JSON."""
    # Imported here to keep io free of circular imports.
    from .embed import EmbeddingModel
    from .linkscore import LinkScorerModel

    if isinstance(model, EmbeddingModel):
        doc = {
            "kind": "embedding",
            "version": MODEL_FILE_VERSION,
            "dimensions": {"input_dim": model.input_dim, "embed_dim": model.embed_dim},
            "weights": {
                "W": _reals(model.W.ravel()),
                "b": _reals(model.b),
            },
            "metadata": model.metadata,
        }
    elif isinstance(model, LinkScorerModel):
        doc = {
            "kind": "linkscorer",
            "version": MODEL_FILE_VERSION,
            "dimensions": {"n_features": int(model.weights.size)},
            "weights": {"w": _reals(model.weights), "bias": _round9(model.bias)},
            "feature_means": _reals(model.feature_means),
            "feature_stds": _reals(model.feature_stds),
            "uses_appearance": bool(model.uses_appearance),
            "metadata": model.metadata,
        }
    else:
        raise TypeError(f"cannot serialize model of type {type(model).__name__}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def load_model(path: Union[str, Path], expected_kind: Optional[str] = None):
    """Load a model file; raises on kind/version mismatch."""
    from .embed import EmbeddingModel
    from .linkscore import LinkScorerModel

    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    kind = doc.get("kind")
    version = doc.get("version")
    if version != MODEL_FILE_VERSION:
        raise ModelCompatibilityError(
            f"{path}: model file version {version!r} is incompatible (expected {MODEL_FILE_VERSION})"
        )
    if expected_kind is not None and kind != expected_kind:
        raise ModelCompatibilityError(f"{path}: expected a '{expected_kind}' model, found {kind!r}")
    if kind == "embedding":
        dims = doc["dimensions"]
        d, in_dim = int(dims["embed_dim"]), int(dims["input_dim"])
        w_flat = np.asarray(doc["weights"]["W"], dtype=np.float64)
        if w_flat.size != d * in_dim:
            raise SchemaError(f"{path}: weight array length {w_flat.size} != {d}x{in_dim}")
        b = np.asarray(doc["weights"]["b"], dtype=np.float64)
        if b.size != d:
            raise SchemaError(f"{path}: bias length {b.size} != {d}")
        return EmbeddingModel(W=w_flat.reshape(d, in_dim), b=b, metadata=doc.get("metadata", {}))
    if kind == "linkscorer":
        n = int(doc["dimensions"]["n_features"])
        w = np.asarray(doc["weights"]["w"], dtype=np.float64)
        means = np.asarray(doc["feature_means"], dtype=np.float64)
        stds = np.asarray(doc["feature_stds"], dtype=np.float64)
        if not (w.size == means.size == stds.size == n):
            raise SchemaError(f"{path}: weight/statistics lengths inconsistent with n_features={n}")
        if np.any(stds <= 0):
            raise SchemaError(f"{path}: feature_stds must be strictly positive")
        return LinkScorerModel(
            weights=w,
            bias=float(doc["weights"]["bias"]),
            feature_means=means,
            feature_stds=stds,
            uses_appearance=bool(doc["uses_appearance"]),
            metadata=doc.get("metadata", {}),
        )
    raise ModelCompatibilityError(f"{path}: unknown model kind {kind!r}")


def estimate_frame_diag(detections_or_gt_boxes) -> float:
    """Fallback frame-diagonal estimate from the tight extent of boxes.

    Used only when no videos metadata is available; prefer real geometry.
    """
    max_x = 0.0
    max_y = 0.0
    for item in detections_or_gt_boxes:
        bbox = item.bbox
        max_x = max(max_x, bbox.x + bbox.w)
        max_y = max(max_y, bbox.y + bbox.h)
    if max_x <= 0 or max_y <= 0:
        raise DataError("cannot estimate frame size from empty box list")
    return math.hypot(max_x, max_y)
