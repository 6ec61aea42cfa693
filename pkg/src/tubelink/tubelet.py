"""Per-video linking: score matrices between adjacent processed frames,
greedy matching, and tubelet lifecycle.

The greedy rule: repeatedly take the global maximum of the remaining
matrix; if it clears the threshold, emit the link and suppress its row and
column; stop when nothing at or above the threshold remains. The threshold
is applied inside the loop, so sub-threshold entries never consume rows or
columns. Ties break toward the smaller row, then the smaller column.

Lifecycle: a matched pair extends the tubelet ending at its row detection,
or starts a new two-member tubelet; every detection left unmatched becomes
a singleton tubelet. Nothing is dropped and gaps are never bridged, so the
tubelets of a video partition its detections.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .core import Detection, Tubelet, iou_matrix
from .linkfeat import pair_feature_matrices
from .linkscore import LinkScorerModel, link_score_matrix

DENSE_LINK_THRESHOLD = 0.7
SPARSE_LINK_THRESHOLD = 0.05


@dataclass(frozen=True)
class LinkingConfig:
    link_threshold: float = DENSE_LINK_THRESHOLD

    def __post_init__(self) -> None:
        if not (0.0 <= self.link_threshold <= 1.0):
            raise ValueError("link_threshold must lie in [0, 1]")


class LinkScorer(Protocol):
    """Anything that can score all candidate links between two frames."""

    uses_appearance: bool

    def score_matrix(
        self, dets_a: Sequence[Detection], dets_b: Sequence[Detection], frame_diag: float
    ) -> np.ndarray: ...


class LearnedLinkScorer:
    """Semantic-gated logistic link scores (the learned similarity)."""

    def __init__(self, model: LinkScorerModel):
        self.model = model
        self.uses_appearance = model.uses_appearance

    def score_matrix(self, dets_a, dets_b, frame_diag):
        feats = pair_feature_matrices(dets_a, dets_b, frame_diag)
        return link_score_matrix(self.model, feats)


class IoULinkScorer:
    """Plain IoU similarity; the heuristic baseline using the same machinery."""

    uses_appearance = False

    def score_matrix(self, dets_a, dets_b, frame_diag):
        return iou_matrix([d.bbox for d in dets_a], [d.bbox for d in dets_b])


def greedy_match(scores: np.ndarray, threshold: float) -> List[Tuple[int, int]]:
    """Greedy one-to-one matching of a score matrix.

    Returns (row, col) links with score >= threshold, in selection order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return []
    work = scores.copy()
    links: List[Tuple[int, int]] = []
    # Suppressed cells get -inf, below any admissible threshold.
    for _ in range(min(work.shape)):
        flat = int(np.argmax(work))  # row-major argmax: smallest row, then col, on ties
        row, col = divmod(flat, work.shape[1])
        if work[row, col] < threshold or not np.isfinite(work[row, col]):
            break
        links.append((row, col))
        work[row, :] = -np.inf
        work[:, col] = -np.inf
    return links


FrameDetections = Tuple[int, List[Detection]]


def link_video(
    frames: Sequence[FrameDetections],
    scorer: LinkScorer,
    config: LinkingConfig,
    frame_diag: float,
) -> List[Tubelet]:
    """Link one video's detections into tubelets.

    ``frames`` must be the processed frames in ascending order, each with
    its (possibly empty) detection list; adjacency is positional, so a
    fully empty processed frame breaks every chain crossing it.
    """
    frame_indices = [f for f, _ in frames]
    if any(b <= a for a, b in zip(frame_indices, frame_indices[1:])):
        raise ValueError("frames must be strictly increasing in frame index")

    members: List[List[Tuple[int, int]]] = []  # tubelet id -> member list
    open_tubelet: Dict[Tuple[int, int], int] = {}  # (frame pos, det pos) -> tubelet id

    def new_tubelet(first_member: Tuple[int, int]) -> int:
        members.append([first_member])
        return len(members) - 1

    for pos in range(len(frames) - 1):
        frame_a, dets_a = frames[pos]
        frame_b, dets_b = frames[pos + 1]
        if dets_a and dets_b:
            matrix = scorer.score_matrix(dets_a, dets_b, frame_diag)
            links = greedy_match(matrix, config.link_threshold)
        else:
            links = []
        matched_rows = set()
        for row, col in links:
            matched_rows.add(row)
            tid = open_tubelet.get((pos, row))
            if tid is None:
                tid = new_tubelet((frame_a, dets_a[row].detection_id))
            members[tid].append((frame_b, dets_b[col].detection_id))
            open_tubelet[(pos + 1, col)] = tid
        # Row detections that never joined a tubelet are now finalized singletons.
        for row, det in enumerate(dets_a):
            if row not in matched_rows and (pos, row) not in open_tubelet:
                new_tubelet((frame_a, det.detection_id))

    if frames:
        last = len(frames) - 1
        for det_pos, det in enumerate(frames[last][1]):
            if (last, det_pos) not in open_tubelet:
                new_tubelet((frames[last][0], det.detection_id))

    return [Tubelet(tubelet_id=tid, members=tuple(m)) for tid, m in enumerate(members)]


def frames_from_map(
    detections_by_frame: Dict[int, List[Detection]],
    processed_frames: Optional[Sequence[int]] = None,
) -> List[FrameDetections]:
    """Assemble the per-frame sequence for :func:`link_video`.

    With ``processed_frames`` the sequence covers exactly those frames
    (empty lists where nothing was detected); otherwise only the frames
    present in the map are used, in ascending order.
    """
    if processed_frames is None:
        return [(f, detections_by_frame[f]) for f in sorted(detections_by_frame)]
    out: List[FrameDetections] = []
    for f in sorted(set(int(p) for p in processed_frames)):
        out.append((f, detections_by_frame.get(f, [])))
    return out
