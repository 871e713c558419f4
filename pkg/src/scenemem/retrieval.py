"""Reference-frame retrieval: spatial overlap as registration + voxel IoU.

For every probed target view, the candidate with the highest 3D overlap is
selected if its score clears the threshold; probing happens every `stride`
target frames (default: the max-reference count, keeping the two knobs
coupled the way the retrieval procedure couples them).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, Pose, transform_cloud
from .voxel_memory import DEFAULT_CUBE_SIDE, pack_keys, voxel_keys


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 7                      # max reference frames
    epsilon: float = 0.05           # overlap threshold
    iou_cube_side: float = DEFAULT_CUBE_SIDE
    stride: int | None = None       # probe every `stride` targets; None -> k

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ValueError("epsilon must lie in [0,1]")
        if self.iou_cube_side <= 0:
            raise ValueError("iou cube side must be positive")
        if self.stride is not None and self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def probe_stride(self) -> int:
        return self.k if self.stride is None else self.stride


def occupancy(cloud: PointCloud, d: float) -> np.ndarray:
    """Sorted unique packed voxel keys occupied by the cloud."""
    if len(cloud) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.unique(pack_keys(voxel_keys(cloud.positions, d)))


def _iou_from_sets(a: np.ndarray, b: np.ndarray) -> float:
    if len(a) == 0 and len(b) == 0:
        return 0.0
    inter = len(np.intersect1d(a, b, assume_unique=True))
    union = len(a) + len(b) - inter
    return inter / union if union else 0.0


def voxel_iou(a: PointCloud, b: PointCloud, d: float) -> float:
    """|keys(a) ∩ keys(b)| / |keys(a) ∪ keys(b)| on occupied-voxel sets; 0 if both empty."""
    if d <= 0:
        raise ValueError("cube side must be positive")
    return _iou_from_sets(occupancy(a, d), occupancy(b, d))


def spatial_overlap(x: PointCloud, y: PointCloud, y_to_x: Pose, d: float) -> float:
    """Register y into x's frame with the known relative pose, then voxel IoU."""
    return voxel_iou(x, transform_cloud(y, y_to_x), d)


def retrieve_references(targets, candidates, cfg: RetrievalConfig) -> list[int]:
    """Pick up to k reference frame ids for the target views.

    Args:
        targets: sequence of view-specific clouds (all in one common frame).
        candidates: sequence of (frame id, view-specific cloud) pairs, same frame.
        cfg: thresholds and probing stride.

    Every `probe_stride`-th target is matched against all candidates; the
    argmax-overlap candidate joins the result iff its score > epsilon. Ties
    go to the lowest candidate id. Results are deduplicated in first-inclusion
    order and capped at k.
    """
    result: list[int] = []
    if not candidates:
        return result
    d = cfg.iou_cube_side
    cand_occ = [(int(cid), occupancy(cloud, d)) for cid, cloud in candidates]
    for i in range(0, len(targets), cfg.probe_stride):
        tgt_occ = occupancy(targets[i], d)
        best_score = 0.0
        best_id = None
        for cid, occ in cand_occ:
            s = _iou_from_sets(tgt_occ, occ)
            if s > best_score or (s == best_score and best_id is not None
                                  and s > 0.0 and cid < best_id):
                best_score = s
                best_id = cid
        if best_id is not None and best_score > cfg.epsilon and best_id not in result:
            result.append(best_id)
            if len(result) >= cfg.k:
                break
    return result
