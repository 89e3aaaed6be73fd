"""
Dynamic time warping between feature sequences.

Steps are (1,0), (0,1) and (1,1) with unit weights and no band. The table is
filled one anti-diagonal at a time so that a query can be aligned against a
whole batch of equal-length candidates in a single pass.
"""
import enum
import logging
import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data_model import FeatureSequence
from .exceptions import InvalidInputError
from .metric import cosine_distance_matrix, squared_euclidean_matrix

logger = logging.getLogger(__name__)


class LocalDistance(str, enum.Enum):
    COSINE = "cosine_distance"
    SQUARED_EUCLIDEAN = "squared_euclidean"


@dataclass(frozen=True)
class DtwConfig:
    local_distance: LocalDistance = LocalDistance.COSINE
    normalize_by_path_length: bool = True

    def __post_init__(self):
        object.__setattr__(self, "local_distance", LocalDistance(self.local_distance))


class DistanceDiagnostics:
    """Counts frame comparisons that fell back to the zero-vector convention."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.zero_vector_comparisons = 0

    def record(self, count: int) -> None:
        if count:
            with self._lock:
                self.zero_vector_comparisons += int(count)


def _as_frames(seq) -> np.ndarray:
    frames = seq.frames if isinstance(seq, FeatureSequence) else np.asarray(seq, dtype=np.float64)
    frames = np.atleast_2d(frames)
    if frames.shape[0] == 0:
        raise InvalidInputError("cannot align an empty sequence")
    if frames.shape[1] == 0:
        raise InvalidInputError("frames have zero dimension")
    return frames


def local_cost_matrix(a: np.ndarray, b: np.ndarray, kind: LocalDistance,
                      diagnostics: Optional[DistanceDiagnostics] = None) -> np.ndarray:
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError(f"frame dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if LocalDistance(kind) is LocalDistance.COSINE:
        if diagnostics is not None:
            zero_a = ~a.any(axis=1)
            zero_b = ~b.any(axis=1)
            diagnostics.record(np.count_nonzero(zero_a[:, None] | zero_b[None, :]))
        return cosine_distance_matrix(a, b)
    return squared_euclidean_matrix(a, b)


def local_frame_distance(u, v, kind: LocalDistance = LocalDistance.COSINE,
                         diagnostics: Optional[DistanceDiagnostics] = None) -> float:
    u = np.asarray(u, dtype=np.float64).reshape(1, -1)
    v = np.asarray(v, dtype=np.float64).reshape(1, -1)
    return float(local_cost_matrix(u, v, kind, diagnostics)[0, 0])


def _accumulate(costs: np.ndarray):
    """
    Fill the DTW tables for a (B, n, m) stack of local-cost matrices.

    Returns the minimal accumulated cost and the number of cells on the
    optimal path (the shortest one among equal-cost paths).
    """
    batch, n, m = costs.shape
    total = np.full((batch, n + 1, m + 1), np.inf)
    steps = np.zeros((batch, n + 1, m + 1), dtype=np.int64)
    total[:, 0, 0] = 0.0
    for diagonal in range(2, n + m + 1):
        i = np.arange(max(1, diagonal - m), min(n, diagonal - 1) + 1)
        j = diagonal - i
        prev_cost = np.stack([total[:, i - 1, j - 1], total[:, i - 1, j], total[:, i, j - 1]])
        prev_steps = np.stack([steps[:, i - 1, j - 1], steps[:, i - 1, j], steps[:, i, j - 1]])
        best = prev_cost.min(axis=0)
        best_steps = np.where(prev_cost == best, prev_steps, np.iinfo(np.int64).max).min(axis=0)
        total[:, i, j] = costs[:, i - 1, j - 1] + best
        steps[:, i, j] = best_steps + 1
    return total[:, n, m], steps[:, n, m]


def dtw_distances(query, candidates: Sequence, cfg: DtwConfig = DtwConfig(),
                  diagnostics: Optional[DistanceDiagnostics] = None) -> np.ndarray:
    """
    DTW distance from ``query`` to every candidate.

    Candidates of equal length are aligned together in one batched table.
    """
    a = _as_frames(query)
    frames = [_as_frames(c) for c in candidates]
    result = np.empty(len(frames))
    by_length = {}
    for index, b in enumerate(frames):
        by_length.setdefault(b.shape, []).append(index)
    for (_, dim), indices in by_length.items():
        if dim != a.shape[1]:
            raise InvalidInputError(f"frame dimension mismatch: {a.shape[1]} vs {dim}")
        stacked = np.stack([frames[k] for k in indices])
        costs = np.stack([local_cost_matrix(a, b, cfg.local_distance, diagnostics) for b in stacked])
        total, steps = _accumulate(costs)
        if cfg.normalize_by_path_length:
            total = total / steps
        result[indices] = total
    return result


def dtw_distance(a, b, cfg: DtwConfig = DtwConfig(),
                 diagnostics: Optional[DistanceDiagnostics] = None) -> float:
    """
    Minimum accumulated local distance over monotonic alignments of ``a`` and ``b``.

    Args:
        a, b (FeatureSequence | ndarray): Non-empty sequences of equal frame dimension.
        cfg (DtwConfig): Local distance and path-length normalization.

    Raises:
        InvalidInputError: Empty sequence or frame dimension mismatch.
    """
    return float(dtw_distances(a, [b], cfg, diagnostics)[0])
