"""
Vector distance kernels, pairwise distance matrices and nearest-neighbour lookup.

Ties are always broken by lowest index so seeded evaluations reproduce exactly.
"""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, TypeVar

import numpy as np

from .exceptions import InvalidInputError

T = TypeVar("T")


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    values: np.ndarray
    row_ids: tuple
    col_ids: tuple

    def __getitem__(self, index):
        return self.values[index]

    @property
    def shape(self):
        return self.values.shape


def _as_pair(u, v):
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise InvalidInputError(f"dimension mismatch: {u.size} vs {v.size}")
    return u, v


def cosine_distance(u, v) -> float:
    """
    1 - cosine similarity, clamped to [0, 2].

    A zero vector is orthogonal to every nonzero vector (distance 1) and at
    distance 0 from another zero vector.
    """
    u, v = _as_pair(u, v)
    return float(cosine_distance_matrix(u[None, :], v[None, :])[0, 0])


def squared_euclidean(u, v) -> float:
    u, v = _as_pair(u, v)
    diff = u - v
    return float(diff @ diff)


def cosine_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n, d) x (m, d) -> (n, m) cosine distances with the zero-vector convention."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    norm_a = np.linalg.norm(a, axis=1)
    norm_b = np.linalg.norm(b, axis=1)
    zero_a = norm_a == 0
    zero_b = norm_b == 0
    unit_a = a / np.where(zero_a, 1.0, norm_a)[:, None]
    unit_b = b / np.where(zero_b, 1.0, norm_b)[:, None]
    distances = np.clip(1.0 - unit_a @ unit_b.T, 0.0, 2.0)
    distances[zero_a[:, None] ^ zero_b[None, :]] = 1.0
    distances[zero_a[:, None] & zero_b[None, :]] = 0.0
    return distances


def squared_euclidean_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n, d) x (m, d) -> (n, m) squared distances via the norm expansion, clamped at 0."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    sq_a = np.einsum("ij,ij->i", a, a)
    sq_b = np.einsum("ij,ij->i", b, b)
    distances = sq_a[:, None] + sq_b[None, :] - 2.0 * (a @ b.T)
    return np.maximum(distances, 0.0)


def pairwise_squared_euclidean(batch: np.ndarray, ids: Optional[Sequence] = None) -> DistanceMatrix:
    """
    All-pairs squared Euclidean distances within one batch.

    Uses ||a||^2 + ||b||^2 - 2 a.b; round-off negatives are clamped to 0 and
    the diagonal is exactly 0.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] < 1:
        raise InvalidInputError("pairwise distances need at least one row")
    values = squared_euclidean_matrix(batch, batch)
    np.fill_diagonal(values, 0.0)
    ids = tuple(range(batch.shape[0])) if ids is None else tuple(ids)
    return DistanceMatrix(values=values, row_ids=ids, col_ids=ids)


def l2_normalize(vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    return vectors / np.where(norms == 0, 1.0, norms)


def nearest_index(distances: Sequence[float]) -> int:
    """Argmin with lowest-index tie-breaking."""
    distances = np.asarray(distances, dtype=np.float64)
    if distances.size == 0:
        raise InvalidInputError("no candidates to choose from")
    return int(np.argmin(distances))


def nearest_neighbor(query: T, candidates: Sequence[T], dist: Callable[[T, T], float]) -> int:
    """Index of the candidate closest to ``query`` under ``dist``."""
    if len(candidates) == 0:
        raise InvalidInputError("nearest_neighbor needs at least one candidate")
    return nearest_index([dist(query, candidate) for candidate in candidates])


METRICS = {
    "cosine": cosine_distance_matrix,
    "sqeuclidean": squared_euclidean_matrix,
}


def distance_matrix(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    try:
        kernel = METRICS[metric]
    except KeyError:
        raise InvalidInputError(f"unknown metric '{metric}', choose from {sorted(METRICS)}")
    return kernel(a, b)
