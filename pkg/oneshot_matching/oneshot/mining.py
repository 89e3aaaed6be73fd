"""
Triplet hinge loss, balanced batch construction and triplet mining.

Distances are squared Euclidean in embedding space. Anchor-positive pairs are
ordered, so (a, p) and (p, a) are both used, matching pk(pk-k)(k-1).
"""
import enum
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .exceptions import InvalidInputError
from .metric import DistanceMatrix, pairwise_squared_euclidean

logger = logging.getLogger(__name__)


class MiningStrategy(str, enum.Enum):
    ONLINE_SEMI_HARD = "online_semi_hard"
    OFFLINE_BATCH = "offline_batch"


@dataclass(frozen=True)
class TripletLossConfig:
    margin: float = 0.5
    strategy: MiningStrategy = MiningStrategy.ONLINE_SEMI_HARD

    def __post_init__(self):
        if self.margin < 0:
            raise InvalidInputError(f"margin must be non-negative, got {self.margin}")
        object.__setattr__(self, "strategy", MiningStrategy(self.strategy))


@dataclass(frozen=True)
class Triplet:
    anchor_idx: int
    positive_idx: int
    negative_idx: int


@dataclass(frozen=True, eq=False)
class LabelledArrays:
    """Network-ready inputs (n, ...) with one class id per row."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if len(labels) != len(self.inputs):
            raise InvalidInputError(f"{len(self.inputs)} inputs but {len(labels)} labels")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)


@dataclass(frozen=True, eq=False)
class BalancedBatch:
    """p classes times k items, with the source rows they were drawn from."""

    inputs: np.ndarray
    class_ids: np.ndarray
    p: int
    k: int
    source_indices: np.ndarray

    def __post_init__(self):
        _check_balanced(self.class_ids, self.p, self.k)

    @property
    def triplet_count(self) -> int:
        return count_valid_triplets(self.p, self.k)


def _check_balanced(class_ids, p=None, k=None) -> Tuple[int, int]:
    class_ids = np.asarray(class_ids)
    classes, counts = np.unique(class_ids, return_counts=True)
    if len(counts) == 0 or np.any(counts != counts[0]):
        raise InvalidInputError(f"batch is not balanced: per-class counts {counts.tolist()}")
    found_p, found_k = len(classes), int(counts[0])
    if (p is not None and found_p != p) or (k is not None and found_k != k):
        raise InvalidInputError(f"batch holds {found_p} classes x {found_k}, expected {p} x {k}")
    return found_p, found_k


def count_valid_triplets(p: int, k: int) -> int:
    """Number of (anchor, positive, negative) index triples in a p x k batch."""
    if p < 1:
        raise InvalidInputError(f"p must be positive, got {p}")
    if k < 2:
        raise InvalidInputError(f"k must be at least 2 for a positive to exist, got {k}")
    return p * k * (p * k - k) * (k - 1)


def triplet_hinge_loss(d_ap: float, d_an: float, m: float) -> float:
    return max(0.0, m + d_ap - d_an)


def _values(distances) -> np.ndarray:
    return distances.values if isinstance(distances, DistanceMatrix) else np.asarray(distances)


def _select_negatives(distances: np.ndarray, labels: np.ndarray,
                      anchors: np.ndarray, positives: np.ndarray) -> np.ndarray:
    rows = distances[anchors]
    d_ap = distances[anchors, positives]
    negative = labels[None, :] != labels[anchors][:, None]
    if not np.all(negative.any(axis=1)):
        raise InvalidInputError("an anchor has no negative-class item in the batch")
    semi_hard = negative & (rows > d_ap[:, None])
    closest_semi_hard = np.where(semi_hard, rows, np.inf).argmin(axis=1)
    farthest = np.where(negative, rows, -np.inf).argmax(axis=1)
    return np.where(semi_hard.any(axis=1), closest_semi_hard, farthest)


def select_semi_hard_negative(anchor_idx: int, positive_idx: int, batch_distances,
                              class_ids: Sequence[int]) -> int:
    """
    The closest negative still farther from the anchor than the positive.

    Falls back to the farthest negative when none qualifies. Ties go to the
    lowest index.

    Raises:
        InvalidInputError: No item of another class in the batch.
    """
    labels = np.asarray(class_ids)
    chosen = _select_negatives(_values(batch_distances), labels,
                               np.array([anchor_idx]), np.array([positive_idx]))
    return int(chosen[0])


def anchor_positive_pairs(class_ids: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """Every ordered (anchor, positive) pair of distinct same-class items."""
    labels = np.asarray(class_ids)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    anchors, positives = np.nonzero(same)
    return anchors, positives


def online_batch_loss(embeddings: np.ndarray, class_ids: Sequence[int],
                      cfg: TripletLossConfig = TripletLossConfig()) -> Tuple[float, np.ndarray]:
    """
    Mean semi-hard triplet loss over all anchor-positive pairs of one batch.

    Returns:
        tuple: (loss, gradient with respect to ``embeddings``). The hinge has
        zero subgradient at its kink.

    Raises:
        InvalidInputError: Unbalanced batch, k < 2, or a single class.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(class_ids)
    p, k = _check_balanced(labels)
    if k < 2 or p < 2:
        raise InvalidInputError(f"online mining needs p >= 2 and k >= 2, got p={p} k={k}")
    distances = pairwise_squared_euclidean(embeddings).values
    anchors, positives = anchor_positive_pairs(labels)
    negatives = _select_negatives(distances, labels, anchors, positives)
    hinge = cfg.margin + distances[anchors, positives] - distances[anchors, negatives]
    active = hinge > 0
    pair_count = len(anchors)
    loss = float(np.where(active, hinge, 0.0).sum() / pair_count)

    grad = np.zeros_like(embeddings)
    a, pos, neg = anchors[active], positives[active], negatives[active]
    weight = 2.0 / pair_count
    to_positive = (embeddings[a] - embeddings[pos]) * weight
    to_negative = (embeddings[a] - embeddings[neg]) * weight
    np.add.at(grad, a, to_positive - to_negative)
    np.add.at(grad, pos, -to_positive)
    np.add.at(grad, neg, to_negative)
    return loss, grad


def triplet_batch_loss(anchors: np.ndarray, positives: np.ndarray, negatives: np.ndarray,
                       margin: float) -> Tuple[float, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """
    Mean hinge loss over explicit triplets, embedded by three tied passes.

    Returns:
        tuple: (loss, (grad_anchor, grad_positive, grad_negative)).
    """
    diff_ap = anchors - positives
    diff_an = anchors - negatives
    hinge = margin + np.einsum("ij,ij->i", diff_ap, diff_ap) - np.einsum("ij,ij->i", diff_an, diff_an)
    active = (hinge > 0)[:, None]
    count = len(anchors)
    loss = float(np.maximum(hinge, 0.0).sum() / count)
    grad_p = -2.0 * diff_ap * active / count
    grad_n = 2.0 * diff_an * active / count
    grad_a = -grad_p - grad_n
    return loss, (grad_a, grad_p, grad_n)


def generate_offline_triplets(batch: BalancedBatch, seed, exhaustive: bool = False) -> List[Triplet]:
    """
    Triplets formed without looking at distances.

    One negative is drawn uniformly per ordered anchor-positive pair; with
    ``exhaustive`` every negative is paired with every anchor-positive pair.
    """
    if batch.k < 2:
        raise InvalidInputError(f"k must be at least 2, got {batch.k}")
    if batch.p < 2:
        raise InvalidInputError("offline triplets need at least two classes in the batch")
    rng = np.random.default_rng(seed)
    labels = batch.class_ids
    triplets = []
    for anchor, positive in zip(*anchor_positive_pairs(labels)):
        negatives = np.flatnonzero(labels != labels[anchor])
        if exhaustive:
            triplets.extend(Triplet(int(anchor), int(positive), int(n)) for n in negatives)
        else:
            triplets.append(Triplet(int(anchor), int(positive), int(rng.choice(negatives))))
    return triplets


def sample_balanced_batch(dataset: LabelledArrays, p: int, k: int, seed) -> BalancedBatch:
    """
    Draw p classes without replacement and k items of each without replacement.

    Raises:
        InvalidInputError: Fewer than p classes with at least k items.
    """
    if p < 1 or k < 1:
        raise InvalidInputError(f"p and k must be positive, got p={p} k={k}")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(dataset.labels, return_counts=True)
    eligible = classes[counts >= k]
    if len(eligible) < p:
        raise InvalidInputError(
            f"need {p} classes with at least {k} items, dataset has {len(eligible)}")
    chosen = rng.choice(eligible, size=p, replace=False)
    rows = np.concatenate([
        rng.choice(np.flatnonzero(dataset.labels == cls), size=k, replace=False)
        for cls in chosen
    ])
    rows = rng.permutation(rows)
    return BalancedBatch(inputs=dataset.inputs[rows], class_ids=dataset.labels[rows],
                         p=p, k=k, source_indices=rows)
