"""
Within-modality distance providers used by episodic evaluation.

A matcher answers two questions: how far is a spoken query from each
candidate utterance, and how far is an image from each candidate image.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data_model import FeatureSequence, ImageGrid, flatten
from .dtw import DistanceDiagnostics, DtwConfig, dtw_distances
from .exceptions import InvalidInputError
from .metric import cosine_distance_matrix, distance_matrix, l2_normalize
from .network import NetworkParams, NetworkSpec, embed

logger = logging.getLogger(__name__)


class DirectMatcher:
    """DTW over speech features and cosine distance over raw pixels."""

    name = "dtw-pixels"

    def __init__(self, dtw_config: DtwConfig = DtwConfig(),
                 diagnostics: Optional[DistanceDiagnostics] = None) -> None:
        self.dtw_config = dtw_config
        self.diagnostics = diagnostics or DistanceDiagnostics()

    def speech_distances(self, query: FeatureSequence, candidates: Sequence[FeatureSequence]) -> np.ndarray:
        return dtw_distances(query, candidates, self.dtw_config, self.diagnostics)

    def image_distances(self, query: ImageGrid, candidates: Sequence[ImageGrid]) -> np.ndarray:
        pixels = np.stack([flatten(img) for img in candidates])
        return cosine_distance_matrix(flatten(query)[None, :], pixels)[0]


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Embeddings of a whole item pool, looked up by ``source_index``."""

    vectors: np.ndarray
    metric: str = "cosine"

    @classmethod
    def from_network(cls, params: NetworkParams, spec: NetworkSpec, inputs: np.ndarray,
                     metric: str = "cosine", normalize: bool = False) -> "EmbeddingTable":
        vectors = embed(params, spec, inputs)
        if normalize:
            vectors = l2_normalize(vectors)
        return cls(vectors=vectors, metric=metric)

    def _rows(self, items) -> np.ndarray:
        rows = np.array([item.source_index for item in items], dtype=np.int64)
        if rows.size and (rows.min() < 0 or rows.max() >= len(self.vectors)):
            raise InvalidInputError("item does not belong to the embedded pool (bad source_index)")
        return rows

    def distances(self, query, candidates) -> np.ndarray:
        query_row = self._rows([query])
        return distance_matrix(self.vectors[query_row], self.vectors[self._rows(candidates)], self.metric)[0]


class EmbeddingMatcher:
    """
    Distances in learned embedding spaces, one network per modality.

    A modality without a table cannot be queried; unimodal tasks only need
    the one they test.
    """

    def __init__(self, name: str, speech: Optional[EmbeddingTable] = None,
                 vision: Optional[EmbeddingTable] = None) -> None:
        self.name = name
        self.speech = speech
        self.vision = vision

    def _table(self, table: Optional[EmbeddingTable], modality: str) -> EmbeddingTable:
        if table is None:
            raise InvalidInputError(f"{self.name} has no {modality} embeddings loaded")
        return table

    def speech_distances(self, query, candidates) -> np.ndarray:
        return self._table(self.speech, "speech").distances(query, candidates)

    def image_distances(self, query, candidates) -> np.ndarray:
        return self._table(self.vision, "vision").distances(query, candidates)
