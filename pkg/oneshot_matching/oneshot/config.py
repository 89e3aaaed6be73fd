"""
Experiment configuration: the resolved set of knobs behind one train/eval run.

Config files are TOML with ``[experiment]``, ``[training]``, ``[evaluation]``
and ``[synthetic]`` sections. Sections are flattened into one mapping, and
command-line flags are applied on top, so flags always win.
"""
import tomllib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from .exceptions import ConfigError

TASKS = ("unimodal-speech", "unimodal-vision", "cross-modal", "speaker-invariance")
MODELS = ("dtw-pixels", "ffnn-classifier", "cnn-classifier", "siamese-offline", "siamese-online")
TRAINABLE_MODELS = MODELS[1:]
AGGREGATIONS = ("nearest", "class_mean")
CONFIG_SECTIONS = ("experiment", "training", "evaluation", "synthetic")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "cross-modal"
    model: str = "dtw-pixels"
    ways: int = 11
    shots: int = 1
    matching_size: int = 10
    episodes: int = 400
    queries: int = 10
    seeds: int = 10
    seed_offset: int = 0
    margin: float = 0.5
    p: int = 32
    k: int = 2
    lr: float = 1e-3
    decay: float = 0.96
    epochs: int = 100
    batch_size: int = 200
    patience: int = 5
    steps_per_epoch: int = 0
    validation_episodes: int = 50
    exhaustive: bool = False
    preset: str = "small"
    aggregation: str = "nearest"
    metric: Optional[str] = None
    normalize_embeddings: bool = False
    dtw_local_distance: str = "cosine_distance"
    dtw_normalize: bool = True
    speaker_disjoint: bool = True
    untrained: bool = False
    workers: int = 1
    manifest: Optional[str] = None
    checkpoint_dir: Optional[str] = None
    synthetic: Dict[str, Any] = field(default_factory=dict)

    @property
    def family(self) -> str:
        return "ffnn" if self.model == "ffnn-classifier" else "cnn"

    @property
    def is_siamese(self) -> bool:
        return self.model.startswith("siamese")

    @property
    def embedding_metric(self) -> str:
        """Cosine for classifier-transfer embeddings, squared Euclidean for Siamese ones."""
        if self.metric:
            return self.metric
        return "sqeuclidean" if self.is_siamese else "cosine"

    @property
    def seed_list(self):
        return list(range(self.seed_offset, self.seed_offset + self.seeds))

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def load_config_file(path) -> Dict[str, Any]:
    """
    Read a TOML config file into one flat mapping.

    The ``[synthetic]`` section stays nested under the ``synthetic`` key.

    Raises:
        ConfigError: Unreadable file, bad TOML, or an unknown section.
    """
    path = Path(path)
    try:
        with path.open("rb") as handle:
            document = tomllib.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path} is not valid TOML: {exc}")
    flat: Dict[str, Any] = {}
    for section, values in document.items():
        if section not in CONFIG_SECTIONS or not isinstance(values, dict):
            raise ConfigError(f"{path}: unknown section [{section}], expected one of {CONFIG_SECTIONS}")
        if section == "synthetic":
            flat["synthetic"] = dict(values)
        else:
            flat.update(values)
    return flat


def merge_overrides(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Apply flag values that were actually given (not None) on top of file values."""
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "synthetic":
            merged["synthetic"] = {**merged.get("synthetic", {}), **value}
        else:
            merged[key] = value
    return merged
