"""
Calibrated synthetic benchmark: every model on every task over one corpus.

The corpus noise is tuned first, one modality at a time, so that direct
matching (DTW over frames, cosine over pixels) reaches a fixed one-shot
accuracy. The trainable models are then trained on the background splits and
all models are evaluated on the same one-shot split. ``BenchmarkResult.checks``
lists the orderings a working setup shows: learned embeddings beat direct
matching, cross-modal matching is never easier than either of its stages,
and a Siamese network loses less than DTW when the distractors share the
query's speaker.
"""
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Callable, Dict, List, Tuple

from scipy import optimize

from .config import TASKS, TRAINABLE_MODELS, ExperimentConfig
from .datasets_io import ONESHOT_TEST, PairedDataset
from .episodes import SPEECH, VISION, EvalReport
from .exceptions import ConfigError
from .experiments import TrainedParams, csv_row, run_evaluation, train_network
from .serializers import build_experiment_config
from .synthetic import SyntheticConfig, generate_synthetic_pairs
from .timing import StageTimer

logger = logging.getLogger(__name__)

DIRECT = "dtw-pixels"

BENCHMARK_SYNTHETIC = SyntheticConfig(
    background_classes=20,
    oneshot_classes=11,
    speakers=6,
    utterances_per_speaker=2,
    validation_utterances=1,
    feature_dim=20,
    frames=24,
    length_jitter=0.15,
    image_height=14,
    image_width=14,
    signal_rank=6,
    speaker_rank=2,
    seed=0,
)

BENCHMARK_TRAINING = {
    "epochs": 40,
    "patience": 10,
    "steps_per_epoch": 15,
    "batch_size": 32,
    "lr": 1e-3,
    "decay": 0.98,
    "validation_episodes": 30,
}

# (p, k) per Siamese variant; 20 classes is the whole background split
BENCHMARK_BATCHES = {"siamese-online": (20, 6), "siamese-offline": (20, 2)}

DIRECT_BAND = (0.3, 0.7)
SIAMESE_MARGIN = 0.10
TIME_LIMIT_S = 600.0


@dataclass(frozen=True)
class BenchmarkConfig:
    """
    Fields:
        - synthetic (SyntheticConfig): Corpus shape; its noise levels are replaced by calibration.
        - models (tuple): Trainable models to run next to direct matching.
        - tasks (tuple): Tasks every model is evaluated on.
        - episodes, queries, seeds (int): Evaluation size; seeds also seed training.
        - training (dict): ExperimentConfig overrides used for every trainable model.
        - stage_accuracy (float): Direct-matching accuracy each modality is calibrated to.
        - speaker_ratio (float): Speaker offset scale as a multiple of the speech noise.
        - calibration_episodes, calibration_seed (int): Episodes behind each calibration point.
        - workers (int): Evaluation threads.
    """

    synthetic: SyntheticConfig = BENCHMARK_SYNTHETIC
    models: Tuple[str, ...] = TRAINABLE_MODELS
    tasks: Tuple[str, ...] = TASKS
    episodes: int = 150
    queries: int = 10
    seeds: int = 3
    training: Dict[str, Any] = field(default_factory=lambda: dict(BENCHMARK_TRAINING))
    stage_accuracy: float = 0.65
    speaker_ratio: float = 4.0
    calibration_episodes: int = 60
    calibration_seed: int = 1000
    workers: int = 1

    def __post_init__(self):
        unknown = set(self.models) - set(TRAINABLE_MODELS)
        if unknown:
            raise ConfigError(f"unknown benchmark models {sorted(unknown)}")
        if not 0 < self.stage_accuracy < 1:
            raise ConfigError("stage accuracy must lie strictly between 0 and 1")
        if self.episodes < 1 or self.seeds < 1 or self.calibration_episodes < 1:
            raise ConfigError("episodes, seeds and calibration episodes must be positive")


@dataclass(frozen=True)
class BenchmarkCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True, eq=False)
class BenchmarkResult:
    """Reports keyed by (model, task), plus the calibrated corpus they were measured on."""

    synthetic: SyntheticConfig
    reports: Dict[Tuple[str, str], EvalReport]
    wall_time_s: float = 0.0

    def has(self, model: str, *tasks: str) -> bool:
        return all((model, task) in self.reports for task in tasks)

    def accuracy(self, model: str, task: str) -> float:
        return self.reports[(model, task)].mean_accuracy

    def per_seed(self, model: str, task: str) -> Tuple[float, ...]:
        return self.reports[(model, task)].per_seed_accuracies

    def rows(self) -> List[dict]:
        return [csv_row(report) for report in self.reports.values()]

    def checks(self) -> List[BenchmarkCheck]:
        checks = []
        if self.has(DIRECT, "cross-modal"):
            direct = self.accuracy(DIRECT, "cross-modal")
            low, high = DIRECT_BAND
            checks.append(BenchmarkCheck("direct-matching-band", low <= direct <= high,
                                         f"{DIRECT} cross-modal {direct:.4f} in [{low}, {high}]"))
            if self.has("siamese-online", "cross-modal"):
                online = self.accuracy("siamese-online", "cross-modal")
                checks.append(BenchmarkCheck(
                    "siamese-online-beats-direct", online - direct >= SIAMESE_MARGIN,
                    f"siamese-online {online:.4f} vs {DIRECT} {direct:.4f} (needs +{SIAMESE_MARGIN})"))
        if self.has("ffnn-classifier", "cross-modal"):
            ffnn = self.accuracy("ffnn-classifier", "cross-modal")
            for model in ("siamese-offline", "siamese-online"):
                if self.has(model, "cross-modal"):
                    accuracy = self.accuracy(model, "cross-modal")
                    checks.append(BenchmarkCheck(f"{model}-beats-ffnn-classifier", accuracy > ffnn,
                                                 f"{model} {accuracy:.4f} vs ffnn-classifier {ffnn:.4f}"))
        for model in dict.fromkeys(model for model, _ in self.reports):
            if not self.has(model, "cross-modal", "unimodal-speech", "unimodal-vision"):
                continue
            triples = zip(self.per_seed(model, "cross-modal"), self.per_seed(model, "unimodal-speech"),
                          self.per_seed(model, "unimodal-vision"))
            bounded = all(cross <= min(speech, vision) for cross, speech, vision in triples)
            checks.append(BenchmarkCheck(f"{model}-cross-modal-bounded", bounded,
                                         f"per-seed cross-modal {self._fmt(model, 'cross-modal')} <= "
                                         f"speech {self._fmt(model, 'unimodal-speech')} and "
                                         f"vision {self._fmt(model, 'unimodal-vision')}"))
        if self.has(DIRECT, "cross-modal", "speaker-invariance") and \
                self.has("siamese-online", "cross-modal", "speaker-invariance"):
            direct_drop = self.speaker_drop(DIRECT)
            siamese_drop = self.speaker_drop("siamese-online")
            checks.append(BenchmarkCheck(
                "speaker-drop", all(d > s for d, s in zip(direct_drop, siamese_drop)),
                f"per-seed drop {DIRECT} {_fmt(direct_drop)} > siamese-online {_fmt(siamese_drop)}"))
        checks.append(BenchmarkCheck("time-limit", self.wall_time_s < TIME_LIMIT_S,
                                     f"{self.wall_time_s:.1f}s of {TIME_LIMIT_S:.0f}s"))
        return checks

    def speaker_drop(self, model: str) -> Tuple[float, ...]:
        """Per-seed cross-modal accuracy lost when distractors share the query speaker."""
        return tuple(standard - adversarial for standard, adversarial in
                     zip(self.per_seed(model, "cross-modal"), self.per_seed(model, "speaker-invariance")))

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks())

    def _fmt(self, model: str, task: str) -> str:
        return _fmt(self.per_seed(model, task))


def _fmt(values) -> str:
    return "[" + ", ".join(f"{value:.4f}" for value in values) + "]"


def benchmark_experiment(cfg: BenchmarkConfig, model: str, task: str = "cross-modal") -> ExperimentConfig:
    data = {**cfg.training, "model": model, "task": task, "episodes": cfg.episodes,
            "queries": cfg.queries, "seeds": cfg.seeds, "workers": cfg.workers}
    if model in BENCHMARK_BATCHES:
        data["p"], data["k"] = BENCHMARK_BATCHES[model]
    return build_experiment_config(data)


def direct_accuracy(synthetic: SyntheticConfig, task: str, episodes: int, seed: int, queries: int = 10) -> float:
    """One-seed accuracy of DTW and pixel matching on a freshly generated corpus."""
    test = generate_synthetic_pairs(synthetic).splits[ONESHOT_TEST]
    cfg = build_experiment_config({"model": DIRECT, "task": task, "episodes": episodes, "queries": queries,
                                   "seeds": 1, "seed_offset": seed})
    return run_evaluation(cfg, {ONESHOT_TEST: test}).mean_accuracy


def _solve_scale(accuracy_at: Callable[[float], float], target: float, name: str,
                 start: float = 0.25, ceiling: float = 16.0) -> float:
    """
    Noise scale at which ``accuracy_at`` falls through ``target``.

    Accuracy falls as the scale grows; the bracket doubles from ``start``
    until it does, then Brent's method narrows it down.
    """
    cached = lru_cache(maxsize=None)(accuracy_at)
    low, high = 0.0, start
    while cached(high) > target:
        if high >= ceiling:
            logger.warning(f"{name}: accuracy stays above {target} up to scale {high}; using it")
            return high
        low, high = high, high * 2
    if cached(low) <= target:
        logger.warning(f"{name}: accuracy is {cached(low):.4f} already at scale {low}; using it")
        return low
    scale, outcome = optimize.brentq(lambda s: cached(s) - target, low, high, xtol=1e-3 * high,
                                     maxiter=16, full_output=True, disp=False)
    logger.info(f"Calibrated {name}: scale={scale:.4f} accuracy={cached(scale):.4f} "
                f"after {outcome.function_calls} evaluations")
    return float(scale)


def calibrate_synthetic(cfg: BenchmarkConfig = BenchmarkConfig()) -> SyntheticConfig:
    """
    ``cfg.synthetic`` with noise levels at which direct matching scores ``cfg.stage_accuracy``.

    Speech noise and the speaker offset move together (offset = ratio x noise)
    and are solved on unimodal speech; image noise is then solved on unimodal
    vision. Every point reuses the corpus seed, so the search sees the same
    draws at different scales.
    """
    base = cfg.synthetic

    def speech_at(scale: float) -> float:
        corpus = replace(base, noise=scale, speaker_offset=cfg.speaker_ratio * scale, image_noise=0.0)
        return direct_accuracy(corpus, "unimodal-speech", cfg.calibration_episodes, cfg.calibration_seed,
                               cfg.queries)

    with StageTimer("Noise calibration", logger):
        sigma = _solve_scale(speech_at, cfg.stage_accuracy, "speech noise")
        speech = replace(base, noise=sigma, speaker_offset=cfg.speaker_ratio * sigma)

        def vision_at(scale: float) -> float:
            return direct_accuracy(replace(speech, image_noise=scale), "unimodal-vision",
                                   cfg.calibration_episodes, cfg.calibration_seed, cfg.queries)

        image_sigma = _solve_scale(vision_at, cfg.stage_accuracy, "image noise", start=0.125)
    return replace(speech, image_noise=image_sigma)


def train_models(exp: ExperimentConfig, splits: Dict[str, PairedDataset]) -> TrainedParams:
    """One network per modality and seed, kept in memory."""
    trained = {}
    for modality in (SPEECH, VISION):
        for seed in exp.seed_list:
            with StageTimer(f"Training {exp.model} ({modality}, seed {seed})", logger):
                trained[(modality, seed)] = train_network(exp, splits, modality, seed).params
    return trained


def run_benchmark(cfg: BenchmarkConfig = BenchmarkConfig()) -> BenchmarkResult:
    """Calibrate, generate, train and evaluate; see the module docstring."""
    reports = {}
    with StageTimer("Synthetic benchmark", logger) as timer:
        synthetic = calibrate_synthetic(cfg)
        splits = dict(generate_synthetic_pairs(synthetic).splits)
        for model in (DIRECT,) + tuple(cfg.models):
            exp = benchmark_experiment(cfg, model)
            trained = None if model == DIRECT else train_models(exp, splits)
            for task in cfg.tasks:
                reports[(model, task)] = run_evaluation(replace(exp, task=task), splits, trained)
    result = BenchmarkResult(synthetic=synthetic, reports=reports, wall_time_s=timer.elapsed)
    for check in result.checks():
        log = logger.info if check.passed else logger.warning
        log(f"Benchmark check {check.name}: {'passed' if check.passed else 'FAILED'} ({check.detail})")
    return result
