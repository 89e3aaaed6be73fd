"""
Episodic one-shot evaluation.

An episode is a support set of L classes x K speech-image pairs, a matching
set of images and a handful of queries. Queries never come from the support
set, and by default their speaker is held out of it. Each seed drives its own
stream of episodes, split up front with ``SeedSequence.spawn`` so that
serial and threaded evaluation produce identical reports.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .data_model import ClassTable, MatchingSet, PairedExample, SupportSet
from .datasets_io import PairedDataset
from .exceptions import InvalidInputError, SamplingError
from .metric import nearest_index
from .timing import StageTimer

logger = logging.getLogger(__name__)

SPEECH = "speech"
VISION = "vision"
CROSS_MODAL_TASKS = ("cross-modal", "speaker-invariance")
EPISODE_POLICY = "resampled-per-seed"

DistanceFn = Callable[[Any, Sequence[Any]], np.ndarray]


@dataclass(frozen=True)
class EpisodeConstraints:
    """
    Fields:
        - queries (int): Query trials per episode (distinct items).
        - query_modality (str): ``speech`` or ``vision``.
        - include_matching (bool): Sample a matching set (cross-modal tasks).
        - speaker_disjoint (bool): Hold the query speakers out of the support set.
    """

    queries: int = 10
    query_modality: str = SPEECH
    include_matching: bool = True
    speaker_disjoint: bool = True

    def __post_init__(self):
        if self.queries < 1:
            raise InvalidInputError(f"queries must be positive, got {self.queries}")
        if self.query_modality not in (SPEECH, VISION):
            raise InvalidInputError(f"unknown query modality '{self.query_modality}'")


@dataclass(frozen=True, eq=False)
class Episode:
    support: SupportSet
    matching: MatchingSet
    queries: Tuple[Any, ...]
    query_labels: Tuple[int, ...]
    query_modality: str = SPEECH
    class_table: ClassTable = field(default_factory=ClassTable)

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))
        object.__setattr__(self, "query_labels", tuple(int(label) for label in self.query_labels))
        if len(self.queries) != len(self.query_labels):
            raise InvalidInputError(f"{len(self.queries)} queries but {len(self.query_labels)} labels")

    def target_image_class(self, position: int) -> int:
        label = self.query_labels[position]
        return label if self.query_modality == VISION else self.class_table.image_class(label)


@dataclass(frozen=True)
class EvalReport:
    """
    Accuracy of one model on one task, over several seeds.

    ``per_seed_accuracies`` follow ``seeds`` in ascending order; ``ci95_halfwidth``
    is the Student-t half-width over the per-seed means (0 for a single seed).
    """

    task: str
    model: str
    ways: int
    shots: int
    matching_size: int
    episodes: int
    queries_per_episode: int
    seeds: Tuple[int, ...]
    per_seed_accuracies: Tuple[float, ...]
    mean_accuracy: float
    ci95_halfwidth: float
    trials: int
    episode_policy: str = EPISODE_POLICY
    wall_time_s: float = 0.0
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def seed_count(self) -> int:
        return len(self.seeds)


# Sampling -----------------------------------------------------------------

def _audio_index(dataset: PairedDataset, position: int) -> int:
    return dataset.pairs[position][0]


def _speaker(dataset: PairedDataset, position: int) -> int:
    return dataset.audio[_audio_index(dataset, position)].speaker_id


def _hold_out_speakers(dataset: PairedDataset, rng: np.random.Generator) -> frozenset:
    speakers = sorted({seq.speaker_id for seq in dataset.audio})
    if len(speakers) < 2:
        raise SamplingError("speaker-disjoint", f"split has {len(speakers)} speaker(s), need at least 2")
    count = max(1, len(speakers) // 4)
    return frozenset(int(s) for s in rng.choice(speakers, size=count, replace=False))


def _sample_support(dataset: PairedDataset, classes: Sequence[int], shots: int,
                    allowed: Callable[[int], bool], rng: np.random.Generator) -> List[PairedExample]:
    pairs = []
    for class_id in classes:
        positions = [pos for pos in dataset.pair_positions(class_id) if allowed(pos)]
        chosen = rng.choice(positions, size=shots, replace=False)
        pairs.extend(dataset.pair(int(pos)) for pos in chosen)
    return pairs


def _pick_support_classes(dataset: PairedDataset, ways: int, shots: int, modality: str,
                          allowed: Callable[[int], bool], rng: np.random.Generator) -> List[int]:
    eligible = [c for c in dataset.audio_classes
                if sum(1 for pos in dataset.pair_positions(c) if allowed(pos)) >= shots]
    if modality == SPEECH:
        if len(eligible) < ways:
            raise SamplingError("support-classes",
                                f"{ways}-way {shots}-shot needs {ways} classes with {shots} pairs, "
                                f"split has {len(eligible)}")
        return sorted(int(c) for c in rng.choice(eligible, size=ways, replace=False))
    # vision support classes must depict distinct images
    by_image: Dict[int, List[int]] = {}
    for class_id in eligible:
        by_image.setdefault(dataset.image_class(class_id), []).append(class_id)
    if len(by_image) < ways:
        raise SamplingError("support-classes",
                            f"{ways}-way vision needs {ways} distinct image classes, split has {len(by_image)}")
    image_classes = rng.choice(sorted(by_image), size=ways, replace=False)
    return sorted(int(rng.choice(by_image[c])) for c in image_classes)


def _sample_matching(dataset: PairedDataset, image_classes: Sequence[int], size: int,
                     excluded: set, rng: np.random.Generator, required: Optional[int] = None) -> MatchingSet:
    available = sorted(set(image_classes))
    if size > len(available):
        raise SamplingError("matching-size",
                            f"matching set of {size} needs as many image classes, support covers {len(available)}")
    if required is None:
        chosen = [int(c) for c in rng.choice(available, size=size, replace=False)]
    else:
        others = [c for c in available if c != required]
        chosen = [required] + [int(c) for c in rng.choice(others, size=size - 1, replace=False)]
    items = []
    for image_class in chosen:
        pool = [i for i in dataset.image_indices(image_class) if i not in excluded]
        if not pool:
            raise SamplingError("matching-pool", f"no image of class {image_class} outside the support set")
        items.append(dataset.images[int(rng.choice(pool))])
    order = rng.permutation(len(items))
    return MatchingSet([items[i] for i in order])


def _draw_queries(pools: Dict[int, List[int]], count: int, rng: np.random.Generator) -> List[Tuple[int, int]]:
    """Draw ``count`` distinct (class, item) queries, classes uniform with replacement."""
    pools = {c: list(items) for c, items in pools.items() if items}
    drawn = []
    while len(drawn) < count:
        if not pools:
            raise SamplingError("distinct-queries", f"only {len(drawn)} eligible query items, need {count}")
        classes = sorted(pools)
        class_id = classes[int(rng.integers(len(classes)))]
        pool = pools[class_id]
        drawn.append((class_id, pool.pop(int(rng.integers(len(pool))))))
        if not pool:
            del pools[class_id]
    return drawn


def sample_episode(dataset: PairedDataset, ways: int, shots: int, matching_size: int,
                   constraints: EpisodeConstraints = EpisodeConstraints(), seed=None) -> Episode:
    """
    Sample one L-way K-shot episode.

    Speech queries are drawn from the support classes; with a matching set
    only classes whose image appears in it are eligible. The matching set
    holds one image per chosen image class, none of them a support image, in
    shuffled order. Vision queries are images of the support's image classes.

    Raises:
        SamplingError: Naming the constraint that could not be satisfied.
    """
    if ways < 1 or shots < 1:
        raise InvalidInputError(f"ways and shots must be positive, got {ways} and {shots}")
    rng = np.random.default_rng(seed)
    modality = constraints.query_modality
    held_out = frozenset()
    if constraints.speaker_disjoint and modality == SPEECH:
        held_out = _hold_out_speakers(dataset, rng)

    def allowed(position: int) -> bool:
        return _speaker(dataset, position) not in held_out

    classes = _pick_support_classes(dataset, ways, shots, modality, allowed, rng)
    support = SupportSet(_sample_support(dataset, classes, shots, allowed, rng), ways, shots)
    support_images = {img.source_index for img in support.images}

    matching = MatchingSet(())
    if constraints.include_matching:
        matching = _sample_matching(dataset, support.image_class_ids, matching_size, support_images, rng)

    if modality == SPEECH:
        matched = {img.class_id for img in matching.items}
        support_audio = {seq.source_index for seq in support.audio}
        pools = {}
        for class_id in classes:
            if constraints.include_matching and dataset.image_class(class_id) not in matched:
                continue
            pools[class_id] = sorted({
                _audio_index(dataset, pos) for pos in dataset.pair_positions(class_id)
                if _audio_index(dataset, pos) not in support_audio
                and (not held_out or _speaker(dataset, pos) in held_out)
            })
        drawn = _draw_queries(pools, constraints.queries, rng)
        queries = [dataset.audio[index] for _, index in drawn]
    else:
        matching_images = {img.source_index for img in matching.items}
        pools = {
            image_class: [i for i in dataset.image_indices(image_class)
                          if i not in support_images and i not in matching_images]
            for image_class in set(support.image_class_ids)
        }
        drawn = _draw_queries(pools, constraints.queries, rng)
        queries = [dataset.images[index] for _, index in drawn]
    return Episode(support=support, matching=matching, queries=queries,
                   query_labels=[label for label, _ in drawn], query_modality=modality,
                   class_table=dataset.class_table)


def sample_speaker_invariance_episode(dataset: PairedDataset, ways: int = 11, matching_size: int = 10,
                                      queries: int = 10, seed=None) -> Episode:
    """
    One-shot cross-modal episode stacked against the query speaker.

    Every support item is spoken by the query speaker except the one of the
    query's class, which comes from a different speaker. Queries are up to
    ``queries`` distinct utterances of that class by the query speaker.

    Raises:
        SamplingError: No speaker covers ``ways - 1`` other classes with a
            different-speaker instance of the query class.
    """
    rng = np.random.default_rng(seed)
    by_speaker: Dict[int, Dict[int, List[int]]] = {}
    for position, (audio_index, _) in enumerate(dataset.pairs):
        seq = dataset.audio[audio_index]
        by_speaker.setdefault(seq.speaker_id, {}).setdefault(seq.class_id, []).append(position)
    candidates = []
    for speaker in sorted(by_speaker):
        own = by_speaker[speaker]
        if len(own) < ways:
            continue
        for class_id in sorted(own):
            others = [pos for pos in dataset.pair_positions(class_id) if _speaker(dataset, pos) != speaker]
            if others:
                candidates.append((speaker, class_id))
    if not candidates:
        raise SamplingError("speaker-invariance",
                            f"no speaker has {ways - 1} other classes plus another speaker's "
                            f"instance of the query class")
    speaker, query_class = candidates[int(rng.integers(len(candidates)))]
    own = by_speaker[speaker]
    other_classes = [c for c in sorted(own) if c != query_class]
    chosen = sorted(int(c) for c in rng.choice(other_classes, size=ways - 1, replace=False))

    pairs = []
    for class_id in sorted(chosen + [query_class]):
        if class_id == query_class:
            pool = [pos for pos in dataset.pair_positions(class_id) if _speaker(dataset, pos) != speaker]
        else:
            pool = own[class_id]
        pairs.append(dataset.pair(int(rng.choice(pool))))
    support = SupportSet(pairs, ways, 1)

    support_images = {img.source_index for img in support.images}
    matching = _sample_matching(dataset, support.image_class_ids, matching_size, support_images, rng,
                                required=dataset.image_class(query_class))
    support_audio = {seq.source_index for seq in support.audio}
    pool = sorted({_audio_index(dataset, pos) for pos in own[query_class]} - support_audio)
    order = rng.permutation(len(pool))[:queries]
    query_items = [dataset.audio[pool[i]] for i in order]
    return Episode(support=support, matching=matching, queries=query_items,
                   query_labels=[query_class] * len(query_items), query_modality=SPEECH,
                   class_table=dataset.class_table)


# Prediction ---------------------------------------------------------------

def _choose(distances: np.ndarray, labels: Sequence[int], aggregation: str) -> Tuple[int, List[int]]:
    """Pick a class from support distances; returns it with the support positions that voted for it."""
    if aggregation == "nearest":
        best = nearest_index(distances)
        return labels[best], [best]
    if aggregation == "class_mean":
        classes = list(dict.fromkeys(labels))
        members = [[i for i, label in enumerate(labels) if label == c] for c in classes]
        best = nearest_index([np.mean(distances[m]) for m in members])
        return classes[best], members[best]
    raise InvalidInputError(f"unknown aggregation '{aggregation}'")


def classify_one_shot(query, support: SupportSet, dist: DistanceFn, modality: str = SPEECH,
                      aggregation: str = "nearest") -> int:
    """
    Label of the nearest support item in the query's modality.

    ``dist(query, candidates)`` returns one distance per candidate. Speech
    queries get a spoken class id, vision queries an image class id. With
    K > 1, ``nearest`` is 1-NN over all L x K items and ``class_mean`` picks the
    class with the lowest mean distance.
    """
    if not support.pairs:
        raise InvalidInputError("cannot classify against an empty support set")
    if modality == SPEECH:
        candidates, labels = support.audio, support.class_ids
    elif modality == VISION:
        candidates, labels = support.images, support.image_class_ids
    else:
        raise InvalidInputError(f"unknown modality '{modality}'")
    label, _ = _choose(np.asarray(dist(query, candidates), dtype=np.float64), labels, aggregation)
    return label


def cross_modal_match(query, support: SupportSet, matching: MatchingSet, speech_dist: DistanceFn,
                      image_dist: DistanceFn, aggregation: str = "nearest") -> int:
    """
    Index of the matching-set image picked for a spoken query.

    The query is compared against the support audio; the image paired with
    the winning support item is then compared against the matching set.
    Ties go to the lowest index at both stages. With ``class_mean`` the image
    distances are averaged over the winning class's support images.
    """
    if not support.pairs:
        raise InvalidInputError("cross-modal matching needs a non-empty support set")
    if len(matching) == 0:
        raise InvalidInputError("cross-modal matching needs a non-empty matching set")
    speech = np.asarray(speech_dist(query, support.audio), dtype=np.float64)
    _, members = _choose(speech, support.class_ids, aggregation)
    images = np.mean([np.asarray(image_dist(support.images[m], matching.items), dtype=np.float64)
                      for m in members], axis=0)
    return nearest_index(images)


def score_episode(task: str, episode: Episode, matcher, aggregation: str = "nearest") -> int:
    """Number of correctly answered queries in ``episode``."""
    correct = 0
    for position, query in enumerate(episode.queries):
        if task in CROSS_MODAL_TASKS:
            index = cross_modal_match(query, episode.support, episode.matching,
                                      matcher.speech_distances, matcher.image_distances, aggregation)
            correct += episode.matching.items[index].class_id == episode.target_image_class(position)
        elif episode.query_modality == SPEECH:
            predicted = classify_one_shot(query, episode.support, matcher.speech_distances, SPEECH, aggregation)
            correct += predicted == episode.query_labels[position]
        else:
            predicted = classify_one_shot(query, episode.support, matcher.image_distances, VISION, aggregation)
            correct += predicted == episode.query_labels[position]
    return int(correct)


# Evaluation ---------------------------------------------------------------

def task_constraints(task: str, queries: int, speaker_disjoint: bool = True) -> EpisodeConstraints:
    if task == "unimodal-speech":
        return EpisodeConstraints(queries, SPEECH, include_matching=False, speaker_disjoint=speaker_disjoint)
    if task == "unimodal-vision":
        return EpisodeConstraints(queries, VISION, include_matching=False, speaker_disjoint=False)
    if task in CROSS_MODAL_TASKS:
        return EpisodeConstraints(queries, SPEECH, include_matching=True, speaker_disjoint=speaker_disjoint)
    raise InvalidInputError(f"unknown task '{task}'")


def episode_sampler(task: str, dataset: PairedDataset, ways: int, shots: int, matching_size: int,
                    queries: int, speaker_disjoint: bool = True) -> Callable[[Any], Episode]:
    """Bind everything but the seed of the episode sampler ``task`` uses."""
    if task == "speaker-invariance":
        if shots != 1:
            raise InvalidInputError("speaker-invariance episodes are one-shot")
        return lambda seed: sample_speaker_invariance_episode(dataset, ways, matching_size, queries, seed)
    constraints = task_constraints(task, queries, speaker_disjoint)
    return lambda seed: sample_episode(dataset, ways, shots, matching_size, constraints, seed)


def confidence_halfwidth(accuracies: Sequence[float], level: float = 0.95) -> float:
    """Student-t half-width over per-seed means; 0 for fewer than two seeds."""
    values = np.asarray(accuracies, dtype=np.float64)
    if len(values) < 2:
        return 0.0
    spread = values.std(ddof=1)
    if spread == 0:
        return 0.0
    return float(stats.t.ppf(0.5 + level / 2, len(values) - 1) * spread / np.sqrt(len(values)))


def evaluate(task: str, matcher_for_seed: Callable[[int], Any], dataset: PairedDataset, *,
             ways: int = 11, shots: int = 1, matching_size: int = 10, episodes: int = 400,
             queries: int = 10, seeds: Sequence[int] = range(10), aggregation: str = "nearest",
             speaker_disjoint: bool = True, workers: int = 1, model: str = "",
             config: Optional[Dict[str, Any]] = None) -> EvalReport:
    """
    Accuracy over ``episodes`` x ``queries`` trials for each seed.

    ``matcher_for_seed(seed)`` supplies the distances for that seed (e.g. the
    network trained with it). Episodes are resampled per seed from the seed's
    own stream, so the report depends only on the inputs, never on ``workers``.

    Raises:
        SamplingError: Any episode that cannot be sampled aborts the run.
    """
    if episodes < 1 or queries < 1:
        raise InvalidInputError(f"episodes and queries must be positive, got {episodes} and {queries}")
    seeds = sorted(int(s) for s in seeds)
    if not seeds:
        raise InvalidInputError("evaluation needs at least one seed")
    sample = episode_sampler(task, dataset, ways, shots, matching_size, queries, speaker_disjoint)

    accuracies, total_trials = [], 0
    with StageTimer(f"Evaluation {model or 'model'} on {task} ({ways}-way {shots}-shot)", logger) as timer:
        for seed in seeds:
            matcher = matcher_for_seed(seed)
            streams = np.random.SeedSequence(seed).spawn(episodes)

            def run(stream):
                try:
                    episode = sample(stream)
                except SamplingError as exc:
                    raise SamplingError(exc.constraint, f"seed {seed}: {exc}")
                return score_episode(task, episode, matcher, aggregation), len(episode.queries)

            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    outcomes = list(pool.map(run, streams))
            else:
                outcomes = [run(stream) for stream in streams]
            correct = sum(c for c, _ in outcomes)
            trials = sum(n for _, n in outcomes)
            total_trials += trials
            accuracies.append(correct / trials)
            logger.info(f"Seed {seed}: {correct}/{trials} correct ({correct / trials:.4f})")

    return EvalReport(
        task=task,
        model=model,
        ways=ways,
        shots=shots,
        matching_size=matching_size,
        episodes=episodes,
        queries_per_episode=queries,
        seeds=tuple(seeds),
        per_seed_accuracies=tuple(accuracies),
        mean_accuracy=float(np.mean(accuracies)),
        ci95_halfwidth=confidence_halfwidth(accuracies),
        trials=total_trials,
        wall_time_s=timer.elapsed,
        config=dict(config or {}),
    )
