import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from oneshot.data_model import MatchingSet, PairedExample, SupportSet
from oneshot.datasets_io import ONESHOT_TEST
from oneshot.episodes import (VISION, EpisodeConstraints, classify_one_shot, confidence_halfwidth,
                              cross_modal_match, evaluate, sample_episode, sample_speaker_invariance_episode,
                              score_episode)
from oneshot.exceptions import InvalidInputError, SamplingError
from oneshot.matchers import DirectMatcher
from oneshot.synthetic import generate_synthetic_pairs
from oneshot.tests.factories import image, noiseless_config, one_hot_support, sequence, tiny_config


class TableDistance:
    """Distances read from a fixed table indexed by (query source_index, candidate source_index)."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)

    def __call__(self, query, candidates):
        return self.table[query.source_index, [c.source_index for c in candidates]]


class RandomMatcher:
    """Uniformly random distances: chance-level predictions."""

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def speech_distances(self, query, candidates):
        return self.rng.random(len(candidates))

    def image_distances(self, query, candidates):
        return self.rng.random(len(candidates))


class CorpusMixin:
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.test_split = generate_synthetic_pairs(tiny_config(seed=1)).splits[ONESHOT_TEST]
        cls.noiseless_split = generate_synthetic_pairs(noiseless_config(seed=1)).splits[ONESHOT_TEST]


class SampleEpisodeTestCase(CorpusMixin, SimpleTestCase):
    def test_standard_cross_modal_episode(self):
        episode = sample_episode(self.test_split, 11, 1, 10, seed=0)
        self.assertEqual(len(episode.support.pairs), 11)
        self.assertEqual(len(episode.matching), 10)
        self.assertEqual(sorted(img.class_id for img in episode.matching.items), list(range(10)))
        self.assertEqual(len(episode.queries), 10)

    def test_five_shot_support(self):
        episode = sample_episode(self.test_split, 11, 5, 10, seed=3)
        self.assertEqual(len(episode.support.pairs), 55)

    def test_same_seed_same_episode(self):
        first = sample_episode(self.test_split, 11, 1, 10, seed=42)
        second = sample_episode(self.test_split, 11, 1, 10, seed=42)
        self.assertEqual([s.source_index for s in first.support.audio], [s.source_index for s in second.support.audio])
        self.assertEqual([q.source_index for q in first.queries], [q.source_index for q in second.queries])
        self.assertEqual([m.source_index for m in first.matching.items],
                         [m.source_index for m in second.matching.items])

    @given(seed=st.integers(0, 2 ** 32 - 1), shots=st.integers(1, 3))
    @settings(max_examples=40, deadline=None)
    def test_queries_and_matching_are_disjoint_from_support(self, seed, shots):
        episode = sample_episode(self.test_split, 11, shots, 10, seed=seed)
        support_audio = {s.source_index for s in episode.support.audio}
        support_images = {img.source_index for img in episode.support.images}
        query_ids = [q.source_index for q in episode.queries]
        self.assertFalse(support_audio & set(query_ids))
        self.assertEqual(len(set(query_ids)), len(query_ids))
        self.assertFalse(support_images & {m.source_index for m in episode.matching.items})
        self.assertFalse(episode.support.speakers & {q.speaker_id for q in episode.queries})
        for position, query in enumerate(episode.queries):
            self.assertEqual(query.class_id, episode.query_labels[position])
            self.assertIn(query.class_id, episode.support.class_ids)

    def test_shared_speakers_allowed_on_request(self):
        constraints = EpisodeConstraints(queries=10, speaker_disjoint=False)
        episode = sample_episode(self.test_split, 11, 1, 10, constraints, seed=0)
        self.assertEqual(len(episode.queries), 10)

    def test_vision_episode(self):
        constraints = EpisodeConstraints(queries=10, query_modality=VISION, include_matching=False,
                                         speaker_disjoint=False)
        episode = sample_episode(self.test_split, 10, 1, 10, constraints, seed=5)
        self.assertEqual(len(set(episode.support.image_class_ids)), 10)
        self.assertEqual(len(episode.matching), 0)
        support_images = {img.source_index for img in episode.support.images}
        self.assertFalse(support_images & {q.source_index for q in episode.queries})

    def test_unsatisfiable_constraints_are_named(self):
        with self.assertRaises(SamplingError) as ctx:
            sample_episode(self.test_split, 12, 1, 10, seed=0)
        self.assertEqual(ctx.exception.constraint, "support-classes")
        with self.assertRaises(SamplingError) as ctx:
            sample_episode(self.test_split, 5, 1, 10, seed=0)
        self.assertEqual(ctx.exception.constraint, "matching-size")
        with self.assertRaises(SamplingError) as ctx:
            sample_episode(self.test_split, 11, 1, 10, EpisodeConstraints(queries=500), seed=0)
        self.assertEqual(ctx.exception.constraint, "distinct-queries")
        with self.assertRaises(SamplingError) as ctx:
            sample_episode(self.test_split, 11, 7, 10, seed=0)
        self.assertEqual(ctx.exception.constraint, "support-classes")

    def test_single_speaker_cannot_be_held_out(self):
        split = generate_synthetic_pairs(tiny_config(speakers=1)).splits[ONESHOT_TEST]
        with self.assertRaises(SamplingError) as ctx:
            sample_episode(split, 11, 1, 10, seed=0)
        self.assertEqual(ctx.exception.constraint, "speaker-disjoint")


class SpeakerInvarianceEpisodeTestCase(CorpusMixin, SimpleTestCase):
    def test_structure(self):
        for seed in range(20):
            episode = sample_speaker_invariance_episode(self.test_split, seed=seed)
            query_class = episode.query_labels[0]
            speaker = episode.queries[0].speaker_id
            self.assertTrue(all(label == query_class for label in episode.query_labels))
            self.assertTrue(all(q.speaker_id == speaker for q in episode.queries))
            self.assertTrue(all(q.class_id == query_class for q in episode.queries))
            self.assertEqual(len(episode.support.pairs), 11)
            for pair in episode.support.pairs:
                if pair.class_id == query_class:
                    self.assertNotEqual(pair.audio.speaker_id, speaker)
                else:
                    self.assertEqual(pair.audio.speaker_id, speaker)
            target = self.test_split.image_class(query_class)
            self.assertIn(target, [img.class_id for img in episode.matching.items])
            self.assertEqual(len(episode.matching), 10)

    def test_same_seed_same_episode(self):
        first = sample_speaker_invariance_episode(self.test_split, seed=9)
        second = sample_speaker_invariance_episode(self.test_split, seed=9)
        self.assertEqual([q.source_index for q in first.queries], [q.source_index for q in second.queries])

    def test_unsatisfiable(self):
        with self.assertRaises(SamplingError) as ctx:
            sample_speaker_invariance_episode(self.test_split, ways=12, seed=0)
        self.assertEqual(ctx.exception.constraint, "speaker-invariance")


class ClassifyOneShotTestCase(SimpleTestCase):
    def test_identical_query_gets_its_class(self):
        support = one_hot_support([0, 1, 2, 3])
        query = sequence(np.eye(4)[2][None, :])
        dist = DirectMatcher().speech_distances
        self.assertEqual(classify_one_shot(query, support, dist), 2)

    def test_nearer_class_wins(self):
        support = one_hot_support([4, 7])
        self.assertEqual(classify_one_shot(None, support, lambda q, c: np.array([5.0, 0.1])), 7)

    def test_vision_queries_get_image_classes(self):
        support = one_hot_support([0, 1, 2])
        query = image(np.eye(3)[1][None, :])
        self.assertEqual(classify_one_shot(query, support, DirectMatcher().image_distances, VISION), 1)

    def test_matches_naive_argmin(self):
        rng = np.random.default_rng(0)
        support = one_hot_support(list(range(11)))
        for _ in range(200):
            distances = rng.random(11)
            distances[rng.integers(11)] = distances.min()
            expected = support.class_ids[int(np.flatnonzero(distances == distances.min())[0])]
            self.assertEqual(classify_one_shot(None, support, lambda q, c: distances), expected)

    def test_class_mean_aggregation(self):
        pairs = [PairedExample(sequence([[1.0]], c, source_index=i), image([[1.0]], c, source_index=i))
                 for i, c in enumerate([0, 0, 1, 1])]
        support = SupportSet(pairs, ways=2, shots=2)
        distances = np.array([0.1, 9.0, 1.0, 1.0])
        self.assertEqual(classify_one_shot(None, support, lambda q, c: distances), 0)
        self.assertEqual(classify_one_shot(None, support, lambda q, c: distances, aggregation="class_mean"), 1)

    def test_errors(self):
        with self.assertRaises(InvalidInputError):
            classify_one_shot(None, one_hot_support([0, 1]), lambda q, c: np.zeros(2), modality="smell")
        with self.assertRaises(InvalidInputError):
            classify_one_shot(None, one_hot_support([0, 1]), lambda q, c: np.zeros(2), aggregation="vote")


class CrossModalMatchTestCase(SimpleTestCase):
    def setUp(self):
        self.support = one_hot_support([0, 1, 2])
        # matching items 10, 11, 12 depict classes 2, 0, 1
        self.matching = MatchingSet([image([[1.0]], c, source_index=10 + i) for i, c in enumerate([2, 0, 1])])
        table = np.full((13, 13), 5.0)
        table[0, 11] = table[1, 12] = table[2, 10] = 0.0
        self.image_dist = TableDistance(table)

    def test_exact_oracles_find_the_paired_image(self):
        speech = lambda q, c: np.array([0.0 if s.class_id == q.class_id else 1.0 for s in c])
        for class_id, expected in ((0, 1), (1, 2), (2, 0)):
            query = sequence([[0.0]], class_id)
            self.assertEqual(cross_modal_match(query, self.support, self.matching, speech, self.image_dist), expected)

    def test_stage_one_error_compounds(self):
        wrong = lambda q, c: np.array([1.0, 0.2, 0.9])
        query = sequence([[0.0]], 0)
        self.assertEqual(cross_modal_match(query, self.support, self.matching, wrong, self.image_dist), 2)

    def test_matches_brute_force_two_stage_scan(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            speech = rng.random(3)
            table = rng.random((13, 13))
            nearest_support = min(range(3), key=lambda i: (speech[i], i))
            row = table[self.support.images[nearest_support].source_index, 10:13]
            expected = min(range(3), key=lambda j: (row[j], j))
            self.assertEqual(cross_modal_match(None, self.support, self.matching, lambda q, c: speech,
                                               TableDistance(table)), expected)

    def test_monotone_transform_keeps_predictions(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            speech = rng.random(3)
            table = rng.random((13, 13))
            plain = cross_modal_match(None, self.support, self.matching, lambda q, c: speech, TableDistance(table))
            squashed = cross_modal_match(None, self.support, self.matching, lambda q, c: np.exp(3 * speech),
                                         TableDistance(np.sqrt(table)))
            self.assertEqual(plain, squashed)

    def test_empty_sets(self):
        with self.assertRaises(InvalidInputError):
            cross_modal_match(None, self.support, MatchingSet([]), lambda q, c: np.zeros(3), self.image_dist)


class EvaluateTestCase(CorpusMixin, SimpleTestCase):
    def test_noiseless_direct_matching_is_perfect(self):
        matcher = DirectMatcher()
        for task, ways in (("cross-modal", 11), ("unimodal-speech", 11), ("unimodal-vision", 10)):
            report = evaluate(task, lambda seed: matcher, self.noiseless_split, ways=ways, episodes=5,
                              seeds=[0, 1, 2], model="dtw-pixels")
            self.assertEqual(report.mean_accuracy, 1.0, task)
            self.assertEqual(report.ci95_halfwidth, 0.0)
            self.assertEqual(report.trials, 3 * 5 * 10)
            self.assertEqual(report.seed_count, 3)

    def test_score_episode_counts_correct_queries(self):
        episode = sample_episode(self.noiseless_split, 11, 1, 10, seed=0)
        self.assertEqual(score_episode("cross-modal", episode, DirectMatcher()), 10)

    def test_parallel_equals_serial(self):
        matcher = DirectMatcher()
        kwargs = dict(ways=11, episodes=6, seeds=[3, 4], model="dtw-pixels")
        serial = evaluate("cross-modal", lambda seed: matcher, self.test_split, workers=1, **kwargs)
        threaded = evaluate("cross-modal", lambda seed: matcher, self.test_split, workers=3, **kwargs)
        self.assertEqual(serial.per_seed_accuracies, threaded.per_seed_accuracies)
        self.assertEqual(serial.mean_accuracy, threaded.mean_accuracy)

    def test_same_inputs_same_report(self):
        matcher = DirectMatcher()
        first = evaluate("unimodal-speech", lambda seed: matcher, self.test_split, episodes=4, seeds=[7])
        second = evaluate("unimodal-speech", lambda seed: matcher, self.test_split, episodes=4, seeds=[7])
        self.assertEqual(first.per_seed_accuracies, second.per_seed_accuracies)
        self.assertEqual(first.seeds, (7,))

    def test_cross_modal_chance_level(self):
        report = evaluate("cross-modal", RandomMatcher, self.test_split, episodes=400, seeds=[0, 1, 2])
        standard_error = np.sqrt(0.1 * 0.9 / report.trials)
        self.assertLess(abs(report.mean_accuracy - 0.1), 3 * standard_error)

    def test_unimodal_chance_level(self):
        report = evaluate("unimodal-speech", RandomMatcher, self.test_split, episodes=400, seeds=[0, 1, 2])
        chance = 1.0 / 11
        standard_error = np.sqrt(chance * (1 - chance) / report.trials)
        self.assertLess(abs(report.mean_accuracy - chance), 3 * standard_error)

    def test_speaker_invariance_dispatch(self):
        report = evaluate("speaker-invariance", lambda seed: DirectMatcher(), self.noiseless_split,
                          episodes=3, seeds=[0])
        self.assertEqual(report.task, "speaker-invariance")
        self.assertEqual(report.mean_accuracy, 1.0)
        self.assertEqual(report.trials, 3 * 2)

    def test_sampling_failure_aborts_with_seed(self):
        with self.assertRaises(SamplingError) as ctx:
            evaluate("cross-modal", RandomMatcher, self.test_split, ways=12, episodes=2, seeds=[5])
        self.assertIn("seed 5", str(ctx.exception))

    def test_invalid_arguments(self):
        with self.assertRaises(InvalidInputError):
            evaluate("cross-modal", RandomMatcher, self.test_split, episodes=0)
        with self.assertRaises(InvalidInputError):
            evaluate("cross-modal", RandomMatcher, self.test_split, seeds=[])
        with self.assertRaises(InvalidInputError):
            evaluate("speaker-invariance", RandomMatcher, self.test_split, shots=2)


class ConfidenceHalfwidthTestCase(SimpleTestCase):
    def test_two_seeds(self):
        self.assertAlmostEqual(confidence_halfwidth([0.5, 0.7]), 12.7062047 * 0.1, places=5)

    def test_degenerate(self):
        self.assertEqual(confidence_halfwidth([0.4]), 0.0)
        self.assertEqual(confidence_halfwidth([0.4, 0.4, 0.4]), 0.0)

    def test_shrinks_with_more_seeds(self):
        rng = np.random.default_rng(0)
        values = rng.normal(0.6, 0.05, size=40)
        self.assertLess(confidence_halfwidth(values), confidence_halfwidth(values[:5]))
