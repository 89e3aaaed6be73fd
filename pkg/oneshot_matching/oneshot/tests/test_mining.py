import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from oneshot.exceptions import InvalidInputError
from oneshot.mining import (LabelledArrays, TripletLossConfig, anchor_positive_pairs, count_valid_triplets,
                            generate_offline_triplets, online_batch_loss, sample_balanced_batch,
                            select_semi_hard_negative, triplet_batch_loss, triplet_hinge_loss)


def naive_negative(anchor, positive, distances, labels):
    d_ap = distances[anchor][positive]
    negatives = [n for n in range(len(labels)) if labels[n] != labels[anchor]]
    semi_hard = [n for n in negatives if distances[anchor][n] > d_ap]
    if semi_hard:
        return min(semi_hard, key=lambda n: (distances[anchor][n], n))
    return max(negatives, key=lambda n: (distances[anchor][n], -n))


def naive_online_loss(embeddings, labels, margin):
    distances = ((embeddings[:, None, :] - embeddings[None, :, :]) ** 2).sum(axis=-1)
    losses = []
    for a in range(len(labels)):
        for p in range(len(labels)):
            if a != p and labels[a] == labels[p]:
                n = naive_negative(a, p, distances, labels)
                losses.append(max(0.0, margin + distances[a, p] - distances[a, n]))
    return float(np.mean(losses))


class CountingTestCase(SimpleTestCase):
    def test_batch_all_counts(self):
        self.assertEqual(count_valid_triplets(32, 2), 3968)
        self.assertEqual(count_valid_triplets(128, 8), 7282688)
        self.assertEqual(count_valid_triplets(1, 2), 0)

    @given(p=st.integers(1, 6), k=st.integers(2, 4))
    @settings(max_examples=40, deadline=None)
    def test_count_matches_enumeration(self, p, k):
        labels = np.repeat(np.arange(p), k)
        size = p * k
        expected = sum(1 for a in range(size) for pos in range(size) for n in range(size)
                       if a != pos and labels[a] == labels[pos] and labels[n] != labels[a])
        self.assertEqual(count_valid_triplets(p, k), expected)

    def test_k_below_two(self):
        with self.assertRaises(InvalidInputError):
            count_valid_triplets(4, 1)

    def test_anchor_positive_pairs_are_ordered(self):
        anchors, positives = anchor_positive_pairs([0, 0, 1, 1])
        self.assertEqual(sorted(zip(anchors.tolist(), positives.tolist())), [(0, 1), (1, 0), (2, 3), (3, 2)])


class HingeTestCase(SimpleTestCase):
    def test_examples(self):
        self.assertEqual(triplet_hinge_loss(1.0, 2.0, 0.5), 0.0)
        self.assertAlmostEqual(triplet_hinge_loss(1.0, 1.2, 0.5), 0.3)
        self.assertEqual(triplet_hinge_loss(0.7, 0.7, 0.0), 0.0)

    def test_negative_margin_config(self):
        with self.assertRaises(InvalidInputError):
            TripletLossConfig(margin=-0.1)


class SemiHardSelectionTestCase(SimpleTestCase):
    def distances(self, row):
        matrix = np.zeros((len(row), len(row)))
        matrix[0] = row
        matrix[:, 0] = row
        return matrix

    def test_closest_negative_beyond_positive(self):
        distances = self.distances([0.0, 1.0, 0.5, 1.2, 3.0])
        self.assertEqual(select_semi_hard_negative(0, 1, distances, [0, 0, 1, 1, 1]), 3)

    def test_falls_back_to_farthest_negative(self):
        distances = self.distances([0.0, 1.0, 0.2, 0.5])
        self.assertEqual(select_semi_hard_negative(0, 1, distances, [0, 0, 1, 1]), 3)

    def test_single_negative(self):
        distances = self.distances([0.0, 1.0, 0.01])
        self.assertEqual(select_semi_hard_negative(0, 1, distances, [0, 0, 1]), 2)

    def test_no_negative(self):
        with self.assertRaises(InvalidInputError):
            select_semi_hard_negative(0, 1, np.zeros((2, 2)), [0, 0])

    def test_matches_naive_filter_then_argmin(self):
        rng = np.random.default_rng(21)
        for _ in range(1000):
            p, k = int(rng.integers(2, 5)), int(rng.integers(2, 4))
            labels = np.repeat(np.arange(p), k)
            # integer distances make ties frequent, so the tie rule is exercised too
            points = rng.integers(0, 4, size=(p * k, 2)).astype(float)
            distances = ((points[:, None] - points[None, :]) ** 2).sum(axis=-1)
            anchor = int(rng.integers(p * k))
            positive = int(rng.choice([i for i in range(p * k) if labels[i] == labels[anchor] and i != anchor]))
            self.assertEqual(select_semi_hard_negative(anchor, positive, distances, labels),
                             naive_negative(anchor, positive, distances, labels))


class OnlineLossTestCase(SimpleTestCase):
    def test_identical_embeddings_give_margin(self):
        loss, _ = online_batch_loss(np.ones((6, 3)), [0, 0, 1, 1, 2, 2], TripletLossConfig(margin=0.5))
        self.assertAlmostEqual(loss, 0.5)

    def test_separated_clusters_have_zero_loss(self):
        embeddings = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]])
        loss, grad = online_batch_loss(embeddings, [0, 0, 1, 1])
        self.assertEqual(loss, 0.0)
        self.assertFalse(grad.any())

    @given(seed=st.integers(0, 2 ** 32 - 1), p=st.integers(2, 5), k=st.integers(2, 4), dim=st.integers(1, 4))
    @settings(max_examples=60, deadline=None)
    def test_batch_order_does_not_matter(self, seed, p, k, dim):
        rng = np.random.default_rng(seed)
        embeddings = rng.normal(size=(p * k, dim))
        labels = np.repeat(np.arange(p), k)
        order = rng.permutation(p * k)
        loss, grad = online_batch_loss(embeddings, labels)
        shuffled_loss, shuffled_grad = online_batch_loss(embeddings[order], labels[order])
        self.assertAlmostEqual(shuffled_loss, loss, places=10)
        np.testing.assert_allclose(shuffled_grad, grad[order], atol=1e-10)

    def test_unbalanced_batch(self):
        with self.assertRaises(InvalidInputError):
            online_batch_loss(np.zeros((3, 2)), [0, 0, 1])

    def test_matches_naive_loss_and_finite_differences(self):
        rng = np.random.default_rng(5)
        labels = np.repeat(np.arange(3), 2)
        checked = 0
        for _ in range(50):
            embeddings = rng.normal(size=(6, 4))
            distances = ((embeddings[:, None] - embeddings[None, :]) ** 2).sum(axis=-1)
            if self._near_switch(distances, labels, margin=0.5):
                continue
            loss, grad = online_batch_loss(embeddings, labels)
            self.assertAlmostEqual(loss, naive_online_loss(embeddings, labels, 0.5), places=10)
            numeric = np.zeros_like(embeddings)
            for index in np.ndindex(embeddings.shape):
                bumped = embeddings.copy()
                bumped[index] += 1e-5
                plus = naive_online_loss(bumped, labels, 0.5)
                bumped[index] -= 2e-5
                minus = naive_online_loss(bumped, labels, 0.5)
                numeric[index] = (plus - minus) / 2e-5
            np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-7)
            checked += 1
        self.assertGreater(checked, 10)

    @staticmethod
    def _near_switch(distances, labels, margin, tolerance=1e-3):
        for a in range(len(labels)):
            for p in range(len(labels)):
                if a == p or labels[a] != labels[p]:
                    continue
                negatives = distances[a][labels != labels[a]]
                gaps = np.abs(negatives - distances[a, p])
                n = naive_negative(a, p, distances, labels)
                kink = abs(margin + distances[a, p] - distances[a, n])
                spread = np.abs(np.subtract.outer(negatives, negatives))[np.triu_indices(len(negatives), 1)]
                if gaps.min() < tolerance or kink < tolerance or (spread.size and spread.min() < tolerance):
                    return True
        return False


class OfflineTripletTestCase(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.data = LabelledArrays(inputs=rng.normal(size=(200, 3)), labels=np.repeat(np.arange(40), 5))

    def test_one_negative_per_ordered_pair(self):
        batch = sample_balanced_batch(self.data, 32, 2, seed=1)
        triplets = generate_offline_triplets(batch, seed=1)
        self.assertEqual(len(triplets), 64)
        for t in triplets:
            self.assertEqual(batch.class_ids[t.anchor_idx], batch.class_ids[t.positive_idx])
            self.assertNotEqual(batch.class_ids[t.anchor_idx], batch.class_ids[t.negative_idx])
        self.assertEqual(triplets, generate_offline_triplets(batch, seed=1))

    def test_exhaustive_enumerates_every_triplet(self):
        batch = sample_balanced_batch(self.data, 4, 3, seed=2)
        self.assertEqual(len(generate_offline_triplets(batch, seed=0, exhaustive=True)), count_valid_triplets(4, 3))

    def test_single_class_batch(self):
        batch = sample_balanced_batch(self.data, 1, 2, seed=0)
        with self.assertRaises(InvalidInputError):
            generate_offline_triplets(batch, seed=0)

    def test_triplet_batch_loss_gradients(self):
        rng = np.random.default_rng(8)
        a, p, n = (rng.normal(size=(5, 3)) for _ in range(3))
        loss, (grad_a, grad_p, grad_n) = triplet_batch_loss(a, p, n, margin=1.0)
        hinge = 1.0 + ((a - p) ** 2).sum(axis=1) - ((a - n) ** 2).sum(axis=1)
        self.assertAlmostEqual(loss, np.maximum(hinge, 0).mean())
        inactive = hinge <= 0
        self.assertFalse(grad_a[inactive].any())
        np.testing.assert_allclose(grad_a + grad_p + grad_n, np.zeros_like(a), atol=1e-12)


class BalancedBatchTestCase(SimpleTestCase):
    def test_exact_dataset_is_shuffled_whole(self):
        data = LabelledArrays(inputs=np.arange(6.0)[:, None], labels=[0, 0, 1, 1, 2, 2])
        batch = sample_balanced_batch(data, 3, 2, seed=4)
        self.assertEqual(sorted(batch.source_indices.tolist()), list(range(6)))
        np.testing.assert_array_equal(batch.inputs[:, 0], batch.source_indices.astype(float))

    def test_large_batch_size(self):
        data = LabelledArrays(inputs=np.zeros((1300, 1)), labels=np.repeat(np.arange(130), 10))
        batch = sample_balanced_batch(data, 128, 8, seed=0)
        self.assertEqual(len(batch.class_ids), 1024)
        self.assertEqual(batch.triplet_count, 7282688)

    def test_different_seeds_differ(self):
        data = LabelledArrays(inputs=np.zeros((400, 1)), labels=np.repeat(np.arange(40), 10))
        first = sample_balanced_batch(data, 8, 2, seed=1).source_indices
        second = sample_balanced_batch(data, 8, 2, seed=2).source_indices
        self.assertNotEqual(first.tolist(), second.tolist())

    def test_insufficient_classes(self):
        data = LabelledArrays(inputs=np.zeros((6, 1)), labels=[0, 0, 1, 1, 2, 2])
        with self.assertRaises(InvalidInputError):
            sample_balanced_batch(data, 4, 2, seed=0)
        with self.assertRaises(InvalidInputError):
            sample_balanced_batch(data, 2, 3, seed=0)
