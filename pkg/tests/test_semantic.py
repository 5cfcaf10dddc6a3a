import itertools

import numpy as np
import pytest

from nirreg.image import Image, PixelCoord
from nirreg.semantic import (DescriptorBatch, DimensionError, LossWeights,
                             SemanticLabelMap, SimParams, SingleClassError,
                             coarse_matching_loss, fine_matching_loss,
                             fit_sim_params, label_map_from_images,
                             semantic_triplet_loss, sim_refine, total_loss)


def batch_from(rng, n, d):
    return DescriptorBatch(rng.random((n, d)))


class TestSimRefine:
    def test_standardization(self):
        rng = np.random.default_rng(0)
        batch = batch_from(rng, 10, 4)
        params = SimParams.identity_like(4, 3)
        out = sim_refine(batch, np.zeros(3), params)
        assert np.allclose(out.values.mean(axis=0), 0.0, atol=1e-6)
        assert np.allclose(out.values.std(axis=0), 1.0, atol=1e-6)

    def test_inverse_standardization_is_identity(self):
        rng = np.random.default_rng(1)
        batch = batch_from(rng, 8, 3)
        mu = batch.values.mean(axis=0)
        sigma = batch.values.std(axis=0)
        params = SimParams(np.zeros((3, 2)), sigma, np.zeros((3, 2)), mu)
        out = sim_refine(batch, np.ones(2), params)
        assert np.allclose(out.values, batch.values, atol=1e-9)

    def test_constant_channel(self):
        batch = DescriptorBatch(np.full((5, 1), 0.7))
        params = SimParams(np.zeros((1, 1)), np.array([2.0]),
                           np.zeros((1, 1)), np.array([3.0]))
        out = sim_refine(batch, np.zeros(1), params)
        assert np.allclose(out.values, 3.0)

    def test_dimension_mismatch(self):
        batch = DescriptorBatch(np.zeros((4, 3)))
        with pytest.raises(DimensionError):
            sim_refine(batch, np.zeros(2), SimParams.identity_like(5, 2))

    def test_needs_two_descriptors(self):
        with pytest.raises(DimensionError):
            sim_refine(DescriptorBatch(np.zeros((1, 3))), np.zeros(1),
                       SimParams.identity_like(3, 1))


def brute_force_stl(values, labels, weights):
    """Exhaustive hardest-positive / hardest-negative mining."""
    selected = {}
    for c in sorted(set(labels.class_ids.tolist())):
        idx = [i for i in range(len(labels.class_ids)) if labels.class_ids[i] == c]
        idx.sort(key=lambda i: -labels.confidences[i])
        selected[c] = idx[:weights.top_t]
    all_sel = list(itertools.chain.from_iterable(selected.values()))
    total = 0.0
    for c, members in selected.items():
        for a in members:
            pos = [np.linalg.norm(values[a] - values[p]) for p in members if p != a]
            if not pos:
                continue
            neg = [np.linalg.norm(values[a] - values[n]) for n in all_sel
                   if labels.class_ids[n] != c]
            total += max(weights.margin + max(pos) - min(neg), 0.0)
    return total


class TestSemanticTripletLoss:
    def test_separated_classes_zero_loss(self):
        values = np.array([[0.0, 0.0], [0.0, 0.0], [10.0, 0.0], [10.0, 0.0]])
        labels = SemanticLabelMap([1, 1, 2, 2], np.ones(4), 2)
        weights = LossWeights(margin=0.5, top_t=10)
        assert semantic_triplet_loss(DescriptorBatch(values), labels, weights) == 0.0

    def test_identical_descriptors_margin_sum(self):
        values = np.zeros((4, 3))
        labels = SemanticLabelMap([1, 1, 2, 2], np.ones(4), 2)
        weights = LossWeights(margin=0.5, top_t=10)
        loss = semantic_triplet_loss(DescriptorBatch(values), labels, weights)
        assert loss == pytest.approx(4 * 0.5)

    def test_single_class_error(self):
        with pytest.raises(SingleClassError):
            semantic_triplet_loss(DescriptorBatch(np.zeros((3, 2))),
                                  SemanticLabelMap([1, 1, 1], np.ones(3), 2),
                                  LossWeights())

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            n = int(rng.integers(4, 21))
            n_classes = int(rng.integers(2, 5))
            ids = rng.integers(1, n_classes + 1, n)
            while len(set(ids.tolist())) < 2:
                ids = rng.integers(1, n_classes + 1, n)
            labels = SemanticLabelMap(ids, rng.random(n), n_classes)
            values = rng.normal(0, 1, (n, 5))
            weights = LossWeights(margin=float(rng.uniform(0, 1)),
                                  top_t=int(rng.integers(1, 6)))
            got = semantic_triplet_loss(DescriptorBatch(values), labels, weights)
            assert got == pytest.approx(brute_force_stl(values, labels, weights),
                                        abs=1e-9)

    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(3)
        values = rng.normal(0, 1, (8, 3))
        labels = SemanticLabelMap(rng.integers(1, 3, 8), rng.random(8), 2)
        weights = LossWeights(margin=0.4, top_t=4)
        base = semantic_triplet_loss(DescriptorBatch(values), labels, weights)
        q, _ = np.linalg.qr(rng.normal(0, 1, (3, 3)))
        moved = values @ q.T + np.array([5.0, -2.0, 1.0])
        assert semantic_triplet_loss(DescriptorBatch(moved), labels, weights) \
            == pytest.approx(base, abs=1e-9)


class TestCoarseLoss:
    def test_perfect_probabilities(self):
        m = np.ones((3, 3))
        assert coarse_matching_loss(m, {(0, 0), (1, 1)}) == 0.0

    def test_half_probability(self):
        m = np.full((2, 2), 0.5)
        assert coarse_matching_loss(m, {(0, 1)}) == pytest.approx(np.log(2))

    def test_uniform_diagonal(self):
        m = np.full((4, 4), 1.0 / 16.0)
        gt = {(i, i) for i in range(4)}
        assert coarse_matching_loss(m, gt) == pytest.approx(np.log(16))

    def test_empty_gt(self):
        with pytest.raises(ValueError):
            coarse_matching_loss(np.ones((2, 2)), set())

    def test_zero_entry_clamped(self):
        m = np.zeros((2, 2))
        loss = coarse_matching_loss(m, {(0, 0)})
        assert loss == pytest.approx(-np.log(1e-12))

    def test_strictly_decreasing_in_gt_probability(self):
        gt = {(0, 0), (1, 1)}
        m1 = np.full((2, 2), 0.3)
        m2 = m1.copy()
        m2[0, 0] = 0.4
        assert coarse_matching_loss(m2, gt) < coarse_matching_loss(m1, gt)


class TestFineLoss:
    def test_identical(self):
        pts = [PixelCoord(1, 1)]
        assert fine_matching_loss(pts, pts) == 0.0

    def test_offset_squared(self):
        assert fine_matching_loss([PixelCoord(3, 4)], [PixelCoord(0, 0)]) \
            == pytest.approx(25.0)

    def test_mean_of_squares(self):
        pred = [PixelCoord(0, 0), PixelCoord(3, 4)]
        gt = [PixelCoord(0, 0), PixelCoord(0, 0)]
        assert fine_matching_loss(pred, gt) == pytest.approx(12.5)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            fine_matching_loss([PixelCoord(0, 0)], [])


class TestTotalLoss:
    def test_zero(self):
        assert total_loss(0, 0, 0, LossWeights()) == 0.0

    def test_published_default_weights(self):
        w = LossWeights(lambda_st=0.01, lambda_c=1.0, lambda_f=1.0)
        assert total_loss(2.0, 0.5, 1.0, w) == pytest.approx(1.52)

    def test_all_zero_weights(self):
        w = LossWeights(lambda_st=0, lambda_c=0, lambda_f=0)
        assert total_loss(9.0, 9.0, 9.0, w) == 0.0


def make_separable_problem(seed=0, n_per_class=4, channels=3, sdim=2):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 0.05, (n_per_class, channels)) + np.array([0.0, 0.4, 0.0])
    b = rng.normal(0.0, 0.05, (n_per_class, channels)) + np.array([0.4, 0.0, 0.0])
    batch = DescriptorBatch(np.vstack([a, b]))
    labels = SemanticLabelMap([1] * n_per_class + [2] * n_per_class,
                              np.ones(2 * n_per_class), 2)
    params = SimParams.identity_like(channels, sdim)
    h_s = np.ones(sdim) * 0.5
    return batch, labels, params, h_s


class TestFitSimParams:
    def test_loss_decreases(self):
        batch, labels, params, h_s = make_separable_problem()
        weights = LossWeights(margin=0.5, top_t=10)
        _, trace = fit_sim_params([batch], [labels], h_s, params, weights,
                                  steps=50, step_size=0.02)
        assert trace[-1] < trace[0]

    def test_zero_loss_stays_zero(self):
        values = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]])
        batch = DescriptorBatch(values)
        labels = SemanticLabelMap([1, 1, 2, 2], np.ones(4), 2)
        params = SimParams.identity_like(2, 1)
        weights = LossWeights(margin=0.1, top_t=4)
        _, trace = fit_sim_params([batch], [labels], np.ones(1), params, weights,
                                  steps=3, step_size=0.05)
        assert trace == [0.0] * 4

    def test_zero_step_size_constant_trace(self):
        batch, labels, params, h_s = make_separable_problem(1)
        weights = LossWeights(margin=0.5, top_t=10)
        _, trace = fit_sim_params([batch], [labels], h_s, params, weights,
                                  steps=5, step_size=0.0)
        assert all(t == pytest.approx(trace[0]) for t in trace)

    def test_richardson_gradient_consistency(self):
        batch, labels, params, h_s = make_separable_problem(2)
        weights = LossWeights(margin=0.5, top_t=10)

        def grad(fd):
            vec = params.to_vector()
            g = np.zeros_like(vec)
            for k in range(vec.size):
                d = np.zeros_like(vec)
                d[k] = fd
                lp = semantic_triplet_loss(
                    sim_refine(batch, h_s, SimParams.from_vector(
                        vec + d, params.channels, params.semantic_dim)),
                    labels, weights)
                lm = semantic_triplet_loss(
                    sim_refine(batch, h_s, SimParams.from_vector(
                        vec - d, params.channels, params.semantic_dim)),
                    labels, weights)
                g[k] = (lp - lm) / (2 * fd)
            return g

        g1 = grad(1e-4)
        g2 = grad(5e-5)
        scale = max(np.abs(g1).max(), 1e-12)
        assert np.abs(g1 - g2).max() / scale < 1e-3


class TestSerialization:
    def test_sim_params_json_roundtrip(self):
        rng = np.random.default_rng(4)
        p = SimParams(rng.random((3, 2)), rng.random(3),
                      rng.random((3, 2)), rng.random(3))
        back = SimParams.from_json(p.to_json())
        assert np.array_equal(back.gamma_weight, p.gamma_weight)
        assert np.array_equal(back.beta_bias, p.beta_bias)

    def test_label_map_json_roundtrip(self):
        lm = SemanticLabelMap([1, 2, 3], [0.5, 0.25, 1.0], 4)
        back = SemanticLabelMap.from_json(lm.to_json())
        assert np.array_equal(back.class_ids, lm.class_ids)
        assert back.num_classes == 4

    def test_label_map_from_images(self):
        idx = Image(np.array([[2 / 255, 5 / 255], [1 / 255, 3 / 255]]))
        conf = Image(np.array([[1.0, 0.5], [0.25, 0.0]]))
        lm = label_map_from_images(idx, conf, num_classes=4)
        assert lm.class_ids.tolist() == [2, 4, 1, 3]  # 5 capped at C=4
        assert np.allclose(lm.confidences, [1.0, 0.5, 0.25, 0.0])
