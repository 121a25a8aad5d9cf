import math

import numpy as np
import pytest

from conftest import (finite_difference, make_balanced_tree, make_random_tree,
                      max_rel_error, random_prob_vector)
from hiercls import losses as L
from hiercls.taxonomy import load_edges, prune_to_tree


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        np.testing.assert_allclose(L.softmax(np.zeros(3)), np.full(3, 1 / 3))

    def test_large_logits_stable(self):
        p = L.softmax(np.array([1000.0, 0.0, 0.0]))
        assert np.isfinite(p).all()
        np.testing.assert_allclose(p, [1.0, 0.0, 0.0], atol=1e-12)

    def test_log_ratio_logits(self):
        p = L.softmax(np.log(np.array([1.0, 2.0, 3.0])))
        np.testing.assert_allclose(p, [1 / 6, 2 / 6, 3 / 6], atol=1e-15)


class TestWeights:
    def test_exponential_decay_formula(self, toy_tree):
        w = L.hxe_weights(toy_tree, 0.3)
        for node in toy_tree.nonroot_bfs:
            expected = math.exp(-0.3 * toy_tree.depth[node])
            assert abs(w.lam[node] - expected) < 1e-12

    def test_zero_alpha_gives_unit_weights(self, toy_tree):
        w = L.hxe_weights(toy_tree, 0.0)
        assert all(v == 1.0 for v in w.lam.values())

    def test_strictly_decreasing_with_depth(self, balanced27):
        w = L.hxe_weights(balanced27, 0.5)
        leaf = balanced27.leaves[0]
        path = balanced27.ancestry(leaf)[:-1]
        lams = [w.lam[n] for n in path]  # ordered deepest to shallowest
        assert all(deep < shallow for deep, shallow in zip(lams[:-1], lams[1:]))

    def test_negative_alpha_rejected(self, toy_tree):
        with pytest.raises(ValueError):
            L.hxe_weights(toy_tree, -0.1)


class TestConditionals:
    def test_uniform_probs(self, toy_tree):
        conds = L.conditionals_from_class_probs(toy_tree, np.full(3, 1 / 3))
        np.testing.assert_allclose(conds["D"], 2 / 3)
        np.testing.assert_allclose(conds["C"], 1 / 3)
        np.testing.assert_allclose(conds["A"], 0.5)
        np.testing.assert_allclose(conds["B"], 0.5)

    def test_one_hot_path_is_unit(self, toy_tree):
        p = np.array([1.0, 0.0, 0.0])  # one-hot on A
        conds = L.conditionals_from_class_probs(toy_tree, p)
        assert conds["A"] == 1.0
        assert conds["D"] == 1.0

    def test_uniform_on_balanced_binary(self):
        t = make_balanced_tree(2, 2)
        conds = L.conditionals_from_class_probs(t, np.full(4, 0.25))
        np.testing.assert_allclose(list(conds.values()), 0.5)

    def test_sibling_groups_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            t = make_random_tree(rng, max_nodes=40)
            p = random_prob_vector(rng, t.num_leaves)
            conds = L.conditionals_from_class_probs(t, p)
            for node in t.nodes_bfs:
                kids = t.children[node]
                if kids:
                    np.testing.assert_allclose(
                        sum(conds[k] for k in kids), 1.0, atol=1e-9)


class TestFactorization:
    def test_uniform_round_trip_leaf(self, toy_tree):
        p = np.full(3, 1 / 3)
        conds = L.conditionals_from_class_probs(toy_tree, p)
        np.testing.assert_allclose(L.factorized_prob(toy_tree, conds, "A"), 1 / 3)

    def test_one_hot(self, toy_tree):
        conds = L.conditionals_from_class_probs(toy_tree, np.array([1.0, 0, 0]))
        assert L.factorized_prob(toy_tree, conds, "A") == 1.0

    def test_round_trip_random_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            t = make_random_tree(rng, max_nodes=50)
            p = random_prob_vector(rng, t.num_leaves)
            conds = L.conditionals_from_class_probs(t, p)
            for i, leaf in enumerate(t.leaves):
                rebuilt = L.factorized_prob(t, conds, leaf)
                assert abs(rebuilt - p[i]) < 1e-9


class TestHxeLoss:
    def test_unit_weights_reduce_to_cross_entropy(self, toy_tree):
        p = np.full(3, 1 / 3)
        w = L.hxe_weights(toy_tree, 0.0)
        np.testing.assert_allclose(L.hxe_loss(toy_tree, w, p, "A"), math.log(3),
                                   atol=1e-12)

    def test_worked_example_alpha_ln2(self, toy_tree):
        p = np.full(3, 1 / 3)
        w = L.hxe_weights(toy_tree, math.log(2))
        expected = 0.25 * math.log(2) + 0.5 * math.log(1.5)
        np.testing.assert_allclose(L.hxe_loss(toy_tree, w, p, "A"), expected,
                                   atol=1e-12)

    def test_one_hot_truth_zero_loss(self, toy_tree):
        p = np.array([1.0, 0.0, 0.0])
        for alpha in (0.0, 0.3, 2.0):
            w = L.hxe_weights(toy_tree, alpha)
            assert L.hxe_loss(toy_tree, w, p, "A") == 0.0

    def test_near_zero_alpha_limit(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            t = make_random_tree(rng, max_nodes=50)
            p = random_prob_vector(rng, t.num_leaves)
            truth = t.leaves[rng.integers(t.num_leaves)]
            w = L.hxe_weights(t, 1e-9)
            ce = -math.log(p[t.leaf_index[truth]])
            assert abs(L.hxe_loss(t, w, p, truth) - ce) < 1e-6

    def test_finite_on_degenerate_probs(self, toy_tree):
        p = np.array([0.0, 1.0, 0.0])
        w = L.hxe_weights(toy_tree, 0.5)
        value = L.hxe_loss(toy_tree, w, p, "A")
        assert np.isfinite(value) and value >= 0.0


class TestSoftLabelMatrix:
    def test_zero_beta_uniform(self, toy_tree):
        m = L.soft_label_matrix(toy_tree, 0.0)
        np.testing.assert_allclose(m.rows, np.full((3, 3), 1 / 3))

    def test_worked_row(self, toy_tree):
        m = L.soft_label_matrix(toy_tree, 1.0)
        weights = np.array([1.0, math.exp(-0.5), math.exp(-1.0)])
        np.testing.assert_allclose(m.row("A"), weights / weights.sum(), atol=1e-12)
        np.testing.assert_allclose(m.row("A"), [0.5065, 0.3072, 0.1863], atol=5e-5)

    def test_huge_beta_one_hot(self, toy_tree):
        m = L.soft_label_matrix(toy_tree, 1e6)
        off = m.rows - np.diag(np.diag(m.rows))
        assert off.max() < 1e-12
        np.testing.assert_allclose(np.diag(m.rows), 1.0, atol=1e-12)

    def test_rows_stochastic_and_diagonal_max(self, balanced27):
        for beta in (0.0, 0.5, 2.0, 8.0):
            m = L.soft_label_matrix(balanced27, beta)
            np.testing.assert_allclose(m.rows.sum(axis=1), 1.0, atol=1e-12)
            assert (m.rows > 0).all()
            diag = np.diag(m.rows)
            assert (diag >= m.rows.max(axis=1) - 1e-15).all()

    def test_symmetric_on_balanced_tree(self, balanced27):
        m = L.soft_label_matrix(balanced27, 3.0)
        np.testing.assert_allclose(m.rows, m.rows.T, atol=1e-12)

    def test_rows_not_symmetric_on_unbalanced_tree(self, toy_tree):
        # Each row carries its own normalizer; with leaves at different
        # depths, the distance multisets differ and symmetry breaks.
        m = L.soft_label_matrix(toy_tree, 1.0)
        i, j = 0, 2  # (A, C)
        assert abs(m.rows[i, j] - m.rows[j, i]) > 1e-3

    def test_diagonal_monotone_in_beta(self, toy_tree, balanced27):
        for tax in (toy_tree, balanced27):
            grid = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
            diags = [np.diag(L.soft_label_matrix(tax, b).rows) for b in grid]
            for lo, hi in zip(diags[:-1], diags[1:]):
                assert (hi >= lo - 1e-15).all()

    def test_negative_beta_rejected(self, toy_tree):
        with pytest.raises(ValueError):
            L.soft_label_matrix(toy_tree, -1.0)

    def test_csv_export_round_trips_values(self, toy_tree):
        m = L.soft_label_matrix(toy_tree, 1.0)
        lines = m.to_csv_text().splitlines()
        assert lines[0] == "truth,A,B,C"
        cells = lines[1].split(",")
        assert cells[0] == "A"
        np.testing.assert_array_equal(
            np.array([float(c) for c in cells[1:]]), m.row("A"))


class TestSoftLabelLoss:
    def test_one_hot_limit_equals_cross_entropy(self, toy_tree):
        rng = np.random.default_rng(3)
        m = L.soft_label_matrix(toy_tree, 1e9)
        for _ in range(20):
            p = random_prob_vector(rng, 3)
            truth = toy_tree.leaves[rng.integers(3)]
            expect = -math.log(p[toy_tree.leaf_index[truth]])
            assert abs(L.soft_label_loss(m, p, truth) - expect) < 1e-9

    def test_uniform_p_gives_log_cardinality(self, toy_tree):
        for beta in (0.0, 1.0, 7.0):
            m = L.soft_label_matrix(toy_tree, beta)
            p = np.full(3, 1 / 3)
            for truth in toy_tree.leaves:
                np.testing.assert_allclose(L.soft_label_loss(m, p, truth),
                                           math.log(3), atol=1e-12)

    def test_worked_example(self, toy_tree):
        m = L.soft_label_matrix(toy_tree, 1.0)
        loss = L.soft_label_loss(m, np.array([0.5, 0.25, 0.25]), "A")
        np.testing.assert_allclose(loss, 1.0352289060507653, atol=1e-12)
        np.testing.assert_allclose(loss, 1.0352, atol=5e-5)


FD_SEEDS = {"ce": 301, "hxe_class": 302, "hxe_cond": 303, "soft": 304}


class TestGradients:
    def test_one_hot_soft_row_gives_softmax_ce_gradient(self, toy_tree):
        m = L.soft_label_matrix(toy_tree, 1e9)
        z = np.array([0.2, -0.4, 1.0])
        p = L.softmax(z)
        onehot = np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(L.soft_grad(m, z, "A"), p - onehot, atol=1e-12)

    def test_unit_weight_hxe_gradient_is_ce_gradient(self, toy_tree):
        w = L.hxe_weights(toy_tree, 0.0)
        z = np.array([0.3, 0.1, -0.2])
        p = L.softmax(z)
        onehot = np.array([0.0, 1.0, 0.0])
        np.testing.assert_allclose(L.hxe_grad(toy_tree, w, z, "B"), p - onehot,
                                   atol=1e-12)

    @pytest.mark.parametrize("kind", ["ce", "hxe_class", "hxe_cond", "soft"])
    def test_matches_finite_differences(self, kind):
        rng = np.random.default_rng(FD_SEEDS[kind])
        for _ in range(30):
            t = make_random_tree(rng, max_nodes=25)
            truth_idx = int(rng.integers(t.num_leaves))
            alpha = float(rng.uniform(0.0, 1.5))
            beta = float(rng.uniform(0.5, 20.0))
            if kind == "ce":
                obj = L.ClassCrossEntropy(t)
            elif kind == "hxe_class":
                obj = L.ClassHxeObjective(t, L.hxe_weights(t, alpha))
            elif kind == "hxe_cond":
                obj = L.ConditionalHxeObjective(t, L.hxe_weights(t, alpha))
            else:
                obj = L.ClassSoftLabelObjective(L.soft_label_matrix(t, beta))
            z = rng.normal(scale=2.0, size=obj.num_outputs)
            tarr = np.array([truth_idx])
            analytic = obj.grad_batch(z[None, :], tarr)[0]
            numeric = finite_difference(
                lambda zz: float(obj.loss_batch(zz[None, :], tarr)[0]), z)
            assert max_rel_error(analytic, numeric) < 1e-5


class TestConditionalHead:
    def test_all_zero_logits_balanced_tree(self):
        t = make_balanced_tree(2, 2)
        w = L.hxe_weights(t, 0.0)
        z = np.zeros(len(t.nonroot_bfs))
        truth = t.leaves[0]
        depth = t.depth[truth]
        np.testing.assert_allclose(L.conditional_head_loss(t, w, z, truth),
                                   depth * math.log(2), atol=1e-12)

    def test_unit_weights_equal_neg_log_factorized(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            t = make_random_tree(rng, max_nodes=30)
            w = L.hxe_weights(t, 0.0)
            obj = L.ConditionalHxeObjective(t, w)
            z = rng.normal(size=obj.num_outputs)
            i = int(rng.integers(t.num_leaves))
            loss = L.conditional_head_loss(t, w, z, t.leaves[i])
            log_p = obj.log_class_probs(z[None, :])[0, i]
            np.testing.assert_allclose(loss, -log_p, atol=1e-9)

    def test_reconstructed_class_probs_normalize(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            t = make_random_tree(rng, max_nodes=30)
            obj = L.ConditionalHxeObjective(t, L.hxe_weights(t, 0.0))
            z = rng.normal(size=obj.num_outputs)
            p = np.exp(obj.log_class_probs(z[None, :])[0])
            np.testing.assert_allclose(p.sum(), 1.0, atol=1e-9)

    def test_output_length_on_toy_tree(self, toy_tree):
        obj = L.ConditionalHxeObjective(toy_tree, L.hxe_weights(toy_tree, 0.0))
        assert obj.num_outputs == 4
        assert toy_tree.nonroot_bfs == ["D", "C", "A", "B"]


class TestBatchSingleConsistency:
    def test_hxe_batch_matches_scalar_definition(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            t = make_random_tree(rng, max_nodes=25)
            w = L.hxe_weights(t, float(rng.uniform(0, 1.2)))
            obj = L.ClassHxeObjective(t, w)
            z = rng.normal(size=t.num_leaves)
            p = L.softmax(z)
            i = int(rng.integers(t.num_leaves))
            batch = float(obj.loss_batch(z[None, :], np.array([i]))[0])
            scalar = L.hxe_loss(t, w, p, t.leaves[i])
            assert abs(batch - scalar) < 1e-9

    def test_losses_nonnegative(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            t = make_random_tree(rng, max_nodes=25)
            p = random_prob_vector(rng, t.num_leaves)
            truth = t.leaves[rng.integers(t.num_leaves)]
            w = L.hxe_weights(t, float(rng.uniform(0, 2)))
            m = L.soft_label_matrix(t, float(rng.uniform(0, 30)))
            for value in (L.hxe_loss(t, w, p, truth),
                          L.soft_label_loss(m, p, truth),
                          L.cross_entropy(t, p, truth)):
                assert np.isfinite(value) and value >= 0.0
