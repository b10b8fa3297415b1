import numpy as np
import pytest

from bemap.errors import ValidationError
from bemap.theory import (
    circulant_regular,
    make_residuals,
    neighbor_mean,
    verify_lemma1,
    verify_lemma3_theorem2,
    verify_theorem1,
    within_group_gilbert,
)


class TestResiduals:
    def test_group_means_and_fair_mean(self):
        groups = np.r_[np.zeros(3000, int), np.ones(1000, int)]
        ens = make_residuals(groups, 8, 2.0, rng=0)
        np.testing.assert_allclose(np.linalg.norm(ens.group_means[0] - ens.group_means[1]), 2.0)
        np.testing.assert_allclose(ens.fair_mean, 0.75 * ens.group_means[0] + 0.25 * ens.group_means[1])
        for s in (0, 1):
            emp = ens.residuals[groups == s].mean(axis=0)
            se = 1 / np.sqrt((groups == s).sum())
            assert np.abs(emp - ens.group_means[s]).max() < 5 * se

    def test_bad_dim(self):
        with pytest.raises(ValidationError):
            make_residuals([0, 1], dim=0)


class TestLemma1:
    def test_single_layer_is_identity(self):
        assert verify_lemma1(10, 10, 1, rng=0) <= 1e-12

    def test_two_layers(self):
        errs = [verify_lemma1(10, 10, 2, rng=k) for k in range(5)]
        assert max(errs) <= 1e-8

    def test_zero_residual(self):
        assert verify_lemma1(8, 6, 2, rng=1, zero_residual=True) <= 1e-8

    def test_bad_args(self):
        with pytest.raises(ValidationError):
            verify_lemma1(1, 3, 2)


class TestTheorem1:
    def test_regular_graph_predicts_one_over_d(self):
        adj = circulant_regular(60, 6)
        np.testing.assert_array_equal(np.asarray(adj.sum(axis=1)).ravel(), 6)
        res = verify_theorem1(60, 0.1, 8, 200, rng=0, group_fractions=(1.0,), graph=adj)
        assert res.predicted_ratio == pytest.approx(1 / 6, rel=1e-12)
        assert res.relative_error < 0.05

    def test_small_gilbert(self):
        res = verify_theorem1(100, 0.1, 8, 200, rng=1)
        assert res.relative_error < 0.05
        assert res.centroid_shift_z < 3.5

    def test_within_group_graph(self):
        groups = np.repeat([0, 1], 30)
        adj = within_group_gilbert(groups, 0.3, np.random.default_rng(2))
        r, c = adj.nonzero()
        assert np.all(groups[r] == groups[c])
        assert (adj != adj.T).nnz == 0

    def test_single_trial_warns(self):
        with pytest.warns(RuntimeWarning):
            verify_theorem1(100, 0.1, 4, 1, rng=0)

    def test_isolated_nodes_rejected(self):
        empty = circulant_regular(10, 2) * 0
        with pytest.raises(ValidationError):
            neighbor_mean(empty, np.zeros((10, 2)))
        with pytest.raises(ValidationError):
            verify_theorem1(10, 0.1, 4, 5, rng=0, graph=empty)

    def test_bad_args(self):
        with pytest.raises(ValidationError):
            verify_theorem1(50, 0.0, 4, 10)
        with pytest.raises(ValidationError):
            circulant_regular(10, 3)


class TestLemma3Theorem2:
    def test_balanced(self):
        res = verify_lemma3_theorem2(2000, 10, 4, rng=0)
        assert res.centroid_gap_z <= 3.0
        assert res.group_separation_z <= 3.0
        # balanced size-4 mean: variance d/4 around mu_bar vs d + 1 before
        assert res.shrinkage_ratio == pytest.approx(2 / 9, abs=6 * res.shrinkage_se)
        gap, ratio = res
        assert ratio < 1 and gap == res.centroid_gap

    def test_identical_means(self):
        res = verify_lemma3_theorem2(2000, 10, 4, rng=1, separation=0.0)
        assert res.centroid_gap < 0.05
        assert res.shrinkage_ratio < 1

    def test_skewed_control_separates(self):
        res = verify_lemma3_theorem2(2000, 10, 4, rng=2, own_share=0.75)
        assert res.group_separation_z > 10
        # post-step centroids sit at (3 mu_s + mu_other) / 4: half a unit from mu_bar
        assert res.centroid_gap == pytest.approx(0.5, abs=0.05)

    def test_larger_neighborhoods_shrink_more(self):
        small = verify_lemma3_theorem2(1000, 5, 4, rng=3)
        large = verify_lemma3_theorem2(1000, 5, 8, rng=3)
        assert large.shrinkage_ratio < small.shrinkage_ratio

    @pytest.mark.parametrize("size", [2, 3])
    def test_too_small(self, size):
        with pytest.raises(ValidationError):
            verify_lemma3_theorem2(100, 5, size)

    def test_share_must_be_integral(self):
        with pytest.raises(ValidationError):
            verify_lemma3_theorem2(100, 5, 6, own_share=0.75)
