import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from afalab.env import ObservationMask
from afalab.grouping import (ActionGrouping, MaskingError, build_grouping,
                             default_group_count, estimate_all_mi,
                             estimate_mi, load_grouping, mask_probs,
                             save_grouping)
from afalab.oracle import GaussianMixtureOracle
from afalab.tasks import SyntheticTaskSpec, generate_task

mi_vectors = arrays(np.float64, st.integers(min_value=1, max_value=24),
                    elements=st.floats(0.0, 5.0, allow_nan=False))


def channel_spec(noise_dim=True):
    """C=2 where dim 0 tracks the label and dim 1 (optional) is pure noise."""
    d = 2 if noise_dim else 1
    means = np.zeros((2, d))
    means[1, 0] = 2.0
    return SyntheticTaskSpec(d, 2, means, np.eye(d), np.array([0.5, 0.5]),
                             seed=0, name="chan")


class TestEstimateMi:
    def test_noise_dim_near_zero(self):
        spec = channel_spec()
        train, _, _ = generate_task(spec, 10 ** 5, 0, 0)
        oracle = GaussianMixtureOracle(spec)
        assert abs(estimate_mi(train.X, train.y, oracle, 1)) <= 0.02

    def test_binary_channel_closed_form(self):
        # y ~ Bernoulli(1/2); x0 = +-1 tracks y but flips with prob 0.1.
        # Gaussian emulation: means +-1 with shared variance 2/ln 9 puts the
        # posterior at x0 = +-1 at exactly (0.9, 0.1), so the plug-in
        # estimate over literal channel draws has expectation ln 2 - H_b(0.1).
        var = 2.0 / np.log(9.0)
        means = np.array([[-1.0], [1.0]])
        spec = SyntheticTaskSpec(1, 2, means, var * np.eye(1),
                                 np.array([0.5, 0.5]), seed=0, name="bc")
        oracle = GaussianMixtureOracle(spec)
        rng = np.random.default_rng(123)
        n = 10 ** 5
        y = rng.integers(0, 2, size=n)
        flips = rng.random(n) < 0.1
        x = np.where(y == 1, 1.0, -1.0) * np.where(flips, -1.0, 1.0)
        expected = np.log(2.0) - (-0.9 * np.log(0.9) - 0.1 * np.log(0.1))
        est = estimate_mi(x[:, None], y, oracle, 0)
        assert est == pytest.approx(expected, abs=0.01)

    def test_invertible_map_gives_full_bit(self):
        # x0 at +-5 with unit variance: essentially deterministic in y
        means = np.array([[-5.0], [5.0]])
        spec = SyntheticTaskSpec(1, 2, means, np.eye(1), np.array([0.5, 0.5]),
                                 seed=1, name="det")
        train, _, _ = generate_task(spec, 10 ** 5, 0, 0)
        oracle = GaussianMixtureOracle(spec)
        est = estimate_mi(train.X, train.y, oracle, 0)
        assert est == pytest.approx(np.log(2.0), abs=0.01)

    def test_estimate_all_matches_single(self):
        spec = channel_spec()
        train, _, _ = generate_task(spec, 2000, 0, 0)
        oracle = GaussianMixtureOracle(spec)
        all_mi = estimate_all_mi(train.X, train.y, oracle)
        assert all_mi.shape == (2,)
        for j in range(2):
            assert all_mi[j] == pytest.approx(
                estimate_mi(train.X, train.y, oracle, j), abs=1e-12)


class TestBuildGrouping:
    def test_six_features_three_groups(self):
        mi = np.array([0.5, 0.1, 0.9, 0.3, 0.7, 0.2])
        g = build_grouping(mi, 3)
        assert g.n_groups == 3
        assert all(len(grp) == 2 for grp in g.groups)
        assert g.groups[0] == (2, 4)   # highest MI first

    def test_equal_scores_chunk_by_index(self):
        g = build_grouping(np.zeros(6), 3)
        assert g.groups == ((0, 1), (2, 3), (4, 5))

    def test_five_features_two_groups(self):
        g = build_grouping(np.array([0.1, 0.2, 0.3, 0.4, 0.5]), 2)
        assert tuple(len(grp) for grp in g.groups) == (3, 2)

    def test_default_group_count_is_sqrt(self):
        assert default_group_count(16) == 4
        assert default_group_count(10) == 4
        assert default_group_count(1) == 1

    def test_k_larger_than_d_rejected(self):
        with pytest.raises(ValueError):
            build_grouping(np.zeros(3), 4)

    def test_decision_slots_shrink_for_d_at_least_six(self):
        for d in range(6, 40):
            g = build_grouping(np.zeros(d))
            assert g.n_groups + g.slot_count < d

    @given(mi_vectors, st.data())
    @settings(max_examples=60, deadline=None)
    def test_partition_property(self, mi, data):
        k = data.draw(st.integers(min_value=1, max_value=mi.size))
        g = build_grouping(mi, k)
        flat = [f for grp in g.groups for f in grp]
        assert sorted(flat) == list(range(mi.size))
        assert len(set(flat)) == mi.size

    @given(mi_vectors, st.data())
    @settings(max_examples=60, deadline=None)
    def test_sorted_by_mi_with_index_ties(self, mi, data):
        k = data.draw(st.integers(min_value=1, max_value=mi.size))
        g = build_grouping(mi, k)
        flat = [f for grp in g.groups for f in grp]
        keys = [(-mi[f], f) for f in flat]
        assert keys == sorted(keys)

    @given(mi_vectors, st.data())
    @settings(max_examples=60, deadline=None)
    def test_codec_round_trip(self, mi, data):
        k = data.draw(st.integers(min_value=1, max_value=mi.size))
        g = build_grouping(mi, k)
        for gi, grp in enumerate(g.groups):
            for si in range(len(grp)):
                feature = g.decode(gi, si)
                assert g.encode(feature) == (gi, si)


class TestDecode:
    def test_table_lookup(self):
        g = ActionGrouping(6, np.array([1.0, 0.5, 0.8, 2.0, 0.4, 1.5]),
                           ((3, 5), (0, 2), (1, 4)))
        assert g.decode(1, 0) == 0

    def test_first_slot_is_highest_mi(self):
        mi = np.array([0.5, 0.1, 0.9, 0.3, 0.7, 0.2])
        g = build_grouping(mi, 3)
        assert g.decode(0, 0) == int(np.argmax(mi))

    def test_out_of_shape_rejected(self):
        g = build_grouping(np.array([1.0, 2.0, 3.0]), 2)
        with pytest.raises(IndexError):
            g.decode(0, 5)
        with pytest.raises(IndexError):
            g.decode(3, 0)
        # ragged tail: group 1 holds a single feature
        with pytest.raises(IndexError):
            g.decode(1, 1)


class TestMaskProbs:
    def setup_method(self):
        self.g = build_grouping(np.array([0.9, 0.8, 0.7, 0.6, 0.5, 0.4]), 2)
        # groups: (0,1,2) and (3,4,5)

    def test_nothing_observed_is_identity(self):
        gp = np.array([0.6, 0.4])
        mp = np.array([[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]])
        g2, m2 = mask_probs(gp, mp, ObservationMask.empty(6), self.g)
        assert np.allclose(g2, gp)
        assert np.allclose(m2, mp)

    def test_observed_member_renormalizes(self):
        gp = np.array([1.0, 0.0])
        mp = np.array([[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]])
        mask = ObservationMask.from_indices(6, [0])  # slot 0 of group 0
        _, m2 = mask_probs(gp, mp, mask, self.g)
        assert np.allclose(m2[0], [0.0, 0.6, 0.4])

    def test_exhausted_group_gets_zero(self):
        gp = np.array([0.5, 0.5])
        mp = np.full((2, 3), 1.0 / 3.0)
        mask = ObservationMask.from_indices(6, [3, 4, 5])
        g2, m2 = mask_probs(gp, mp, mask, self.g)
        assert g2[1] == 0.0
        assert g2[0] == pytest.approx(1.0)
        assert np.allclose(m2[0], 1.0 / 3.0)

    def test_everything_observed_hard_error(self):
        gp = np.array([0.5, 0.5])
        mp = np.full((2, 3), 1.0 / 3.0)
        mask = ObservationMask.from_indices(6, range(6))
        with pytest.raises(MaskingError):
            mask_probs(gp, mp, mask, self.g)

    @given(st.data())
    @settings(max_examples=80, deadline=None)
    def test_sampled_feature_never_observed(self, data):
        d = data.draw(st.integers(min_value=2, max_value=12))
        k = data.draw(st.integers(min_value=1, max_value=d))
        mi = np.array(data.draw(st.lists(st.floats(0, 3), min_size=d,
                                         max_size=d)))
        g = build_grouping(mi, k)
        n_obs = data.draw(st.integers(min_value=0, max_value=d - 1))
        observed = data.draw(st.permutations(range(d)))[:n_obs]
        mask = ObservationMask.from_indices(d, observed)
        seed = data.draw(st.integers(min_value=0, max_value=2 ** 16))
        rng = np.random.default_rng(seed)
        gp = rng.dirichlet(np.ones(g.n_groups))
        mp = rng.dirichlet(np.ones(g.slot_count), size=g.n_groups)
        g2, m2 = mask_probs(gp, mp, mask, g)
        assert g2.sum() == pytest.approx(1.0, abs=1e-9)
        for gi in np.flatnonzero(g2 > 0):
            assert m2[gi].sum() == pytest.approx(1.0, abs=1e-9)
        ks = rng.choice(g.n_groups, size=50, p=g2)
        for ki in ks:
            si = rng.choice(g.slot_count, p=m2[ki])
            assert not mask.covers(g.decode(int(ki), int(si)))


class TestSerialization:
    def test_round_trip(self, tmp_path):
        mi = np.array([0.31, 0.12, 0.99, 0.47, 0.05])
        g = build_grouping(mi, 2)
        path = tmp_path / "grouping.txt"
        save_grouping(g, str(path))
        back = load_grouping(str(path))
        assert back.groups == g.groups
        assert back.n_features == g.n_features
        assert np.allclose(back.mi, g.mi)

    def test_artifact_is_line_per_feature(self, tmp_path):
        g = build_grouping(np.array([0.5, 1.0, 0.2]), 2)
        path = tmp_path / "g.txt"
        save_grouping(g, str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("#")
        assert len(lines) == 4
