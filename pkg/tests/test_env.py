import numpy as np
import pytest

from afalab.env import (AcquisitionEnv, BudgetExhaustedError, EpisodeConfig,
                        EpisodeContractError, ObservationMask,
                        RepeatAcquisitionError)
from afalab.tasks import Instance


@pytest.fixture
def instance():
    return Instance(values=np.array([1.0, -2.0, 0.5, 3.0]), label=2)


class TestObservationMask:
    def test_empty_start(self):
        m = ObservationMask.empty(4)
        assert m.n_observed == 0
        assert m.unobserved.tolist() == [0, 1, 2, 3]

    def test_with_feature_accumulates(self):
        m = ObservationMask.empty(4).with_feature(2).with_feature(0)
        assert m.observed.tolist() == [0, 2]
        assert m.covers(2) and not m.covers(1)

    def test_repeat_acquisition_rejected(self):
        m = ObservationMask.empty(4).with_feature(1)
        with pytest.raises(RepeatAcquisitionError):
            m.with_feature(1)

    def test_bits_are_immutable(self):
        m = ObservationMask.empty(3)
        with pytest.raises(ValueError):
            m.bits[0] = True

    def test_from_indices(self):
        m = ObservationMask.from_indices(5, [4, 1])
        assert m.observed.tolist() == [1, 4]
        assert m.as_float().tolist() == [0.0, 1.0, 0.0, 0.0, 1.0]


class TestEpisodeConfig:
    def test_cost_defaults_to_one(self):
        cfg = EpisodeConfig(budget=2)
        assert cfg.cost_of(3) == 1.0

    def test_custom_costs(self):
        cfg = EpisodeConfig(budget=1, costs=(2.0, 0.5))
        assert cfg.cost_of(1) == 0.5

    def test_unknown_loss_rejected(self):
        with pytest.raises(EpisodeContractError):
            EpisodeConfig(budget=1, loss="hinge")

    def test_budget_bounds(self, instance):
        with pytest.raises(EpisodeContractError):
            AcquisitionEnv(instance, EpisodeConfig(budget=0))
        with pytest.raises(EpisodeContractError):
            AcquisitionEnv(instance, EpisodeConfig(budget=5))


class TestStepping:
    def test_reset_is_empty_and_repeatable(self, instance):
        env = AcquisitionEnv(instance, EpisodeConfig(budget=2))
        s1 = env.reset()
        assert s1.mask.n_observed == 0
        assert np.all(s1.values == 0.0)
        env.step(3)
        s2 = env.reset()
        assert np.array_equal(s2.mask.bits, s1.mask.bits)
        assert np.array_equal(s2.values, s1.values)

    def test_step_reveals_true_value(self, instance):
        env = AcquisitionEnv(instance, EpisodeConfig(budget=2))
        env.reset()
        state, r_e = env.step(1)
        assert state.values[1] == instance.values[1]
        assert state.mask.covers(1)
        assert env.revealed_value(1) == instance.values[1]

    def test_acquisition_cost_reward(self, instance):
        env = AcquisitionEnv(instance, EpisodeConfig(budget=2, alpha=0.01))
        env.reset()
        _, r_e = env.step(0)
        assert r_e == pytest.approx(-0.01)

    def test_zero_alpha_zero_cost(self, instance):
        env = AcquisitionEnv(instance, EpisodeConfig(budget=2, alpha=0.0))
        env.reset()
        _, r_e = env.step(0)
        assert r_e == 0.0

    def test_weighted_costs_scale_r_e(self, instance):
        cfg = EpisodeConfig(budget=2, alpha=0.1, costs=(1.0, 3.0, 1.0, 1.0))
        env = AcquisitionEnv(instance, cfg)
        env.reset()
        _, r_e = env.step(1)
        assert r_e == pytest.approx(-0.3)

    def test_repeat_step_rejected(self, instance):
        env = AcquisitionEnv(instance, EpisodeConfig(budget=3))
        env.reset()
        env.step(2)
        with pytest.raises(RepeatAcquisitionError):
            env.step(2)

    def test_budget_exhaustion(self, instance):
        env = AcquisitionEnv(instance, EpisodeConfig(budget=2))
        env.reset()
        env.step(0)
        env.step(1)
        with pytest.raises(BudgetExhaustedError):
            env.step(2)


class TestFinalReward:
    def test_uniform_posterior_cross_entropy(self, instance):
        env = AcquisitionEnv(instance, EpisodeConfig(budget=1))
        env.reset()
        env.step(0)
        r_p = env.final_reward(np.full(4, 0.25))
        assert r_p == pytest.approx(-np.log(4.0))

    def test_zero_one_loss(self, instance):
        env = AcquisitionEnv(instance, EpisodeConfig(budget=1, loss="zero_one"))
        env.reset()
        env.step(0)
        assert env.final_reward(2) == 0.0
        assert env.final_reward(0) == -1.0

    def test_perfect_reconstruction_scores_zero(self, instance):
        cfg = EpisodeConfig(budget=1, task="reconstruction")
        env = AcquisitionEnv(instance, cfg)
        env.reset()
        env.step(0)
        assert env.final_reward(instance.values.copy()) == 0.0

    def test_reconstruction_mse_over_unobserved_only(self, instance):
        cfg = EpisodeConfig(budget=2, task="reconstruction")
        env = AcquisitionEnv(instance, cfg)
        env.reset()
        env.step(0)
        env.step(2)
        guess = instance.values.copy()
        guess[1] += 1.0   # unobserved: counts
        guess[0] += 9.0   # observed: must not count
        assert env.final_reward(guess) == pytest.approx(-0.5)

    def test_final_reward_requires_exhausted_budget(self, instance):
        env = AcquisitionEnv(instance, EpisodeConfig(budget=2))
        env.reset()
        env.step(0)
        with pytest.raises(EpisodeContractError):
            env.final_reward(np.full(4, 0.25))

    def test_truth_exposes_instance(self, instance):
        env = AcquisitionEnv(instance, EpisodeConfig(budget=1))
        assert env.truth() is instance
