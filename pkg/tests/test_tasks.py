import numpy as np
import pytest
from scipy.stats import norm

from afalab.tasks import (Dataset, SyntheticTaskSpec, TaskSpecError,
                          block_reconstruction_task, generate_task,
                          held_out_class_spec, shifted_ood_spec,
                          spec_from_config, standard_classification_task)


def two_class_spec(mean0=-2.0, mean1=2.0, seed=0):
    means = np.array([[mean0, 0.0], [mean1, 0.0]])
    return SyntheticTaskSpec(2, 2, means, np.eye(2), np.array([0.5, 0.5]),
                             seed=seed, name="pair")


class TestSpecValidation:
    def test_shapes_must_agree(self):
        with pytest.raises(TaskSpecError):
            SyntheticTaskSpec(3, 2, np.zeros((2, 2)), np.eye(3),
                              np.array([0.5, 0.5]))

    def test_priors_must_sum_to_one(self):
        with pytest.raises(TaskSpecError):
            SyntheticTaskSpec(2, 2, np.zeros((2, 2)), np.eye(2),
                              np.array([0.7, 0.7]))

    def test_asymmetric_cov_rejected(self):
        cov = np.array([[1.0, 0.5], [0.2, 1.0]])
        with pytest.raises(TaskSpecError, match="symmetric"):
            SyntheticTaskSpec(2, 1, np.zeros((1, 2)), cov, np.array([1.0]))

    def test_indefinite_cov_rejected_naming_class(self):
        cov = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3 and -1
        with pytest.raises(TaskSpecError, match="class 0"):
            SyntheticTaskSpec(2, 1, np.zeros((1, 2)), cov, np.array([1.0]))

    def test_informative_and_noise_dims_partition(self):
        spec = standard_classification_task()
        info = set(spec.informative_dims.tolist())
        noise = set(spec.noise_dims.tolist())
        assert info == {0, 1, 2, 3, 4, 5}
        assert info | noise == set(range(spec.n_features))
        assert not info & noise


class TestGeneration:
    def test_split_sizes(self):
        spec = standard_classification_task()
        train, val, test = generate_task(spec, 50, 30, 20)
        assert (len(train), len(val), len(test)) == (50, 30, 20)
        assert train.X.shape == (50, spec.n_features)
        assert train.y.dtype == np.int64

    def test_same_seed_bitwise_identical(self):
        spec = standard_classification_task(seed=7)
        a = generate_task(spec, 40, 10, 10)
        b = generate_task(spec, 40, 10, 10)
        for left, right in zip(a, b):
            assert np.array_equal(left.X, right.X)
            assert np.array_equal(left.y, right.y)

    def test_identical_means_give_chance_accuracy(self):
        # Labels carry no signal, so the Bayes rule cannot beat the prior.
        spec = SyntheticTaskSpec(2, 4, np.zeros((4, 2)), np.eye(2),
                                 np.full(4, 0.25), seed=3)
        train, _, _ = generate_task(spec, 20000, 0, 0)
        # any fixed guess is a Bayes rule here
        acc = np.mean(train.y == 0)
        assert acc == pytest.approx(0.25, abs=0.02)

    def test_bayes_error_matches_gaussian_tail(self):
        # means (-2, 0) and (2, 0): thresholding dim 0 at zero errs
        # with probability Phi(-2) per class.
        expected = norm.cdf(-2.0)
        spec = two_class_spec()
        train, _, _ = generate_task(spec, 10 ** 6, 0, 0)
        pred = (train.X[:, 0] > 0).astype(int)
        err = np.mean(pred != train.y)
        assert err == pytest.approx(expected, abs=3e-3)

    def test_labels_follow_priors(self):
        spec = SyntheticTaskSpec(1, 2, np.array([[0.0], [0.0]]), np.eye(1),
                                 np.array([0.9, 0.1]), seed=5)
        train, _, _ = generate_task(spec, 50000, 0, 0)
        assert np.mean(train.y == 0) == pytest.approx(0.9, abs=0.01)


class TestCsvRoundTrip:
    def test_round_trip_exact(self, tmp_path):
        spec = standard_classification_task()
        train, _, _ = generate_task(spec, 25, 0, 0)
        path = tmp_path / "train.csv"
        train.to_csv(str(path))
        back = Dataset.from_csv(str(path))
        assert np.array_equal(back.X, train.X)
        assert np.array_equal(back.y, train.y)

    def test_header_names_columns(self, tmp_path):
        spec = two_class_spec()
        train, _, _ = generate_task(spec, 3, 0, 0)
        path = tmp_path / "t.csv"
        train.to_csv(str(path))
        header = path.read_text().splitlines()[0]
        assert header == "f0,f1,y"


class TestOodVariants:
    def test_shifted_spec_moves_informative_dims_only(self):
        spec = standard_classification_task()
        ood = shifted_ood_spec(spec, sigmas=3.0)
        delta = ood.means - spec.means
        assert np.all(delta[:, spec.informative_dims] != 0)
        assert np.all(delta[:, spec.noise_dims] == 0)
        stds = np.sqrt(np.diagonal(spec.covs, axis1=1, axis2=2))
        assert np.allclose(np.abs(delta[:, spec.informative_dims]),
                           3.0 * stds[:, spec.informative_dims])

    def test_held_out_class_is_single_class(self):
        spec = standard_classification_task()
        ood = held_out_class_spec(spec)
        assert ood.n_classes == 1
        assert ood.n_features == spec.n_features
        # the unseen class deviates from every training class somewhere
        for k in range(spec.n_classes):
            assert np.any(np.abs(ood.means[0] - spec.means[k]) > 1.0)

    def test_blocks_task_is_single_class_reconstruction_target(self):
        spec = block_reconstruction_task(seed=0)
        assert spec.n_classes == 1
        assert spec.n_features == 16
        cov = spec.covs[0]
        assert cov[0, 1] == pytest.approx(0.9)
        assert cov[0, 4] == 0.0


class TestSpecFromConfig:
    def test_preset_standard(self):
        spec = spec_from_config({"task.preset": "standard", "task.seed": "4"})
        assert spec.name == "standard"
        assert spec.seed == 4

    def test_missing_d_names_the_key(self):
        with pytest.raises(TaskSpecError, match="task.d"):
            spec_from_config({"task.preset": "", "task.classes": "2",
                              "task.means": "0;1"})

    def test_explicit_keys(self):
        spec = spec_from_config({
            "task.preset": "",
            "task.d": "2",
            "task.classes": "2",
            "task.means": "0,0;1,1",
            "task.cov": "2.0",
            "task.seed": "1",
        })
        assert spec.n_features == 2
        assert np.allclose(spec.covs[0], 2.0 * np.eye(2))
        assert np.allclose(spec.priors, [0.5, 0.5])

    def test_unknown_preset_rejected(self):
        with pytest.raises(TaskSpecError, match="preset"):
            spec_from_config({"task.preset": "nope"})

    def test_malformed_value_rejected(self):
        with pytest.raises(TaskSpecError, match="malformed"):
            spec_from_config({"task.preset": "", "task.d": "oops",
                              "task.classes": "2", "task.means": "0;1"})

    def test_malformed_seed_rejected(self):
        with pytest.raises(TaskSpecError, match="malformed"):
            spec_from_config({"task.preset": "standard", "task.seed": "0.5"})
