"""AUROC, calibration bookkeeping, and the assembled OOD detector."""
import numpy as np
import pytest

from afalab.detector import TAU_PERCENTILE, Calibration, Detector, auroc, calibrate
from afalab.dose import DoseTrainConfig, train_dose
from afalab.scorenet import NoiseSchedule, ScoreTrainConfig, sample_masks, train_score_model


class TestAuroc:
    def test_frozen_small_example(self):
        # pairs: .9>.8, .9>.1, .2<.8, .2>.1  ->  3 of 4
        assert auroc(np.array([0.9, 0.2]), np.array([0.8, 0.1])) == 0.75

    def test_perfect_and_reversed(self):
        lo, hi = np.arange(5.0), np.arange(10.0, 16.0)
        assert auroc(hi, lo) == 1.0
        assert auroc(lo, hi) == 0.0

    def test_all_tied_is_half(self):
        assert auroc(np.full(7, 3.3), np.full(4, 3.3)) == 0.5

    def test_matches_brute_force_pairwise(self):
        rng = np.random.default_rng(2)
        a = rng.normal(1.0, 2.0, size=83)
        b = rng.normal(0.0, 2.0, size=57)
        b[:5] = a[:5]  # force some exact ties across the two sets
        want = np.mean((a[:, None] > b[None, :]) + 0.5 * (a[:, None] == b[None, :]))
        assert auroc(a, b) == pytest.approx(want, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            auroc(np.array([]), np.array([1.0]))


def toy_calibration():
    mean = np.array([0.0, -2.0, -4.0])
    std = np.array([1.0, 2.0, 0.0])
    count = np.array([10, 10, 10])
    raw_mean = np.exp(mean)
    raw_std = np.array([0.5, 0.5, 0.5])
    return Calibration(mean, std, count, raw_mean, raw_std, tau=-6.25)


class TestCalibration:
    def test_z_centers_and_scales(self):
        calib = toy_calibration()
        assert calib.z(-2.0, 1) == 0.0
        assert calib.z(0.0, 1) == 1.0
        assert calib.z(-4.0, 1) == -1.0

    def test_z_zero_std_floored(self):
        calib = toy_calibration()
        # bucket 2 has std 0; the floor keeps z finite
        assert calib.z(-3.0, 2) == pytest.approx(1.0 / 1e-6)

    def test_z_raw_uses_exponentiated_likelihood(self):
        calib = toy_calibration()
        want = (np.exp(-2.0) - np.exp(-2.0)) / 0.5
        assert calib.z(-2.0, 1, use_raw=True) == pytest.approx(want)

    def test_z_unknown_bucket_rejected(self):
        with pytest.raises(IndexError):
            toy_calibration().z(0.0, 3)

    def test_save_load_round_trip(self, tmp_path):
        calib = toy_calibration()
        path = str(tmp_path / "calibration.txt")
        calib.save(path)
        back = Calibration.load(path)
        np.testing.assert_array_equal(back.mean, calib.mean)
        np.testing.assert_array_equal(back.std, calib.std)
        np.testing.assert_array_equal(back.count, calib.count)
        np.testing.assert_array_equal(back.raw_mean, calib.raw_mean)
        np.testing.assert_array_equal(back.raw_std, calib.raw_std)
        assert back.tau == calib.tau

    def test_load_rejects_non_calibration(self, tmp_path):
        path = tmp_path / "junk.txt"
        path.write_text("definitely not it\n")
        with pytest.raises(ValueError):
            Calibration.load(str(path))


class StubDetector:
    """log_prob = first observed value (or first value when mask is empty);
    lets calibrate() be tested against known standard-normal quantiles."""

    def __init__(self):
        self.calibration = None

    def log_prob(self, values, mask_bits):
        values = np.atleast_2d(values)
        return values[:, 0].astype(np.float64)


class TestCalibrate:
    def test_tau_is_low_quantile_of_indist(self):
        rng = np.random.default_rng(8)
        X_val = rng.standard_normal((20000, 4))
        stub = StubDetector()
        calib = calibrate(stub, X_val, np.random.default_rng(1),
                          samples_per_bucket=2000)
        from scipy.stats import norm
        assert calib.tau == pytest.approx(norm.ppf(TAU_PERCENTILE / 100.0), abs=0.06)
        assert stub.calibration is calib

    def test_bucket_moments_near_standard_normal(self):
        rng = np.random.default_rng(8)
        X_val = rng.standard_normal((20000, 4))
        calib = calibrate(StubDetector(), X_val, np.random.default_rng(1),
                          samples_per_bucket=2000)
        assert calib.mean.shape == (5,)
        np.testing.assert_allclose(calib.mean, 0.0, atol=0.1)
        np.testing.assert_allclose(calib.std, 1.0, atol=0.1)
        assert np.all(calib.count == 2000)

    def test_fresh_indist_fpr_matches_percentile(self):
        rng = np.random.default_rng(8)
        X_val = rng.standard_normal((20000, 4))
        stub = StubDetector()
        calib = calibrate(stub, X_val, np.random.default_rng(1),
                          samples_per_bucket=2000)
        fresh = np.random.default_rng(2).standard_normal((10000, 4))
        fpr = np.mean(stub.log_prob(fresh, np.ones_like(fresh)) < calib.tau)
        assert fpr == pytest.approx(TAU_PERCENTILE / 100.0, abs=0.01)


@pytest.fixture(scope="module")
def small_detector():
    rng = np.random.default_rng(12)
    X = rng.standard_normal((3000, 2))
    schedule = NoiseSchedule.geometric(3, 1.0, 0.1)
    score = train_score_model(
        X, schedule, ScoreTrainConfig(hidden=(64, 64), steps=1200, seed=0))
    mrng = np.random.default_rng(3)
    masks = sample_masks(mrng, 2000, 2).astype(np.float64)
    rows = X[mrng.integers(0, len(X), size=2000)]
    stats = score.summary_stats(rows, masks)
    dose = train_dose(stats, masks, DoseTrainConfig(hidden=(32, 32), steps=1200, seed=0))
    det = Detector(score, dose)
    calibrate(det, X[:1500], np.random.default_rng(9), samples_per_bucket=300)
    return det, X


class TestDetector:
    def test_uncalibrated_decisions_rejected(self, small_detector):
        det, X = small_detector
        bare = Detector(det.score_model, det.dose)
        with pytest.raises(RuntimeError):
            bare.is_ood(X[:1], np.ones((1, 2)))
        with pytest.raises(RuntimeError):
            bare.reward(X[0], np.ones(2), sign=1, beta=1.0)

    def test_log_prob_finite_on_indist(self, small_detector):
        det, X = small_detector
        lp = det.log_prob(X[:50], np.ones((50, 2)))
        assert lp.shape == (50,)
        assert np.all(np.isfinite(lp))

    def test_far_ood_flagged(self, small_detector):
        det, _ = small_detector
        assert det.is_ood(np.array([8.0, -8.0]), np.ones(2))[0]

    def test_shifted_scores_lower_on_average(self, small_detector):
        det, X = small_detector
        masks = np.ones((200, 2))
        lp_in = det.log_prob(X[:200], masks)
        lp_out = det.log_prob(X[:200] + 4.0, masks)
        assert lp_out.mean() < lp_in.mean() - 1.0

    def test_reward_sign_flip_negates(self, small_detector):
        det, X = small_detector
        plus = det.reward(X[0], np.ones(2), sign=1, beta=1.5)
        minus = det.reward(X[0], np.ones(2), sign=-1, beta=1.5)
        assert plus == -minus

    def test_reward_scales_with_beta(self, small_detector):
        det, X = small_detector
        one = det.reward(X[0], np.ones(2), sign=1, beta=1.0)
        three = det.reward(X[0], np.ones(2), sign=1, beta=3.0)
        assert three == pytest.approx(3.0 * one)

    def test_reward_zero_beta_short_circuits(self, small_detector):
        det, X = small_detector
        bare = Detector(det.score_model, det.dose)  # no calibration needed
        assert bare.reward(X[0], np.ones(2), sign=1, beta=0.0) == 0.0

    def test_reward_bad_sign_rejected(self, small_detector):
        det, X = small_detector
        with pytest.raises(ValueError):
            det.reward(X[0], np.ones(2), sign=0, beta=1.0)
