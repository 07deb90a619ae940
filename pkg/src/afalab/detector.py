"""Partially observed OOD detection: score stats -> conditional density ->
calibrated decisions and rewards.

The detector never sees OOD data: calibration consumes in-distribution
validation episodes only, and the decision threshold is a low quantile of
their log-probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .dose import DoseModel
from .scorenet import ScoreModel, sample_masks

TAU_PERCENTILE = 5.0


def auroc(in_scores: np.ndarray, ood_scores: np.ndarray) -> float:
    """P(random in-dist score > random OOD score), ties counted half."""
    in_scores = np.asarray(in_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    if in_scores.size == 0 or ood_scores.size == 0:
        raise ValueError("both score sets must be non-empty")
    ranks = rankdata(np.concatenate([in_scores, ood_scores]))
    n_in, n_out = in_scores.size, ood_scores.size
    u = ranks[:n_in].sum() - n_in * (n_in + 1) / 2.0
    return float(u / (n_in * n_out))


@dataclass(frozen=True)
class Calibration:
    """Per-mask-cardinality moments of in-dist log-probs, plus the threshold.

    Buckets are indexed by |m| from 0 to d. raw_* moments cover the
    exponentiated likelihood for the optional raw reward form.
    """

    mean: np.ndarray
    std: np.ndarray
    count: np.ndarray
    raw_mean: np.ndarray
    raw_std: np.ndarray
    tau: float

    def z(self, log_prob: float, cardinality: int, use_raw: bool = False) -> float:
        if not 0 <= cardinality < self.mean.size:
            raise IndexError(f"no calibration bucket for cardinality {cardinality}")
        if use_raw:
            value = float(np.exp(min(log_prob, 700.0)))
            mu, sd = self.raw_mean[cardinality], self.raw_std[cardinality]
        else:
            value, mu, sd = float(log_prob), self.mean[cardinality], self.std[cardinality]
        return (value - mu) / max(sd, 1e-6)

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("# afalab-calibration v1\n")
            fh.write("tau %.17g\n" % self.tau)
            for k in range(self.mean.size):
                fh.write("bucket %d %.17g %.17g %d %.17g %.17g\n" % (
                    k, self.mean[k], self.std[k], int(self.count[k]),
                    self.raw_mean[k], self.raw_std[k]))

    @classmethod
    def load(cls, path: str) -> "Calibration":
        tau = None
        rows: dict[int, tuple[float, float, int, float, float]] = {}
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if parts[0] == "tau":
                    tau = float(parts[1])
                elif parts[0] == "bucket":
                    k = int(parts[1])
                    rows[k] = (float(parts[2]), float(parts[3]), int(parts[4]),
                               float(parts[5]), float(parts[6]))
        if tau is None or not rows:
            raise ValueError(f"{path}: not a calibration artifact")
        size = max(rows) + 1
        mean = np.zeros(size)
        std = np.zeros(size)
        count = np.zeros(size, dtype=np.int64)
        raw_mean = np.zeros(size)
        raw_std = np.zeros(size)
        for k, (m, s, c, rm, rs) in rows.items():
            mean[k], std[k], count[k], raw_mean[k], raw_std[k] = m, s, c, rm, rs
        return cls(mean, std, count, raw_mean, raw_std, tau)


class Detector:
    """Score model + statistic density + calibration, glued together."""

    def __init__(self, score_model: ScoreModel, dose: DoseModel,
                 calibration: Calibration | None = None):
        self.score_model = score_model
        self.dose = dose
        self.calibration = calibration

    def log_prob(self, values: np.ndarray, mask_bits: np.ndarray) -> np.ndarray:
        """log p(stats(values, mask) | mask); accepts single rows or batches."""
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        mask_bits = np.atleast_2d(np.asarray(mask_bits, dtype=np.float64))
        stats = self.score_model.summary_stats(values, mask_bits)
        return self.dose.log_prob(stats, mask_bits)

    def is_ood(self, values: np.ndarray, mask_bits: np.ndarray,
               tau: float | None = None) -> np.ndarray:
        """Flag rows whose log-prob falls below the threshold."""
        if tau is None:
            tau = self._require_calibration().tau
        return self.log_prob(values, mask_bits) < tau

    def reward(self, values: np.ndarray, mask_bits: np.ndarray, sign: int,
               beta: float, use_raw: bool = False) -> float:
        """Terminal detector reward r_d = sign * beta * z for one state."""
        if sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")
        if beta == 0.0:
            return 0.0
        calib = self._require_calibration()
        logp = float(self.log_prob(values, mask_bits)[0])
        card = int(np.asarray(mask_bits, dtype=bool).sum())
        return float(sign * beta * calib.z(logp, card, use_raw=use_raw))

    def _require_calibration(self) -> Calibration:
        if self.calibration is None:
            raise RuntimeError("detector is not calibrated")
        return self.calibration


def calibrate(detector: Detector, X_val: np.ndarray, rng: np.random.Generator,
              samples_per_bucket: int = 400) -> Calibration:
    """Fit per-cardinality moments and the tau threshold on in-dist data.

    Masks of each cardinality are sampled uniformly; equal bucket counts make
    the pooled sample match p(m), so tau is the TAU_PERCENTILE quantile of
    validation log-probs under the training mask distribution.
    """
    X_val = np.asarray(X_val, dtype=np.float64)
    n, d = X_val.shape
    means, stds, counts, raw_means, raw_stds = [], [], [], [], []
    pooled: list[np.ndarray] = []
    for card in range(d + 1):
        idx = rng.integers(0, n, size=samples_per_bucket)
        scores = rng.random((samples_per_bucket, d))
        masks = np.zeros((samples_per_bucket, d), dtype=bool)
        if card > 0:
            keep = np.argsort(scores, axis=1, kind="stable")[:, :card]
            rows = np.arange(samples_per_bucket)[:, None]
            masks[rows, keep] = True
        logp = detector.log_prob(X_val[idx], masks.astype(np.float64))
        raw = np.exp(np.minimum(logp, 700.0))
        means.append(logp.mean())
        stds.append(logp.std())
        counts.append(samples_per_bucket)
        raw_means.append(raw.mean())
        raw_stds.append(raw.std())
        pooled.append(logp)
    tau = float(np.percentile(np.concatenate(pooled), TAU_PERCENTILE))
    calib = Calibration(np.array(means), np.array(stds), np.array(counts),
                        np.array(raw_means), np.array(raw_stds), tau)
    detector.calibration = calib
    return calib


__all__ = [
    "auroc", "Calibration", "Detector", "calibrate", "sample_masks",
]
