"""Exact conditional oracle for Gaussian-mixture tasks.

For class-conditional Gaussians every quantity the acquisition loop needs has
a closed form: the class posterior given any observed subset, the 1-D
conditional of a candidate feature, entropies (in nats), and conditional
moments of the unobserved block. Only expectations over a candidate's value
are Monte Carlo; everything inside the expectation is exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from .env import ObservationMask
from .tasks import SyntheticTaskSpec

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class AuxiliaryInfo:
    """Side information handed to the agent each step.

    Vectors are full length with zeros at observed positions, so the policy
    network sees a fixed layout regardless of the mask.
    """

    posterior: np.ndarray
    predicted_label: int
    info_gain: np.ndarray
    imputed_mean: np.ndarray
    imputed_var: np.ndarray


@dataclass
class _Context:
    """Per-(values, mask) conditional quantities shared across oracle ops."""

    observed: np.ndarray
    unobserved: np.ndarray
    log_post: np.ndarray          # (C,)
    cond_mean: np.ndarray         # (C, |u|) conditional means of unobserved dims
    cond_var: np.ndarray          # (C, |u|) conditional marginal variances
    cond_cov: list[np.ndarray]    # per class (|u|, |u|) conditional covariance


def _entropy(p: np.ndarray) -> float:
    return float(-xlogy(p, p).sum())


class GaussianMixtureOracle:
    """Exact dynamics model M for a SyntheticTaskSpec."""

    def __init__(self, spec: SyntheticTaskSpec, mc_samples: int = 256, seed: int = 0):
        if mc_samples < 1:
            raise ValueError("mc_samples must be positive")
        self.spec = spec
        self.mc_samples = int(mc_samples)
        self._rng = np.random.default_rng(np.random.SeedSequence((spec.seed, seed, 0x0AC1E)))
        self._log_priors = np.log(spec.priors)

    # -- core conditionals --------------------------------------------------

    def _context(self, values: np.ndarray, mask: ObservationMask) -> _Context:
        spec = self.spec
        o = mask.observed
        u = mask.unobserved
        x_o = np.asarray(values, dtype=np.float64)[o]
        c_count = spec.n_classes
        log_lik = np.zeros(c_count)
        cond_mean = np.empty((c_count, u.size))
        cond_var = np.empty((c_count, u.size))
        cond_cov: list[np.ndarray] = []
        for c in range(c_count):
            mu, cov = spec.means[c], spec.covs[c]
            if o.size == 0:
                cond_mean[c] = mu[u]
                block = cov[np.ix_(u, u)]
                cond_cov.append(block)
                cond_var[c] = np.diag(block)
                continue
            s_oo = cov[np.ix_(o, o)]
            chol = np.linalg.cholesky(s_oo)
            diff = x_o - mu[o]
            w = np.linalg.solve(chol, diff)
            log_lik[c] = -0.5 * (
                o.size * _LOG_2PI + 2.0 * np.log(np.diag(chol)).sum() + w @ w
            )
            if u.size:
                s_uo = cov[np.ix_(u, o)]
                gain = np.linalg.solve(chol.T, np.linalg.solve(chol, s_uo.T)).T
                cond_mean[c] = mu[u] + gain @ diff
                block = cov[np.ix_(u, u)] - gain @ s_uo.T
                cond_cov.append(block)
                cond_var[c] = np.diag(block)
            else:
                cond_cov.append(np.zeros((0, 0)))
        joint = self._log_priors + log_lik
        log_post = joint - logsumexp(joint)
        return _Context(o, u, log_post, cond_mean, cond_var, cond_cov)

    # -- posteriors and entropies -------------------------------------------

    def posterior(self, values: np.ndarray, mask: ObservationMask) -> np.ndarray:
        """p(y | x_o); equals the priors for an empty mask."""
        return np.exp(self._context(values, mask).log_post)

    def conditional_entropy(self, values: np.ndarray, mask: ObservationMask) -> float:
        """H(y | x_o) in nats."""
        return _entropy(np.exp(self._context(values, mask).log_post))

    # -- candidate-feature expectations ---------------------------------------

    def _candidate_samples(self, ctx: _Context, rng: np.random.Generator,
                           n_samples: int) -> tuple[np.ndarray, np.ndarray]:
        """Draw x_j ~ p(x_j | x_o) for every unobserved j at once.

        Returns draws of shape (|u|, S) and per-draw class log-updates of
        shape (|u|, S, C).
        """
        post = np.exp(ctx.log_post)
        n_u = ctx.unobserved.size
        comp = rng.choice(self.spec.n_classes, size=(n_u, n_samples), p=post)
        eps = rng.standard_normal((n_u, n_samples))
        rows = np.arange(n_u)[:, None]
        mu_sel = ctx.cond_mean.T[rows, comp]     # (|u|, S)
        sd_sel = np.sqrt(ctx.cond_var.T[rows, comp])
        draws = mu_sel + sd_sel * eps
        # log N(draw; mu_c, var_c) for every class c
        mu_all = ctx.cond_mean.T[:, None, :]     # (|u|, 1, C)
        var_all = ctx.cond_var.T[:, None, :]
        log_upd = -0.5 * (
            _LOG_2PI + np.log(var_all) + (draws[:, :, None] - mu_all) ** 2 / var_all
        )
        return draws, log_upd

    def _posterior_updates(self, ctx: _Context, log_upd: np.ndarray) -> np.ndarray:
        """Normalized p(y | x_o, x_j) for each (candidate, draw)."""
        log_new = ctx.log_post[None, None, :] + log_upd
        log_new -= logsumexp(log_new, axis=-1, keepdims=True)
        return np.exp(log_new)

    def expected_info_gains(self, values: np.ndarray, mask: ObservationMask,
                            rng: np.random.Generator | None = None,
                            n_samples: int | None = None) -> np.ndarray:
        """U_j = H(y|x_o) - E_{x_j}[H(y|x_o,x_j)] for every unobserved j.

        Full-length vector, zeros at observed slots. Skips the Monte Carlo
        pass when the posterior is already (numerically) one-hot.
        """
        rng = self._rng if rng is None else rng
        n_samples = self.mc_samples if n_samples is None else int(n_samples)
        ctx = self._context(values, mask)
        out = np.zeros(mask.n_features)
        post = np.exp(ctx.log_post)
        h0 = _entropy(post)
        if ctx.unobserved.size == 0 or h0 < 1e-12:
            return out
        _, log_upd = self._candidate_samples(ctx, rng, n_samples)
        p_new = self._posterior_updates(ctx, log_upd)
        h_new = -xlogy(p_new, p_new).sum(axis=-1)    # (|u|, S)
        out[ctx.unobserved] = h0 - h_new.mean(axis=1)
        return out

    def expected_info_gain(self, values: np.ndarray, mask: ObservationMask, j: int,
                           rng: np.random.Generator | None = None,
                           n_samples: int | None = None) -> float:
        if mask.covers(j):
            raise ValueError(f"feature {j} is already observed")
        return float(self.expected_info_gains(values, mask, rng, n_samples)[j])

    def greedy_utilities(self, values: np.ndarray, mask: ObservationMask,
                         rng: np.random.Generator | None = None,
                         n_samples: int | None = None) -> np.ndarray:
        """E_{x_j}[ KL(p(y|x_o,x_j) || p(y|x_o)) ] for every unobserved j.

        Full-length vector with zeros at observed slots; all zeros when the
        posterior is already one-hot.
        """
        rng = self._rng if rng is None else rng
        n_samples = self.mc_samples if n_samples is None else int(n_samples)
        ctx = self._context(values, mask)
        out = np.zeros(mask.n_features)
        post = np.exp(ctx.log_post)
        if ctx.unobserved.size == 0 or _entropy(post) < 1e-12:
            return out
        _, log_upd = self._candidate_samples(ctx, rng, n_samples)
        p_new = self._posterior_updates(ctx, log_upd)     # (|u|, S, C)
        log_ratio = (np.log(np.maximum(p_new, 1e-300))
                     - np.log(np.maximum(post, 1e-300))[None, None, :])
        kl = (p_new * log_ratio).sum(axis=-1)
        out[ctx.unobserved] = kl.mean(axis=1)
        return out

    def greedy_utility(self, values: np.ndarray, mask: ObservationMask, j: int,
                       rng: np.random.Generator | None = None,
                       n_samples: int | None = None) -> float:
        """E_{x_j}[ KL(p(y|x_o,x_j) || p(y|x_o)) ], Monte Carlo over x_j."""
        if mask.covers(j):
            raise ValueError(f"feature {j} is already observed")
        return float(self.greedy_utilities(values, mask, rng, n_samples)[j])

    # -- realized rewards ------------------------------------------------------

    def intermediate_reward(self, values: np.ndarray, mask_before: ObservationMask,
                            i: int) -> float:
        """Realized entropy drop H(y|x_o) - H(y|x_o, x_i); telescopes exactly."""
        mask_after = mask_before.with_feature(i)
        return (self.conditional_entropy(values, mask_before)
                - self.conditional_entropy(values, mask_after))

    def _conditional_block_logpdf(self, values: np.ndarray, mask: ObservationMask,
                                  target: np.ndarray) -> float:
        """log p(x_target = values[target] | x_o) under the mixture."""
        ctx = self._context(values, mask)
        pos = np.searchsorted(ctx.unobserved, target)
        x_t = np.asarray(values, dtype=np.float64)[target]
        parts = np.empty(self.spec.n_classes)
        for c in range(self.spec.n_classes):
            mu = ctx.cond_mean[c][pos]
            cov = ctx.cond_cov[c][np.ix_(pos, pos)]
            chol = np.linalg.cholesky(cov)
            w = np.linalg.solve(chol, x_t - mu)
            parts[c] = ctx.log_post[c] - 0.5 * (
                target.size * _LOG_2PI + 2.0 * np.log(np.diag(chol)).sum() + w @ w
            )
        return float(logsumexp(parts))

    def air_intermediate_reward(self, values: np.ndarray,
                                mask_before: ObservationMask, i: int) -> float:
        """Per-dimension log-likelihood improvement of the remaining
        unobserved block after acquiring feature i.

        With u the unobserved set before the step, the reward is
        log p(x_{u \\ i} | x_o, x_i) / (|u|-1) - log p(x_u | x_o) / |u|;
        the first term is defined as 0 when i was the last unobserved dim.
        The sum over an episode telescopes by construction.
        """
        if mask_before.covers(i):
            raise ValueError(f"feature {i} is already observed")
        u_before = mask_before.unobserved
        second = self._conditional_block_logpdf(values, mask_before, u_before)
        second /= u_before.size
        mask_after = mask_before.with_feature(i)
        u_after = mask_after.unobserved
        if u_after.size == 0:
            return -second
        first = self._conditional_block_logpdf(values, mask_after, u_after)
        first /= u_after.size
        return first - second

    # -- imputation and prediction ---------------------------------------------

    def impute(self, values: np.ndarray, mask: ObservationMask) -> tuple[np.ndarray, np.ndarray]:
        """Posterior-mixture mean and variance of each unobserved dim.

        Returns (means, variances) aligned with mask.unobserved; both are
        empty when everything is observed. Variances follow the law of
        total variance over the class posterior.
        """
        ctx = self._context(values, mask)
        if ctx.unobserved.size == 0:
            return np.zeros(0), np.zeros(0)
        post = np.exp(ctx.log_post)[:, None]
        mean = (post * ctx.cond_mean).sum(axis=0)
        second_moment = (post * (ctx.cond_var + ctx.cond_mean ** 2)).sum(axis=0)
        return mean, second_moment - mean ** 2

    def predict_label(self, values: np.ndarray, mask: ObservationMask) -> int:
        """Posterior argmax; ties resolve to the lowest class index."""
        return int(np.argmax(self.posterior(values, mask)))

    def predict_reconstruction(self, values: np.ndarray, mask: ObservationMask) -> np.ndarray:
        """Full-length vector: revealed values where observed, posterior
        means elsewhere."""
        out = np.asarray(values, dtype=np.float64).copy()
        mean, _ = self.impute(values, mask)
        out[mask.unobserved] = mean
        return out

    # -- one-call side information ----------------------------------------------

    def query(self, values: np.ndarray, mask: ObservationMask,
              rng: np.random.Generator | None = None) -> AuxiliaryInfo:
        """Bundle posterior, prediction, info gains and imputations."""
        d = mask.n_features
        post = self.posterior(values, mask)
        gains = self.expected_info_gains(values, mask, rng)
        mean_u, var_u = self.impute(values, mask)
        imputed_mean = np.zeros(d)
        imputed_var = np.zeros(d)
        imputed_mean[mask.unobserved] = mean_u
        imputed_var[mask.unobserved] = var_u
        return AuxiliaryInfo(
            posterior=post,
            predicted_label=int(np.argmax(post)),
            info_gain=gains,
            imputed_mean=imputed_mean,
            imputed_var=imputed_var,
        )
