"""Mutual-information action grouping for hierarchical acquisition.

Features are ranked by a validation estimate of I(x_i; y), chunked into K
contiguous groups of that ranking, and addressed by (group, slot) pairs.
This keeps each policy head small when d is large.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import ObservationMask
from .oracle import GaussianMixtureOracle

_LOG_2PI = float(np.log(2.0 * np.pi))


class MaskingError(ValueError):
    """No action is left to renormalize."""


def default_group_count(n_features: int) -> int:
    return int(math.ceil(math.sqrt(n_features)))


def _single_feature_log_posterior(oracle: GaussianMixtureOracle, x: np.ndarray,
                                  i: int) -> np.ndarray:
    """log p(y | x_i) for a column of values, vectorized over rows."""
    spec = oracle.spec
    mu = spec.means[:, i]                       # (C,)
    var = spec.covs[:, i, i]
    log_lik = -0.5 * (_LOG_2PI + np.log(var)[None, :]
                      + (x[:, None] - mu[None, :]) ** 2 / var[None, :])
    joint = np.log(spec.priors)[None, :] + log_lik
    joint -= joint.max(axis=1, keepdims=True)
    return joint - np.log(np.exp(joint).sum(axis=1, keepdims=True))


def estimate_mi(X: np.ndarray, y: np.ndarray, oracle: GaussianMixtureOracle,
                feature: int) -> float:
    """Validation-set estimate of I(x_i; y) in nats.

    Averages log p(y_n | x_{n,i}) - log p(y_n | empty) over the set, with
    both posteriors supplied by the exact oracle.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    log_post = _single_feature_log_posterior(oracle, X[:, feature], feature)
    log_prior = np.log(oracle.spec.priors)
    rows = np.arange(len(y))
    return float((log_post[rows, y] - log_prior[y]).mean())


def estimate_all_mi(X: np.ndarray, y: np.ndarray,
                    oracle: GaussianMixtureOracle) -> np.ndarray:
    return np.array([estimate_mi(X, y, oracle, i) for i in range(X.shape[1])])


@dataclass(frozen=True)
class ActionGrouping:
    """Fixed assignment of features to (group, slot) addresses.

    groups[k] lists feature indices in rank order; all groups have size
    slot_count except possibly a smaller final one.
    """

    n_features: int
    mi: np.ndarray
    groups: tuple[tuple[int, ...], ...]

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def slot_count(self) -> int:
        return len(self.groups[0])

    def group_size(self, k: int) -> int:
        return len(self.groups[k])

    def decode(self, k: int, n: int) -> int:
        """(group, slot) -> feature index; slots beyond a short final group
        are invalid."""
        if not 0 <= k < self.n_groups:
            raise IndexError(f"group {k} out of range")
        if not 0 <= n < len(self.groups[k]):
            raise IndexError(f"slot {n} invalid for group {k}")
        return self.groups[k][n]

    def encode(self, feature: int) -> tuple[int, int]:
        for k, members in enumerate(self.groups):
            if feature in members:
                return k, members.index(feature)
        raise IndexError(f"feature {feature} not present in grouping")

    def member_matrix(self) -> np.ndarray:
        """(K, N) feature indices with -1 padding for short groups."""
        out = np.full((self.n_groups, self.slot_count), -1, dtype=np.int64)
        for k, members in enumerate(self.groups):
            out[k, : len(members)] = members
        return out


def build_grouping(mi: np.ndarray, n_groups: int | None = None) -> ActionGrouping:
    """Sort features by MI (descending, ties to the lower index) and chunk.

    Group sizes are ceil(d / n_groups); a smaller final group absorbs the
    remainder, so the effective group count can be below the request.
    """
    mi = np.asarray(mi, dtype=np.float64)
    d = mi.shape[0]
    if d < 1:
        raise ValueError("need at least one feature")
    k = default_group_count(d) if n_groups is None else int(n_groups)
    if not 1 <= k <= d:
        raise ValueError(f"group count must be in [1, {d}], got {k}")
    order = np.lexsort((np.arange(d), -mi))  # descending MI, ascending index on ties
    size = math.ceil(d / k)
    groups = tuple(
        tuple(int(f) for f in order[lo: lo + size]) for lo in range(0, d, size)
    )
    return ActionGrouping(n_features=d, mi=mi.copy(), groups=groups)


def mask_probs(group_probs: np.ndarray, member_probs: np.ndarray,
               mask: ObservationMask, grouping: ActionGrouping
               ) -> tuple[np.ndarray, np.ndarray]:
    """Zero out invalid actions and renormalize.

    Observed features get member probability 0; groups with no unobserved
    member get group probability 0; padding slots are always 0. Raises
    MaskingError when every feature is observed.
    """
    if mask.n_features != grouping.n_features:
        raise ValueError("mask and grouping disagree on feature count")
    if mask.unobserved.size == 0:
        raise MaskingError("all features observed; no action can be renormalized")
    gp = np.array(group_probs, dtype=np.float64, copy=True)
    mp = np.array(member_probs, dtype=np.float64, copy=True)
    if gp.shape != (grouping.n_groups,) or mp.shape != (grouping.n_groups, grouping.slot_count):
        raise ValueError("probability shapes do not match the grouping")
    for k, members in enumerate(grouping.groups):
        for n in range(grouping.slot_count):
            if n >= len(members) or mask.covers(members[n]):
                mp[k, n] = 0.0
        row = mp[k].sum()
        if row > 0.0:
            mp[k] /= row
        else:
            gp[k] = 0.0
    total = gp.sum()
    if total <= 0.0:
        raise MaskingError("no unmasked group has probability mass")
    gp /= total
    return gp, mp


def save_grouping(grouping: ActionGrouping, path: str) -> None:
    """Text artifact: one `feature<TAB>mi<TAB>group` line per feature, in
    rank order so the loader can rebuild slots."""
    with open(path, "w") as fh:
        fh.write("# feature\tmi\tgroup\n")
        for k, members in enumerate(grouping.groups):
            for f in members:
                fh.write("%d\t%.17g\t%d\n" % (f, grouping.mi[f], k))


def load_grouping(path: str) -> ActionGrouping:
    feats: list[int] = []
    mis: list[float] = []
    gids: list[int] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            f, m, g = line.split("\t")
            feats.append(int(f))
            mis.append(float(m))
            gids.append(int(g))
    if not feats:
        raise ValueError(f"no grouping rows found in {path}")
    d = len(feats)
    mi = np.zeros(d)
    groups: dict[int, list[int]] = {}
    for f, m, g in zip(feats, mis, gids):
        mi[f] = m
        groups.setdefault(g, []).append(f)
    ordered = tuple(tuple(groups[k]) for k in sorted(groups))
    return ActionGrouping(n_features=d, mi=mi, groups=ordered)
