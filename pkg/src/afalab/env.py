"""Budgeted feature-acquisition environment.

An episode reveals one hidden feature per step at cost -alpha * cost[i] and
ends after exactly `budget` acquisitions, when a terminal prediction is
scored. There is no early-stop action; the budget is the only terminator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tasks import Instance

LOSS_KINDS = ("cross_entropy", "zero_one")
TASK_KINDS = ("classification", "reconstruction")


class EpisodeContractError(RuntimeError):
    """An episode was driven outside its contract."""


class RepeatAcquisitionError(EpisodeContractError):
    """A feature was acquired twice."""


class BudgetExhaustedError(EpisodeContractError):
    """step() was called after the acquisition budget was spent."""


@dataclass(frozen=True)
class ObservationMask:
    """Immutable boolean mask over feature indices."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool).copy()
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @classmethod
    def empty(cls, n_features: int) -> "ObservationMask":
        return cls(np.zeros(n_features, dtype=bool))

    @classmethod
    def from_indices(cls, n_features: int, indices) -> "ObservationMask":
        bits = np.zeros(n_features, dtype=bool)
        bits[np.asarray(indices, dtype=int)] = True
        return cls(bits)

    @property
    def n_features(self) -> int:
        return self.bits.shape[0]

    @property
    def n_observed(self) -> int:
        return int(self.bits.sum())

    @property
    def observed(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    @property
    def unobserved(self) -> np.ndarray:
        return np.flatnonzero(~self.bits)

    def covers(self, i: int) -> bool:
        return bool(self.bits[i])

    def with_feature(self, i: int) -> "ObservationMask":
        if self.bits[i]:
            raise RepeatAcquisitionError(f"feature {i} is already observed")
        bits = self.bits.copy()
        bits[i] = True
        return ObservationMask(bits)

    def as_float(self) -> np.ndarray:
        return self.bits.astype(np.float64)


@dataclass(frozen=True)
class PartialState:
    """Mask plus the revealed values. Unobserved slots are zero-filled and
    carry no information; only entries under the mask are meaningful."""

    mask: ObservationMask
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).copy()
        values[~self.mask.bits] = 0.0
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_features(self) -> int:
        return self.mask.n_features


@dataclass(frozen=True)
class EpisodeConfig:
    """Episode-level knobs: budget, acquisition pricing, and scoring rule."""

    budget: int
    alpha: float = 0.01
    costs: np.ndarray | None = None
    loss: str = "cross_entropy"
    task: str = "classification"

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise EpisodeContractError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.task not in TASK_KINDS:
            raise EpisodeContractError(f"task must be one of {TASK_KINDS}, got {self.task!r}")
        if self.alpha < 0:
            raise EpisodeContractError("alpha must be nonnegative")

    def cost_of(self, i: int) -> float:
        if self.costs is None:
            return 1.0
        return float(self.costs[i])

    def validate_budget(self, n_features: int) -> None:
        if not 1 <= self.budget <= n_features:
            raise EpisodeContractError(
                f"budget must be in [1, {n_features}], got {self.budget}"
            )


class AcquisitionEnv:
    """Sequential environment around one hidden instance."""

    def __init__(self, instance: Instance, config: EpisodeConfig):
        config.validate_budget(instance.values.shape[0])
        self._instance = instance
        self.config = config
        self._state: PartialState | None = None

    @property
    def state(self) -> PartialState:
        if self._state is None:
            raise EpisodeContractError("episode not started; call reset()")
        return self._state

    @property
    def steps_taken(self) -> int:
        return self.state.mask.n_observed

    @property
    def done(self) -> bool:
        return self.steps_taken >= self.config.budget

    def reset(self) -> PartialState:
        d = self._instance.values.shape[0]
        self._state = PartialState(ObservationMask.empty(d), np.zeros(d))
        return self._state

    def step(self, feature: int) -> tuple[PartialState, float]:
        """Reveal one feature; returns the new state and r_e = -alpha*cost."""
        state = self.state
        if self.done:
            raise BudgetExhaustedError(
                f"budget {self.config.budget} already spent"
            )
        mask = state.mask.with_feature(int(feature))  # raises on repeats
        values = state.values.copy()
        values[feature] = self._instance.values[feature]
        self._state = PartialState(mask, values)
        r_e = -self.config.alpha * self.config.cost_of(int(feature))
        return self._state, r_e

    def revealed_value(self, feature: int) -> float:
        """True value of a feature that has been acquired."""
        if not self.state.mask.covers(feature):
            raise EpisodeContractError(f"feature {feature} has not been acquired")
        return float(self._instance.values[feature])

    def final_reward(self, prediction) -> float:
        """Terminal reward r_p = -loss(prediction, truth).

        classification/cross_entropy: prediction is a class-probability
        vector, r_p = log prediction[label]. classification/zero_one:
        prediction is a class index, r_p is 0 or -1. reconstruction:
        prediction is a full-length vector scored by MSE over the
        unobserved dims.
        """
        state = self.state
        if state.mask.n_observed != self.config.budget:
            raise EpisodeContractError(
                f"final_reward requires exactly {self.config.budget} acquisitions,"
                f" have {state.mask.n_observed}"
            )
        if self.config.task == "reconstruction":
            pred = np.asarray(prediction, dtype=np.float64)
            u = state.mask.unobserved
            if u.size == 0:
                return 0.0
            diff = pred[u] - self._instance.values[u]
            return float(-np.mean(diff * diff))
        label = self._instance.label
        if self.config.loss == "zero_one":
            return 0.0 if int(prediction) == label else -1.0
        probs = np.asarray(prediction, dtype=np.float64)
        p = max(float(probs[label]), 1e-300)  # guard log(0) from degenerate inputs
        return float(np.log(p))

    def truth(self) -> Instance:
        """The hidden instance. For oracle-side reward computation only."""
        return self._instance
