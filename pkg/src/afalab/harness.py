"""Episode runner, baselines and evaluation protocols.

Per-episode flow: the oracle supplies side information, a policy picks the
next feature, the environment reveals it with acquisition cost, the oracle
scores the realized information gain. After the budget is spent, a terminal
prediction is rewarded and (optionally) the OOD detector scores the
acquired subset.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .agent import HierarchicalAgent
from .detector import Detector, auroc
from .env import AcquisitionEnv, EpisodeConfig, PartialState
from .oracle import AuxiliaryInfo, GaussianMixtureOracle
from .tasks import Dataset, Instance


@dataclass(frozen=True)
class StepRecord:
    feature: int
    r_e: float
    r_m: float


@dataclass
class EpisodeTrace:
    steps: list[StepRecord]
    final_state: PartialState
    prediction: object
    r_p: float
    r_d: float = 0.0
    detector_log_prob: float | None = None
    correct: bool | None = None
    mse: float | None = None

    @property
    def total_reward(self) -> float:
        return sum(s.r_e + s.r_m for s in self.steps) + self.r_p + self.r_d

    @property
    def acquired(self) -> list[int]:
        return [s.feature for s in self.steps]


class RandomPolicy:
    """Uniform over unobserved features."""

    def select(self, state: PartialState, aux: AuxiliaryInfo,
               rng: np.random.Generator) -> int:
        return int(rng.choice(state.mask.unobserved))


class GreedyPolicy:
    """One-step lookahead on the expected posterior KL; ties go to the
    lowest feature index (np.argmax keeps the first maximum)."""

    def __init__(self, oracle: GaussianMixtureOracle, n_samples: int = 128):
        self.oracle = oracle
        self.n_samples = n_samples

    def select(self, state: PartialState, aux: AuxiliaryInfo,
               rng: np.random.Generator) -> int:
        utils = self.oracle.greedy_utilities(
            state.values, state.mask, rng, self.n_samples)
        u = state.mask.unobserved
        return int(u[np.argmax(utils[u])])


class AgentPolicy:
    """Trained hierarchical agent; deterministic argmax by default."""

    def __init__(self, agent: HierarchicalAgent, deterministic: bool = True):
        self.agent = agent
        self.deterministic = deterministic

    def select(self, state: PartialState, aux: AuxiliaryInfo,
               rng: np.random.Generator) -> int:
        return self.agent.select(state, aux, rng,
                                 deterministic=self.deterministic).feature


def run_episode(instance: Instance, oracle: GaussianMixtureOracle, policy,
                episode_config: EpisodeConfig, rng: np.random.Generator,
                detector: Detector | None = None, detector_sign: int = 1,
                detector_beta: float = 0.0, detector_raw: bool = False
                ) -> EpisodeTrace:
    """Run one budgeted episode to termination and score it."""
    env = AcquisitionEnv(instance, episode_config)
    state = env.reset()
    steps: list[StepRecord] = []
    for _ in range(episode_config.budget):
        aux = oracle.query(state.values, state.mask, rng)
        feature = int(policy.select(state, aux, rng))
        prev_mask = state.mask
        state, r_e = env.step(feature)
        if episode_config.task == "reconstruction":
            r_m = oracle.air_intermediate_reward(instance.values, prev_mask, feature)
        else:
            r_m = oracle.intermediate_reward(state.values, prev_mask, feature)
        steps.append(StepRecord(feature, r_e, r_m))

    if episode_config.task == "reconstruction":
        prediction = oracle.predict_reconstruction(state.values, state.mask)
        r_p = env.final_reward(prediction)
        trace = EpisodeTrace(steps, state, prediction, r_p, mse=-r_p)
    else:
        posterior = oracle.posterior(state.values, state.mask)
        if episode_config.loss == "zero_one":
            prediction = int(np.argmax(posterior))
            r_p = env.final_reward(prediction)
        else:
            prediction = posterior
            r_p = env.final_reward(posterior)
        trace = EpisodeTrace(steps, state, prediction, r_p,
                             correct=bool(int(np.argmax(posterior)) == instance.label))

    if detector is not None:
        mask_bits = state.mask.as_float()
        trace.detector_log_prob = float(detector.log_prob(state.values, mask_bits)[0])
        if detector_beta > 0.0:
            trace.r_d = detector.reward(state.values, mask_bits, detector_sign,
                                        detector_beta, use_raw=detector_raw)
    return trace


@dataclass
class EvalResult:
    accuracy: float | None = None
    mse: float | None = None
    mean_return: float = 0.0
    detector_log_probs: np.ndarray | None = None
    traces: list[EpisodeTrace] = field(default_factory=list)


def evaluate_policy(policy, oracle: GaussianMixtureOracle, instances: list[Instance],
                    episode_config: EpisodeConfig, rng: np.random.Generator,
                    detector: Detector | None = None,
                    keep_traces: bool = False) -> EvalResult:
    correct: list[bool] = []
    mses: list[float] = []
    returns: list[float] = []
    logps: list[float] = []
    traces: list[EpisodeTrace] = []
    for instance in instances:
        trace = run_episode(instance, oracle, policy, episode_config, rng,
                            detector=detector)
        returns.append(trace.total_reward)
        if trace.correct is not None:
            correct.append(trace.correct)
        if trace.mse is not None:
            mses.append(trace.mse)
        if trace.detector_log_prob is not None:
            logps.append(trace.detector_log_prob)
        if keep_traces:
            traces.append(trace)
    return EvalResult(
        accuracy=float(np.mean(correct)) if correct else None,
        mse=float(np.mean(mses)) if mses else None,
        mean_return=float(np.mean(returns)),
        detector_log_probs=np.array(logps) if logps else None,
        traces=traces,
    )


def prior_argmax_accuracy(oracle: GaussianMixtureOracle, instances: list[Instance]) -> float:
    """Accuracy of predicting the prior argmax with zero acquisitions."""
    guess = int(np.argmax(oracle.spec.priors))
    return float(np.mean([inst.label == guess for inst in instances]))


def random_policy_eval(oracle: GaussianMixtureOracle, instances: list[Instance],
                       budgets: list[int], episode_config: EpisodeConfig,
                       rng: np.random.Generator, repeats: int = 5) -> dict[int, float]:
    """Mean metric of the uniform-random baseline, averaged over repeats.

    Budget 0 is allowed here only and scores the prior prediction directly.
    Returns accuracy for classification episodes and MSE for reconstruction.
    """
    out: dict[int, float] = {}
    for budget in budgets:
        if budget == 0:
            if episode_config.task == "reconstruction":
                vals = np.array([
                    np.mean((oracle.predict_reconstruction(
                        np.zeros(inst.values.size),
                        _empty_mask(inst.values.size)) - inst.values) ** 2)
                    for inst in instances])
                out[0] = float(vals.mean())
            else:
                out[0] = prior_argmax_accuracy(oracle, instances)
            continue
        cfg = EpisodeConfig(budget=budget, alpha=episode_config.alpha,
                            costs=episode_config.costs, loss=episode_config.loss,
                            task=episode_config.task)
        scores = []
        for _ in range(repeats):
            res = evaluate_policy(RandomPolicy(), oracle, instances, cfg, rng)
            scores.append(res.mse if episode_config.task == "reconstruction"
                          else res.accuracy)
        out[budget] = float(np.mean(scores))
    return out


def _empty_mask(d: int):
    from .env import ObservationMask
    return ObservationMask.empty(d)


def greedy_policy_eval(oracle: GaussianMixtureOracle, instances: list[Instance],
                       budgets: list[int], episode_config: EpisodeConfig,
                       rng: np.random.Generator, n_samples: int = 128) -> dict[int, float]:
    out: dict[int, float] = {}
    for budget in budgets:
        cfg = EpisodeConfig(budget=budget, alpha=episode_config.alpha,
                            costs=episode_config.costs, loss=episode_config.loss,
                            task=episode_config.task)
        res = evaluate_policy(GreedyPolicy(oracle, n_samples), oracle, instances, cfg, rng)
        out[budget] = res.mse if episode_config.task == "reconstruction" else res.accuracy
    return out


@dataclass
class OodEvalResult:
    auroc: float
    in_log_probs: np.ndarray
    ood_log_probs: np.ndarray

    def false_negative_rate(self, tau: float) -> float:
        """Fraction of OOD episodes whose subset still looks in-distribution."""
        return float(np.mean(self.ood_log_probs >= tau))

    def false_positive_rate(self, tau: float) -> float:
        return float(np.mean(self.in_log_probs < tau))


def ood_eval(detector: Detector, policy, oracle: GaussianMixtureOracle,
             in_instances: list[Instance], ood_instances: list[Instance],
             episode_config: EpisodeConfig, rng: np.random.Generator) -> OodEvalResult:
    """Run the same acquisition policy on both sets and compare terminal
    log-probs. The detector arrives frozen; nothing here trains it, and the
    oracle/policy side never learns which instances are OOD."""
    in_res = evaluate_policy(policy, oracle, in_instances, episode_config, rng,
                             detector=detector)
    ood_res = evaluate_policy(policy, oracle, ood_instances, episode_config, rng,
                              detector=detector)
    return OodEvalResult(
        auroc=auroc(in_res.detector_log_probs, ood_res.detector_log_probs),
        in_log_probs=in_res.detector_log_probs,
        ood_log_probs=ood_res.detector_log_probs,
    )


# ---------------------------------------------------------------------------
# Metrics records.
# ---------------------------------------------------------------------------

METRIC_FIELDS = ("policy", "budget", "seed", "accuracy", "mse", "mean_return", "auroc")


@dataclass(frozen=True)
class MetricsRecord:
    policy: str
    budget: int
    seed: int
    accuracy: float | None = None
    mse: float | None = None
    mean_return: float | None = None
    auroc: float | None = None

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in METRIC_FIELDS}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def write_metrics_csv(records: list[MetricsRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_FIELDS)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, f)) for f in METRIC_FIELDS])


def read_metrics_csv(path: str) -> list[MetricsRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(MetricsRecord(
                policy=row["policy"], budget=int(row["budget"]), seed=int(row["seed"]),
                accuracy=float(row["accuracy"]) if row["accuracy"] else None,
                mse=float(row["mse"]) if row["mse"] else None,
                mean_return=float(row["mean_return"]) if row["mean_return"] else None,
                auroc=float(row["auroc"]) if row["auroc"] else None,
            ))
    return records


def write_metrics_jsonl(records: list[MetricsRecord], path: str) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.as_dict(), sort_keys=True) + "\n")


def summarize_metrics(records: list[MetricsRecord]) -> list[dict]:
    """Per (policy, budget) mean/std across seeds for each metric."""
    keys = sorted({(r.policy, r.budget) for r in records})
    rows = []
    for policy, budget in keys:
        sub = [r for r in records if r.policy == policy and r.budget == budget]
        row: dict = {"policy": policy, "budget": budget, "n": len(sub)}
        for metric in ("accuracy", "mse", "mean_return", "auroc"):
            vals = [getattr(r, metric) for r in sub if getattr(r, metric) is not None]
            if vals:
                row[f"{metric}_mean"] = float(np.mean(vals))
                row[f"{metric}_std"] = float(np.std(vals))
        rows.append(row)
    return rows


def write_summary_csv(rows: list[dict], path: str) -> None:
    cols = ["policy", "budget", "n"]
    for metric in ("accuracy", "mse", "mean_return", "auroc"):
        cols += [f"{metric}_mean", f"{metric}_std"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in cols])
