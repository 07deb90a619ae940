"""Active feature acquisition with an exact mixture oracle, hierarchical PPO,
and masked score-based OOD detection."""

from .agent import AgentConfig, HierarchicalAgent, collect_rollouts, ppo_update, train_agent
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import Config, ConfigError, build_config
from .detector import Calibration, Detector, auroc, calibrate
from .dose import DoseModel, DoseTrainConfig, train_dose
from .env import (AcquisitionEnv, BudgetExhaustedError, EpisodeConfig,
                  EpisodeContractError, ObservationMask, PartialState,
                  RepeatAcquisitionError)
from .grouping import (ActionGrouping, MaskingError, build_grouping,
                       estimate_all_mi, estimate_mi, load_grouping, mask_probs,
                       save_grouping)
from .harness import (AgentPolicy, EpisodeTrace, EvalResult, GreedyPolicy,
                      MetricsRecord, OodEvalResult, RandomPolicy,
                      evaluate_policy, greedy_policy_eval, ood_eval,
                      random_policy_eval, run_episode, summarize_metrics)
from .manifest import ManifestError, RunManifest
from .oracle import AuxiliaryInfo, GaussianMixtureOracle
from .scorenet import (NoiseSchedule, Scaler, ScoreModel, ScoreTrainConfig,
                       analytic_gaussian_score, low_cardinality_mix,
                       sample_masks, train_score_model)
from .tasks import (Dataset, Instance, SyntheticTaskSpec, TaskSpecError,
                    block_reconstruction_task, generate_task,
                    held_out_class_spec, shifted_ood_spec,
                    standard_classification_task)

__version__ = "0.1.0"

__all__ = [
    "AcquisitionEnv", "ActionGrouping", "AgentConfig", "AgentPolicy",
    "AuxiliaryInfo", "BudgetExhaustedError", "Calibration", "CheckpointError",
    "Config", "ConfigError", "Dataset", "Detector", "DoseModel",
    "DoseTrainConfig", "EpisodeConfig", "EpisodeContractError", "EpisodeTrace",
    "EvalResult", "GaussianMixtureOracle", "GreedyPolicy", "HierarchicalAgent",
    "Instance", "ManifestError", "MaskingError", "MetricsRecord",
    "NoiseSchedule", "ObservationMask", "OodEvalResult", "PartialState",
    "RandomPolicy", "RepeatAcquisitionError", "RunManifest", "Scaler",
    "ScoreModel", "ScoreTrainConfig", "SyntheticTaskSpec", "TaskSpecError",
    "analytic_gaussian_score", "auroc", "block_reconstruction_task",
    "build_config", "build_grouping", "calibrate", "collect_rollouts",
    "estimate_all_mi", "estimate_mi", "evaluate_policy", "generate_task",
    "greedy_policy_eval", "held_out_class_spec", "load_checkpoint",
    "load_grouping", "low_cardinality_mix", "mask_probs", "ood_eval", "ppo_update",
    "random_policy_eval", "run_episode", "sample_masks", "save_checkpoint",
    "save_grouping", "shifted_ood_spec", "standard_classification_task",
    "summarize_metrics", "train_agent", "train_dose", "train_score_model",
]
