"""Command-line pipeline: gen-data, train score|dose|agent, eval, detect, report.

Exit codes: 0 success, 1 usage or configuration error, 2 missing or
inconsistent artifact dependency, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import os
import sys
import zlib

import numpy as np

from .agent import AgentConfig, HierarchicalAgent, train_agent
from .config import Config, ConfigError, build_config
from .detector import Calibration, Detector, calibrate
from .dose import DoseModel, DoseTrainConfig, train_dose
from .env import EpisodeConfig
from .grouping import build_grouping, estimate_all_mi, load_grouping, save_grouping
from .harness import (AgentPolicy, GreedyPolicy, MetricsRecord, evaluate_policy,
                      ood_eval, random_policy_eval, read_metrics_csv,
                      summarize_metrics, write_metrics_csv, write_metrics_jsonl,
                      write_summary_csv)
from .manifest import ManifestError, RunManifest
from .oracle import GaussianMixtureOracle
from .scorenet import (NoiseSchedule, ScoreModel, ScoreTrainConfig, sample_masks,
                       train_score_model)
from .tasks import (Dataset, TaskSpecError, generate_task, held_out_class_spec,
                    shifted_ood_spec, spec_from_config)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep exit-code policy in main()
        raise UsageError(message)


def _episode_config(cfg: Config, budget: int | None = None) -> EpisodeConfig:
    return EpisodeConfig(
        budget=cfg.get_int("env.budget") if budget is None else budget,
        alpha=cfg.get_float("env.alpha"),
        loss=cfg.get("env.loss"),
        task=cfg.get("env.task"),
    )


def _paths(cfg: Config) -> tuple[str, RunManifest]:
    run_dir = cfg.get("run.dir")
    os.makedirs(run_dir, exist_ok=True)
    return run_dir, RunManifest(run_dir)


def cmd_gen_data(cfg: Config) -> int:
    run_dir, manifest = _paths(cfg)
    spec = spec_from_config(cfg.values)
    train, val, test = generate_task(spec, cfg.get_int("data.n_train"),
                                     cfg.get_int("data.n_val"),
                                     cfg.get_int("data.n_test"))
    chash = cfg.hash()
    for name, split in (("data.train", train), ("data.val", val), ("data.test", test)):
        path = os.path.join(run_dir, name.split(".")[1] + ".csv")
        split.to_csv(path)
        manifest.record(name, path, chash, seed=spec.seed)
    n_ood = cfg.get_int("data.n_ood")
    if cfg.get("env.task") == "classification" and n_ood > 0:
        shifted = generate_task(shifted_ood_spec(spec), n_ood, 0, 0)[0]
        heldout = generate_task(held_out_class_spec(spec), n_ood, 0, 0)[0]
        for name, split in (("data.ood_shifted", shifted), ("data.ood_heldout", heldout)):
            path = os.path.join(run_dir, name.split(".")[1] + ".csv")
            split.to_csv(path)
            manifest.record(name, path, chash, seed=spec.seed)
    print(f"wrote datasets for task {spec.name!r} (d={spec.n_features}) to {run_dir}")
    return 0


def cmd_train_score(cfg: Config, force: bool) -> int:
    run_dir, manifest = _paths(cfg)
    train = Dataset.from_csv(manifest.require("data.train"))
    schedule = NoiseSchedule.geometric(cfg.get_int("score.levels"),
                                       cfg.get_float("score.sigma_high"),
                                       cfg.get_float("score.sigma_low"))
    tc = ScoreTrainConfig(hidden=cfg.get_int_tuple("score.hidden"),
                          steps=cfg.get_int("score.steps"),
                          batch_size=cfg.get_int("score.batch"),
                          lr=cfg.get_float("score.lr"),
                          seed=cfg.get_int("score.seed"))
    model = train_score_model(train.X, schedule, tc)
    if force:
        manifest.retire("score")
    path = os.path.join(run_dir, "score.ckpt")
    model.save(path)
    manifest.record("score", path, cfg.hash(), seed=tc.seed)
    print(f"score model trained ({tc.steps} steps), final smoothed loss "
          f"{model.loss_history[-1]:.4f}")
    return 0


def cmd_train_dose(cfg: Config, force: bool) -> int:
    run_dir, manifest = _paths(cfg)
    score = ScoreModel.load(manifest.require("score"))
    train = Dataset.from_csv(manifest.require("data.train"))
    val = Dataset.from_csv(manifest.require("data.val"))
    seed = cfg.get_int("dose.seed")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD0)))
    n = cfg.get_int("dose.samples")
    idx = rng.integers(0, len(train), size=n)
    masks = sample_masks(rng, n, train.n_features)
    stats = score.summary_stats(train.X[idx], masks.astype(np.float64))
    dc = DoseTrainConfig(hidden=cfg.get_int_tuple("dose.hidden"),
                         steps=cfg.get_int("dose.steps"),
                         batch_size=cfg.get_int("dose.batch"),
                         lr=cfg.get_float("dose.lr"), seed=seed)
    dose = train_dose(stats, masks.astype(np.float64), dc)
    if force:
        manifest.retire("dose")
        manifest.retire("calibration")
    dose_path = os.path.join(run_dir, "dose.ckpt")
    dose.save(dose_path)
    manifest.record("dose", dose_path, cfg.hash(), seed=seed)
    detector = Detector(score, dose)
    calib_rng = np.random.default_rng(
        np.random.SeedSequence((cfg.get_int("calib.seed"), 0xCA11B)))
    calib = calibrate(detector, val.X, calib_rng,
                      samples_per_bucket=cfg.get_int("calib.samples_per_bucket"))
    calib_path = os.path.join(run_dir, "calibration.txt")
    calib.save(calib_path)
    manifest.record("calibration", calib_path, cfg.hash(),
                    seed=cfg.get_int("calib.seed"))
    print(f"dose model trained; tau={calib.tau:.4f}")
    return 0


def _load_detector(manifest: RunManifest) -> Detector:
    score = ScoreModel.load(manifest.require("score"))
    dose = DoseModel.load(manifest.require("dose"))
    calib = Calibration.load(manifest.require("calibration"))
    return Detector(score, dose, calib)


def cmd_train_agent(cfg: Config, force: bool) -> int:
    run_dir, manifest = _paths(cfg)
    spec = spec_from_config(cfg.values)
    train = Dataset.from_csv(manifest.require("data.train"))
    val = Dataset.from_csv(manifest.require("data.val"))
    oracle = GaussianMixtureOracle(spec, mc_samples=cfg.get_int("agent.mc_samples"))

    mi = estimate_all_mi(val.X, val.y, oracle)
    k_raw = cfg.get("grouping.k", "").strip()
    grouping = build_grouping(mi, int(k_raw) if k_raw else None)
    grouping_path = os.path.join(run_dir, "grouping.txt")
    save_grouping(grouping, grouping_path)
    manifest.record("grouping", grouping_path, cfg.hash())

    use_detector = cfg.get("agent.detector_reward") == "on"
    detector = _load_detector(manifest) if use_detector else None
    ac = AgentConfig(
        gamma=cfg.get_float("agent.gamma"),
        gae_lambda=cfg.get_float("agent.lambda"),
        clip_epsilon=cfg.get_float("agent.clip"),
        entropy_coef=cfg.get_float("agent.entropy"),
        lr=cfg.get_float("agent.lr"),
        epochs=cfg.get_int("agent.epochs"),
        minibatch_size=cfg.get_int("agent.minibatch"),
        updates=cfg.get_int("agent.updates"),
        episodes_per_update=cfg.get_int("agent.episodes"),
        mc_samples=cfg.get_int("agent.mc_samples"),
        seed=cfg.get_int("agent.seed"),
        detector_sign=cfg.get_int("agent.detector_sign"),
        detector_beta=cfg.get_float("agent.detector_beta") if use_detector else 0.0,
        detector_raw=cfg.get_bool("agent.detector_raw"),
    )
    instances = [train.instance(i) for i in range(len(train))]
    log_path = os.path.join(run_dir, "agent_log.jsonl")
    agent, history = train_agent(oracle, grouping, instances, _episode_config(cfg),
                                 ac, detector=detector, log_path=log_path)
    if force:
        manifest.retire("agent")
    path = os.path.join(run_dir, "agent.ckpt")
    agent.save(path)
    manifest.record("agent", path, cfg.hash(), seed=ac.seed)
    manifest.record("agent_log", log_path, cfg.hash(), seed=ac.seed)
    print(f"agent trained for {ac.updates} updates; "
          f"final mean return {history[-1]['mean_return']:.4f}")
    return 0


def _eval_tag(cfg: Config) -> str:
    """Distinguishes eval artifacts by the detector-reward arm they measure."""
    if cfg.get("agent.detector_reward") == "on":
        return f"dr_on_sign{cfg.get_int('agent.detector_sign'):+d}"
    return "dr_off"


def cmd_eval(cfg: Config) -> int:
    run_dir, manifest = _paths(cfg)
    spec = spec_from_config(cfg.values)
    oracle = GaussianMixtureOracle(spec, mc_samples=cfg.get_int("agent.mc_samples"))
    test = Dataset.from_csv(manifest.require("data.test"))
    n_ep = min(cfg.get_int("eval.episodes"), len(test))
    instances = [test.instance(i) for i in range(n_ep)]
    budgets = cfg.get_int_list("eval.budgets")
    policies = cfg.get_str_list("eval.policies")
    seed = cfg.get_int("eval.seed")
    records: list[MetricsRecord] = []

    want_ood = cfg.get("eval.ood") in ("auto", "true", "1", "yes", "on")
    detector = None
    ood_instances = None
    if want_ood and manifest.has("dose") and cfg.get("env.task") == "classification":
        detector = _load_detector(manifest)
        if manifest.has("data.ood_shifted"):
            ood = Dataset.from_csv(manifest.require("data.ood_shifted"))
            ood_instances = [ood.instance(i) for i in range(min(n_ep, len(ood)))]

    agent = HierarchicalAgent.load(manifest.require("agent")) if "agent" in policies else None
    for budget in budgets:
        for policy_name in policies:
            rng = np.random.default_rng(np.random.SeedSequence(
                (seed, budget, zlib.crc32(policy_name.encode()))))
            if policy_name == "random":
                result = random_policy_eval(oracle, instances, [budget],
                                            _episode_config(cfg, max(budget, 1)),
                                            rng, repeats=cfg.get_int("eval.repeats"))
                value = result[budget]
                rec = MetricsRecord(policy="random", budget=budget, seed=seed,
                                    accuracy=value if cfg.get("env.task") == "classification" else None,
                                    mse=value if cfg.get("env.task") == "reconstruction" else None)
                records.append(rec)
                continue
            if budget == 0:
                continue  # zero budget is defined for the random baseline only
            if policy_name == "agent":
                policy = AgentPolicy(agent)
            elif policy_name == "greedy":
                policy = GreedyPolicy(oracle)
            else:
                raise ConfigError(f"unknown eval policy {policy_name!r}")
            ep_cfg = _episode_config(cfg, budget)
            res = evaluate_policy(policy, oracle, instances, ep_cfg, rng)
            roc = None
            if policy_name == "agent" and detector is not None and ood_instances:
                roc = ood_eval(detector, policy, oracle, instances, ood_instances,
                               ep_cfg, rng).auroc
            records.append(MetricsRecord(
                policy=policy_name, budget=budget, seed=seed,
                accuracy=res.accuracy, mse=res.mse,
                mean_return=res.mean_return, auroc=roc))

    tag = _eval_tag(cfg)
    csv_path = os.path.join(run_dir, f"metrics_{tag}.csv")
    jsonl_path = os.path.join(run_dir, f"metrics_{tag}.jsonl")
    write_metrics_csv(records, csv_path)
    write_metrics_jsonl(records, jsonl_path)
    manifest.record(f"metrics:{tag}", csv_path, cfg.hash(), seed=seed)
    manifest.record(f"metrics_jsonl:{tag}", jsonl_path, cfg.hash(), seed=seed)
    print(f"evaluated {len(records)} (policy, budget) cells over {n_ep} episodes "
          f"[{tag}]")
    return 0


def cmd_detect(cfg: Config, input_path: str, output_path: str | None) -> int:
    run_dir, manifest = _paths(cfg)
    detector = _load_detector(manifest)
    with open(input_path) as fh:
        header = fh.readline().strip().split(",")
        raw = np.loadtxt(fh, delimiter=",", ndmin=2)
    d = sum(1 for c in header if c.startswith("f") and not c.startswith("mask"))
    mask_names = [f"mask{j}" for j in range(d)]
    if header[:d] != [f"f{j}" for j in range(d)] or header[d:] != mask_names:
        raise UsageError(
            "detect input must have columns f0..f{d-1},mask0..mask{d-1}")
    values, masks = raw[:, :d], raw[:, d:]
    logp = detector.log_prob(values, masks)
    flags = logp < detector.calibration.tau
    out = output_path or os.path.join(run_dir, "detect.csv")
    with open(out, "w") as fh:
        fh.write("log_prob,is_ood\n")
        for lp, fl in zip(logp, flags):
            fh.write("%.17g,%d\n" % (lp, int(fl)))
    print(f"{int(flags.sum())}/{flags.size} rows flagged OOD "
          f"(tau={detector.calibration.tau:.4f}); wrote {out}")
    return 0


def cmd_report(cfg: Config) -> int:
    run_dir, manifest = _paths(cfg)
    tag = _eval_tag(cfg)
    records = read_metrics_csv(manifest.require(f"metrics:{tag}"))
    rows = summarize_metrics(records)
    path = os.path.join(run_dir, f"summary_{tag}.csv")
    write_summary_csv(rows, path)
    manifest.record(f"summary:{tag}", path, cfg.hash())
    for row in rows:
        cells = [f"{row['policy']:<8}", f"budget={row['budget']:<3}", f"n={row['n']}"]
        for metric in ("accuracy", "mse", "mean_return", "auroc"):
            if f"{metric}_mean" in row:
                cells.append(f"{metric}={row[f'{metric}_mean']:.4f}"
                             f"+-{row[f'{metric}_std']:.4f}")
        print("  ".join(cells))
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="afalab", description=__doc__)
    parser.add_argument("--config", help="config file of key=value lines")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", help="sample the task's datasets")
    train = sub.add_parser("train", help="train one pipeline component")
    train.add_argument("component", choices=["score", "dose", "agent"])
    train.add_argument("--force", action="store_true",
                       help="retire an existing checkpoint and retrain")
    ev = sub.add_parser("eval", help="run evaluation episodes and write metrics")
    ev.add_argument("--policy", help="comma list of policies (agent,random,greedy)")
    ev.add_argument("--budgets", help="comma list of acquisition budgets")
    ev.add_argument("--repeats", type=int, help="random-baseline repeat count")
    ev.add_argument("--detector-reward", choices=["on", "off"],
                    help="which trained arm's artifacts to evaluate")
    ev.add_argument("--sign", type=int, choices=[-1, 1],
                    help="detector reward sign (with --detector-reward on)")
    detect = sub.add_parser("detect", help="flag partially observed rows as OOD")
    detect.add_argument("--input", required=True, help="CSV with f*,m* columns")
    detect.add_argument("--output", help="output CSV (default run dir/detect.csv)")
    sub.add_parser("report", help="aggregate metrics into a summary table")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        if args.command == "eval":
            flag_keys = {"policy": "eval.policies", "budgets": "eval.budgets",
                         "repeats": "eval.repeats",
                         "detector_reward": "agent.detector_reward",
                         "sign": "agent.detector_sign"}
            for attr, key in flag_keys.items():
                value = getattr(args, attr)
                if value is not None:
                    overrides.setdefault(key, str(value))
        cfg = build_config(args.config, overrides)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train":
            if args.component == "score":
                return cmd_train_score(cfg, args.force)
            if args.component == "dose":
                return cmd_train_dose(cfg, args.force)
            return cmd_train_agent(cfg, args.force)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "detect":
            return cmd_detect(cfg, args.input, args.output)
        if args.command == "report":
            return cmd_report(cfg)
        raise UsageError(f"unknown command {args.command!r}")
    except (UsageError, ConfigError, TaskSpecError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ManifestError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
