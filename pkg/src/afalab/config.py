"""Flat dotted-key configuration.

Config files are plain text, one `section.key=value` per line, with `#`
comments. Values stay strings until a typed getter parses them. Environment
variables override file values: AFALAB_AGENT__GAMMA=0.9 sets agent.gamma
(prefix AFALAB_, double underscore for the dot, case-insensitive key).
"""
from __future__ import annotations

import hashlib
import os

ENV_PREFIX = "AFALAB_"

DEFAULTS: dict[str, str] = {
    "run.dir": "runs/default",
    "task.preset": "standard",
    "task.seed": "0",
    "data.n_train": "4000",
    "data.n_val": "2000",
    "data.n_test": "2000",
    "data.n_ood": "2000",
    "env.budget": "4",
    "env.alpha": "0.01",
    "env.loss": "cross_entropy",
    "env.task": "classification",
    "grouping.k": "",
    "score.hidden": "256,256",
    "score.steps": "6000",
    "score.batch": "256",
    "score.lr": "1e-3",
    "score.seed": "0",
    "score.levels": "10",
    "score.sigma_high": "1.0",
    "score.sigma_low": "0.01",
    "dose.hidden": "128,128",
    "dose.steps": "4000",
    "dose.batch": "256",
    "dose.lr": "1e-3",
    "dose.seed": "0",
    "dose.samples": "20000",
    "calib.samples_per_bucket": "400",
    "calib.seed": "0",
    "agent.gamma": "0.99",
    "agent.lambda": "0.95",
    "agent.clip": "0.2",
    "agent.entropy": "0.01",
    "agent.lr": "3e-4",
    "agent.epochs": "4",
    "agent.minibatch": "256",
    "agent.updates": "120",
    "agent.episodes": "48",
    "agent.mc_samples": "256",
    "agent.seed": "0",
    "agent.detector_reward": "off",
    "agent.detector_sign": "1",
    "agent.detector_beta": "1.0",
    "agent.detector_raw": "false",
    "eval.budgets": "2,4,6,8",
    "eval.episodes": "500",
    "eval.repeats": "5",
    "eval.seed": "0",
    "eval.policies": "agent,random",
    "eval.ood": "auto",
}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config_file(path: str) -> dict[str, str]:
    with open(path) as fh:
        return parse_config_text(fh.read())


def env_overrides(environ=None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    out: dict[str, str] = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower().replace("__", ".")
            out[key] = value
    return out


def build_config(path: str | None = None, overrides: dict[str, str] | None = None,
                 environ=None) -> "Config":
    cfg = dict(DEFAULTS)
    if path is not None:
        cfg.update(load_config_file(path))
    cfg.update(env_overrides(environ))
    if overrides:
        cfg.update(overrides)
    return Config(cfg)


class Config:
    """Typed access over the flat mapping."""

    def __init__(self, values: dict[str, str]):
        self.values = dict(values)

    def get(self, key: str, default: str | None = None) -> str:
        if key in self.values:
            return self.values[key]
        if default is not None:
            return default
        raise ConfigError(f"missing config key {key!r}")

    def get_int(self, key: str) -> int:
        try:
            return int(self.get(key))
        except ValueError:
            raise ConfigError(f"{key} is not an integer: {self.get(key)!r}") from None

    def get_float(self, key: str) -> float:
        try:
            return float(self.get(key))
        except ValueError:
            raise ConfigError(f"{key} is not a number: {self.get(key)!r}") from None

    def get_bool(self, key: str) -> bool:
        raw = self.get(key).lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key} is not a boolean: {raw!r}")

    def get_int_list(self, key: str) -> list[int]:
        raw = self.get(key).strip()
        return [int(v) for v in raw.split(",") if v.strip()] if raw else []

    def get_int_tuple(self, key: str) -> tuple[int, ...]:
        return tuple(self.get_int_list(key))

    def get_str_list(self, key: str) -> list[str]:
        raw = self.get(key).strip()
        return [v.strip() for v in raw.split(",") if v.strip()] if raw else []

    def hash(self) -> str:
        lines = "\n".join(f"{k}={v}" for k, v in sorted(self.values.items()))
        return hashlib.sha256(lines.encode()).hexdigest()
