"""Hierarchical acquisition policy trained with clipped-surrogate PPO.

Actions factor as p(a|s) = p(group|s) * p(slot|group, s) over an MI-based
grouping. Invalid choices (observed features, exhausted groups, padding
slots) are masked to -1e9 before the softmax, so samples can never decode
to an already-acquired feature. Actor and critic are separate networks;
with zero advantages and zero entropy bonus the actor does not move.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .detector import Detector
from .env import AcquisitionEnv, EpisodeConfig, PartialState
from .grouping import ActionGrouping
from .oracle import AuxiliaryInfo, GaussianMixtureOracle
from .tasks import Instance

MASK_FILL = -1e9


def policy_observation(state: PartialState, aux: AuxiliaryInfo) -> np.ndarray:
    """Fixed-layout observation: mask, masked values, posterior, info gains,
    imputed means and variances (zeros at observed slots)."""
    return np.concatenate([
        state.mask.as_float(), state.values, aux.posterior,
        aux.info_gain, aux.imputed_mean, aux.imputed_var,
    ])


class ActorNet(nn.Module):
    def __init__(self, obs_dim: int, n_groups: int, n_slots: int,
                 hidden: tuple[int, ...] = (128, 128)):
        super().__init__()
        self.n_groups = n_groups
        self.n_slots = n_slots
        sizes = [obs_dim, *hidden]
        trunk: list[nn.Module] = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            trunk += [nn.Linear(a, b), nn.Tanh()]
        self.trunk = nn.Sequential(*trunk)
        self.group_head = nn.Linear(sizes[-1], n_groups)
        self.member_head = nn.Linear(sizes[-1], n_groups * n_slots)
        for head in (self.group_head, self.member_head):
            nn.init.orthogonal_(head.weight, gain=0.01)
            nn.init.zeros_(head.bias)

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.trunk(obs)
        return self.group_head(h), self.member_head(h).view(-1, self.n_groups, self.n_slots)


class CriticNet(nn.Module):
    def __init__(self, obs_dim: int, hidden: tuple[int, ...] = (128, 128)):
        super().__init__()
        sizes = [obs_dim, *hidden]
        layers: list[nn.Module] = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            layers += [nn.Linear(a, b), nn.Tanh()]
        self.trunk = nn.Sequential(*layers)
        self.head = nn.Linear(sizes[-1], 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk(obs)).squeeze(-1)


@dataclass(frozen=True)
class ActionChoice:
    group: int
    slot: int
    feature: int
    log_prob: float
    value: float


def clipped_surrogate(ratio: torch.Tensor, advantage: torch.Tensor,
                      epsilon: float) -> torch.Tensor:
    """Per-sample PPO objective; constant in the ratio outside the clip range."""
    clipped = torch.clamp(ratio, 1.0 - epsilon, 1.0 + epsilon)
    return torch.min(ratio * advantage, clipped * advantage)


class HierarchicalAgent:
    """Actor-critic over (group, slot) actions for one fixed grouping."""

    def __init__(self, grouping: ActionGrouping, n_classes: int,
                 hidden: tuple[int, ...] = (128, 128)):
        self.grouping = grouping
        self.n_classes = n_classes
        self.hidden = tuple(hidden)
        d = grouping.n_features
        self.obs_dim = 5 * d + n_classes
        self.actor = ActorNet(self.obs_dim, grouping.n_groups, grouping.slot_count, hidden)
        self.critic = CriticNet(self.obs_dim, hidden)
        self._members = grouping.member_matrix()  # (K, N), -1 padded

    # -- masking ----------------------------------------------------------

    def _validity(self, mask_bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Boolean (B, K) group and (B, K, N) member validity."""
        mask_bits = np.atleast_2d(np.asarray(mask_bits, dtype=bool))
        members = self._members
        padded = members < 0
        feat = np.where(padded, 0, members)
        observed = mask_bits[:, feat.reshape(-1)].reshape(mask_bits.shape[0], *members.shape)
        member_ok = ~observed & ~padded[None, :, :]
        return member_ok.any(axis=2), member_ok

    def _masked_logits(self, obs: torch.Tensor, mask_bits: np.ndarray
                       ) -> tuple[torch.Tensor, torch.Tensor]:
        group_ok, member_ok = self._validity(mask_bits)
        g_logits, m_logits = self.actor(obs)
        g_logits = g_logits + torch.as_tensor(~group_ok, dtype=torch.float32) * MASK_FILL
        m_logits = m_logits + torch.as_tensor(~member_ok, dtype=torch.float32) * MASK_FILL
        return g_logits, m_logits

    # -- acting -------------------------------------------------------------

    def select(self, state: PartialState, aux: AuxiliaryInfo,
               rng: np.random.Generator, deterministic: bool = False) -> ActionChoice:
        obs = policy_observation(state, aux)
        obs_t = torch.as_tensor(obs[None, :], dtype=torch.float32)
        with torch.no_grad():
            g_logits, m_logits = self._masked_logits(obs_t, state.mask.bits[None, :])
            g_logp = torch.log_softmax(g_logits, dim=-1)[0].numpy().astype(np.float64)
            value = float(self.critic(obs_t)[0])
        if deterministic:
            k = int(np.argmax(g_logp))
        else:
            p = np.exp(g_logp)
            p /= p.sum()
            k = int(rng.choice(p.size, p=p))
        m_logp_k = torch.log_softmax(m_logits[0, k], dim=-1).numpy().astype(np.float64)
        if deterministic:
            n = int(np.argmax(m_logp_k))
        else:
            pm = np.exp(m_logp_k)
            pm /= pm.sum()
            n = int(rng.choice(pm.size, p=pm))
        feature = self.grouping.decode(k, n)
        if state.mask.covers(feature):
            raise RuntimeError(f"masking failed: sampled observed feature {feature}")
        return ActionChoice(k, n, feature, float(g_logp[k] + m_logp_k[n]), value)

    # -- differentiable log-probs for updates ---------------------------------

    def evaluate_actions(self, obs: torch.Tensor, mask_bits: np.ndarray,
                         groups: torch.Tensor, slots: torch.Tensor
                         ) -> tuple[torch.Tensor, torch.Tensor]:
        """(joint log-prob, joint entropy) for taken actions, with gradients."""
        g_logits, m_logits = self._masked_logits(obs, mask_bits)
        g_logp = torch.log_softmax(g_logits, dim=-1)
        m_logp = torch.log_softmax(m_logits, dim=-1)
        rows = torch.arange(obs.shape[0])
        chosen = g_logp[rows, groups] + m_logp[rows, groups, slots]
        g_p = torch.exp(g_logp)
        member_entropy = -(torch.exp(m_logp) * m_logp).sum(dim=-1)   # (B, K)
        entropy = -(g_p * g_logp).sum(dim=-1) + (g_p * member_entropy).sum(dim=-1)
        return chosen, entropy

    # -- persistence ---------------------------------------------------------

    def save(self, path: str) -> None:
        arrays = {f"actor.{k}": v.detach().numpy() for k, v in self.actor.state_dict().items()}
        arrays.update({f"critic.{k}": v.detach().numpy()
                       for k, v in self.critic.state_dict().items()})
        arrays["grouping.members"] = self._members
        arrays["grouping.mi"] = self.grouping.mi
        meta = {
            "n_classes": self.n_classes,
            "hidden": list(self.hidden),
            "n_features": self.grouping.n_features,
        }
        save_checkpoint(path, "agent", arrays, meta)

    @classmethod
    def load(cls, path: str) -> "HierarchicalAgent":
        kind, arrays, meta = load_checkpoint(path)
        if kind != "agent":
            raise ValueError(f"{path}: expected an agent checkpoint, got {kind!r}")
        members = arrays.pop("grouping.members")
        mi = arrays.pop("grouping.mi")
        groups = tuple(tuple(int(f) for f in row if f >= 0) for row in members)
        grouping = ActionGrouping(n_features=int(meta["n_features"]), mi=mi, groups=groups)
        agent = cls(grouping, int(meta["n_classes"]), tuple(meta["hidden"]))
        agent.actor.load_state_dict({k[len("actor."):]: torch.as_tensor(v)
                                     for k, v in arrays.items() if k.startswith("actor.")})
        agent.critic.load_state_dict({k[len("critic."):]: torch.as_tensor(v)
                                      for k, v in arrays.items() if k.startswith("critic.")})
        agent.actor.eval()
        agent.critic.eval()
        return agent


@dataclass
class RolloutBatch:
    """Flattened step records plus per-episode bookkeeping."""

    obs: np.ndarray
    mask_bits: np.ndarray
    groups: np.ndarray
    slots: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    episode_len: int
    episode_returns: np.ndarray
    advantages: np.ndarray = field(default=None)  # type: ignore[assignment]
    returns: np.ndarray = field(default=None)     # type: ignore[assignment]


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    entropy_coef: float = 0.01
    lr: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 256
    max_grad_norm: float = 0.5
    updates: int = 120
    episodes_per_update: int = 48
    mc_samples: int = 256
    seed: int = 0
    detector_sign: int = 1
    detector_beta: float = 0.0   # 0 disables the detector reward
    detector_raw: bool = False


def _gae(rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float
         ) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns for fixed-length episodes. rewards/values are
    (episodes, steps); terminal bootstrap is zero."""
    e, t = rewards.shape
    adv = np.zeros_like(rewards)
    last = np.zeros(e)
    for step in reversed(range(t)):
        next_v = values[:, step + 1] if step + 1 < t else np.zeros(e)
        delta = rewards[:, step] + gamma * next_v - values[:, step]
        last = delta + gamma * lam * last
        adv[:, step] = last
    return adv, adv + values


def collect_rollouts(agent: HierarchicalAgent, oracle: GaussianMixtureOracle,
                     instances: list[Instance], episode_config: EpisodeConfig,
                     config: AgentConfig, rng: np.random.Generator,
                     detector: Detector | None = None,
                     deterministic: bool = False) -> RolloutBatch:
    """Roll complete episodes and assemble a PPO batch.

    r_m uses the oracle entropy drop for classification episodes and the
    per-dim likelihood improvement for reconstruction episodes. The terminal
    step additionally receives r_p and, when a calibrated detector is
    supplied with beta > 0, r_d.
    """
    steps = episode_config.budget
    n_ep = len(instances)
    obs_rows, mask_rows, g_rows, s_rows, lp_rows, v_rows = [], [], [], [], [], []
    rewards = np.zeros((n_ep, steps))
    for e, instance in enumerate(instances):
        env = AcquisitionEnv(instance, episode_config)
        state = env.reset()
        for t in range(steps):
            aux = oracle.query(state.values, state.mask, rng)
            choice = agent.select(state, aux, rng, deterministic=deterministic)
            obs_rows.append(policy_observation(state, aux))
            mask_rows.append(state.mask.bits.copy())
            g_rows.append(choice.group)
            s_rows.append(choice.slot)
            lp_rows.append(choice.log_prob)
            v_rows.append(choice.value)
            prev_mask = state.mask
            state, r_e = env.step(choice.feature)
            if episode_config.task == "reconstruction":
                r_m = oracle.air_intermediate_reward(
                    instance.values, prev_mask, choice.feature)
            else:
                r_m = oracle.intermediate_reward(
                    state.values, prev_mask, choice.feature)
            rewards[e, t] = r_e + r_m
        if episode_config.task == "reconstruction":
            prediction = oracle.predict_reconstruction(state.values, state.mask)
        elif episode_config.loss == "zero_one":
            prediction = oracle.predict_label(state.values, state.mask)
        else:
            prediction = oracle.posterior(state.values, state.mask)
        rewards[e, -1] += env.final_reward(prediction)
        if detector is not None and config.detector_beta > 0.0:
            rewards[e, -1] += detector.reward(
                state.values, state.mask.as_float(), config.detector_sign,
                config.detector_beta, use_raw=config.detector_raw)
    values = np.asarray(v_rows).reshape(n_ep, steps)
    adv, rets = _gae(rewards, values, config.gamma, config.gae_lambda)
    return RolloutBatch(
        obs=np.asarray(obs_rows), mask_bits=np.asarray(mask_rows),
        groups=np.asarray(g_rows), slots=np.asarray(s_rows),
        log_probs=np.asarray(lp_rows), values=values.reshape(-1),
        rewards=rewards.reshape(-1), episode_len=steps,
        episode_returns=rewards.sum(axis=1),
        advantages=adv.reshape(-1), returns=rets.reshape(-1),
    )


def ppo_update(agent: HierarchicalAgent, batch: RolloutBatch, config: AgentConfig,
               actor_opt: torch.optim.Optimizer, critic_opt: torch.optim.Optimizer,
               rng: np.random.Generator) -> dict[str, float]:
    """Clipped-surrogate epochs over one rollout batch."""
    obs = torch.as_tensor(batch.obs, dtype=torch.float32)
    groups = torch.as_tensor(batch.groups, dtype=torch.int64)
    slots = torch.as_tensor(batch.slots, dtype=torch.int64)
    old_logp = torch.as_tensor(batch.log_probs, dtype=torch.float32)
    returns = torch.as_tensor(batch.returns, dtype=torch.float32)
    adv = batch.advantages.copy()
    if adv.std() > 1e-8:
        adv = (adv - adv.mean()) / adv.std()
    adv_t = torch.as_tensor(adv, dtype=torch.float32)

    n = obs.shape[0]
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0}
    batches = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.minibatch_size):
            idx = order[lo: lo + config.minibatch_size]
            idx_t = torch.as_tensor(idx)
            logp, entropy = agent.evaluate_actions(
                obs[idx_t], batch.mask_bits[idx], groups[idx_t], slots[idx_t])
            ratio = torch.exp(logp - old_logp[idx_t])
            surrogate = clipped_surrogate(ratio, adv_t[idx_t], config.clip_epsilon)
            policy_loss = -surrogate.mean() - config.entropy_coef * entropy.mean()
            actor_opt.zero_grad()
            policy_loss.backward()
            nn.utils.clip_grad_norm_(agent.actor.parameters(), config.max_grad_norm)
            actor_opt.step()

            value = agent.critic(obs[idx_t])
            value_loss = ((value - returns[idx_t]) ** 2).mean()
            critic_opt.zero_grad()
            value_loss.backward()
            nn.utils.clip_grad_norm_(agent.critic.parameters(), config.max_grad_norm)
            critic_opt.step()

            stats["policy_loss"] += policy_loss.item()
            stats["value_loss"] += value_loss.item()
            stats["entropy"] += entropy.mean().item()
            stats["approx_kl"] += (old_logp[idx_t] - logp).mean().item()
            batches += 1
    return {k: v / max(batches, 1) for k, v in stats.items()}


def train_agent(oracle: GaussianMixtureOracle, grouping: ActionGrouping,
                train_instances: list[Instance], episode_config: EpisodeConfig,
                config: AgentConfig, detector: Detector | None = None,
                log_path: str | None = None) -> tuple[HierarchicalAgent, list[dict]]:
    """PPO training loop. Returns the agent and per-update stats records."""
    torch.set_num_threads(1)
    torch.manual_seed(config.seed)
    agent = HierarchicalAgent(grouping, oracle.spec.n_classes)
    actor_opt = torch.optim.Adam(agent.actor.parameters(), lr=config.lr)
    critic_opt = torch.optim.Adam(agent.critic.parameters(), lr=config.lr)
    seq = np.random.SeedSequence((config.seed, 0xA6E17))
    rng_rollout, rng_update, rng_sample = [
        np.random.default_rng(s) for s in seq.spawn(3)]
    oracle = GaussianMixtureOracle(oracle.spec, mc_samples=config.mc_samples,
                                   seed=config.seed)
    history: list[dict] = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for update in range(config.updates):
            picks = rng_sample.integers(0, len(train_instances),
                                        size=config.episodes_per_update)
            episodes = [train_instances[i] for i in picks]
            batch = collect_rollouts(agent, oracle, episodes, episode_config,
                                     config, rng_rollout, detector=detector)
            stats = ppo_update(agent, batch, config, actor_opt, critic_opt, rng_update)
            record = {"update": update,
                      "mean_return": float(batch.episode_returns.mean()), **stats}
            history.append(record)
            if log_fh is not None:
                import json
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if log_fh is not None:
            log_fh.close()
    agent.actor.eval()
    agent.critic.eval()
    return agent, history
