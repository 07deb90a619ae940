"""Density of summary statistics, conditioned on the observation mask.

The detector reduces a partially observed input to L masked score norms and
needs p(s_1..s_L | mask). That joint is factored autoregressively; one
masked network (MADE-style) emits the mean and log-variance of every
per-dimension conditional Gaussian in a single pass. The mask bits and the
observed fraction enter as degree-zero conditioning inputs visible to all
dimensions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-6  # raw-space floor for degenerate conditionals


class MaskedLinear(nn.Linear):
    def __init__(self, in_features: int, out_features: int, mask: np.ndarray):
        super().__init__(in_features, out_features)
        self.register_buffer("conn", torch.as_tensor(mask, dtype=torch.float32))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return nn.functional.linear(x, self.weight * self.conn, self.bias)


class ConditionalMADE(nn.Module):
    """Autoregressive Gaussian conditionals with free-form conditioning.

    Stat dimension i (1-based degree) may depend on stats with lower degree
    and on every conditioning input. Outputs are (mu, logvar) per dim.
    """

    def __init__(self, n_dims: int, n_cond: int, hidden: tuple[int, ...] = (128, 128)):
        super().__init__()
        self.n_dims = n_dims
        self.n_cond = n_cond
        self.hidden = tuple(hidden)

        in_degrees = np.concatenate([np.arange(1, n_dims + 1), np.zeros(n_cond)])
        layers: list[nn.Module] = []
        prev_deg = in_degrees
        for width in hidden:
            # Degrees 0..n_dims-1; the degree-0 units carry conditioning-only
            # features so even the first stat's conditional sees the mask.
            deg = np.arange(width) % n_dims
            mask = (prev_deg[None, :] <= deg[:, None]).astype(np.float64)
            layers += [MaskedLinear(prev_deg.size, width, mask), nn.ReLU()]
            prev_deg = deg
        out_degrees = np.tile(np.arange(1, n_dims + 1), 2)  # mu block then logvar block
        out_mask = (prev_deg[None, :] < out_degrees[:, None]).astype(np.float64)
        layers.append(MaskedLinear(prev_deg.size, 2 * n_dims, out_mask))
        self.body = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor, cond: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out = self.body(torch.cat([z, cond], dim=-1))
        mu, logvar = out[:, : self.n_dims], out[:, self.n_dims:]
        return mu, torch.clamp(logvar, -10.0, 10.0)


class DoseModel:
    """Fitted conditional density over raw summary statistics."""

    def __init__(self, net: ConditionalMADE, loc: np.ndarray, scale: np.ndarray,
                 n_mask_bits: int):
        self.net = net
        self.loc = np.asarray(loc, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.n_mask_bits = n_mask_bits
        self.loss_history: np.ndarray | None = None
        self._floor_warned = False

    def _cond_inputs(self, mask_bits: np.ndarray) -> np.ndarray:
        mask_bits = np.atleast_2d(np.asarray(mask_bits, dtype=np.float64))
        frac = mask_bits.mean(axis=1, keepdims=True)
        return np.concatenate([mask_bits, frac], axis=1)

    def conditional_params(self, stats: np.ndarray, mask_bits: np.ndarray
                           ) -> tuple[np.ndarray, np.ndarray]:
        """Raw-space (mean, variance) of each conditional, teacher-forced on
        the given stats. Variances are floored at VAR_FLOOR."""
        stats = np.atleast_2d(np.asarray(stats, dtype=np.float64))
        z = (stats - self.loc) / self.scale
        cond = self._cond_inputs(mask_bits)
        with torch.no_grad():
            mu_std, logvar_std = self.net(
                torch.as_tensor(z, dtype=torch.float32),
                torch.as_tensor(cond, dtype=torch.float32),
            )
        mu = self.loc + self.scale * mu_std.numpy().astype(np.float64)
        var = self.scale ** 2 * np.exp(logvar_std.numpy().astype(np.float64))
        floored = var < VAR_FLOOR
        if floored.any():
            if not self._floor_warned:
                logger.warning("dose variance floor %g engaged (%d entries)",
                               VAR_FLOOR, int(floored.sum()))
                self._floor_warned = True
            var = np.maximum(var, VAR_FLOOR)
        return mu, var

    def log_prob(self, stats: np.ndarray, mask_bits: np.ndarray) -> np.ndarray:
        """log p(stats | mask) in nats, one value per row. Deterministic."""
        stats = np.atleast_2d(np.asarray(stats, dtype=np.float64))
        mu, var = self.conditional_params(stats, mask_bits)
        terms = -0.5 * (np.log(2.0 * np.pi * var) + (stats - mu) ** 2 / var)
        return terms.sum(axis=1)

    def save(self, path: str) -> None:
        arrays = {k: v.detach().numpy() for k, v in self.net.state_dict().items()}
        arrays["scaler.loc"] = self.loc
        arrays["scaler.scale"] = self.scale
        meta = {
            "n_dims": self.net.n_dims,
            "n_cond": self.net.n_cond,
            "hidden": list(self.net.hidden),
            "n_mask_bits": self.n_mask_bits,
        }
        save_checkpoint(path, "dose", arrays, meta)

    @classmethod
    def load(cls, path: str) -> "DoseModel":
        kind, arrays, meta = load_checkpoint(path)
        if kind != "dose":
            raise ValueError(f"{path}: expected a dose checkpoint, got {kind!r}")
        net = ConditionalMADE(meta["n_dims"], meta["n_cond"], tuple(meta["hidden"]))
        loc = arrays.pop("scaler.loc")
        scale = arrays.pop("scaler.scale")
        net.load_state_dict({k: torch.as_tensor(v) for k, v in arrays.items()})
        net.eval()
        return cls(net, loc, scale, meta["n_mask_bits"])


@dataclass(frozen=True)
class DoseTrainConfig:
    hidden: tuple[int, ...] = (128, 128)
    steps: int = 4000
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    log_every: int = 50


def train_dose(stats: np.ndarray, mask_bits: np.ndarray,
               config: DoseTrainConfig | None = None) -> DoseModel:
    """Maximum-likelihood fit of the conditional MADE on (stats, mask) pairs."""
    cfg = config or DoseTrainConfig()
    stats = np.asarray(stats, dtype=np.float64)
    mask_bits = np.atleast_2d(np.asarray(mask_bits, dtype=np.float64))
    n, n_dims = stats.shape
    if mask_bits.shape[0] != n:
        raise ValueError("stats and masks disagree on row count")
    d = mask_bits.shape[1]
    loc = stats.mean(axis=0)
    scale = np.maximum(stats.std(axis=0), 1e-3)
    z_all = (stats - loc) / scale
    cond_all = np.concatenate([mask_bits, mask_bits.mean(axis=1, keepdims=True)], axis=1)

    torch.set_num_threads(1)
    torch.manual_seed(cfg.seed)
    net = ConditionalMADE(n_dims, d + 1, cfg.hidden)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xD05E)))
    z_t = torch.as_tensor(z_all, dtype=torch.float32)
    cond_t = torch.as_tensor(cond_all, dtype=torch.float32)

    history = []
    running = 0.0
    for step in range(cfg.steps):
        idx = torch.as_tensor(rng.integers(0, n, size=cfg.batch_size))
        z, cond = z_t[idx], cond_t[idx]
        mu, logvar = net(z, cond)
        nll = 0.5 * (logvar + (z - mu) ** 2 / torch.exp(logvar)
                     + float(np.log(2.0 * np.pi))).sum(dim=1).mean()
        if not torch.isfinite(nll):
            raise RuntimeError(f"dose training diverged at step {step}: loss={nll.item()!r}")
        opt.zero_grad()
        nll.backward()
        opt.step()
        running += nll.item()
        if (step + 1) % cfg.log_every == 0:
            history.append(running / cfg.log_every)
            running = 0.0

    net.eval()
    model = DoseModel(net, loc, scale, d)
    model.loss_history = np.array(history)
    return model
