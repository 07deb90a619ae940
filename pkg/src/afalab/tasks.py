"""Synthetic Gaussian-mixture tasks and dataset plumbing.

A task is a class-conditional Gaussian: y ~ priors, x | y ~ N(mean_y, cov_y).
Everything downstream (exact oracle, detector, agent) consumes these specs.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

MEAN_TOL = 1e-9  # dims whose class means differ by less than this count as noise


class TaskSpecError(ValueError):
    """Raised when task parameters fail validation."""


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Parameters of a class-conditional Gaussian task.

    means has shape (n_classes, n_features); covs has shape
    (n_classes, n_features, n_features) and every slice must be SPD.
    Labels are 0-based indices into the class axis.
    """

    n_features: int
    n_classes: int
    means: np.ndarray
    covs: np.ndarray
    priors: np.ndarray
    seed: int = 0
    name: str = "task"

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        covs = np.asarray(self.covs, dtype=np.float64)
        priors = np.asarray(self.priors, dtype=np.float64)
        if covs.ndim == 2:
            # shared covariance, broadcast per class
            covs = np.repeat(covs[None, :, :], self.n_classes, axis=0)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "priors", priors)
        self._validate()

    def _validate(self):
        d, c = self.n_features, self.n_classes
        if d < 1 or c < 1:
            raise TaskSpecError("need at least one feature and one class")
        if self.means.shape != (c, d):
            raise TaskSpecError(f"means shape {self.means.shape} != {(c, d)}")
        if self.covs.shape != (c, d, d):
            raise TaskSpecError(f"covs shape {self.covs.shape} != {(c, d, d)}")
        if self.priors.shape != (c,):
            raise TaskSpecError(f"priors shape {self.priors.shape} != {(c,)}")
        if np.any(self.priors < 0) or abs(self.priors.sum() - 1.0) > 1e-9:
            raise TaskSpecError("priors must be nonnegative and sum to 1")
        for k in range(c):
            if not np.allclose(self.covs[k], self.covs[k].T, atol=1e-12):
                raise TaskSpecError(f"covariance of class {k} is not symmetric")
            try:
                np.linalg.cholesky(self.covs[k])
            except np.linalg.LinAlgError:
                raise TaskSpecError(
                    f"covariance of class {k} is not positive definite"
                ) from None

    @property
    def informative_dims(self) -> np.ndarray:
        """Indices of dims whose class means differ (sorted ascending)."""
        spread = self.means.max(axis=0) - self.means.min(axis=0)
        return np.flatnonzero(spread > MEAN_TOL)

    @property
    def noise_dims(self) -> np.ndarray:
        spread = self.means.max(axis=0) - self.means.min(axis=0)
        return np.flatnonzero(spread <= MEAN_TOL)

    def cholesky_factors(self) -> np.ndarray:
        return np.stack([np.linalg.cholesky(self.covs[k]) for k in range(self.n_classes)])


@dataclass(frozen=True)
class Instance:
    """One fully realized draw: complete feature vector plus its label."""

    values: np.ndarray
    label: int


@dataclass
class Dataset:
    """Matrix of instances. X is (n, d) float64, y is (n,) int64."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise TaskSpecError("dataset arrays are inconsistent")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def instance(self, i: int) -> Instance:
        return Instance(values=self.X[i], label=int(self.y[i]))

    def to_csv(self, path: str) -> None:
        """Write as CSV with header f0,...,f{d-1},y. Floats keep full precision."""
        d = self.n_features
        header = ",".join([f"f{j}" for j in range(d)] + ["y"])
        buf = io.StringIO()
        buf.write(header + "\n")
        for i in range(len(self)):
            row = ",".join("%.17g" % v for v in self.X[i])
            buf.write(f"{row},{self.y[i]}\n")
        with open(path, "w") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def from_csv(cls, path: str) -> "Dataset":
        with open(path) as fh:
            header = fh.readline().strip()
            cols = header.split(",")
            if not cols or cols[-1] != "y" or cols[0] != "f0":
                raise TaskSpecError(f"unrecognized dataset header: {header!r}")
            raw = np.loadtxt(fh, delimiter=",", ndmin=2)
        if raw.shape[1] != len(cols):
            raise TaskSpecError("dataset rows do not match header width")
        return cls(X=raw[:, :-1], y=raw[:, -1].astype(np.int64))


def _sample(spec: SyntheticTaskSpec, n: int, rng: np.random.Generator) -> Dataset:
    labels = rng.choice(spec.n_classes, size=n, p=spec.priors)
    z = rng.standard_normal((n, spec.n_features))
    factors = spec.cholesky_factors()
    X = spec.means[labels] + np.einsum("nij,nj->ni", factors[labels], z)
    return Dataset(X=X, y=labels)


def generate_task(
    spec: SyntheticTaskSpec, n_train: int, n_val: int, n_test: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Draw disjoint train/val/test splits, deterministic under spec.seed."""
    rng = np.random.default_rng(spec.seed)
    train = _sample(spec, n_train, rng)
    val = _sample(spec, n_val, rng)
    test = _sample(spec, n_test, rng)
    return train, val, test


# ---------------------------------------------------------------------------
# In-repo benchmark tasks.
# ---------------------------------------------------------------------------

def standard_classification_task(seed: int = 0) -> SyntheticTaskSpec:
    """Four-class, 16-dim benchmark with 6 informative dims.

    Class identity is two independent sign bits. Dims 0/1 carry the bits at
    moderate separation, dims 2/3 echo them weakly, and dims 4/5 both carry
    bit 0 at large separation (a redundant, loud pair). Dims 6..15 are noise.
    """
    d, c = 16, 4
    means = np.zeros((c, d))
    for cls in range(c):
        b0 = 1.0 if cls & 1 else -1.0
        b1 = 1.0 if cls & 2 else -1.0
        means[cls, 0] = 2.0 * b0
        means[cls, 1] = 2.0 * b1
        means[cls, 2] = 0.8 * b0
        means[cls, 3] = 0.8 * b1
        means[cls, 4] = 6.0 * b0
        means[cls, 5] = 6.0 * b0
    covs = np.repeat(np.eye(d)[None], c, axis=0)
    priors = np.full(c, 1.0 / c)
    return SyntheticTaskSpec(d, c, means, covs, priors, seed=seed, name="standard")


def shifted_ood_spec(spec: SyntheticTaskSpec, sigmas: float = 3.0) -> SyntheticTaskSpec:
    """OOD variant: every class mean shifted by `sigmas` marginal stds on the
    informative dims. Covariances and priors are unchanged."""
    means = spec.means.copy()
    info = spec.informative_dims
    for cls in range(spec.n_classes):
        std = np.sqrt(np.diag(spec.covs[cls]))
        means[cls, info] += sigmas * std[info]
    return SyntheticTaskSpec(
        spec.n_features, spec.n_classes, means, spec.covs.copy(), spec.priors.copy(),
        seed=spec.seed + 1, name=spec.name + "-shifted",
    )


def held_out_class_spec(spec: SyntheticTaskSpec, sigmas: float = 3.0) -> SyntheticTaskSpec:
    """OOD variant: a single extra class that mimics class 0 on the informative
    dims but sits `sigmas` stds away on every noise dim."""
    mean = spec.means[0].copy()
    std = np.sqrt(np.diag(spec.covs[0]))
    noise = spec.noise_dims
    mean[noise] += sigmas * std[noise]
    return SyntheticTaskSpec(
        spec.n_features, 1, mean[None, :], spec.covs[0][None, :, :], np.array([1.0]),
        seed=spec.seed + 2, name=spec.name + "-heldout",
    )


def block_reconstruction_task(
    seed: int = 0, n_blocks: int = 4, block_size: int = 4, rho: float = 0.9
) -> SyntheticTaskSpec:
    """Single-class correlated Gaussian for reconstruction episodes.

    Features come in equicorrelated blocks: observing one member of a block
    pins down the rest, so good policies spread acquisitions across blocks.
    """
    d = n_blocks * block_size
    cov = np.eye(d)
    for b in range(n_blocks):
        lo, hi = b * block_size, (b + 1) * block_size
        cov[lo:hi, lo:hi] = rho
    np.fill_diagonal(cov, 1.0)
    return SyntheticTaskSpec(
        d, 1, np.zeros((1, d)), cov[None, :, :], np.array([1.0]),
        seed=seed, name="blocks",
    )


_PRESETS = {
    "standard": standard_classification_task,
    "blocks": block_reconstruction_task,
}


def _parse_matrix(text: str) -> np.ndarray:
    rows = [r for r in text.split(";") if r.strip()]
    return np.array([[float(v) for v in r.split(",")] for r in rows])


def spec_from_config(cfg: dict[str, str]) -> SyntheticTaskSpec:
    """Build a spec from flat config keys (task.preset or explicit task.*)."""
    preset = cfg.get("task.preset") or None  # empty string = explicit task.* keys
    try:
        seed = int(cfg.get("task.seed", "0"))
        if preset is not None:
            if preset not in _PRESETS:
                raise TaskSpecError(f"unknown task preset {preset!r}")
            return _PRESETS[preset](seed=seed)
        d = int(cfg["task.d"])
        c = int(cfg["task.classes"])
        means = _parse_matrix(cfg["task.means"])
        cov_text = cfg.get("task.cov", "identity")
        if cov_text == "identity":
            cov = np.eye(d)
        else:
            parts = _parse_matrix(cov_text)
            if parts.shape == (1, 1):
                cov = float(parts[0, 0]) * np.eye(d)
            elif parts.shape == (1, d):
                cov = np.diag(parts[0])
            elif parts.shape == (d, d):
                cov = parts
            else:
                raise TaskSpecError(
                    f"cannot interpret task.cov with shape {parts.shape}")
        priors_text = cfg.get("task.priors", "uniform")
        if priors_text == "uniform":
            priors = np.full(c, 1.0 / c)
        else:
            priors = np.array([float(v) for v in priors_text.split(",")])
        return SyntheticTaskSpec(d, c, means, cov, priors, seed=seed,
                                 name=cfg.get("task.name", "custom"))
    except KeyError as exc:
        raise TaskSpecError(f"missing task config key: {exc}") from None
    except TaskSpecError:
        raise
    except ValueError as exc:
        raise TaskSpecError(f"malformed task config value: {exc}") from None
