"""Finite-sum loss models over agent-partitioned data.

The global objective averages per-agent objectives, and each per-agent
objective averages per-sample losses over that agent's local shard:

    f(theta) = (1/N) * sum_n f_n(theta),
    f_n(theta) = (1/L_n) * sum_i loss(row_{n,i}, label_{n,i}, theta).

Two per-sample loss families are supported: squared residuals for
regression and the logistic loss for binary classification. Everything in
this module is a pure function of its inputs; the only stateful object is
the caller-supplied random generator used for data synthesis.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class LossKind(enum.Enum):
    """Per-sample loss family."""

    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"


class SingularSystemError(ValueError):
    """The pooled normal equations are singular or too ill-conditioned."""


@dataclass(frozen=True)
class AgentShard:
    """One agent's local supervised dataset.

    features : (n_samples, dim) array, one input row per sample
    labels   : (n_samples,) array of targets
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=float)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if labels.ndim != 1:
            raise ValueError("labels must be a 1-D array")
        if features.shape[0] != labels.shape[0]:
            raise ValueError(
                f"feature rows ({features.shape[0]}) and labels ({labels.shape[0]}) disagree"
            )
        if features.shape[0] < 1:
            raise ValueError("shard must contain at least one sample")
        if not (np.isfinite(features).all() and np.isfinite(labels).all()):
            raise ValueError("shard entries must be finite")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of agent shards sharing one feature dimension."""

    shards: tuple[AgentShard, ...]
    dimension: int

    def __post_init__(self):
        object.__setattr__(self, "shards", tuple(self.shards))
        if len(self.shards) < 1:
            raise ValueError("dataset must contain at least one shard")
        for n, shard in enumerate(self.shards):
            if shard.dim != self.dimension:
                raise ValueError(
                    f"shard {n} has dimension {shard.dim}, expected {self.dimension}"
                )

    @property
    def n_agents(self) -> int:
        return len(self.shards)


def _sample(shard: AgentShard, i: int, theta: np.ndarray) -> tuple[np.ndarray, float]:
    if not 0 <= i < shard.n_samples:
        raise ValueError(f"sample index {i} out of range [0, {shard.n_samples})")
    if theta.shape != (shard.dim,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({shard.dim},)")
    return shard.features[i], float(shard.labels[i])


def _sigmoid(z: float) -> float:
    # Branch keeps exp() argument nonpositive.
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def component_loss(kind: LossKind, shard: AgentShard, i: int, theta: np.ndarray) -> float:
    """Loss of sample ``i`` at ``theta``.

    Quadratic: (label - row.theta)^2. Logistic: log(1 + exp(-label * row.theta)).
    """
    row, label = _sample(shard, i, theta)
    margin = float(row @ theta)
    if kind is LossKind.QUADRATIC:
        return (label - margin) ** 2
    return float(np.logaddexp(0.0, -label * margin))


def component_grad(kind: LossKind, shard: AgentShard, i: int, theta: np.ndarray) -> np.ndarray:
    """Gradient of ``component_loss`` with respect to ``theta``.

    Quadratic: 2 * row * (row.theta - label). Logistic: -label * sigmoid(-label * row.theta) * row.
    """
    row, label = _sample(shard, i, theta)
    margin = float(row @ theta)
    if kind is LossKind.QUADRATIC:
        return 2.0 * (margin - label) * row
    return -label * _sigmoid(-label * margin) * row


def agent_full_grad(kind: LossKind, shard: AgentShard, theta: np.ndarray) -> np.ndarray:
    """Mean of all per-sample gradients of one shard, in ascending sample order."""
    if theta.shape != (shard.dim,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({shard.dim},)")
    features, labels = shard.features, shard.labels
    margins = features @ theta
    if kind is LossKind.QUADRATIC:
        return (2.0 / shard.n_samples) * (features.T @ (margins - labels))
    z = -labels * margins
    # Elementwise stable sigmoid of z.
    sig = np.where(z >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    return (features.T @ (-labels * sig)) / shard.n_samples


def global_cost(kind: LossKind, dataset: Dataset, theta: np.ndarray) -> float:
    """Average over agents of the mean per-sample loss on each shard."""
    total = 0.0
    for shard in dataset.shards:
        margins = shard.features @ theta
        if kind is LossKind.QUADRATIC:
            total += float(np.mean((shard.labels - margins) ** 2))
        else:
            total += float(np.mean(np.logaddexp(0.0, -shard.labels * margins)))
    return total / dataset.n_agents


def global_grad(kind: LossKind, dataset: Dataset, theta: np.ndarray) -> np.ndarray:
    """Average over agents of ``agent_full_grad``, in ascending agent order."""
    grad = np.zeros(dataset.dimension)
    for shard in dataset.shards:
        grad += agent_full_grad(kind, shard, theta)
    return grad / dataset.n_agents


def generate_regression_dataset(
    n_agents: int,
    samples_per_agent: int,
    dimension: int,
    noise_std: float,
    rng: np.random.Generator,
) -> tuple[Dataset, np.ndarray]:
    """Synthesize a linear-regression dataset split evenly across agents.

    Features and the generating parameter are i.i.d. standard normal;
    labels are row.theta_true plus N(0, noise_std^2) noise. Samples are
    assigned to agents in contiguous equal blocks. The result is a pure
    function of the generator state.
    """
    if n_agents < 1 or samples_per_agent < 1 or dimension < 1:
        raise ValueError("n_agents, samples_per_agent and dimension must be >= 1")
    if noise_std < 0.0:
        raise ValueError("noise_std must be >= 0")
    total = n_agents * samples_per_agent
    features = rng.standard_normal((total, dimension))
    theta_true = rng.standard_normal(dimension)
    labels = features @ theta_true + noise_std * rng.standard_normal(total)
    shards = []
    for n in range(n_agents):
        lo = n * samples_per_agent
        hi = lo + samples_per_agent
        shards.append(AgentShard(features[lo:hi].copy(), labels[lo:hi].copy()))
    return Dataset(tuple(shards), dimension), theta_true


def least_squares_oracle(dataset: Dataset) -> tuple[np.ndarray, float]:
    """Exact minimizer and optimal value of the quadratic global objective.

    Solves the agent-weighted normal equations
    ``sum_n X_n^T X_n / L_n theta = sum_n X_n^T y_n / L_n`` (with equal
    shard sizes this is pooled least squares) and verifies the solution by
    checking that the global gradient vanishes to 1e-8.
    """
    d = dataset.dimension
    gram = np.zeros((d, d))
    moment = np.zeros(d)
    for shard in dataset.shards:
        gram += shard.features.T @ shard.features / shard.n_samples
        moment += shard.features.T @ shard.labels / shard.n_samples
    try:
        theta_star = np.linalg.solve(gram, moment)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"normal equations are singular: {exc}") from exc
    residual = float(np.linalg.norm(global_grad(LossKind.QUADRATIC, dataset, theta_star)))
    if not np.isfinite(residual) or residual > 1e-8:
        raise SingularSystemError(
            f"normal equations too ill-conditioned: gradient norm {residual:.3e} at solution"
        )
    return theta_star, global_cost(LossKind.QUADRATIC, dataset, theta_star)


def smoothness_constant(kind: LossKind, dataset: Dataset) -> float:
    """Gradient-Lipschitz upper bound valid for every per-sample and per-agent loss.

    Quadratic: max over samples of 2 * ||row||^2. Logistic: max over
    samples of ||row||^2 / 4. Both dominate the corresponding averaged
    curvature, so one constant serves the per-sample, per-agent and global
    objectives alike.
    """
    worst = 0.0
    for shard in dataset.shards:
        worst = max(worst, float(np.max(np.sum(shard.features**2, axis=1))))
    if kind is LossKind.QUADRATIC:
        return 2.0 * worst
    return worst / 4.0
