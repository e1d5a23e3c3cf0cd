"""Round orchestration: participation sampling, local dispatch, aggregation.

One training round samples the set of active agents, runs each active
agent's local solver from the current global parameter, and folds the
returned displacements back into the global parameter. Agents activated by
independent Bernoulli draws are reweighted by the inverse of their
activation probability, which keeps the aggregated update unbiased however
skewed the participation is. A uniform-batch variant reproduces classic
federated averaging with plain batch means instead.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .local_update import (
    DivergenceError,
    LocalTrace,
    SvrgParams,
    sgd_local_update,
    svrg_local_update,
)
from .losses import Dataset, LossKind, global_cost, global_grad
from .seeding import derive_rng

logger = logging.getLogger(__name__)

PARTICIPATION_LABEL = "participation"
GRADIENT_LABEL = "gradients"


class Algorithm(enum.Enum):
    """Server-side update rule of a training run."""

    FEDAVG_SVRG = "fedavg_svrg"
    FEDAVG_PROB_SGD = "fedavg_prob_sgd"
    FEDAVG_UNIFORM_BATCH = "fedavg_uniform_batch"


class ScheduleKind(enum.Enum):
    CONSTANT = "constant"
    PER_AGENT = "per_agent"
    PER_ROUND = "per_round"


def _check_probs(probs: np.ndarray, what: str) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.size == 0:
        raise ValueError(f"{what} must be nonempty")
    if not np.isfinite(probs).all() or (probs <= 0.0).any() or (probs > 1.0).any():
        raise ValueError(f"{what} must lie in (0, 1]")
    return probs


@dataclass(frozen=True)
class ParticipationSchedule:
    """Per-agent, per-round activation probabilities.

    Three layouts: one probability shared by everyone, one fixed
    probability per agent, or a full (rounds x agents) matrix.
    """

    kind: ScheduleKind
    constant: float | None = None
    per_agent: np.ndarray | None = None
    matrix: np.ndarray | None = None

    @classmethod
    def constant_uniform(cls, p: float) -> "ParticipationSchedule":
        _check_probs(np.array([p]), "participation probability")
        return cls(kind=ScheduleKind.CONSTANT, constant=float(p))

    @classmethod
    def per_agent_fixed(cls, probs) -> "ParticipationSchedule":
        probs = _check_probs(probs, "per-agent probabilities")
        if probs.ndim != 1:
            raise ValueError("per-agent probabilities must be a 1-D array")
        return cls(kind=ScheduleKind.PER_AGENT, per_agent=probs)

    @classmethod
    def per_round_matrix(cls, matrix) -> "ParticipationSchedule":
        matrix = _check_probs(matrix, "probability matrix")
        if matrix.ndim != 2:
            raise ValueError("probability matrix must be 2-D (rounds x agents)")
        return cls(kind=ScheduleKind.PER_ROUND, matrix=matrix)

    def probabilities(self, round_index: int, n_agents: int) -> np.ndarray:
        """Activation probability vector for one round."""
        if self.kind is ScheduleKind.CONSTANT:
            return np.full(n_agents, self.constant)
        if self.kind is ScheduleKind.PER_AGENT:
            if self.per_agent.shape[0] != n_agents:
                raise ValueError(
                    f"schedule covers {self.per_agent.shape[0]} agents, expected {n_agents}"
                )
            return self.per_agent
        if round_index >= self.matrix.shape[0]:
            raise ValueError(
                f"round {round_index} beyond schedule matrix with {self.matrix.shape[0]} rows"
            )
        if self.matrix.shape[1] != n_agents:
            raise ValueError(
                f"schedule covers {self.matrix.shape[1]} agents, expected {n_agents}"
            )
        return self.matrix[round_index]


@dataclass(frozen=True)
class SgdParams:
    """Baseline local-SGD settings; the stepsize schedule is resolved per round."""

    steps: int
    base_stepsize: float = 0.1
    decay: str = "per_round"  # "per_round": base/sqrt(k+1); "constant": base

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not (np.isfinite(self.base_stepsize) and self.base_stepsize > 0.0):
            raise ValueError("base_stepsize must be finite and > 0")
        if self.decay not in ("per_round", "constant"):
            raise ValueError(f"unknown decay mode {self.decay!r}")

    def stepsize_for_round(self, round_index: int) -> float:
        if self.decay == "constant":
            return self.base_stepsize
        return self.base_stepsize / np.sqrt(round_index + 1.0)


@dataclass
class RoundRecord:
    """State recorded after one training round.

    ``theta``, ``cost`` and ``grad_norm_sq`` describe the post-round global
    parameter; ``local_traces`` maps each active agent to its local trace.
    """

    round_index: int
    indicators: np.ndarray
    theta: np.ndarray
    cost: float
    grad_norm_sq: float
    local_traces: dict[int, LocalTrace] = field(default_factory=dict)

    @property
    def n_active(self) -> int:
        return int(self.indicators.sum())


@dataclass
class RunTrace:
    """Whole-run record: initial state plus one RoundRecord per round."""

    theta0: np.ndarray
    initial_cost: float
    initial_grad_norm_sq: float
    records: list[RoundRecord]

    @property
    def n_rounds(self) -> int:
        return len(self.records)

    @property
    def costs(self) -> np.ndarray:
        """Recorded post-round costs, one per round."""
        return np.array([rec.cost for rec in self.records])

    @property
    def final_theta(self) -> np.ndarray:
        return self.records[-1].theta if self.records else self.theta0


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run needs besides the dataset itself."""

    name: str
    algorithm: Algorithm
    rounds: int
    schedule: ParticipationSchedule
    theta0: np.ndarray
    master_seed: int
    svrg: SvrgParams | None = None
    sgd: SgdParams | None = None
    batch_size: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "theta0", np.asarray(self.theta0, dtype=float))
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.algorithm is Algorithm.FEDAVG_SVRG and self.svrg is None:
            raise ValueError("fedavg_svrg requires svrg parameters")
        if self.algorithm is not Algorithm.FEDAVG_SVRG and self.sgd is None:
            raise ValueError(f"{self.algorithm.value} requires sgd parameters")
        if self.algorithm is Algorithm.FEDAVG_UNIFORM_BATCH:
            if self.batch_size is None or self.batch_size < 1:
                raise ValueError("fedavg_uniform_batch requires batch_size >= 1")


class TrainingError(RuntimeError):
    """A run failed; carries (algorithm, run, round, agent) identity."""

    def __init__(self, algorithm: str, run_index: int, round_index: int, agent: int, reason: str):
        super().__init__(
            f"algorithm={algorithm} run={run_index} round={round_index} "
            f"agent={agent}: {reason}"
        )
        self.algorithm = algorithm
        self.run_index = run_index
        self.round_index = round_index
        self.agent = agent
        self.reason = reason


def sample_participation(
    schedule: ParticipationSchedule,
    round_index: int,
    n_agents: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Independent Bernoulli activation draw for every agent."""
    probs = _check_probs(schedule.probabilities(round_index, n_agents), "activation probabilities")
    return rng.random(n_agents) < probs


def aggregate(
    theta_k: np.ndarray,
    deltas: list[np.ndarray | None],
    indicators: np.ndarray,
    probs: np.ndarray,
) -> np.ndarray:
    """Inverse-probability-weighted fold of active agents' displacements.

    Returns ``theta_k + (1/N) * sum over active n of deltas[n] / probs[n]``,
    accumulated in ascending agent order so results are bit-reproducible.
    Inactive agents contribute nothing; an empty active set returns
    ``theta_k`` unchanged.
    """
    n_agents = len(deltas)
    if len(indicators) != n_agents or len(probs) != n_agents:
        raise ValueError("deltas, indicators and probs must have equal length")
    _check_probs(probs, "aggregation probabilities")
    theta = np.array(theta_k, dtype=float)
    for n in range(n_agents):
        if not indicators[n]:
            continue
        if deltas[n] is None:
            raise ValueError(f"active agent {n} is missing its update")
        theta += deltas[n] / (probs[n] * n_agents)
    return theta


def _local_update(
    kind: LossKind,
    dataset: Dataset,
    cfg: RunConfig,
    theta_k: np.ndarray,
    round_index: int,
    agent: int,
    rng: np.random.Generator,
) -> LocalTrace:
    shard = dataset.shards[agent]
    if cfg.algorithm is Algorithm.FEDAVG_SVRG:
        return svrg_local_update(kind, shard, theta_k, cfg.svrg, rng)
    stepsize = cfg.sgd.stepsize_for_round(round_index)
    return sgd_local_update(kind, shard, theta_k, cfg.sgd.steps, stepsize, rng)


def run_round(
    kind: LossKind,
    dataset: Dataset,
    cfg: RunConfig,
    theta_k: np.ndarray,
    round_index: int,
    run_index: int = 0,
) -> RoundRecord:
    """Execute one round from ``theta_k`` and record the post-round state.

    Bernoulli-participation algorithms use the shared participation stream
    (independent of the algorithm name, so paired comparisons see identical
    activation patterns); the uniform-batch variant draws its batch without
    replacement from the same stream. Each active agent consumes its own
    gradient stream keyed by (algorithm, run, round, agent).
    """
    n_agents = dataset.n_agents
    part_rng = derive_rng(cfg.master_seed, PARTICIPATION_LABEL, run_index, round_index)
    if cfg.algorithm is Algorithm.FEDAVG_UNIFORM_BATCH:
        if cfg.batch_size > n_agents:
            raise ValueError(f"batch_size {cfg.batch_size} exceeds {n_agents} agents")
        chosen = part_rng.choice(n_agents, size=cfg.batch_size, replace=False)
        indicators = np.zeros(n_agents, dtype=bool)
        indicators[chosen] = True
    else:
        indicators = sample_participation(cfg.schedule, round_index, n_agents, part_rng)

    deltas: list[np.ndarray | None] = [None] * n_agents
    traces: dict[int, LocalTrace] = {}
    for n in range(n_agents):
        if not indicators[n]:
            continue
        grad_rng = derive_rng(
            cfg.master_seed, f"{GRADIENT_LABEL}/{cfg.name}", run_index, round_index, n
        )
        try:
            trace = _local_update(kind, dataset, cfg, theta_k, round_index, n, grad_rng)
        except DivergenceError as exc:
            raise TrainingError(cfg.name, run_index, round_index, n, str(exc)) from exc
        deltas[n] = trace.delta_w
        traces[n] = trace

    if cfg.algorithm is Algorithm.FEDAVG_UNIFORM_BATCH:
        theta_next = np.array(theta_k, dtype=float)
        for n in range(n_agents):
            if indicators[n]:
                theta_next += deltas[n] / cfg.batch_size
    else:
        probs = cfg.schedule.probabilities(round_index, n_agents)
        theta_next = aggregate(theta_k, deltas, indicators, probs)

    grad = global_grad(kind, dataset, theta_next)
    return RoundRecord(
        round_index=round_index,
        indicators=indicators,
        theta=theta_next,
        cost=global_cost(kind, dataset, theta_next),
        grad_norm_sq=float(grad @ grad),
        local_traces=traces,
    )


def run_training(
    kind: LossKind,
    dataset: Dataset,
    cfg: RunConfig,
    run_index: int = 0,
) -> RunTrace:
    """Run all rounds of one training execution.

    The result is a pure function of (kind, dataset, cfg, run_index): all
    randomness flows through streams derived from ``cfg.master_seed``, one
    per (run, round) for participation and one per (run, round, agent) for
    gradient sampling.
    """
    theta = np.asarray(cfg.theta0, dtype=float)
    if theta.shape != (dataset.dimension,):
        raise ValueError(
            f"theta0 has shape {theta.shape}, expected ({dataset.dimension},)"
        )
    grad0 = global_grad(kind, dataset, theta)
    trace = RunTrace(
        theta0=theta,
        initial_cost=global_cost(kind, dataset, theta),
        initial_grad_norm_sq=float(grad0 @ grad0),
        records=[],
    )
    for k in range(cfg.rounds):
        record = run_round(kind, dataset, cfg, theta, k, run_index)
        trace.records.append(record)
        theta = record.theta
        logger.debug(
            "%s run=%d round=%d cost=%.6g active=%d",
            cfg.name, run_index, k, record.cost, record.n_active,
        )
    return trace
