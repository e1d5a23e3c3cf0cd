"""Agent-local update rules executed by active clients within one round.

Two solvers are provided: an anchored variance-reduced scheme that refreshes
a full local gradient at periodic snapshot points, and a plain stochastic
gradient baseline. Both return the parameter displacement together with the
squared norm of every stochastic direction taken, which downstream bound
evaluation consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import AgentShard, LossKind, agent_full_grad, component_grad


@dataclass(frozen=True)
class SvrgParams:
    """Shape of one variance-reduced local update.

    snapshots   : number of full-gradient anchor refreshes per round
    inner_steps : stochastic steps between consecutive anchors
    stepsize    : constant stepsize applied to every inner step (zero is
                  permitted for no-movement diagnostics)
    """

    snapshots: int
    inner_steps: int
    stepsize: float

    def __post_init__(self):
        if self.snapshots < 1:
            raise ValueError("snapshots must be >= 1")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if not (np.isfinite(self.stepsize) and self.stepsize >= 0.0):
            raise ValueError("stepsize must be finite and >= 0")


@dataclass(frozen=True)
class LocalTrace:
    """Outcome of one agent-local update.

    v_sq_norms : squared norms of the stochastic directions in execution
                 order; shape (snapshots, inner_steps) for the
                 variance-reduced solver, (1, steps) for plain SGD
    delta_w    : final local iterate minus the round's starting point
    """

    v_sq_norms: np.ndarray
    delta_w: np.ndarray


class DivergenceError(RuntimeError):
    """A local iterate became non-finite."""

    def __init__(self, snapshot: int, step: int):
        super().__init__(
            f"non-finite iterate at snapshot {snapshot}, inner step {step}"
        )
        self.snapshot = snapshot
        self.step = step


def variance_reduced_grad(
    kind: LossKind,
    shard: AgentShard,
    w: np.ndarray,
    w_tilde: np.ndarray,
    mu_tilde: np.ndarray,
    sample: int,
) -> np.ndarray:
    """Anchored stochastic gradient: grad_i(w) - grad_i(w_anchor) + full grad at anchor.

    ``mu_tilde`` must be the full shard gradient at ``w_tilde``; under that
    contract the estimator is unbiased for the full gradient at ``w`` when
    ``sample`` is uniform over the shard.
    """
    if mu_tilde.shape != w.shape:
        raise ValueError(f"mu_tilde has shape {mu_tilde.shape}, expected {w.shape}")
    return (
        component_grad(kind, shard, sample, w)
        - component_grad(kind, shard, sample, w_tilde)
        + mu_tilde
    )


def svrg_local_update(
    kind: LossKind,
    shard: AgentShard,
    theta_k: np.ndarray,
    params: SvrgParams,
    rng: np.random.Generator,
) -> LocalTrace:
    """Run the full variance-reduced local update starting from ``theta_k``.

    For each snapshot cycle the full shard gradient is computed at the
    current anchor, then ``inner_steps`` anchored stochastic steps are taken
    with samples drawn uniformly with replacement; the anchor then jumps to
    the last inner iterate. Deterministic given the generator state.
    """
    n = shard.n_samples
    v_sq = np.zeros((params.snapshots, params.inner_steps))
    w_tilde = np.array(theta_k, dtype=float)
    w = w_tilde
    # Overflow on the divergence path is detected below, not warned about.
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(params.snapshots):
            mu_tilde = agent_full_grad(kind, shard, w_tilde)
            w = w_tilde
            for m in range(params.inner_steps):
                sample = int(rng.integers(n))
                v = variance_reduced_grad(kind, shard, w, w_tilde, mu_tilde, sample)
                v_sq[s, m] = float(v @ v)
                w = w - params.stepsize * v
                if not (np.isfinite(v_sq[s, m]) and np.isfinite(w).all()):
                    raise DivergenceError(s, m)
            w_tilde = w
    return LocalTrace(v_sq_norms=v_sq, delta_w=w - theta_k)


def sgd_local_update(
    kind: LossKind,
    shard: AgentShard,
    theta_k: np.ndarray,
    steps: int,
    stepsize: float,
    rng: np.random.Generator,
) -> LocalTrace:
    """Plain stochastic gradient local update with a fixed scalar stepsize.

    The per-round stepsize schedule is resolved by the caller; this routine
    only consumes the already-resolved value.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not (np.isfinite(stepsize) and stepsize >= 0.0):
        raise ValueError("stepsize must be finite and >= 0")
    n = shard.n_samples
    v_sq = np.zeros((1, steps))
    w = np.array(theta_k, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(steps):
            sample = int(rng.integers(n))
            g = component_grad(kind, shard, sample, w)
            v_sq[0, m] = float(g @ g)
            w = w - stepsize * g
            if not (np.isfinite(v_sq[0, m]) and np.isfinite(w).all()):
                raise DivergenceError(0, m)
    return LocalTrace(v_sq_norms=v_sq, delta_w=w - theta_k)
