"""Monte Carlo experiment driver and artifact writers.

One experiment generates a single dataset from ``data_seed`` that every
algorithm and every run shares (paired comparison), executes each
(algorithm, run) pair on a stream derived from the master seed, and writes
per-round CSV traces, a JSON summary and the fully resolved config. All
outputs are a pure function of the config: rerunning the same config, with
any worker count, reproduces the same bytes.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .federation import Algorithm, RunConfig, RunTrace, run_training
from .losses import (
    Dataset,
    LossKind,
    generate_regression_dataset,
    least_squares_oracle,
    smoothness_constant,
)
from .metrics import BoundCheck, McSummary, summarize_runs, theorem_bound_check

logger = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    """In-memory view of a completed experiment."""

    config: ExperimentConfig
    dataset: Dataset
    theta_true: np.ndarray
    theta_star: np.ndarray
    f_star: float
    smoothness: float
    traces: dict[str, list[RunTrace]]
    summaries: dict[str, McSummary]
    bounds: dict[str, BoundCheck]
    output_dir: Path


def build_dataset(config: ExperimentConfig) -> tuple[Dataset, np.ndarray]:
    """Materialize the experiment's shared dataset from its data seed."""
    data = config.data
    rng = np.random.default_rng(data.data_seed)
    return generate_regression_dataset(
        data.n_agents, data.samples_per_agent, data.dimension, data.noise_std, rng
    )


def _run_job(payload: tuple[Dataset, RunConfig, int]) -> RunTrace:
    dataset, run_cfg, run_index = payload
    return run_training(LossKind.QUADRATIC, dataset, run_cfg, run_index)


def _schedule_probs_matrix(run_cfg: RunConfig, n_agents: int) -> np.ndarray:
    return np.vstack([
        run_cfg.schedule.probabilities(k, n_agents) for k in range(run_cfg.rounds)
    ])


def _format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_trace_csv(path: Path, traces: list[RunTrace], f_star: float) -> None:
    """Per-round CSV: run,round,cost,cost_error,grad_norm_sq,n_active."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run", "round", "cost", "cost_error", "grad_norm_sq", "n_active"])
        for run_index, trace in enumerate(traces):
            for rec in trace.records:
                writer.writerow([
                    run_index,
                    rec.round_index,
                    _format_float(rec.cost),
                    _format_float(rec.cost - f_star),
                    _format_float(rec.grad_norm_sq),
                    rec.n_active,
                ])


def _summary_payload(result: "ExperimentResult") -> dict:
    algorithms = {}
    for name, summary in result.summaries.items():
        algorithms[name] = {
            "final_mean_cost_error": summary.final_mean_cost_error,
            "final_variance": summary.final_variance,
            "cep_radius": summary.cep_radius,
            "cep_radius_2d": summary.cep_radius_2d,
            "avg_grad_norm_sq": summary.avg_grad_norm_sq,
            "bound_lhs": summary.bound_lhs,
            "bound_rhs": summary.bound_rhs,
            "bound_imputed_cells": summary.bound_imputed_cells,
        }
    return {
        "experiment": result.config.name,
        "runs": result.config.runs,
        "f_star": result.f_star,
        "smoothness": result.smoothness,
        "theta_star": [float(v) for v in result.theta_star],
        "algorithms": algorithms,
    }


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_experiment(
    config: ExperimentConfig,
    output_dir: str | Path | None = None,
    workers: int = 1,
) -> ExperimentResult:
    """Execute every (algorithm, run) pair of an experiment and write artifacts.

    Jobs are independent pure functions of their derived seeds, so they may
    execute on up to ``workers`` processes; results are collected and
    written in deterministic (algorithm, run) order either way. An
    ``output_dir`` argument overrides the config's and is echoed in
    ``config_resolved.json`` so the written config reproduces this run.
    """
    if output_dir is not None:
        config = config.with_overrides(output_dir=str(output_dir))
    out_dir = Path(config.output_dir)
    dataset, theta_true = build_dataset(config)
    theta_star, f_star = least_squares_oracle(dataset)
    smoothness = smoothness_constant(LossKind.QUADRATIC, dataset)
    logger.info(
        "experiment %s: %d agents x %d samples, f_star=%.6g, smoothness=%.6g",
        config.name, dataset.n_agents, config.data.samples_per_agent, f_star, smoothness,
    )

    jobs = [
        (alg, run_index)
        for alg in config.algorithms
        for run_index in range(config.runs)
    ]
    results: dict[tuple[str, int], RunTrace] = {}
    if workers <= 1:
        for alg, run_index in jobs:
            results[(alg.name, run_index)] = _run_job((dataset, alg, run_index))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_run_job, (dataset, alg, run_index)): (alg.name, run_index)
                for alg, run_index in jobs
            }
            for future, key in futures.items():
                results[key] = future.result()

    traces: dict[str, list[RunTrace]] = {}
    summaries: dict[str, McSummary] = {}
    bounds: dict[str, BoundCheck] = {}
    for alg in config.algorithms:
        alg_traces = [results[(alg.name, run_index)] for run_index in range(config.runs)]
        traces[alg.name] = alg_traces
        bound = None
        if alg.algorithm is Algorithm.FEDAVG_SVRG:
            bound = theorem_bound_check(
                alg_traces,
                smoothness,
                alg_traces[0].initial_cost,
                f_star,
                alg.svrg,
                _schedule_probs_matrix(alg, dataset.n_agents),
            )
            bounds[alg.name] = bound
        summaries[alg.name] = summarize_runs(alg_traces, f_star, bound)
        logger.info(
            "algorithm %s: final mean cost error %.6g, CEP %.6g",
            alg.name, summaries[alg.name].final_mean_cost_error, summaries[alg.name].cep_radius,
        )

    result = ExperimentResult(
        config=config,
        dataset=dataset,
        theta_true=theta_true,
        theta_star=theta_star,
        f_star=f_star,
        smoothness=smoothness,
        traces=traces,
        summaries=summaries,
        bounds=bounds,
        output_dir=out_dir,
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    for name, alg_traces in traces.items():
        write_trace_csv(out_dir / f"trace_{name}.csv", alg_traces, f_star)
    _write_json(out_dir / "summary.json", _summary_payload(result))
    _write_json(out_dir / "config_resolved.json", config.to_dict())
    logger.info("wrote results to %s", out_dir)
    return result
