import json
import subprocess
import sys

import numpy as np
import pytest

from fedsim.config import parse_config
from fedsim.experiment import run_experiment


def experiment_doc(**overrides):
    doc = {
        "name": "tiny",
        "data": {
            "n_agents": 3,
            "samples_per_agent": 5,
            "dimension": 2,
            "noise_std": 1.0,
            "data_seed": 12,
        },
        "runs": 3,
        "master_seed": 77,
        "theta0": 0.0,
        "schedule": {"kind": "per_agent", "probs": [0.6, 0.9, 1.0]},
        "algorithms": [
            {"kind": "fedavg_svrg", "rounds": 4, "snapshots": 2, "inner_steps": 2,
             "stepsize": 0.05},
            {"kind": "fedavg_prob_sgd", "rounds": 4, "base_stepsize": 0.05},
            {"kind": "fedavg_uniform_batch", "rounds": 4, "batch_size": 2,
             "base_stepsize": 0.05},
        ],
    }
    doc.update(overrides)
    return doc


def read_outputs(out_dir):
    files = sorted(p.name for p in out_dir.iterdir())
    return {name: (out_dir / name).read_bytes() for name in files}


def run_cli(args, **kwargs):
    return subprocess.run(
        [sys.executable, "-m", "fedsim", *args],
        capture_output=True, text=True, **kwargs,
    )


class TestRunExperiment:
    def test_trivial_config_single_row_per_algorithm(self, tmp_path):
        doc = experiment_doc(
            runs=1,
            data={"n_agents": 1, "samples_per_agent": 5, "dimension": 2,
                  "noise_std": 1.0, "data_seed": 12},
            schedule={"kind": "constant", "p": 1.0},
            algorithms=[
                {"kind": "fedavg_svrg", "rounds": 1, "snapshots": 1, "inner_steps": 1,
                 "stepsize": 0.05},
                {"kind": "fedavg_prob_sgd", "rounds": 1, "base_stepsize": 0.05},
                {"kind": "fedavg_uniform_batch", "rounds": 1, "batch_size": 1,
                 "base_stepsize": 0.05},
            ],
        )
        result = run_experiment(parse_config(doc), output_dir=tmp_path / "out")
        for alg in result.config.algorithms:
            lines = (tmp_path / "out" / f"trace_{alg.name}.csv").read_text().splitlines()
            assert lines[0] == "run,round,cost,cost_error,grad_norm_sq,n_active"
            assert len(lines) == 2
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["runs"] == 1
        for alg_summary in summary["algorithms"].values():
            assert alg_summary["final_variance"] is None
            assert alg_summary["cep_radius"] == 0.0

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = parse_config(experiment_doc())
        out = tmp_path / "out"
        run_experiment(cfg, output_dir=out)
        first = read_outputs(out)
        run_experiment(cfg, output_dir=out)
        second = read_outputs(out)
        assert first.keys() == second.keys()
        assert all(first[k] == second[k] for k in first)

    def test_worker_count_does_not_change_bytes(self, tmp_path):
        cfg = parse_config(experiment_doc())
        out = tmp_path / "out"
        run_experiment(cfg, output_dir=out, workers=1)
        serial = read_outputs(out)
        run_experiment(cfg, output_dir=out, workers=3)
        parallel = read_outputs(out)
        assert serial.keys() == parallel.keys()
        assert all(serial[k] == parallel[k] for k in serial)

    def test_bernoulli_algorithms_share_participation(self, tmp_path):
        cfg = parse_config(experiment_doc())
        result = run_experiment(cfg, output_dir=tmp_path / "out")
        svrg = result.traces["fedavg_svrg"]
        sgd = result.traces["fedavg_prob_sgd"]
        for run_svrg, run_sgd in zip(svrg, sgd):
            for rec_a, rec_b in zip(run_svrg.records, run_sgd.records):
                assert np.array_equal(rec_a.indicators, rec_b.indicators)

    def test_adding_an_algorithm_preserves_other_streams(self, tmp_path):
        solo = experiment_doc()
        solo["algorithms"] = [solo["algorithms"][0]]
        both = experiment_doc()
        res_solo = run_experiment(parse_config(solo), output_dir=tmp_path / "solo")
        res_both = run_experiment(parse_config(both), output_dir=tmp_path / "both")
        for a, b in zip(res_solo.traces["fedavg_svrg"], res_both.traces["fedavg_svrg"]):
            for rec_a, rec_b in zip(a.records, b.records):
                assert np.array_equal(rec_a.theta, rec_b.theta)

    def test_summary_schema(self, tmp_path):
        cfg = parse_config(experiment_doc())
        run_experiment(cfg, output_dir=tmp_path / "out")
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert set(summary["algorithms"]) == {
            "fedavg_svrg", "fedavg_prob_sgd", "fedavg_uniform_batch"
        }
        svrg = summary["algorithms"]["fedavg_svrg"]
        assert {"final_mean_cost_error", "final_variance", "cep_radius",
                "cep_radius_2d", "avg_grad_norm_sq", "bound_lhs", "bound_rhs",
                "bound_imputed_cells"} <= set(svrg)
        assert svrg["bound_lhs"] is not None
        assert svrg["bound_rhs"] is not None
        assert summary["algorithms"]["fedavg_prob_sgd"]["bound_lhs"] is None
        resolved = json.loads((tmp_path / "out" / "config_resolved.json").read_text())
        assert resolved == cfg.with_overrides(output_dir=str(tmp_path / "out")).to_dict()

    def test_csv_floats_round_trip(self, tmp_path):
        cfg = parse_config(experiment_doc())
        result = run_experiment(cfg, output_dir=tmp_path / "out")
        lines = (tmp_path / "out" / "trace_fedavg_svrg.csv").read_text().splitlines()
        first = lines[1].split(",")
        cost = float(first[2])
        assert cost == result.traces["fedavg_svrg"][0].records[0].cost


class TestCli:
    def test_validate_ok(self, tmp_path):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(experiment_doc()))
        proc = run_cli(["validate", str(path)])
        assert proc.returncode == 0
        assert proc.stdout.startswith("OK tiny")

    def test_validate_builtin_name(self):
        proc = run_cli(["validate", "paper_case1"])
        assert proc.returncode == 0
        assert "paper_case1" in proc.stdout

    def test_validate_bad_config_exits_2(self, tmp_path):
        doc = experiment_doc(schedule={"kind": "constant", "p": 0})
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        proc = run_cli(["validate", str(path)])
        assert proc.returncode == 2
        assert "schedule.p" in proc.stderr
        assert proc.stdout == ""

    def test_missing_config_exits_2(self):
        proc = run_cli(["validate", "/nonexistent/path.json"])
        assert proc.returncode == 2

    def test_oracle_prints_optimum(self, tmp_path):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(experiment_doc()))
        proc = run_cli(["oracle", str(path)])
        assert proc.returncode == 0
        payload = json.loads(proc.stdout)
        assert set(payload) == {"theta_star", "f_star", "smoothness"}
        assert len(payload["theta_star"]) == 2

    def test_run_writes_artifacts_and_keeps_stdout_clean(self, tmp_path):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(experiment_doc()))
        out = tmp_path / "results"
        proc = run_cli(["run", str(path), "--output-dir", str(out)])
        assert proc.returncode == 0
        assert proc.stdout == ""
        assert (out / "summary.json").exists()
        assert (out / "config_resolved.json").exists()
        assert (out / "trace_fedavg_svrg.csv").exists()

    def test_run_master_seed_override_changes_results(self, tmp_path):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(experiment_doc()))
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert run_cli(["run", str(path), "--output-dir", str(out_a)]).returncode == 0
        assert run_cli([
            "run", str(path), "--output-dir", str(out_b), "--master-seed", "123",
        ]).returncode == 0
        a = (out_a / "trace_fedavg_svrg.csv").read_bytes()
        b = (out_b / "trace_fedavg_svrg.csv").read_bytes()
        assert a != b
        resolved = json.loads((out_b / "config_resolved.json").read_text())
        assert resolved["master_seed"] == 123

    def test_training_failure_reports_identity(self, tmp_path):
        doc = experiment_doc()
        doc["algorithms"] = [{
            "kind": "fedavg_svrg", "rounds": 2, "snapshots": 1, "inner_steps": 4,
            "stepsize": 1e200,
        }]
        path = tmp_path / "diverge.json"
        path.write_text(json.dumps(doc))
        proc = run_cli(["run", str(path), "--output-dir", str(tmp_path / "out")])
        assert proc.returncode == 1
        report = json.loads(proc.stderr.splitlines()[-1])
        assert report["error"] == "training_failure"
        assert report["algorithm"] == "fedavg_svrg"
        assert {"run", "round", "agent", "reason"} <= set(report)

    def test_log_env_var_controls_stderr(self, tmp_path):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(experiment_doc()))
        quiet = run_cli(["oracle", str(path)], env={"PATH": "/usr/bin:/bin"})
        chatty = run_cli(
            ["run", str(path), "--output-dir", str(tmp_path / "o")],
            env={"PATH": "/usr/bin:/bin", "FEDSIM_LOG": "INFO"},
        )
        assert quiet.returncode == 0
        assert chatty.returncode == 0
        assert "experiment" in chatty.stderr
