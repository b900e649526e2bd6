import os

import numpy as np
import pytest

from graphmtl.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from graphmtl.harness import (
    ConfigError,
    ExperimentConfig,
    OUTPUT_ROOT_ENV,
    consensus_suite,
    emit_plots,
    parse_config_file,
    ridge_solve,
    run_experiment,
    run_local_baseline,
)
from graphmtl.losses import LossModel, TaskData
from graphmtl.objective import population_loss
from graphmtl.trace import BASE_HEADER, TraceRow, TraceWriter, read_trace

SQ = LossModel("squared")

WORLD_KV = {
    "world.d": "5",
    "world.m": "6",
    "world.clusters": "2",
    "world.train_n": "20",
    "world.dev_size": "60",
    "world.test_size": "60",
    "world.knn_k": "3",
    "world.seed": "3",
}


def config_for(algorithm, output, **extra):
    kv = dict(WORLD_KV)
    kv["algorithm"] = algorithm
    kv["output"] = str(output)
    kv.update({k: str(v) for k, v in extra.items()})
    return ExperimentConfig.from_mapping(kv)


class TestConfig:
    def test_parse_file_and_run_key_roundtrip(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("algorithm = bsr\nworld.d = 4  # comment\n\nworld.m = 6\n"
                        "world.clusters = 2\nworld.train_n = 10\nworld.knn_k=3\nrounds = 7\n")
        kv = parse_config_file(path)
        assert kv["algorithm"] == "bsr"
        cfg = ExperimentConfig.from_mapping(kv)
        assert cfg.rounds == 7
        assert cfg.world_spec.d == 4

    def test_unknown_algorithm_rejected(self):
        with pytest.raises(ConfigError, match="algorithm"):
            config_for("warp_drive", "x")

    def test_world_required(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping({"algorithm": "bsr"})

    def test_eta_tau_must_pair(self):
        with pytest.raises(ConfigError):
            config_for("bsr", "x", **{"hp.eta": 1.0})

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("this is not a key value pair\n")
        with pytest.raises(ConfigError):
            parse_config_file(path)


class TestLocalBaseline:
    def test_huge_lambda_shrinks_to_zero(self, small_world):
        W, rows, lam = run_local_baseline(SQ, small_world, [1e12])
        assert np.abs(W).max() < 1e-9
        assert rows[0].comm_rounds == 0
        assert rows[0].vectors_per_machine == 0.0

    def test_lambda_zero_full_rank_least_squares(self, small_world):
        data = small_world.train[0]
        w = ridge_solve(data, 0.0)
        grad = data.x.T @ (data.x @ w - data.y) / data.n
        assert np.linalg.norm(grad) < 1e-8

    def test_argmin_matches_brute_force(self, small_world):
        grid = [10.0**k for k in range(-4, 2)]
        _, _, lam = run_local_baseline(SQ, small_world, grid)
        dev_losses = {}
        for cand in grid:
            W = np.stack([ridge_solve(d, cand) for d in small_world.train], axis=1)
            dev_losses[cand] = population_loss(SQ, W, small_world.dev)
        assert lam == min(dev_losses, key=dev_losses.get)

    def test_tuning_ignores_test_split(self, small_world):
        from dataclasses import replace

        _, _, lam1 = run_local_baseline(SQ, small_world, [0.01, 0.1, 1.0])
        garbage_test = [
            TaskData(x=d.x, y=d.y + 100.0) for d in small_world.test
        ]
        tampered = replace(small_world, test=garbage_test)
        _, _, lam2 = run_local_baseline(SQ, tampered, [0.01, 0.1, 1.0])
        assert lam1 == lam2

    def test_empty_grid_rejected(self, small_world):
        with pytest.raises(ConfigError):
            run_local_baseline(SQ, small_world, [])


class TestRunExperiment:
    def test_centralized_single_row_is_oracle(self, tmp_path):
        res = run_experiment(config_for("centralized", tmp_path / "c"))
        columns, rows = read_trace(res.trace_path)
        assert columns == BASE_HEADER.split(",")
        assert len(rows) == 1
        assert rows[0]["comm_rounds"] == 1
        # the centralized solution minimizes the ERM objective: rerunning bsr
        # long enough converges to the same value
        res2 = run_experiment(config_for("bsr", tmp_path / "b", rounds=4000))
        _, rows2 = read_trace(res2.trace_path)
        assert rows2[-1]["erm_objective"] == pytest.approx(rows[0]["erm_objective"], rel=1e-6)

    def test_deterministic_traces(self, tmp_path):
        for algo, extra in [("bsr", {"rounds": 4}), ("acsa", {"rounds": 3, "minibatch": 2})]:
            paths = []
            for run in range(2):
                out = tmp_path / f"{algo}_{run}"
                res = run_experiment(config_for(algo, out, seed=7, **extra))
                paths.append(res.trace_path)
            assert open(paths[0], "rb").read() == open(paths[1], "rb").read()

    def test_seed_changes_stochastic_trace(self, tmp_path):
        r1 = run_experiment(config_for("acsa", tmp_path / "s1", seed=1, rounds=3, minibatch=2))
        r2 = run_experiment(config_for("acsa", tmp_path / "s2", seed=2, rounds=3, minibatch=2))
        assert open(r1.trace_path).read() != open(r2.trace_path).read()

    def test_solver_failure_preserves_partial_trace(self, tmp_path):
        cfg = config_for("acsa", tmp_path / "fail", rounds=10, minibatch=4, budget=12)
        res = run_experiment(cfg)
        assert res.status == "error"
        _, rows = read_trace(res.trace_path)
        assert len(rows) == 3  # budget 12 allows exactly 3 rounds of 4
        summary = (tmp_path / "fail" / "summary.txt").read_text()
        assert "status = error" in summary
        assert "StreamExhaustedError" in summary

    def test_disconnected_world_is_config_error(self, tmp_path):
        kv = dict(WORLD_KV)
        kv.update({"world.seed": "1", "world.m": "6", "world.knn_k": "2", "world.d": "4"})
        kv["algorithm"] = "bsr"
        kv["output"] = str(tmp_path / "d")
        cfg = ExperimentConfig.from_mapping(kv)
        with pytest.raises(ConfigError, match="disconnected"):
            run_experiment(cfg)

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
        res = run_experiment(config_for("local", "rel/out"))
        assert res.trace_path.startswith(str(tmp_path))

    def test_plot_emission_flag(self, tmp_path):
        res = run_experiment(config_for("bsr", tmp_path / "pl", rounds=3, plot="true"))
        assert res.status == "ok"
        assert (tmp_path / "pl" / "population_loss_vs_rounds.svg").exists()

    def test_resample_stream_mode(self, tmp_path):
        res = run_experiment(
            config_for("ssr", tmp_path / "rs", rounds=3, minibatch=4,
                       stream="resample_train", seed=5)
        )
        assert res.status == "ok"
        _, rows = read_trace(res.trace_path)
        assert rows[-1]["samples_per_machine"] == 12

    def test_delayed_trace_extra_columns(self, tmp_path):
        res = run_experiment(config_for("bol_delayed", tmp_path / "dly", rounds=4, gamma_max=2))
        columns, rows = read_trace(res.trace_path)
        assert columns[-4:] == ["gamma_max", "mean_delay", "v_t", "theorem7_bound"]
        assert all(r["v_t"] is not None for r in rows)


class TestAccounting:
    @pytest.mark.parametrize(
        "algo,extra", [("bsr", {}), ("acsa", {"minibatch": 2}), ("bol", {}),
                       ("sol", {"minibatch": 2}), ("local", {})]
    )
    def test_profiles(self, tmp_path, algo, extra):
        res = run_experiment(config_for(algo, tmp_path / algo, rounds=3, **extra))
        _, rows = read_trace(res.trace_path)
        from graphmtl.synthdata import TaskSpec, generate_world

        world = generate_world(TaskSpec(d=5, m=6, C=2, n=20, dev_size=60, test_size=60,
                                        knn_k=3, seed=3))
        expected = {
            "bsr": float(world.spec.m),
            "acsa": float(world.spec.m),
            "bol": world.graph.edge_count / world.spec.m,
            "sol": world.graph.edge_count / world.spec.m,
            "local": 0.0,
        }[algo]
        assert all(r["vectors_per_machine"] == expected for r in rows)


class TestConsensusSuite:
    def test_all_checks_pass(self, small_setup):
        model, world, graph, _, hp, _ = small_setup
        report = consensus_suite(model, graph, hp, world.train)
        assert report.passed
        names = [c.check for c in report.checks]
        assert "uniform_weights_column_identity" in names
        assert "tau_1e8_entrywise_gap" in names

    def test_disconnected_graph_refused(self, small_setup):
        from graphmtl.graph import build_laplacian

        model, world, _, _, hp, _ = small_setup
        a = np.zeros((6, 6))
        a[0, 1] = a[1, 0] = 1.0
        a[2, 3] = a[3, 2] = 1.0
        a[4, 5] = a[5, 4] = 1.0
        with pytest.raises(ConfigError):
            consensus_suite(model, build_laplacian(a), hp, world.train[:6])


class TestTraceWriter:
    def test_rows_flushed_incrementally(self, tmp_path):
        path = tmp_path / "t.csv"
        with TraceWriter(path) as w:
            w.append(TraceRow(1, 1, 2.0, 10, 1.0, 2.0))
            mid = path.read_text()
            assert len(mid.splitlines()) == 2
            w.append(TraceRow(2, 2, 2.0, 20, 0.5, 1.5, dist_to_oracle=0.1))
        cols, rows = read_trace(path)
        assert rows[0]["dist_to_oracle"] is None
        assert rows[1]["dist_to_oracle"] == 0.1
        assert rows[1]["wall_ms"] == 0.0

    def test_extra_columns_enforced(self, tmp_path):
        with TraceWriter(tmp_path / "e.csv", extra_columns=("a", "b")) as w:
            with pytest.raises(ValueError):
                w.append(TraceRow(1, 1, 0.0, 0, 0.0, 0.0))


class TestPlots:
    def test_deterministic_svg(self, tmp_path):
        rows = [
            TraceRow(t, t, 2.0, 10 * t, 1.0 / t, 2.0 / t) for t in range(1, 6)
        ]
        p1 = emit_plots({"bsr": rows}, "rounds", tmp_path / "p1", local_ref=1.9, centralized_ref=1.6)
        p2 = emit_plots({"bsr": rows}, "rounds", tmp_path / "p2", local_ref=1.9, centralized_ref=1.6)
        assert open(p1[0], "rb").read() == open(p2[0], "rb").read()

    def test_axis_variants(self, tmp_path):
        rows = [TraceRow(t, t, 2.0, 10 * t, 1.0, 2.0) for t in range(1, 4)]
        for axis in ("rounds", "samples", "passes"):
            out = emit_plots({"x": rows}, axis, tmp_path / axis)
            assert os.path.exists(out[0])

    def test_mismatched_schema_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="schema"):
            emit_plots(
                {"a": [{"comm_rounds": 1, "population_loss": 1.0, "samples_per_machine": 1}],
                 "b": [{"comm_rounds": 1, "population_loss": 1.0}]},
                "rounds",
                tmp_path / "m",
            )

    def test_single_trace_has_one_curve_two_reference_lines(self, tmp_path):
        rows = [TraceRow(t, t, 2.0, 10 * t, 1.0 / t, 2.0 / t) for t in range(1, 6)]
        paths = emit_plots(
            {"ssr": rows}, "rounds", tmp_path / "svg", local_ref=1.8, centralized_ref=1.5
        )
        svg = open(paths[0]).read()
        for legend_label in ("ssr", "local", "centralized"):
            assert legend_label in svg


class TestCli:
    def test_gen_run_plot_pipeline(self, tmp_path, capsys):
        world_dir = tmp_path / "w"
        assert main([
            "gen", "--out", str(world_dir), "--d", "5", "--m", "6", "--clusters", "2",
            "--train-n", "20", "--dev-size", "40", "--test-size", "40",
            "--knn-k", "3", "--seed", "3",
        ]) == EXIT_OK
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            f"world.path = {world_dir}\nalgorithm = bsr\nrounds = 3\noutput = {tmp_path/'out'}\n"
        )
        assert main(["run", "--config", str(cfg)]) == EXIT_OK
        assert main([
            "plot", "--traces", str(tmp_path / "out" / "trace.csv"),
            "--axis", "samples", "--out", str(tmp_path / "plots"),
        ]) == EXIT_OK

    def test_gen_rejects_disconnected_seed(self, tmp_path):
        assert main([
            "gen", "--out", str(tmp_path / "w"), "--d", "4", "--m", "6",
            "--clusters", "2", "--train-n", "5", "--dev-size", "5",
            "--test-size", "5", "--knn-k", "2", "--seed", "1",
        ]) == EXIT_CONFIG

    def test_config_error_exit_code(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("algorithm = nope\nworld.d = 4\n")
        assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG

    def test_solver_failure_exit_code(self, tmp_path):
        cfg = tmp_path / "f.cfg"
        lines = [f"{k} = {v}" for k, v in WORLD_KV.items()]
        lines += ["algorithm = acsa", "rounds = 10", "minibatch = 4", "budget = 12",
                  f"output = {tmp_path/'o'}"]
        cfg.write_text("\n".join(lines) + "\n")
        assert main(["run", "--config", str(cfg)]) == EXIT_SOLVER

    def test_seed_flag_overrides(self, tmp_path):
        cfg = tmp_path / "s.cfg"
        lines = [f"{k} = {v}" for k, v in WORLD_KV.items()]
        lines += ["algorithm = acsa", "rounds = 3", "minibatch = 2", "seed = 1",
                  f"output = {tmp_path/'o1'}"]
        cfg.write_text("\n".join(lines) + "\n")
        assert main(["run", "--config", str(cfg)]) == EXIT_OK
        trace1 = (tmp_path / "o1" / "trace.csv").read_text()
        cfg2 = tmp_path / "s2.cfg"
        cfg2.write_text("\n".join(lines).replace("o1", "o2") + "\n")
        assert main(["run", "--config", str(cfg2), "--seed", "99"]) == EXIT_OK
        assert (tmp_path / "o2" / "trace.csv").read_text() != trace1

    def test_consensus_suite_command(self, tmp_path):
        out = tmp_path / "consensus.csv"
        assert main(["consensus-suite", "--seed", "0", "--out", str(out)]) == EXIT_OK
        assert out.read_text().startswith("check,observed,bound_or_band,margin,pass")

    def test_verify_command(self, tmp_path):
        out = tmp_path / "reports"
        assert main(["verify", "--out", str(out), "--seed", "0"]) == EXIT_OK
        for name in ("lemma6", "rate", "consensus"):
            assert (out / f"{name}.csv").exists()

    def test_sweep_generates_and_runs(self, tmp_path):
        cfg = tmp_path / "base.cfg"
        lines = [f"{k} = {v}" for k, v in WORLD_KV.items()]
        lines += ["algorithm = bsr", "rounds = 2", f"output = {tmp_path/'x'}"]
        cfg.write_text("\n".join(lines) + "\n")
        out = tmp_path / "sweep"
        assert main([
            "sweep", "--config", str(cfg), "--key", "rounds", "--values", "2,3",
            "--out", str(out), "--run",
        ]) == EXIT_OK
        assert (out / "config_000.cfg").exists()
        sub = [p for p in out.iterdir() if p.is_dir()]
        assert len(sub) == 2
