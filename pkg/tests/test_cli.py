import json

import pytest

import pdmp_avgctl as pa
from pdmp_avgctl import cli

from toy_models import dominated_toy_doc, renewal_doc, two_state_jump_doc


def run_cli(args) -> int:
    try:
        return cli.main([str(a) for a in args])
    except SystemExit as exc:
        return int(exc.code)


@pytest.fixture
def bundled(tmp_path):
    # copy so artifacts land next to nothing important
    return pa.bundled_model_path("ctmdp_2state")


class TestExitCodes:
    def test_validate_ok(self, bundled, tmp_path):
        assert run_cli(["validate", "--model", bundled, "--out", tmp_path]) == 0

    def test_validate_flags_corrupted_kernel(self, write_model, tmp_path):
        doc = two_state_jump_doc()
        doc["kernel"]["interior"][1][0] = [0.6, 0.4 + 5e-10]
        path = write_model(doc, "corrupt")
        assert run_cli(["validate", "--model", path, "--out", tmp_path]) == 1

    def test_missing_file_is_usage_error(self, tmp_path):
        assert run_cli(["validate", "--model", tmp_path / "none.json"]) == 2

    def test_unparsable_file_is_usage_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run_cli(["validate", "--model", bad]) == 2

    def test_zero_horizon_is_usage_error(self, bundled, tmp_path):
        code = run_cli(["simulate", "--model", bundled, "--horizon", "0",
                        "--seed", "1", "--out", tmp_path])
        assert code == 2

    def test_missing_seed_is_usage_error(self, bundled, tmp_path):
        assert run_cli(["simulate", "--model", bundled, "--out", tmp_path]) == 2

    def test_max_iter_exhaustion_is_nonconvergence(self, tmp_path):
        model = pa.bundled_model_path("decay_flow_16")
        code = run_cli(["solve", "--model", model, "--max-iter", "1", "--out", tmp_path])
        assert code == 3

    def test_strict_audit_failure(self, write_model, tmp_path):
        doc = two_state_jump_doc()
        doc["constants"]["b"] = 0.0  # interior-growth check fails (sup equals c > 0)
        path = write_model(doc, "auditfail")
        code = run_cli(["solve", "--model", path, "--strict-audit", "--out", tmp_path])
        assert code == 4

    def test_simulation_abort_maps_to_exit_5(self, bundled, tmp_path, monkeypatch):
        from pdmp_avgctl.simulation import SimulationExplosionError

        def boom(*args, **kwargs):
            raise SimulationExplosionError("guard tripped", {"jumps": 1})

        monkeypatch.setattr(cli, "cmd_simulate", cli.cmd_simulate)  # keep reference
        monkeypatch.setattr("pdmp_avgctl.simulation.mc_validate", boom)
        code = run_cli(["simulate", "--model", bundled, "--rho", "1.0",
                        "--seed", "1", "--out", tmp_path])
        assert code == 5


class TestSolveArtifacts:
    def test_single_action_model_one_row_trace(self, write_model, tmp_path):
        path = write_model(renewal_doc(), "renewal")
        assert run_cli(["solve", "--model", path, "--out", tmp_path]) == 0
        trace = json.loads((tmp_path / "trace.json").read_text())
        assert trace["status"] == "converged"
        assert len(trace["iterations"]) == 1
        csv_lines = (tmp_path / "trace.csv").read_text().splitlines()
        assert csv_lines[0].startswith("# model_sha256=")
        assert csv_lines[1].split(",")[:3] == ["n", "rho", "poisson_residual"]

    def test_dominated_toy_solves_to_better_action(self, write_model, tmp_path):
        path = write_model(dominated_toy_doc(), "dom")
        assert run_cli(["solve", "--model", path, "--out", tmp_path]) == 0
        policy = json.loads((tmp_path / "policy.json").read_text())
        assert policy["interior"] == [1, 1]

    def test_solve_accepts_a_configured_initial_policy(self, write_model, tmp_path):
        path = write_model(dominated_toy_doc(), "dom")
        start = tmp_path / "start.json"
        start.write_text(json.dumps({"interior": [1, 1], "boundary": []}))
        assert run_cli(["solve", "--model", path, "--policy", start, "--out", tmp_path]) == 0
        trace = json.loads((tmp_path / "trace.json").read_text())
        assert len(trace["iterations"]) == 1  # started at the optimum

    def test_artifacts_embed_model_hash_and_version(self, bundled, tmp_path):
        run_cli(["solve", "--model", bundled, "--out", tmp_path])
        model = pa.load_model(bundled)
        for name in ("evaluation.json", "policy.json", "trace.json"):
            doc = json.loads((tmp_path / name).read_text())
            assert doc["model_sha256"] == model.source_hash
            assert doc["tool_version"] == pa.__version__

    def test_reruns_are_byte_identical(self, bundled, tmp_path):
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        run_cli(["solve", "--model", bundled, "--deterministic", "--out", out1])
        run_cli(["solve", "--model", bundled, "--deterministic", "--out", out2])
        for name in ("evaluation.json", "policy.json", "trace.json", "trace.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


class TestPipeline:
    def test_solve_then_simulate_verdict_passes(self, write_model, tmp_path):
        path = write_model(dominated_toy_doc(), "dom")
        assert run_cli(["solve", "--model", path, "--out", tmp_path]) == 0
        rho = json.loads((tmp_path / "evaluation.json").read_text())["rho"]
        code = run_cli(["simulate", "--model", path, "--policy", tmp_path / "policy.json",
                        "--rho", rho, "--horizon", "3000", "--reps", "8",
                        "--seed", "9", "--out", tmp_path])
        assert code == 0
        verdict = json.loads((tmp_path / "mc_summary.json").read_text())
        assert verdict["passed"] is True

    def test_plain_simulation_summary_and_trajectory(self, write_model, tmp_path):
        path = write_model(renewal_doc(), "renewal")
        code = run_cli(["simulate", "--model", path, "--horizon", "50", "--seed", "3",
                        "--trajectory-csv", "--out", tmp_path])
        assert code == 0
        summary = json.loads((tmp_path / "sim_summary.json").read_text())
        assert summary["average"] == pytest.approx(0.7, abs=1e-12)
        lines = (tmp_path / "trajectory.csv").read_text().splitlines()
        assert lines[1].split(",") == ["t", "event_type", "state", "cost_so_far"]
        assert lines[-1].split(",")[1] == "end"

    def test_report_emits_plot_csvs(self, bundled, tmp_path):
        run_cli(["solve", "--model", bundled, "--out", tmp_path])
        assert run_cli(["report", "--trace", tmp_path / "trace.json", "--out", tmp_path]) == 0
        rho_rows = (tmp_path / "rho_vs_n.csv").read_text().splitlines()
        assert rho_rows[1] == "n,rho"
        assert len(rho_rows) >= 3

    def test_audit_command_writes_report(self, bundled, tmp_path):
        assert run_cli(["audit", "--model", bundled, "--out", tmp_path]) == 0
        doc = json.loads((tmp_path / "audit.json").read_text())
        assert doc["passed"] is True

    def test_evaluate_command(self, bundled, tmp_path):
        assert run_cli(["evaluate", "--model", bundled, "--out", tmp_path]) == 0
        doc = json.loads((tmp_path / "evaluation.json").read_text())
        assert doc["rho"] == pytest.approx(1.5625, abs=1e-9)
