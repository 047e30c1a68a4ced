"""Command-line surface: validate, audit, evaluate, solve, simulate, report.

Exit codes partition failure modes: 0 success, 1 validation violations,
2 usage or I/O problems, 3 non-convergence, 4 strict-audit failure,
5 simulation abort.  Every artifact embeds the model file's content hash and
the tool version, so re-running a command with identical inputs reproduces
byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2
EXIT_NONCONVERGED = 3
EXIT_STRICT_AUDIT = 4
EXIT_SIM_ABORT = 5


@dataclass
class RunConfig:
    command: str
    model_path: Path
    tol: float = 1e-8
    tol_rho: float = 1e-8
    max_iter: int = 200
    horizon: float = 1e4
    replications: int = 32
    seed: int | None = None
    x0: int = 0
    out_dir: Path = Path(".")
    strict_audit: bool = False
    deterministic: bool = False
    threads: int | None = None
    policy_path: Path | None = None
    rho: float | None = None
    trace_path: Path | None = None
    trajectory_csv: bool = False

    def check(self) -> None:
        if self.tol <= 0 or self.tol_rho <= 0:
            raise SystemExit(EXIT_USAGE)
        if self.command == "simulate":
            if self.horizon <= 0:
                print("error: --horizon must be positive", file=sys.stderr)
                raise SystemExit(EXIT_USAGE)
            if self.seed is None:
                print("error: --seed is required for simulation", file=sys.stderr)
                raise SystemExit(EXIT_USAGE)


def _artifact_header(model) -> dict:
    from . import __version__

    return {"model_sha256": model.source_hash, "tool_version": __version__}


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _write_csv(path: Path, header_comment: str, fieldnames: list[str], rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(header_comment + "\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def _load_model_or_exit(path: Path):
    from .model import ModelFormatError, load_model

    try:
        return load_model(path)
    except ModelFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE) from None


def _load_policy(model, path: Path):
    import numpy as np

    from .model import FeedbackPolicy

    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read policy file {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE) from None
    policy = FeedbackPolicy(
        interior=np.asarray(doc["interior"], dtype=np.int64),
        boundary=np.asarray(doc.get("boundary", []), dtype=np.int64),
    )
    problems = policy.feasibility_problems(model)
    if problems:
        print("error: " + "; ".join(problems), file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)
    return policy


def cmd_validate(config: RunConfig) -> int:
    from .model import validate_model

    model = _load_model_or_exit(config.model_path)
    violations = validate_model(model)
    for v in violations:
        print(f"violation [{v.invariant}] at {v.location}: {v.message} (magnitude {v.magnitude:g})")
    if violations:
        return EXIT_VALIDATION
    print(f"ok: {model.name} ({model.n_states} states, {model.n_actions} actions, "
          f"{model.n_boundary} boundary points)")
    return EXIT_OK


def cmd_audit(config: RunConfig) -> int:
    from .model import FeedbackPolicy, audit_assumptions, validate_model

    model = _load_model_or_exit(config.model_path)
    if validate_model(model):
        print("error: model fails validation; run the validate command", file=sys.stderr)
        return EXIT_VALIDATION
    policy = (_load_policy(model, config.policy_path) if config.policy_path
              else FeedbackPolicy.lowest_feasible(model))
    report = audit_assumptions(model, policy)
    for item in report.items:
        slack = "" if not item.worst_slack == item.worst_slack else f" slack={item.worst_slack:.3g}"
        print(f"{item.name:8s} {item.status:14s}{slack} @ {item.worst_location}  {item.note}")
    payload = dict(_artifact_header(model), **report.to_dict())
    _write_json(config.out_dir / "audit.json", payload)
    print(f"audit {'passed' if report.passed else 'FAILED'}; report written to "
          f"{config.out_dir / 'audit.json'}")
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_evaluate(config: RunConfig) -> int:
    from .evaluation import EvaluationError, evaluate_policy
    from .model import FeedbackPolicy, validate_model

    model = _load_model_or_exit(config.model_path)
    if validate_model(model):
        print("error: model fails validation", file=sys.stderr)
        return EXIT_VALIDATION
    policy = (_load_policy(model, config.policy_path) if config.policy_path
              else FeedbackPolicy.lowest_feasible(model))
    try:
        result = evaluate_policy(model, policy, config.tol)
    except EvaluationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    payload = dict(_artifact_header(model), **result.to_dict())
    _write_json(config.out_dir / "evaluation.json", payload)
    print(f"rho = {result.rho:.12g}  D = {result.D:.6g}  residual = {result.residual:.3g}")
    return EXIT_OK


def _policy_payload(model, policy) -> dict:
    return dict(
        _artifact_header(model),
        schema="pdmp-policy/1",
        interior=[int(a) for a in policy.interior],
        boundary=[int(a) for a in policy.boundary],
    )


def cmd_solve(config: RunConfig) -> int:
    from .evaluation import EvaluationError
    from .model import FeedbackPolicy, audit_assumptions, validate_model
    from .policy_iteration import run_pia

    model = _load_model_or_exit(config.model_path)
    if validate_model(model):
        print("error: model fails validation", file=sys.stderr)
        return EXIT_VALIDATION

    u0 = (_load_policy(model, config.policy_path) if config.policy_path
          else FeedbackPolicy.lowest_feasible(model))
    report = audit_assumptions(model, u0)
    if not report.passed:
        failing = [it.name for it in report.items if it.status == "fail"]
        if config.strict_audit:
            print(f"error: strict audit failed ({', '.join(failing)})", file=sys.stderr)
            return EXIT_STRICT_AUDIT
        print(f"warning: audit failed ({', '.join(failing)}); continuing", file=sys.stderr)

    try:
        result, policy, trace = run_pia(model, u0, config.tol_rho, config.max_iter)
    except EvaluationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED

    _write_json(config.out_dir / "evaluation.json", dict(_artifact_header(model), **result.to_dict()))
    _write_json(config.out_dir / "policy.json", _policy_payload(model, policy))
    _write_json(config.out_dir / "trace.json", dict(_artifact_header(model), **trace.to_dict()))
    header = f"# model_sha256={model.source_hash} tool_version={_artifact_header(model)['tool_version']}"
    _write_csv(config.out_dir / "trace.csv", header,
               ["n", "rho", "poisson_residual", "changed_states", "optimality_residual",
                "delta_h", "h_gnorm"],
               trace.to_rows())
    print(f"status={trace.status} rho={result.rho:.12g} iterations={len(trace.records)} "
          f"artifacts in {config.out_dir}")
    return EXIT_OK if trace.status == "converged" else EXIT_NONCONVERGED


def cmd_simulate(config: RunConfig) -> int:
    from .model import FeedbackPolicy, validate_model
    from .simulation import SimulationExplosionError, mc_validate, simulate

    model = _load_model_or_exit(config.model_path)
    if validate_model(model):
        print("error: model fails validation", file=sys.stderr)
        return EXIT_VALIDATION
    policy = (_load_policy(model, config.policy_path) if config.policy_path
              else FeedbackPolicy.lowest_feasible(model))

    rho = config.rho
    if rho is None:
        result_path = config.out_dir / "evaluation.json"
        if result_path.exists():
            rho = json.loads(result_path.read_text()).get("rho")

    if not 0 <= config.x0 < model.n_states:
        print(f"error: --x0 must be in [0, {model.n_states})", file=sys.stderr)
        return EXIT_USAGE
    try:
        if rho is not None:
            verdict = mc_validate(model, policy, float(rho), config.x0, config.horizon,
                                  config.replications, config.seed)
            _write_json(config.out_dir / "mc_summary.json",
                        dict(_artifact_header(model), **verdict.to_dict()))
            print(f"verdict={'pass' if verdict.passed else 'fail'} "
                  f"mean={verdict.pooled_mean:.6g} se={verdict.pooled_se:.3g} rho={rho:.6g}")
            exit_code = EXIT_OK
        else:
            record, summary = simulate(model, policy, config.x0, config.horizon, config.seed)
            _write_json(config.out_dir / "sim_summary.json",
                        dict(_artifact_header(model), **summary.to_dict()))
            print(f"average={summary.average:.6g} se={summary.se:.3g} jumps={summary.jumps} "
                  f"boundary_hits={summary.boundary_hits}")
            if config.trajectory_csv:
                meta = _artifact_header(model)
                header = (f"# model_sha256={meta['model_sha256']} "
                          f"tool_version={meta['tool_version']}")
                rows = [{"t": t, "event_type": e, "state": s, "cost_so_far": c}
                        for t, e, s, c in record.to_rows()]
                _write_csv(config.out_dir / "trajectory.csv", header,
                           ["t", "event_type", "state", "cost_so_far"], rows)
            exit_code = EXIT_OK
    except SimulationExplosionError as exc:
        print(f"error: {exc} ({exc.stats})", file=sys.stderr)
        return EXIT_SIM_ABORT
    return exit_code


def cmd_report(config: RunConfig) -> int:
    trace_path = config.trace_path or (config.out_dir / "trace.json")
    try:
        doc = json.loads(Path(trace_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read trace {trace_path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rows = doc.get("iterations", [])
    header = (f"# model_sha256={doc.get('model_sha256', '')} "
              f"tool_version={doc.get('tool_version', '')}")
    _write_csv(config.out_dir / "rho_vs_n.csv", header, ["n", "rho"],
               [{"n": r["n"], "rho": r["rho"]} for r in rows])
    _write_csv(config.out_dir / "residuals_vs_n.csv", header,
               ["n", "poisson_residual", "optimality_residual"],
               [{"n": r["n"], "poisson_residual": r["poisson_residual"],
                 "optimality_residual": r["optimality_residual"]} for r in rows])
    print(f"plot-ready CSVs written to {config.out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdmp-avgctl",
        description="Average-cost control of piecewise-deterministic Markov processes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_required=True):
        if model_required:
            p.add_argument("--model", required=True, type=Path, help="model JSON file")
        p.add_argument("--out", type=Path, default=Path("."), help="artifact output directory")
        p.add_argument("--deterministic", action="store_true",
                       help="fixed reduction order for byte-identical artifacts")
        p.add_argument("--threads", type=int, default=None, help="cap worker threads")

    p = sub.add_parser("validate", help="check model invariants")
    common(p)
    p = sub.add_parser("audit", help="audit growth/ergodicity assumptions")
    common(p)
    p.add_argument("--policy", type=Path, default=None)
    p = sub.add_parser("evaluate", help="evaluate a fixed policy")
    common(p)
    p.add_argument("--policy", type=Path, default=None)
    p.add_argument("--tol", type=float, default=1e-8)
    p = sub.add_parser("solve", help="run policy iteration")
    common(p)
    p.add_argument("--policy", type=Path, default=None,
                   help="initial policy (default: lowest feasible action per state)")
    p.add_argument("--tol-rho", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--strict-audit", action="store_true")
    p = sub.add_parser("simulate", help="simulate a policy / validate rho by Monte Carlo")
    common(p)
    p.add_argument("--policy", type=Path, default=None)
    p.add_argument("--rho", type=float, default=None,
                   help="reference average cost; enables the Monte Carlo verdict")
    p.add_argument("--horizon", type=float, default=1e4)
    p.add_argument("--reps", type=int, default=32)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--x0", type=int, default=0, help="start state index")
    p.add_argument("--trajectory-csv", action="store_true")
    p = sub.add_parser("report", help="emit plot-ready CSVs from a solve trace")
    common(p, model_required=False)
    p.add_argument("--trace", type=Path, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    config = RunConfig(
        command=args.command,
        model_path=getattr(args, "model", Path(".")),
        tol=getattr(args, "tol", 1e-8),
        tol_rho=getattr(args, "tol_rho", 1e-8),
        max_iter=getattr(args, "max_iter", 200),
        horizon=getattr(args, "horizon", 1e4),
        replications=getattr(args, "reps", 32),
        seed=getattr(args, "seed", None),
        x0=getattr(args, "x0", 0),
        out_dir=args.out,
        strict_audit=getattr(args, "strict_audit", False),
        deterministic=args.deterministic,
        threads=args.threads,
        policy_path=getattr(args, "policy", None),
        rho=getattr(args, "rho", None),
        trace_path=getattr(args, "trace", None),
        trajectory_csv=getattr(args, "trajectory_csv", False),
    )
    config.check()
    handler = {
        "validate": cmd_validate,
        "audit": cmd_audit,
        "evaluate": cmd_evaluate,
        "solve": cmd_solve,
        "simulate": cmd_simulate,
        "report": cmd_report,
    }[config.command]
    return handler(config)


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
