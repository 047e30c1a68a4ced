"""Policy iteration: evaluate, improve by backward marching, certify.

The improvement step solves, along every flow line, the one-stage
minimization by a backward dynamic program whose per-segment one-step updates
use exactly the same exponential quadrature as the operator engine.  The
value of the returned policy therefore reproduces the march value, which is
what makes the average cost non-increasing across iterations up to solver
tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import FeedbackPolicy
from .operators import OperatorWorkspace, refined_workspace
from .evaluation import EvaluationResult, evaluate_policy

DEFAULT_TOL_RHO = 1e-8
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class IterationRecord:
    n: int
    rho: float
    poisson_residual: float
    changed_states: int
    optimality_residual: float
    delta_h: float
    h_gnorm: float


@dataclass
class PiaTrace:
    """Per-iteration record of the policy iteration run."""

    records: list = field(default_factory=list)
    status: str = "running"  # converged | max-iter | cycling
    reason: str = ""         # policy-identity | rho-tolerance (when converged)

    @property
    def rhos(self) -> np.ndarray:
        return np.array([r.rho for r in self.records])

    def to_rows(self) -> list[dict]:
        return [
            {
                "n": r.n,
                "rho": r.rho,
                "poisson_residual": r.poisson_residual,
                "changed_states": r.changed_states,
                "optimality_residual": r.optimality_residual,
                "delta_h": r.delta_h,
                "h_gnorm": r.h_gnorm,
            }
            for r in self.records
        ]

    def to_dict(self) -> dict:
        return {"schema": "pdmp-trace/1", "status": self.status, "reason": self.reason,
                "iterations": self.to_rows()}


def one_stage_value(model, rho: float, h: np.ndarray, policy: FeedbackPolicy, *,
                    workspace: OperatorWorkspace | None = None) -> np.ndarray:
    """-rho*calL + Lf + Hr + Gh under the policy's feedback paths, per state."""
    ws = workspace if workspace is not None else OperatorWorkspace(model)
    return ws.one_stage_values(policy, rho, np.asarray(h, dtype=float))


def improve_policy(model, rho: float, h: np.ndarray, prev: FeedbackPolicy, *,
                   workspace: OperatorWorkspace | None = None) -> FeedbackPolicy:
    """One-stage minimizing policy given (rho, h); ties keep the incumbent."""
    ws = workspace if workspace is not None else OperatorWorkspace(model)
    return ws.improve(rho, np.asarray(h, dtype=float), prev)


def optimality_residual(model, rho: float, h: np.ndarray, policy: FeedbackPolicy, *,
                        workspace: OperatorWorkspace | None = None) -> float:
    """sup_x of h(x) minus the best frozen-action one-stage value at x."""
    ws = workspace if workspace is not None else OperatorWorkspace(model)
    return ws.optimality_residual(rho, np.asarray(h, dtype=float), policy)


def run_pia(model, u0: FeedbackPolicy, tol_rho: float = DEFAULT_TOL_RHO,
            max_iter: int = DEFAULT_MAX_ITER, *,
            workspace: OperatorWorkspace | None = None,
            eval_tol: float = 1e-8) -> tuple[EvaluationResult, FeedbackPolicy, PiaTrace]:
    """Alternate policy evaluation and improvement until the policy is a fixed point.

    Termination: the improved policy equals the current one (primary, finite
    policy space), or the rho decrement falls below ``tol_rho`` with an
    optimality residual below ``10 * tol_rho``, or ``max_iter`` is reached.
    Revisiting an earlier policy without improving rho reports "cycling" and
    the best iterate seen.
    """
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    problems = u0.feasibility_problems(model)
    if problems:
        raise ValueError("infeasible initial policy: " + "; ".join(problems))
    ws = workspace if workspace is not None else refined_workspace(model, u0)

    trace = PiaTrace()
    seen: dict = {}
    best: tuple | None = None  # (rho, eval, policy)
    policy = u0
    prev_h = None
    prev_rho = math.inf
    evaluation = None

    for n in range(max_iter):
        evaluation = evaluate_policy(model, policy, eval_tol, workspace=ws)
        improved = ws.improve(evaluation.rho, evaluation.h, policy)
        changed = int(np.sum(improved.interior != policy.interior)
                      + np.sum(improved.boundary != policy.boundary))
        opt_res = ws.optimality_residual(evaluation.rho, evaluation.h, policy)
        delta_h = float(np.max(np.abs(evaluation.h - prev_h))) if prev_h is not None else math.nan
        trace.records.append(IterationRecord(
            n=n,
            rho=evaluation.rho,
            poisson_residual=evaluation.residual,
            changed_states=changed,
            optimality_residual=opt_res,
            delta_h=delta_h,
            h_gnorm=evaluation.gnorm_h(model.lyapunov_g),
        ))

        if best is None or evaluation.rho < best[0]:
            best = (evaluation.rho, evaluation, policy)

        if changed == 0:
            trace.status = "converged"
            trace.reason = "policy-identity"
            return evaluation, policy, trace
        if prev_rho - evaluation.rho < tol_rho and opt_res <= 10.0 * tol_rho:
            trace.status = "converged"
            trace.reason = "rho-tolerance"
            return evaluation, policy, trace

        key = policy.key()
        if key in seen and evaluation.rho >= seen[key] - tol_rho:
            trace.status = "cycling"
            return best[1], best[2], trace
        seen[key] = evaluation.rho

        prev_h = evaluation.h
        prev_rho = evaluation.rho
        policy = improved

    trace.status = "max-iter"
    return best[1], best[2], trace
