"""Fixed-policy evaluation: invariant measure, average cost, and bias.

For a feedback policy u the embedded chain of post-jump locations has kernel
G; with its invariant row nu the average cost per unit time is

    rho = nu . (Lf + Hr) / nu . calL

and the bias h is the unique solution of  h = -rho*calL + Lf + Hr + G h  with
nu(h) = 0.  The default solver is a deflated direct linear solve; the
geometric series  sum_k G^k w  is kept as an independent second method whose
truncation is certified by estimated ergodicity constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .operators import OperatorWorkspace, refined_workspace

DEFAULT_TOL = 1e-8
POWER_TOL = 1e-12
POWER_MAX_ITER = 200_000
DIRECT_SOLVE_LIMIT = 2000


class EvaluationError(RuntimeError):
    """Policy evaluation could not produce a certified solution."""


class ErgodicityError(EvaluationError):
    """The embedded chain looks reducible / non-ergodic under this policy."""


def _subdominant_modulus(kernel: np.ndarray) -> float | None:
    if kernel.shape[0] > 512:
        return None
    eigs = np.sort(np.abs(np.linalg.eigvals(kernel)))[::-1]
    return float(eigs[1]) if eigs.size > 1 else 0.0


def invariant_measure(kernel: np.ndarray, *, method: str = "auto",
                      tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> np.ndarray:
    """Invariant probability row nu with nu G = nu, sum nu = 1, nu >= 0.

    ``method`` is "direct" (stationarity system, grids up to 2000 states),
    "power" (iteration from the uniform row), or "auto" (direct when small).
    Raises ErgodicityError when no unique invariant row can be certified; the
    message includes the estimated subdominant eigenvalue modulus.
    """
    kernel = np.asarray(kernel, dtype=float)
    n = kernel.shape[0]
    if kernel.shape != (n, n):
        raise ValueError(f"kernel must be square, got {kernel.shape}")
    rowdev = np.max(np.abs(kernel.sum(axis=1) - 1.0))
    if rowdev > 1e-6:
        raise ValueError(f"kernel rows must sum to 1 within 1e-6 (max deviation {rowdev:.3e})")

    if method not in ("auto", "direct", "power"):
        raise ValueError(f"unknown method {method!r}")
    use_direct = method == "direct" or (method == "auto" and n <= DIRECT_SOLVE_LIMIT)

    nu = None
    if use_direct:
        system = kernel.T - np.eye(n)
        system[-1, :] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        try:
            nu = np.linalg.solve(system, rhs)
        except np.linalg.LinAlgError:
            nu = None
        if nu is not None and (np.any(nu < -1e-9) or not np.all(np.isfinite(nu))):
            nu = None

    if nu is None:
        nu = np.full(n, 1.0 / n)

    # polish (and the pure-power path): nu <- nu G until l1-stationary
    for _ in range(max_iter):
        nxt = nu @ kernel
        nxt = nxt / nxt.sum()
        if np.abs(nxt - nu).sum() <= tol:
            nu = nxt
            break
        nu = nxt
    else:
        sub = _subdominant_modulus(kernel)
        raise ErgodicityError(
            "invariant measure iteration did not converge; "
            f"estimated subdominant eigenvalue modulus: {sub}"
        )

    nu = np.clip(nu, 0.0, None)
    nu = nu / nu.sum()

    # uniqueness: the stationarity system must have a one-dimensional null space
    if n <= 256:
        sv = np.linalg.svd(kernel.T - np.eye(n), compute_uv=False)
        if sv[-2] < 1e-10:
            sub = _subdominant_modulus(kernel)
            raise ErgodicityError(
                "invariant measure is not unique (reducible kernel?); "
                f"estimated subdominant eigenvalue modulus: {sub}"
            )
    return nu


def estimate_ergodic_constants(kernel: np.ndarray, nu: np.ndarray, g: np.ndarray,
                               coords: np.ndarray, *, powers: int = 20) -> tuple[float, float]:
    """Estimate (a, kappa) of the geometric decay |G^k h - nu(h)| <= a ||h||_g kappa^k g.

    Probes h in {g, 1, coordinate}; kappa is fitted from the log-decay of the
    g-weighted errors over k = 1..powers, a is the smallest prefactor making
    the bound hold at every observed power (k = 0 included).
    """
    g = np.asarray(g, dtype=float)
    probes = [np.asarray(g, dtype=float), np.ones_like(g), np.asarray(coords, dtype=float)]
    err_series = []
    for h in probes:
        hnorm = float(np.max(np.abs(h) / g))
        if hnorm == 0.0:
            continue
        target = float(nu @ h)
        errs = []
        vec = h.astype(float)
        for _ in range(powers + 1):
            errs.append(float(np.max(np.abs(vec - target) / g)) / hnorm)
            vec = kernel @ vec
        errs = np.asarray(errs)
        # a numerically nu-invariant probe (errors at roundoff scale from the
        # start) carries no rate information, only accumulation noise
        if errs[0] < 1e-8:
            continue
        err_series.append(errs)

    def usable_range(errs: np.ndarray) -> np.ndarray:
        # once the error sequence turns upward it is roundoff accumulation,
        # not geometric decay; fit only the decaying head above a hard floor
        cut = int(np.argmin(errs))
        floor = max(1e-12, 4.0 * float(errs[cut]))
        ks = np.arange(1, cut + 1)
        return ks[errs[1 : cut + 1] > floor]

    kappa = 0.0
    for errs in err_series:
        ks = usable_range(errs)
        if ks.size >= 2:
            slope = np.polyfit(ks, np.log(errs[ks]), 1)[0]
            kappa = max(kappa, float(np.clip(np.exp(slope), 0.0, 1.0 - 1e-12)))
    a = 0.0
    for errs in err_series:
        ks = usable_range(errs)
        for k in np.concatenate([[0], ks]):
            denom = kappa**k if kappa > 0.0 else (1.0 if k == 0 else None)
            if denom is None or denom < 1e-300:
                continue
            a = max(a, errs[int(k)] / denom)
    return (max(a, 1e-12), kappa)


@dataclass(frozen=True)
class EvaluationResult:
    """Solution of the fixed-policy average-cost equation on the grid."""

    rho: float
    h: np.ndarray
    nu: np.ndarray
    D: float
    residual: float
    method: str
    iterations: int
    stats: dict = field(default_factory=dict)

    def gnorm_h(self, g: np.ndarray) -> float:
        return float(np.max(np.abs(self.h) / np.asarray(g, dtype=float)))

    def to_dict(self) -> dict:
        return {
            "schema": "pdmp-result/1",
            "rho": self.rho,
            "D": self.D,
            "residual": self.residual,
            "nu": self.nu.tolist(),
            "h": self.h.tolist(),
            "method": self.method,
            "iterations": self.iterations,
        }


def _solve_direct(kernel, nu, w):
    n = kernel.shape[0]
    system = np.eye(n) - kernel + np.outer(np.ones(n), nu)
    try:
        h = np.linalg.solve(system, w)
    except np.linalg.LinAlgError as exc:
        raise EvaluationError(
            "deflated system (I - G + 1 nu') is singular; the chain's "
            "geometric rate looks like kappa ~ 1"
        ) from exc
    return h - float(nu @ h) * np.ones(n)


def _solve_series(kernel, nu, w, g, coords, model, rho, tol):
    a_est, kappa = estimate_ergodic_constants(kernel, nu, g, coords)
    if kappa >= 1.0 - 1e-9:
        raise EvaluationError(
            f"geometric series refused: estimated kappa={kappa} is not certified below 1"
        )
    c = model.constants
    m_u = max(rho * c.K_lambda, c.M * (1.0 + c.b * c.K_lambda) / c.c)
    g_max = float(np.max(g))
    total = w.copy()
    term = w.copy()
    k = 0
    while True:
        k += 1
        term = kernel @ term
        total += term
        tail = a_est * m_u * g_max * kappa ** (k + 1) / (1.0 - kappa)
        if tail <= tol or k >= 100_000:
            break
    total -= float(nu @ total) * np.ones_like(total)
    return total, k, kappa, a_est


def evaluate_policy(model, policy, tol: float = DEFAULT_TOL, *, method: str = "direct",
                    workspace: OperatorWorkspace | None = None,
                    refine_target: float | None = None) -> EvaluationResult:
    """Average cost and bias of a feedback policy.

    ``method`` is "direct" (deflated linear solve, the default) or "series"
    (truncated geometric sum, kept as the independent cross-check).  The
    returned residual is the sup-norm defect of the solved equation on the
    solver's own mesh; use :func:`residual` for a doubled-mesh recheck.
    """
    problems = policy.feasibility_problems(model)
    if problems:
        raise ValueError("infeasible policy: " + "; ".join(problems))
    ws = workspace
    if ws is None:
        ws = refined_workspace(model, policy, target=refine_target or min(tol / 2.0, 5e-9))
    kernel, ell, cost, _ = ws.assemble(policy, 0.0)

    nu = invariant_measure(kernel)
    D = float(nu @ ell)
    rho = float(nu @ cost) / D
    w = cost - rho * ell

    iterations = 0
    kappa = a_est = None
    if method == "direct":
        h = _solve_direct(kernel, nu, w)
    elif method == "series":
        h, iterations, kappa, a_est = _solve_series(
            kernel, nu, w, model.lyapunov_g, model.grid.points, model, rho, tol
        )
    else:
        raise ValueError(f"unknown method {method!r}")

    defect = h + rho * ell - cost - kernel @ h
    res = float(np.max(np.abs(defect)))
    if res > tol:
        raise EvaluationError(
            f"pseudo-Poisson defect {res:.3e} exceeds tol={tol:.3e} (method={method})"
        )
    stats = {
        "fill": ws.fill,
        "refine_diff": ws.refine_diff,
        "nu_h": float(nu @ h),
        "kappa": kappa,
        "a": a_est,
    }
    return EvaluationResult(rho=rho, h=h, nu=nu, D=D, residual=res,
                            method=method, iterations=iterations, stats=stats)


def residual(model, policy, result: EvaluationResult, *,
             workspace: OperatorWorkspace | None = None) -> float:
    """Defect of a solved (rho, h) recomputed on a freshly doubled mesh.

    Guards against mesh-correlated cancellation: the solve's own defect can be
    tiny on its mesh while the operators are still unconverged.
    """
    fill = int(result.stats.get("fill", 8)) if result.stats else 8
    ws = workspace if workspace is not None else OperatorWorkspace(model, fill * 2)
    kernel, ell, cost, _ = ws.assemble(policy, 0.0)
    defect = result.h + result.rho * ell - cost - kernel @ result.h
    return float(np.max(np.abs(defect)))
