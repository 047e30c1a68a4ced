"""Problem instances: schema, loading, structural validation, assumption audit.

A model file is a single JSON document (schema ``pdmp-model/1``) with sections
{grid, actions, flow, rates, kernel, costs, lyapunov, constants}; all numeric
arrays are row-major.  Loading performs structural checks (parse, shapes,
coarse row stochasticity) and raises; ``validate_model`` reports semantic
invariant violations as data.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .flow import FlowSpec, flow_derivative, validate_flow
from .numerics import Table1D, phi0 as _phi0

SCHEMA_VERSION = "pdmp-model/1"
LOAD_ROWSUM_TOL = 1e-6
ROWSUM_TOL = 1e-12
AUDIT_SLACK_TOL = 1e-9
ERGODIC_PROBE_POWERS = 20


class ModelFormatError(ValueError):
    """Model file cannot be parsed or is structurally malformed."""


class DimensionError(ModelFormatError):
    """A table's shape disagrees with the grids."""


@dataclass(frozen=True)
class StateGrid:
    """Interior grid coordinates plus boundary coordinates.

    ``delta_label`` names the synthetic boundary for lines that never reach a
    real boundary point; nothing is ever evaluated there (the boundary term is
    defined to vanish on such lines).
    """

    points: np.ndarray
    boundary_points: np.ndarray
    delta_label: str = "delta"

    @property
    def n_interior(self) -> int:
        return int(self.points.size)

    @property
    def n_boundary(self) -> int:
        return int(self.boundary_points.size)


@dataclass(frozen=True)
class ActionGrid:
    actions: np.ndarray
    feasible: tuple        # per interior state, array of feasible action indices
    boundary_feasible: tuple

    @property
    def n_actions(self) -> int:
        return int(self.actions.size)


@dataclass(frozen=True)
class Constants:
    b: float
    c: float
    delta: float
    M: float
    lambda_lower: np.ndarray
    K_lambda: float
    k_g: float
    K_g: float


@dataclass(frozen=True)
class PdmpModel:
    """Immutable problem instance; tables are dimension-checked at load."""

    name: str
    grid: StateGrid
    action_grid: ActionGrid
    flow: FlowSpec
    jump_rate: np.ndarray        # (n_interior + n_boundary, n_actions)
    kernel_interior: np.ndarray  # (n_interior, n_actions, n_interior)
    kernel_boundary: np.ndarray  # (n_boundary, n_actions, n_interior)
    running_cost: np.ndarray     # (n_interior, n_actions)
    boundary_cost: np.ndarray    # (n_boundary, n_actions)
    lyapunov_g: np.ndarray       # (n_interior,)
    lyapunov_rbar: np.ndarray    # (n_boundary,)
    constants: Constants
    source_hash: str = ""
    schema: str = SCHEMA_VERSION
    # sorted coordinates carrying the jump-rate table (interior plus boundary)
    rate_coords: np.ndarray = field(default=None, repr=False)
    rate_table: np.ndarray = field(default=None, repr=False)

    @property
    def n_states(self) -> int:
        return self.grid.n_interior

    @property
    def n_boundary(self) -> int:
        return self.grid.n_boundary

    @property
    def n_actions(self) -> int:
        return self.action_grid.n_actions

    @property
    def t_max(self) -> float:
        return self.flow.t_max

    @property
    def feasible_mask(self) -> np.ndarray:
        mask = np.zeros((self.n_states, self.n_actions), dtype=bool)
        for i, idx in enumerate(self.action_grid.feasible):
            mask[i, idx] = True
        return mask

    @property
    def boundary_feasible_mask(self) -> np.ndarray:
        mask = np.zeros((self.n_boundary, self.n_actions), dtype=bool)
        for i, idx in enumerate(self.action_grid.boundary_feasible):
            mask[i, idx] = True
        return mask

    @property
    def lambda_sup(self) -> float:
        vals = [float(self.jump_rate[: self.n_states][self.feasible_mask].max(initial=0.0))]
        if self.n_boundary:
            vals.append(float(self.jump_rate[self.n_states :][self.boundary_feasible_mask].max(initial=0.0)))
        return max(vals)

    def g_table(self) -> Table1D:
        return Table1D(self.grid.points, self.lyapunov_g)

    def boundary_g(self) -> np.ndarray:
        """g at boundary points: the flow limit of the clamped interpolant."""
        return Table1D(self.grid.points, self.lyapunov_g)(self.grid.boundary_points)


@dataclass(frozen=True)
class FeedbackPolicy:
    """Measurable selector on the grid: one action index per state."""

    interior: np.ndarray
    boundary: np.ndarray

    def key(self) -> tuple:
        return (tuple(int(a) for a in self.interior), tuple(int(a) for a in self.boundary))

    def feasibility_problems(self, model: PdmpModel) -> list[str]:
        problems = []
        for i, a in enumerate(self.interior):
            if int(a) not in model.action_grid.feasible[i]:
                problems.append(f"action {int(a)} infeasible at interior state {i}")
        for i, a in enumerate(self.boundary):
            if int(a) not in model.action_grid.boundary_feasible[i]:
                problems.append(f"action {int(a)} infeasible at boundary point {i}")
        return problems

    @classmethod
    def lowest_feasible(cls, model: PdmpModel) -> "FeedbackPolicy":
        interior = np.array([int(idx[0]) for idx in model.action_grid.feasible], dtype=np.int64)
        boundary = np.array([int(idx[0]) for idx in model.action_grid.boundary_feasible], dtype=np.int64)
        return cls(interior=interior, boundary=boundary)

    @classmethod
    def random_feasible(cls, model: PdmpModel, rng: np.random.Generator) -> "FeedbackPolicy":
        interior = np.array([int(rng.choice(idx)) for idx in model.action_grid.feasible], dtype=np.int64)
        boundary = np.array([int(rng.choice(idx)) for idx in model.action_grid.boundary_feasible], dtype=np.int64)
        return cls(interior=interior, boundary=boundary)


@dataclass(frozen=True)
class Violation:
    invariant: str
    location: str
    magnitude: float
    message: str


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ModelFormatError(f"missing field '{where}.{key}'" if where else f"missing field '{key}'")
    return doc[key]


def _as_array(value, shape: tuple, name: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"table '{name}' is not numeric: {exc}") from None
    if arr.size == 0 and math.prod(shape) == 0:
        return arr.reshape(shape)
    if arr.shape != shape:
        raise DimensionError(f"table '{name}': expected shape {shape}, got {arr.shape}")
    return arr


def _index_lists(raw, count: int, n_actions: int, name: str) -> tuple:
    if len(raw) != count:
        raise DimensionError(f"'{name}': expected {count} entries, got {len(raw)}")
    out = []
    for i, entry in enumerate(raw):
        idx = np.asarray(entry, dtype=np.int64)
        if idx.ndim != 1:
            raise ModelFormatError(f"'{name}[{i}]' must be a flat list of action indices")
        if idx.size and (idx.min() < 0 or idx.max() >= n_actions):
            raise ModelFormatError(f"'{name}[{i}]' contains an action index outside 0..{n_actions - 1}")
        out.append(np.unique(idx))
    return tuple(out)


def model_from_dict(doc: dict, *, name: str = "model", source_hash: str = "") -> PdmpModel:
    """Build and dimension-check a model from a parsed JSON document."""
    schema = doc.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ModelFormatError(f"unsupported schema '{schema}' (expected '{SCHEMA_VERSION}')")

    grid_doc = _require(doc, "grid", "")
    points = np.asarray(_require(grid_doc, "points", "grid"), dtype=float)
    boundary = np.asarray(grid_doc.get("boundary_points", []), dtype=float)
    if points.ndim != 1 or points.size < 2:
        raise ModelFormatError("grid.points must be a flat list with at least 2 entries")
    n_i, n_b = points.size, boundary.size

    act_doc = _require(doc, "actions", "")
    actions = np.asarray(_require(act_doc, "values", "actions"), dtype=float)
    n_a = actions.size
    if n_a < 1:
        raise ModelFormatError("actions.values must be non-empty")
    feasible = _index_lists(_require(act_doc, "feasible", "actions"), n_i, n_a, "actions.feasible")
    boundary_feasible = _index_lists(act_doc.get("boundary_feasible", [[] for _ in range(n_b)]),
                                     n_b, n_a, "actions.boundary_feasible")

    const_doc = _require(doc, "constants", "")
    constants = Constants(
        b=float(_require(const_doc, "b", "constants")),
        c=float(_require(const_doc, "c", "constants")),
        delta=float(_require(const_doc, "delta", "constants")),
        M=float(_require(const_doc, "M", "constants")),
        lambda_lower=_as_array(_require(const_doc, "lambda_lower", "constants"), (n_i,), "constants.lambda_lower"),
        K_lambda=float(_require(const_doc, "K_lambda", "constants")),
        k_g=float(_require(const_doc, "k_g", "constants")),
        K_g=float(_require(const_doc, "K_g", "constants")),
    )

    flow_doc = _require(doc, "flow", "")
    kind = _require(flow_doc, "kind", "flow")
    all_coords = np.concatenate([points, boundary]) if n_b else points
    lo, hi = float(all_coords.min()), float(all_coords.max())
    t_max_raw = flow_doc.get("t_max")
    if constants.c <= 0 and t_max_raw is None:
        raise ModelFormatError("flow.t_max must be given when constants.c <= 0")
    t_max = float(t_max_raw) if t_max_raw is not None else 50.0 / constants.c
    velocity = None
    if kind == "tabulated1d":
        vel = np.asarray(_require(flow_doc, "velocity", "flow"), dtype=float)
        if vel.shape != (n_i,):
            raise DimensionError(f"flow.velocity: expected shape ({n_i},), got {vel.shape}")
        velocity = Table1D(points, vel)
    flow = FlowSpec(
        kind=kind,
        alpha0=float(flow_doc.get("alpha0", 0.0)),
        alpha1=float(flow_doc.get("alpha1", 0.0)),
        velocity=velocity,
        t_max=t_max,
        lo=lo,
        hi=hi,
        boundary=np.sort(boundary),
    )
    flow_problems = validate_flow(flow)
    if flow_problems:
        raise ModelFormatError("; ".join(flow_problems))

    rates_doc = _require(doc, "rates", "")
    jump_rate = _as_array(_require(rates_doc, "lambda", "rates"), (n_i + n_b, n_a), "rates.lambda")

    kern_doc = _require(doc, "kernel", "")
    kernel_interior = _as_array(_require(kern_doc, "interior", "kernel"), (n_i, n_a, n_i), "kernel.interior")
    kernel_boundary = _as_array(kern_doc.get("boundary", np.zeros((n_b, n_a, n_i)).tolist()),
                                (n_b, n_a, n_i), "kernel.boundary")
    for label, kern, rows in (("kernel.interior", kernel_interior, n_i), ("kernel.boundary", kernel_boundary, n_b)):
        sums = kern.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > LOAD_ROWSUM_TOL)
        if bad.size:
            x, a = bad[0]
            raise ModelFormatError(
                f"stochasticity: {label} row (state {x}, action {a}) sums to {sums[x, a]:.6f}, expected 1"
            )

    costs_doc = _require(doc, "costs", "")
    running_cost = _as_array(_require(costs_doc, "running", "costs"), (n_i, n_a), "costs.running")
    boundary_cost = _as_array(costs_doc.get("boundary", np.zeros((n_b, n_a)).tolist()),
                              (n_b, n_a), "costs.boundary")

    lyap_doc = _require(doc, "lyapunov", "")
    lyapunov_g = _as_array(_require(lyap_doc, "g", "lyapunov"), (n_i,), "lyapunov.g")
    lyapunov_rbar = _as_array(lyap_doc.get("r_bar", np.zeros(n_b).tolist()), (n_b,), "lyapunov.r_bar")

    order = np.argsort(all_coords)
    rate_coords = all_coords[order]
    rate_table = jump_rate[order]

    return PdmpModel(
        name=doc.get("name", name),
        grid=StateGrid(points=points, boundary_points=boundary),
        action_grid=ActionGrid(actions=actions, feasible=feasible, boundary_feasible=boundary_feasible),
        flow=flow,
        jump_rate=jump_rate,
        kernel_interior=kernel_interior,
        kernel_boundary=kernel_boundary,
        running_cost=running_cost,
        boundary_cost=boundary_cost,
        lyapunov_g=lyapunov_g,
        lyapunov_rbar=lyapunov_rbar,
        constants=constants,
        source_hash=source_hash,
        rate_coords=rate_coords,
        rate_table=rate_table,
    )


def load_model(path) -> PdmpModel:
    """Load and dimension-check a model file; raises on structural problems."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from None
    digest = hashlib.sha256(raw).hexdigest()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{path}: top level must be a JSON object")
    return model_from_dict(doc, name=path.stem, source_hash=digest)


def bundled_model_names() -> list[str]:
    base = resources.files("pdmp_avgctl") / "models"
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".json"))


def bundled_model_path(name: str) -> Path:
    path = Path(str(resources.files("pdmp_avgctl") / "models" / f"{name}.json"))
    if not path.exists():
        raise FileNotFoundError(f"no bundled model named '{name}' (have: {bundled_model_names()})")
    return path


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_model(model: PdmpModel) -> list[Violation]:
    """Semantic invariant check; empty list iff the model is well formed."""
    out: list[Violation] = []

    def flag(invariant, location, magnitude, message):
        out.append(Violation(invariant, location, float(magnitude), message))

    pts = model.grid.points
    diffs = np.diff(pts)
    for i in np.nonzero(diffs <= 0)[0]:
        flag("grid.ordered", f"points[{i}..{i + 1}]", diffs[i],
             f"grid points must be strictly increasing; got {pts[i]} then {pts[i + 1]}")

    for i, idx in enumerate(model.action_grid.feasible):
        if idx.size == 0:
            flag("actions.nonempty", f"interior[{i}]", 0.0, f"feasible set empty at interior state {i}")
    for i, idx in enumerate(model.action_grid.boundary_feasible):
        if idx.size == 0:
            flag("actions.nonempty", f"boundary[{i}]", 0.0, f"feasible set empty at boundary point {i}")

    for label, kern in (("interior", model.kernel_interior), ("boundary", model.kernel_boundary)):
        if kern.size == 0:
            continue
        sums = kern.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > ROWSUM_TOL)
        for x, a in bad:
            flag("kernel.rowsum", f"{label}[{x}], action {a}", abs(sums[x, a] - 1.0),
                 f"kernel row sums to {sums[x, a]!r}")
        neg = np.argwhere(kern < -1e-15)
        for x, a, y in neg[:20]:
            flag("kernel.nonnegative", f"{label}[{x}], action {a}, target {y}", kern[x, a, y],
                 "kernel entries must be non-negative")

    tables = (
        ("rates.lambda", model.jump_rate),
        ("costs.running", model.running_cost),
        ("costs.boundary", model.boundary_cost),
        ("lyapunov.g", model.lyapunov_g),
        ("lyapunov.r_bar", model.lyapunov_rbar),
        ("constants.lambda_lower", model.constants.lambda_lower),
    )
    for name, table in tables:
        if table.size and not np.all(np.isfinite(table)):
            flag("finite", name, math.nan, f"{name} contains non-finite entries")
        if table.size and np.any(table < -1e-15):
            loc = np.unravel_index(int(np.argmin(table)), table.shape)
            flag("nonnegative", f"{name}{list(loc)}", float(table.min()), f"{name} must be non-negative")

    g = model.lyapunov_g
    if np.any(g < 1.0 - 1e-12):
        i = int(np.argmin(g))
        flag("lyapunov.g_ge_1", f"g[{i}]", float(g[i]), f"g >= 1 fails at state {i} (x={pts[i]})")

    lam_int = model.jump_rate[: model.n_states]
    lower = model.constants.lambda_lower
    for i in range(model.n_states):
        for a in model.action_grid.feasible[i]:
            if lam_int[i, a] < lower[i] - 1e-12:
                flag("rates.floor", f"(state {i}, action {a})", lower[i] - lam_int[i, a],
                     f"lambda({pts[i]}, a{a})={lam_int[i, a]} below lambda_lower={lower[i]}")

    c = model.constants
    for name, value, ok in (
        ("b", c.b, c.b >= 0), ("c", c.c, c.c > 0), ("delta", c.delta, c.delta > 0),
        ("M", c.M, c.M >= 0), ("K_lambda", c.K_lambda, c.K_lambda > 0),
        ("k_g", c.k_g, 0 < c.k_g < 1), ("K_g", c.K_g, c.K_g >= 0),
    ):
        if not ok:
            flag("constants.range", name, value, f"constant {name}={value} outside its admissible range")

    return out


# ---------------------------------------------------------------------------
# assumption audit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditItem:
    name: str
    status: str  # "pass" | "fail" | "not_checkable" | "omitted"
    worst_slack: float
    worst_location: str
    note: str = ""
    slack_by_state: tuple = ()


@dataclass(frozen=True)
class AuditReport:
    items: tuple
    a_estimate: float | None = None
    kappa_estimate: float | None = None
    policy_label: str = ""

    @property
    def passed(self) -> bool:
        return all(item.status != "fail" for item in self.items)

    def item(self, name: str) -> AuditItem:
        for it in self.items:
            if it.name == name:
                return it
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "schema": "pdmp-audit/1",
            "passed": self.passed,
            "a_estimate": self.a_estimate,
            "kappa_estimate": self.kappa_estimate,
            "policy": self.policy_label,
            "items": [
                {
                    "name": it.name,
                    "status": it.status,
                    "worst_slack": it.worst_slack,
                    "worst_location": it.worst_location,
                    "note": it.note,
                    "slack_by_state": list(it.slack_by_state),
                }
                for it in self.items
            ],
        }


def _lower_hazard_nodes(model: PdmpModel, geom) -> np.ndarray:
    """Cumulative integral of lambda_lower along one line's mesh nodes."""
    lam_low = Table1D(model.grid.points, model.constants.lambda_lower)(geom.states)
    return np.concatenate([[0.0], np.cumsum(0.5 * (lam_low[:-1] + lam_low[1:]) * geom.dt)])


def _exp_growth_integral(model: PdmpModel, geom) -> float:
    """int_0^end exp(c t - int_0^t lambda_lower) dt on one line's mesh."""
    lam_low = Table1D(model.grid.points, model.constants.lambda_lower)(geom.states)
    m = 0.5 * (lam_low[:-1] + lam_low[1:]) - model.constants.c
    z = m * geom.dt
    cum = np.concatenate([[0.0], np.cumsum(z)])
    return float(np.sum(np.exp(-cum[:-1]) * geom.dt * _phi0(z)))


def _tail_decay(model: PdmpModel, geom) -> float:
    """exp(c t - int lambda_lower) at the truncation horizon."""
    total = float(_lower_hazard_nodes(model, geom)[-1])
    return math.exp(model.constants.c * geom.times[-1] - total)


def audit_assumptions(model: PdmpModel, policy: FeedbackPolicy | None = None, *,
                      tol: float = AUDIT_SLACK_TOL, workspace=None) -> AuditReport:
    """Numerically audit the standing growth/ergodicity assumptions.

    State-by-state checks take the sup over feasible actions.  Items that
    would need the t -> infinity limit on a truncated horizon are reported as
    "not_checkable" with the observed window decay in the note.  When a policy
    is given, geometric-ergodicity constants (a, kappa) are estimated from the
    decay of kernel powers on probe functions.
    """
    from .operators import OperatorWorkspace, op_G
    from .evaluation import invariant_measure, estimate_ergodic_constants

    c = model.constants
    pts = model.grid.points
    n = model.n_states
    fmask = model.feasible_mask
    items: list[AuditItem] = []
    ws = workspace if workspace is not None else OperatorWorkspace(model)

    def add(name, slacks, locations, note="", not_checkable=False):
        slacks = np.asarray(slacks, dtype=float)
        if slacks.size == 0:
            items.append(AuditItem(name, "pass", math.inf, "(vacuous)", note or "no states to check"))
            return
        worst = int(np.argmin(slacks))
        status = "not_checkable" if not_checkable else ("pass" if slacks[worst] >= -tol else "fail")
        items.append(AuditItem(name, status, float(slacks[worst]), locations[worst], note,
                               tuple(float(s) for s in slacks)))

    g_tab = model.g_table()
    xg = np.array([flow_derivative(model.flow, g_tab, float(x)) for x in pts])
    qg = model.kernel_interior @ model.lyapunov_g  # (n, n_a)
    lam = model.jump_rate[:n]
    expr = xg[:, None] + c.c * model.lyapunov_g[:, None] - lam * (model.lyapunov_g[:, None] - qg)
    expr = np.where(fmask, expr, -np.inf)
    worst_a = np.argmax(expr, axis=1)
    add("interior-growth", c.b - expr[np.arange(n), worst_a],
        [f"x={pts[i]}, a={int(worst_a[i])}" for i in range(n)],
        note="flow derivative of g by grid differences")

    fexpr = np.where(fmask, model.running_cost, -np.inf)
    worst_a = np.argmax(fexpr, axis=1)
    add("cost-vs-weight", c.M * model.lyapunov_g - fexpr[np.arange(n), worst_a],
        [f"x={pts[i]}, a={int(worst_a[i])}" for i in range(n)])

    # boundary items only where some line actually reaches the boundary
    reachable = sorted({g.boundary_index for g in ws.geometry if g.hit})
    if model.n_boundary and reachable:
        bmask = model.boundary_feasible_mask
        g_b = model.boundary_g()
        qg_b = model.kernel_boundary @ model.lyapunov_g
        slacks, locs = [], []
        for zi in reachable:
            vals = model.lyapunov_rbar[zi] + qg_b[zi] - g_b[zi]
            vals = np.where(bmask[zi], vals, -np.inf)
            a_star = int(np.argmax(vals))
            slacks.append(-vals[a_star])
            locs.append(f"z={model.grid.boundary_points[zi]}, a={a_star}")
        add("boundary-weight", slacks, locs)

        slacks, locs = [], []
        ratio = c.M / (c.c + c.delta)
        for zi in reachable:
            vals = model.boundary_cost[zi] - ratio * model.lyapunov_rbar[zi]
            vals = np.where(bmask[zi], vals, -np.inf)
            a_star = int(np.argmax(vals))
            slacks.append(-vals[a_star])
            locs.append(f"z={model.grid.boundary_points[zi]}, a={a_star}")
        add("boundary-cost-ratio", slacks, locs)
    else:
        items.append(AuditItem("boundary-weight", "pass", math.inf, "(vacuous)", "no reachable boundary"))
        items.append(AuditItem("boundary-cost-ratio", "pass", math.inf, "(vacuous)", "no reachable boundary"))

    # rate floor under every feasible action
    floor_slack = np.where(fmask, lam - c.lambda_lower[:, None], np.inf).min(axis=1)
    add("rate-floor", floor_slack, [f"x={pts[i]}" for i in range(n)])

    # expected-growth integral bounded by K_lambda
    growth = np.array([_exp_growth_integral(model, g) for g in ws.geometry])
    truncated_lines = [g for g in ws.geometry if g.truncated]
    undecayed = [g for g in truncated_lines if _tail_decay(model, g) > 1e-9]
    add("growth-integral", c.K_lambda - growth, [f"x={pts[i]}" for i in range(n)],
        note="window-truncated on lines that never hit the boundary" if truncated_lines else "",
        not_checkable=bool(undecayed))

    # large-time decay limits; only window decay is observable
    if truncated_lines:
        decay = max(_tail_decay(model, g) for g in truncated_lines)
        items.append(AuditItem("growth-decay-limit", "not_checkable", math.inf, "(limit)",
                               f"window decay of exp(ct - int lambda_lower) at t_max: {decay:.3e}"))
        g_end = max(
            float(g_tab(geom.states[-1])) * math.exp(-float(_lower_hazard_nodes(model, geom)[-1]))
            for geom in truncated_lines
        )
        items.append(AuditItem("weight-decay-limit", "not_checkable", math.inf, "(limit)",
                               f"window decay of exp(-int lambda_lower) g at t_max: {g_end:.3e}"))
    else:
        items.append(AuditItem("growth-decay-limit", "pass", math.inf, "(vacuous)", "every line hits the boundary"))
        items.append(AuditItem("weight-decay-limit", "pass", math.inf, "(vacuous)", "every line hits the boundary"))

    # discounted-by-lambda_lower running cost integrable
    fsup = np.where(fmask, model.running_cost, -np.inf).max(axis=1)
    fsup_tab = Table1D(pts, fsup)
    vals = []
    for geom in ws.geometry:
        cum = _lower_hazard_nodes(model, geom)
        fv = fsup_tab(geom.states)
        vals.append(float(np.sum(np.exp(-cum[:-1]) * geom.dt * 0.5 * (fv[:-1] + fv[1:]))))
    items.append(AuditItem("discounted-cost-integrable", "not_checkable" if undecayed else "pass",
                           math.inf, f"max over states: {max(vals):.6g}",
                           "finite on the truncation window"))

    # kernel drift: Gg <= k_g g + K_g along feedback paths (given policy, else all
    # constant-action sweeps)
    bound = c.k_g * model.lyapunov_g + c.K_g
    slacks = np.full(n, math.inf)
    locs = [""] * n
    sweep_policies = []
    if policy is not None:
        sweep_policies.append(("policy", policy))
    else:
        for a in range(model.n_actions):
            interior = np.array([a if a in model.action_grid.feasible[i] else model.action_grid.feasible[i][0]
                                 for i in range(n)], dtype=np.int64)
            bnd = np.array([a if a in model.action_grid.boundary_feasible[i] else model.action_grid.boundary_feasible[i][0]
                            for i in range(model.n_boundary)], dtype=np.int64)
            sweep_policies.append((f"const a{a}", FeedbackPolicy(interior, bnd)))
    for label, pol in sweep_policies:
        paths = ws.policy_paths(pol)
        for j, path in enumerate(paths):
            gg = op_G(0.0, model.lyapunov_g, path)
            s = bound[j] - gg
            if s < slacks[j]:
                slacks[j] = s
                locs[j] = f"x={pts[j]} ({label})"
    add("kernel-drift", slacks, locs)

    items.append(AuditItem("discounted-finiteness", "omitted", math.inf, "(not audited)",
                           "finiteness of discounted infima has no constructive check; omitted by design"))

    a_est = kappa_est = None
    if policy is not None:
        kernel, _, _, _ = ws.assemble(policy, 0.0)
        try:
            nu = invariant_measure(kernel)
            a_est, kappa_est = estimate_ergodic_constants(
                kernel, nu, model.lyapunov_g, model.grid.points, powers=ERGODIC_PROBE_POWERS
            )
            items.append(AuditItem("geometric-ergodicity", "pass", math.inf, "(estimated)",
                                   f"a={a_est:.6g}, kappa={kappa_est:.6g} from {ERGODIC_PROBE_POWERS} kernel powers"))
        except Exception as exc:  # estimation is best-effort; audit records the failure
            items.append(AuditItem("geometric-ergodicity", "not_checkable", math.inf, "(estimated)", f"estimation failed: {exc}"))

    return AuditReport(items=tuple(items), a_estimate=a_est, kappa_estimate=kappa_est,
                       policy_label="(none)" if policy is None else "given policy")
