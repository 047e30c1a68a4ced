"""Quadrature engine for the embedded-chain operators along flow lines.

For a feedback policy the engine evaluates, per start state x,

* the cumulative hazard  Lam(x, t) = int_0^t lambda(phi(x,s), u(.)) ds,
* discounted flow integrals  L_a v = int e^{-a s - Lam} v ds,
* the boundary term          H_a w = e^{-a t* - Lam(t*)} w(z, u_b),
* the post-jump kernel       G_a h = int e^{-a s - Lam} Qh dLam + boundary part,

on a mesh whose nodes include every grid-point passage time.  Each mesh
interval integrates a linear interpolant of the data against the exactly
integrated exponential survival weight (hazard frozen to its trapezoidal
slope), so the jump-mass identity  G_0 1 = 1 - e^{-Lam(end)} + boundary mass
telescopes to 1 in exact arithmetic and quadrature error comes only from the
along-flow variation of the tables.

The control along a line is piecewise constant per inter-grid segment: the
action of the most recently passed grid point governs until the next one,
which is what makes the policy-improvement march (a per-segment backward
dynamic program) minimize over exactly the path class the operators evaluate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flow import FlowSpec, flow_direction, hit_time, _affine_passage, _tabulated_passage, advance
from .numerics import phi0, phi1, interp_weights

DEFAULT_FILL = 8
REFINE_TARGET = 5e-9
MAX_FILL = 2048
MIN_TAIL_INTERVALS = 8
TIE_TOL = 1e-12


def _passage_time(flow: FlowSpec, x: float, z: float) -> float:
    if flow.kind == "trivial":
        return math.inf
    if flow.kind == "affine1d":
        return _affine_passage(flow.alpha0, flow.alpha1, x, z)
    return _tabulated_passage(flow, x, z)


@dataclass(frozen=True)
class _LineGeometry:
    """Policy-independent mesh data for the flow line of one start state."""

    origin_index: int
    times: np.ndarray          # (K+1,)
    states: np.ndarray         # (K+1,)
    dt: np.ndarray             # (K,)
    seg_anchor: np.ndarray     # (K,) grid index whose action governs the interval
    seg_slices: tuple          # ((k0, k1, anchor), ...) contiguous interval runs
    ilo: np.ndarray            # (K+1,) interior-grid interpolation indices
    wlo: np.ndarray            # (K+1,)
    lam_nodes: np.ndarray      # (K+1, n_actions) jump rate at nodes, all actions
    f_nodes: np.ndarray        # (K+1, n_actions) running cost at nodes
    hit: bool
    boundary_index: int
    t_star: float
    truncated: bool
    line_feasible: np.ndarray  # (n_actions,) feasible at every anchor of the line


def _reference_transit(model) -> float:
    """Shortest transit time between adjacent grid points, in flow direction."""
    flow = model.flow
    if flow.kind == "trivial":
        return math.inf
    points = model.grid.points
    best = math.inf
    for i in range(points.size - 1):
        a, b = float(points[i]), float(points[i + 1])
        if flow_direction(flow) > 0:
            t = _passage_time(flow, a, b)
        else:
            t = _passage_time(flow, b, a)
        if 0.0 < t < best:
            best = t
    return best


def _build_geometry(model, j: int, fill: int, ref_transit: float | None = None) -> _LineGeometry:
    flow = model.flow
    points = model.grid.points
    n = points.size
    x = float(points[j])
    if ref_transit is None:
        ref_transit = _reference_transit(model)
    t_star = hit_time(flow, x)
    t_max = model.t_max
    hit = t_star <= t_max
    end = t_star if hit else t_max
    truncated = not hit

    boundary_index = -1
    if hit:
        z = advance(flow, x, t_star)
        boundary_index = int(np.argmin(np.abs(model.grid.boundary_points - z)))

    # grid-point passage times, in flow order, strictly inside (0, end)
    direction = flow_direction(flow)
    anchors = [j]
    edges = [0.0]
    if direction > 0:
        downstream = range(j + 1, n)
    elif direction < 0:
        downstream = range(j - 1, -1, -1)
    else:
        downstream = ()
    for i in downstream:
        t = _passage_time(flow, x, float(points[i]))
        if not (t < end - 1e-15):
            break
        anchors.append(i)
        edges.append(t)
    edges.append(end)

    lam_sup = model.lambda_sup
    cap = math.inf if lam_sup <= 0.0 else 0.25 / lam_sup
    # sub-interval budget proportional to segment duration (relative to the
    # model's shortest inter-grid transit), so contracting flows refine evenly
    # in time and every line sees the same spacing
    base_h = ref_transit / fill if math.isfinite(ref_transit) else math.inf
    times = [0.0]
    seg_anchor_parts = []
    seg_slices = []
    k_cursor = 0
    for s in range(len(anchors)):
        dur = edges[s + 1] - edges[s]
        count = int(math.ceil(dur / cap)) if math.isfinite(cap) else 0
        is_tail = truncated and s == len(anchors) - 1
        if is_tail:
            count = max(count, MIN_TAIL_INTERVALS, fill)
        elif math.isfinite(base_h) and dur > 0:
            count = max(count, int(math.ceil(dur / base_h)))
        else:
            count = max(count, fill)
        count = max(count, 1)
        seg_times = np.linspace(edges[s], edges[s + 1], count + 1)[1:]
        seg_times[-1] = edges[s + 1]
        times.extend(seg_times.tolist())
        seg_anchor_parts.append(np.full(count, anchors[s], dtype=np.int64))
        seg_slices.append((k_cursor, k_cursor + count, anchors[s]))
        k_cursor += count
    times = np.asarray(times)
    seg_anchor = np.concatenate(seg_anchor_parts)
    dt = np.diff(times)

    if flow.kind == "trivial":
        states = np.full_like(times, x)
    elif flow.kind == "affine1d":
        if flow.alpha1 == 0.0:
            states = x + flow.alpha0 * times
        else:
            ystar = -flow.alpha0 / flow.alpha1
            states = ystar + (x - ystar) * np.exp(flow.alpha1 * times)
    else:
        states = np.empty_like(times)
        states[0] = x
        for k in range(dt.size):
            states[k + 1] = advance(flow, states[k], float(dt[k]))
    if hit:
        states[-1] = float(model.grid.boundary_points[boundary_index])

    ilo, wlo = interp_weights(points, states)
    ilo_e, wlo_e = interp_weights(model.rate_coords, states)
    lam_nodes = (
        wlo_e[:, None] * model.rate_table[ilo_e, :]
        + (1.0 - wlo_e)[:, None] * model.rate_table[np.minimum(ilo_e + 1, model.rate_coords.size - 1), :]
    )
    f_nodes = (
        wlo[:, None] * model.running_cost[ilo, :]
        + (1.0 - wlo)[:, None] * model.running_cost[np.minimum(ilo + 1, n - 1), :]
    )
    line_feasible = np.ones(model.n_actions, dtype=bool)
    for i in dict.fromkeys(anchors):
        line_feasible &= model.feasible_mask[i]

    return _LineGeometry(
        origin_index=j,
        times=times,
        states=states,
        dt=dt,
        seg_anchor=seg_anchor,
        seg_slices=tuple(seg_slices),
        ilo=ilo,
        wlo=wlo,
        lam_nodes=lam_nodes,
        f_nodes=f_nodes,
        hit=hit,
        boundary_index=boundary_index,
        t_star=t_star,
        truncated=truncated,
        line_feasible=line_feasible,
    )


@dataclass(frozen=True)
class PolicyPath:
    """The feedback path of a policy from one grid state, ready to integrate.

    ``node_actions`` samples the feedback selector on the mesh (the interval
    action is the left node's, matching the piecewise-constant-per-segment
    control); ``cum_hazard`` holds Lam at the nodes.
    """

    model: object
    origin_index: int
    times: np.ndarray
    states: np.ndarray
    dt: np.ndarray
    node_actions: np.ndarray      # (K+1,)
    interval_actions: np.ndarray  # (K,)
    lam_left: np.ndarray          # (K,)
    lam_right: np.ndarray         # (K,)
    hazard_slope: np.ndarray      # (K,) trapezoidal slope of Lam
    cum_hazard: np.ndarray        # (K+1,)
    hit: bool
    boundary_index: int
    boundary_action: int
    t_star: float
    truncated: bool
    ilo: np.ndarray
    wlo: np.ndarray

    @property
    def origin(self) -> float:
        return float(self.states[0])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    def node_table_values(self, table: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Table values at interval endpoints under each interval's action."""
        a = self.interval_actions
        ilo, wlo = self.ilo, self.wlo
        nmax = table.shape[0] - 1
        left = wlo[:-1] * table[ilo[:-1], a] + (1.0 - wlo[:-1]) * table[np.minimum(ilo[:-1] + 1, nmax), a]
        right = wlo[1:] * table[ilo[1:], a] + (1.0 - wlo[1:]) * table[np.minimum(ilo[1:] + 1, nmax), a]
        return left, right

    def running_cost_cumulative(self) -> np.ndarray:
        """Cumulative undiscounted running cost along the line (plain trapezoid)."""
        f_left, f_right = self.node_table_values(self.model.running_cost)
        out = np.empty(self.times.size)
        out[0] = 0.0
        np.cumsum(0.5 * self.dt * (f_left + f_right), out=out[1:])
        return out

    def tail_weight(self, alpha: float) -> float:
        """Survival weight left beyond the truncation horizon (0 when the line hits)."""
        if not self.truncated:
            return 0.0
        return float(np.exp(-alpha * self.times[-1] - self.cum_hazard[-1]))

    def flow_integral_tail_bound(self, alpha: float, v_sup: float) -> float:
        """Bound on the neglected tail of a flow integral past the horizon.

        For op_L-type integrals of a value bounded by ``v_sup``: the state is
        frozen past t_max, so the tail is at most v_sup * tail_weight / (alpha
        + tail rate).  For op_G-type integrals use v_sup = sup |Qh| with
        alpha >= 0, where the tail is at most v_sup * tail_weight outright.
        """
        if not self.truncated:
            return 0.0
        rate = float(self.lam_right[-1]) if self.dt.size else 0.0
        denom = max(alpha + rate, 1e-12)
        return abs(v_sup) * self.tail_weight(alpha) / denom


def _path_from_geometry(model, geom: _LineGeometry, policy) -> PolicyPath:
    a = policy.interior[geom.seg_anchor]
    k_idx = np.arange(geom.dt.size)
    lam_left = geom.lam_nodes[k_idx, a]
    lam_right = geom.lam_nodes[k_idx + 1, a]
    slope = 0.5 * (lam_left + lam_right)
    cum = np.empty(geom.times.size)
    cum[0] = 0.0
    np.cumsum(slope * geom.dt, out=cum[1:])
    boundary_action = int(policy.boundary[geom.boundary_index]) if geom.hit else -1
    node_actions = np.append(a, a[-1])
    return PolicyPath(
        model=model,
        origin_index=geom.origin_index,
        times=geom.times,
        states=geom.states,
        dt=geom.dt,
        node_actions=node_actions,
        interval_actions=a,
        lam_left=lam_left,
        lam_right=lam_right,
        hazard_slope=slope,
        cum_hazard=cum,
        hit=geom.hit,
        boundary_index=geom.boundary_index,
        boundary_action=boundary_action,
        t_star=geom.t_star,
        truncated=geom.truncated,
        ilo=geom.ilo,
        wlo=geom.wlo,
    )


def _check_alpha(model, alpha: float) -> None:
    if alpha < -model.constants.c - 1e-12:
        raise ValueError(f"alpha={alpha} below -c={-model.constants.c}; operators undefined there")


# ---------------------------------------------------------------------------
# public operator surface
# ---------------------------------------------------------------------------

def cum_rate(path: PolicyPath, t: float) -> float:
    """Cumulative jump hazard Lam(x, t) along the path; piecewise linear."""
    if t < 0.0 or t > path.end_time * (1.0 + 1e-12) + 1e-15:
        raise ValueError(f"t={t} outside the path horizon [0, {path.end_time}]")
    return float(np.interp(t, path.times, path.cum_hazard))


def _interval_weights(path: PolicyPath, alpha: float):
    z = (alpha + path.hazard_slope) * path.dt
    head = np.exp(-alpha * path.times[:-1] - path.cum_hazard[:-1])
    return head, z, phi0(z), phi1(z)


def op_L(alpha: float, v: np.ndarray, path: PolicyPath) -> float:
    """Discounted flow integral of a (state, action) table along the path.

    On lines truncated at the horizon the neglected tail is bounded by
    ``path.flow_integral_tail_bound(alpha, sup |v|)``.
    """
    _check_alpha(path.model, alpha)
    v = np.asarray(v, dtype=float)
    head, _, p0, p1 = _interval_weights(path, alpha)
    v_left, v_right = path.node_table_values(v)
    return float(np.sum(head * path.dt * (v_left * p0 + (v_right - v_left) * p1)))


def op_calL(alpha: float, path: PolicyPath) -> float:
    """Expected discounted sojourn weight: op_L with v identically one."""
    _check_alpha(path.model, alpha)
    head, _, p0, _ = _interval_weights(path, alpha)
    return float(np.sum(head * path.dt * p0))


def op_H(alpha: float, w: np.ndarray, path: PolicyPath) -> float:
    """Boundary-hit term; exactly zero when the line never reaches the boundary."""
    _check_alpha(path.model, alpha)
    if not path.hit:
        return 0.0
    surv = math.exp(-alpha * path.end_time - path.cum_hazard[-1])
    return float(surv * np.asarray(w, dtype=float)[path.boundary_index, path.boundary_action])


def op_G(alpha: float, h: np.ndarray, path: PolicyPath) -> float:
    """Expected discounted value of h at the post-jump state."""
    _check_alpha(path.model, alpha)
    model = path.model
    h = np.asarray(h, dtype=float)
    qh = model.kernel_interior @ h  # (n_states, n_actions)
    head, _, p0, p1 = _interval_weights(path, alpha)
    qh_left, qh_right = path.node_table_values(qh)
    mass = path.hazard_slope * path.dt
    total = float(np.sum(head * mass * (qh_left * p0 + (qh_right - qh_left) * p1)))
    if path.hit:
        surv = math.exp(-alpha * path.end_time - path.cum_hazard[-1])
        total += surv * float(model.kernel_boundary[path.boundary_index, path.boundary_action, :] @ h)
    return total


def _kernel_row(path: PolicyPath, alpha: float) -> np.ndarray:
    model = path.model
    n = model.n_states
    n_a = model.n_actions
    head, _, p0, p1 = _interval_weights(path, alpha)
    mass = head * path.hazard_slope * path.dt
    c_left = mass * (p0 - p1)
    c_right = mass * p1
    a = path.interval_actions
    ilo = path.ilo
    wlo = path.wlo
    hi = np.minimum(ilo + 1, n - 1)
    size = n * n_a
    flat = (
        np.bincount(ilo[:-1] * n_a + a, weights=c_left * wlo[:-1], minlength=size)
        + np.bincount(hi[:-1] * n_a + a, weights=c_left * (1.0 - wlo[:-1]), minlength=size)
        + np.bincount(ilo[1:] * n_a + a, weights=c_right * wlo[1:], minlength=size)
        + np.bincount(hi[1:] * n_a + a, weights=c_right * (1.0 - wlo[1:]), minlength=size)
    )
    row = np.einsum("xa,xay->y", flat.reshape(n, n_a), model.kernel_interior)
    if path.hit:
        surv = math.exp(-alpha * path.end_time - path.cum_hazard[-1])
        row = row + surv * model.kernel_boundary[path.boundary_index, path.boundary_action, :]
    return row


@dataclass(frozen=True)
class KernelMatrix:
    """Embedded-chain kernel G(x, u_phi(x); .) restricted to the grid."""

    matrix: np.ndarray
    alpha: float
    truncation_bound: float

    @property
    def row_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=1)


class OperatorWorkspace:
    """Caches per-line meshes so repeated policy evaluations stay cheap.

    The mesh geometry (grid-passage nodes plus per-segment fill) depends only
    on the model, so every policy is integrated on identical nodes; that is
    what makes improvement values directly comparable across policies.
    """

    def __init__(self, model, fill: int = DEFAULT_FILL):
        self.model = model
        self.fill = int(fill)
        ref = _reference_transit(model)
        self.geometry = [_build_geometry(model, j, self.fill, ref) for j in range(model.n_states)]
        self._assembled: dict = {}
        self.refine_diff: float | None = None

    # -- path construction ---------------------------------------------------

    def policy_paths(self, policy) -> list[PolicyPath]:
        return [_path_from_geometry(self.model, g, policy) for g in self.geometry]

    # -- assembled operator set ----------------------------------------------

    def assemble(self, policy, alpha: float = 0.0):
        """(kernel, ell, cost, paths) for one policy at one discount shift."""
        key = (policy.key(), float(alpha))
        hitv = self._assembled.get(key)
        if hitv is not None:
            return hitv
        model = self.model
        paths = self.policy_paths(policy)
        n = model.n_states
        kernel = np.empty((n, n))
        ell = np.empty(n)
        cost = np.empty(n)
        for j, path in enumerate(paths):
            kernel[j] = _kernel_row(path, alpha)
            ell[j] = op_calL(alpha, path)
            cost[j] = op_L(alpha, model.running_cost, path) + op_H(alpha, model.boundary_cost, path)
        if len(self._assembled) > 256:
            self._assembled.clear()
        out = (kernel, ell, cost, paths)
        self._assembled[key] = out
        return out

    def truncation_bound(self, policy, alpha: float = 0.0) -> float:
        """Crude bound on the mass neglected past t_max, summed over lines."""
        tails = [p.tail_weight(alpha) for p in self.policy_paths(policy)]
        return float(max(tails, default=0.0))

    # -- one-stage machinery ---------------------------------------------------

    def one_stage_values(self, policy, rho: float, h: np.ndarray) -> np.ndarray:
        kernel, ell, cost, _ = self.assemble(policy, 0.0)
        return -rho * ell + cost + kernel @ h

    def boundary_minima(self, h: np.ndarray, prev=None):
        """Optimal boundary action and value min_b [r(z,b) + Qh(z,b)] per point."""
        model = self.model
        nb = model.n_boundary
        best_val = np.empty(nb)
        best_act = np.empty(nb, dtype=np.int64)
        qh_b = model.kernel_boundary @ h if nb else np.zeros((0, model.n_actions))
        for zi in range(nb):
            vals = model.boundary_cost[zi] + qh_b[zi]
            masked = np.where(model.boundary_feasible_mask[zi], vals, np.inf)
            pick = int(np.argmin(masked))
            if prev is not None:
                incumbent = int(prev.boundary[zi])
                if masked[incumbent] <= masked[pick] + TIE_TOL * max(1.0, abs(masked[pick])):
                    pick = incumbent
            best_act[zi] = pick
            best_val[zi] = vals[pick]
        return best_act, best_val

    def improve(self, rho: float, h: np.ndarray, prev):
        """Backward march of the one-stage value along each line; argmin policy.

        Within each inter-grid segment the candidate action is frozen, so the
        march minimizes over exactly the piecewise-constant-per-segment paths
        the operators integrate, and the chosen policy's one-stage value
        reproduces the march value.
        """
        from .model import FeedbackPolicy

        model = self.model
        n_a = model.n_actions
        h = np.asarray(h, dtype=float)
        qh_int = model.kernel_interior @ h  # (n, n_a)
        b_act, b_val = self.boundary_minima(h, prev)

        new_interior = np.empty(model.n_states, dtype=np.int64)
        for geom in self.geometry:
            qh_nodes = (
                geom.wlo[:, None] * qh_int[geom.ilo, :]
                + (1.0 - geom.wlo)[:, None] * qh_int[np.minimum(geom.ilo + 1, model.n_states - 1), :]
            )
            if geom.hit:
                w_next = float(b_val[geom.boundary_index])
            else:
                lam_T = np.maximum(geom.lam_nodes[-1], 1e-12)
                station = (geom.f_nodes[-1] - rho + geom.lam_nodes[-1] * qh_nodes[-1]) / lam_T
                last_anchor = geom.seg_slices[-1][2]
                masked = np.where(model.feasible_mask[last_anchor], station, np.inf)
                w_next = float(np.min(masked))
            chosen_first = None
            for (k0, k1, anchor) in reversed(geom.seg_slices):
                lam = geom.lam_nodes[k0 : k1 + 1]
                f = geom.f_nodes[k0 : k1 + 1]
                qh = qh_nodes[k0 : k1 + 1]
                d = geom.dt[k0:k1, None]
                m = 0.5 * (lam[:-1] + lam[1:])
                z = m * d
                p0 = phi0(z)
                p1 = phi1(z)
                contrib = (
                    -rho * d * p0
                    + d * (f[:-1] * p0 + (f[1:] - f[:-1]) * p1)
                    + m * d * (qh[:-1] * p0 + (qh[1:] - qh[:-1]) * p1)
                )
                rel = np.vstack([np.zeros((1, n_a)), np.cumsum(z, axis=0)])
                w_vec = np.sum(np.exp(-rel[:-1]) * contrib, axis=0) + np.exp(-rel[-1]) * w_next
                masked = np.where(model.feasible_mask[anchor], w_vec, np.inf)
                pick = int(np.argmin(masked))
                incumbent = int(prev.interior[anchor])
                if masked[incumbent] <= masked[pick] + TIE_TOL * max(1.0, abs(masked[pick])):
                    pick = incumbent
                w_next = float(w_vec[pick])
                chosen_first = pick
            new_interior[geom.origin_index] = chosen_first
        return FeedbackPolicy(interior=new_interior, boundary=b_act)

    def optimality_residual(self, rho: float, h: np.ndarray, policy) -> float:
        """sup_x [ h(x) - min over frozen-action sweeps of the one-stage value ].

        Each feasible action is held constant along the whole flow line (the
        boundary choice is optimized separately); actions infeasible at some
        anchor of the line are excluded.
        """
        model = self.model
        h = np.asarray(h, dtype=float)
        qh_int = model.kernel_interior @ h
        _, b_val = self.boundary_minima(h)
        worst = -math.inf
        for geom in self.geometry:
            if not geom.line_feasible.any():
                continue
            qh_nodes = (
                geom.wlo[:, None] * qh_int[geom.ilo, :]
                + (1.0 - geom.wlo)[:, None] * qh_int[np.minimum(geom.ilo + 1, model.n_states - 1), :]
            )
            d = geom.dt[:, None]
            m = 0.5 * (geom.lam_nodes[:-1] + geom.lam_nodes[1:])
            z = m * d
            lam_cum = np.vstack([np.zeros((1, model.n_actions)), np.cumsum(z, axis=0)])
            head = np.exp(-lam_cum[:-1])
            p0 = phi0(z)
            p1 = phi1(z)
            f = geom.f_nodes
            qh = qh_nodes
            vals = np.sum(
                head
                * (
                    -rho * d * p0
                    + d * (f[:-1] * p0 + (f[1:] - f[:-1]) * p1)
                    + m * d * (qh[:-1] * p0 + (qh[1:] - qh[:-1]) * p1)
                ),
                axis=0,
            )
            if geom.hit:
                vals = vals + np.exp(-lam_cum[-1]) * b_val[geom.boundary_index]
            best = np.min(np.where(geom.line_feasible, vals, np.inf))
            worst = max(worst, float(h[geom.origin_index] - best))
        if not math.isfinite(worst):
            raise ValueError("no flow line admits a feasible frozen-action sweep")
        return worst


def build_policy_path(model, policy, state_index: int, *, fill: int = DEFAULT_FILL,
                      workspace: OperatorWorkspace | None = None) -> PolicyPath:
    """Feedback path of ``policy`` from one grid state."""
    if workspace is not None:
        return _path_from_geometry(model, workspace.geometry[state_index], policy)
    geom = _build_geometry(model, state_index, fill)
    return _path_from_geometry(model, geom, policy)


def kernel_matrix(model, policy, alpha: float = 0.0, *,
                  workspace: OperatorWorkspace | None = None,
                  fill: int = DEFAULT_FILL) -> KernelMatrix:
    """Embedded-chain kernel under a feedback policy, one row per grid state."""
    _check_alpha(model, alpha)
    ws = workspace if workspace is not None else OperatorWorkspace(model, fill)
    kernel, _, _, paths = ws.assemble(policy, alpha)
    tail = max((p.tail_weight(alpha) for p in paths), default=0.0)
    return KernelMatrix(matrix=kernel, alpha=alpha, truncation_bound=float(tail))


def refined_workspace(model, policy, *, target: float = REFINE_TARGET,
                      start_fill: int = DEFAULT_FILL, max_fill: int = MAX_FILL) -> OperatorWorkspace:
    """Double per-segment mesh fill until successive operator sets agree.

    Agreement is measured as the max absolute change across kernel entries,
    expected sojourn weights and one-policy costs; the finer workspace is
    returned with the achieved difference recorded on ``refine_diff``.
    """
    fill = int(start_fill)
    ws = OperatorWorkspace(model, fill)
    kernel, ell, cost, _ = ws.assemble(policy, 0.0)
    while fill < max_fill:
        finer = OperatorWorkspace(model, fill * 2)
        k2, l2, c2, _ = finer.assemble(policy, 0.0)
        diff = max(
            float(np.max(np.abs(k2 - kernel))),
            float(np.max(np.abs(l2 - ell))),
            float(np.max(np.abs(c2 - cost))),
        )
        finer.refine_diff = diff
        ws = finer
        kernel, ell, cost = k2, l2, c2
        fill *= 2
        if diff <= target:
            break
    return ws
