"""Deterministic motion between jumps: flows, boundary hitting times, meshes.

Flow kinds are restricted to monotone 1-D motion:

* ``trivial``      -- the state never moves, so the boundary is never hit;
* ``affine1d``     -- dy/dt = alpha0 + alpha1 * y, solved in closed form;
* ``tabulated1d``  -- velocity sampled on the state grid; the piecewise-linear
  interpolant is integrated exactly cell by cell (log/exp closed forms), which
  keeps motion monotone and makes hitting times bisection-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import Table1D

FLOW_KINDS = ("trivial", "affine1d", "tabulated1d")

#: tolerance used when deciding whether an advance overruns the boundary
PAST_BOUNDARY_TOL = 1e-9


class PastBoundaryError(ValueError):
    """Raised when advance() is asked to move beyond the hitting time."""


@dataclass(frozen=True)
class FlowSpec:
    """Flow description plus the domain data needed to detect boundary hits.

    ``t_max`` is the truncation horizon used wherever the flow never reaches
    the boundary; the model loader resolves it to 50/c when the file omits it.
    """

    kind: str
    alpha0: float = 0.0
    alpha1: float = 0.0
    velocity: Table1D | None = None
    t_max: float = 50.0
    lo: float = 0.0
    hi: float = 1.0
    boundary: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def fixed_point(self) -> float | None:
        """Zero-velocity point of an affine flow, if any."""
        if self.kind == "affine1d" and self.alpha1 != 0.0:
            return -self.alpha0 / self.alpha1
        return None


def validate_flow(flow: FlowSpec) -> list[str]:
    """Structural checks: known kind, monotone velocity on the domain."""
    problems = []
    if flow.kind not in FLOW_KINDS:
        problems.append(f"unknown flow kind {flow.kind!r}")
        return problems
    if flow.kind == "affine1d":
        v_lo = flow.alpha0 + flow.alpha1 * flow.lo
        v_hi = flow.alpha0 + flow.alpha1 * flow.hi
        if v_lo == 0.0 and v_hi == 0.0:
            problems.append("affine1d flow has zero velocity everywhere; use kind 'trivial'")
        elif v_lo * v_hi < 0.0:
            problems.append(
                "affine1d velocity changes sign inside the domain "
                f"(fixed point at {flow.fixed_point})"
            )
    if flow.kind == "tabulated1d":
        if flow.velocity is None:
            problems.append("tabulated1d flow requires a velocity table")
        else:
            v = flow.velocity.values
            if np.any(v == 0.0) or (np.any(v > 0) and np.any(v < 0)):
                problems.append("tabulated1d velocity must have one strict sign on the grid")
    return problems


def velocity_at(flow: FlowSpec, x: float) -> float:
    if flow.kind == "trivial":
        return 0.0
    if flow.kind == "affine1d":
        return flow.alpha0 + flow.alpha1 * float(x)
    return float(flow.velocity(x))


def flow_direction(flow: FlowSpec) -> int:
    """+1 for motion toward larger coordinates, -1 toward smaller, 0 at rest."""
    if flow.kind == "trivial":
        return 0
    if flow.kind == "affine1d":
        v_lo = flow.alpha0 + flow.alpha1 * flow.lo
        v_hi = flow.alpha0 + flow.alpha1 * flow.hi
        v = v_lo if v_lo != 0.0 else v_hi
        return int(np.sign(v))
    return int(np.sign(flow.velocity.values[0]))


def _affine_passage(a0: float, a1: float, x: float, z: float) -> float:
    """Time for dy/dt = a0 + a1*y to move from x to z; inf if unreachable."""
    if a1 == 0.0:
        if a0 == 0.0:
            return math.inf
        t = (z - x) / a0
        return t if t > 0.0 else math.inf
    ystar = -a0 / a1
    if x == ystar:
        return math.inf
    ratio = (z - ystar) / (x - ystar)
    if ratio <= 0.0:
        return math.inf
    t = math.log(ratio) / a1
    return t if t > 0.0 else math.inf


def _tabulated_cell(flow: FlowSpec, y: float, direction: int):
    """Current cell of the velocity interpolant: (edge ahead, v(y), slope)."""
    coords = flow.velocity.coords
    values = flow.velocity.values
    n = coords.size
    if direction > 0:
        if y >= coords[-1]:
            return math.inf, float(values[-1]), 0.0
        if y < coords[0]:
            return float(coords[0]), float(values[0]), 0.0
        i = min(int(np.searchsorted(coords, y, side="right")) - 1, n - 2)
        s = (values[i + 1] - values[i]) / (coords[i + 1] - coords[i])
        return float(coords[i + 1]), float(values[i] + s * (y - coords[i])), s
    if y <= coords[0]:
        return -math.inf, float(values[0]), 0.0
    if y > coords[-1]:
        return float(coords[-1]), float(values[-1]), 0.0
    i = min(max(int(np.searchsorted(coords, y, side="left")) - 1, 0), n - 2)
    s = (values[i + 1] - values[i]) / (coords[i + 1] - coords[i])
    return float(coords[i]), float(values[i] + s * (y - coords[i])), s


def _cell_exit_time(y: float, edge: float, vy: float, s: float) -> float:
    """Exact traversal time of the linear-velocity cell from y to its edge."""
    if not math.isfinite(edge):
        return math.inf
    v_edge = vy + s * (edge - y)
    if s == 0.0 or abs(v_edge - vy) <= 1e-14 * abs(vy):
        return (edge - y) / (0.5 * (vy + v_edge))
    return math.log(v_edge / vy) / s


def _cell_move(y: float, vy: float, s: float, tau: float) -> float:
    """Position after time tau inside one linear-velocity cell."""
    if s == 0.0:
        return y + vy * tau
    return y + vy * math.expm1(s * tau) / s


def _tabulated_advance(flow: FlowSpec, x: float, t: float) -> float:
    direction = flow_direction(flow)
    y = float(x)
    remaining = float(t)
    while remaining > 0.0:
        edge, vy, s = _tabulated_cell(flow, y, direction)
        tau_exit = _cell_exit_time(y, edge, vy, s)
        if tau_exit > remaining:
            return _cell_move(y, vy, s, remaining)
        y = edge
        remaining -= tau_exit
    return y


def _tabulated_passage(flow: FlowSpec, x: float, z: float) -> float:
    direction = flow_direction(flow)
    if (z - x) * direction <= 0.0:
        return math.inf
    y = float(x)
    total = 0.0
    while True:
        edge, vy, s = _tabulated_cell(flow, y, direction)
        past_edge = (z - edge) * direction >= 0.0 if math.isfinite(edge) else False
        if not past_edge:
            v_z = vy + s * (z - y)
            if s == 0.0 or abs(v_z - vy) <= 1e-14 * abs(vy):
                return total + (z - y) / (0.5 * (vy + v_z))
            return total + math.log(v_z / vy) / s
        total += _cell_exit_time(y, edge, vy, s)
        y = edge


def hit_time(flow: FlowSpec, x: float) -> float:
    """First time the flow from x reaches a boundary point; inf if never."""
    if flow.kind == "trivial" or flow.boundary.size == 0:
        return math.inf
    direction = flow_direction(flow)
    if direction > 0:
        ahead = flow.boundary[flow.boundary > x]
        target = float(ahead.min()) if ahead.size else None
    elif direction < 0:
        ahead = flow.boundary[flow.boundary < x]
        target = float(ahead.max()) if ahead.size else None
    else:
        target = None
    if target is None:
        return math.inf
    if flow.kind == "affine1d":
        return _affine_passage(flow.alpha0, flow.alpha1, float(x), target)
    return _tabulated_passage(flow, float(x), target)


def advance(flow: FlowSpec, x: float, t: float) -> float:
    """State phi(x, t); raises PastBoundaryError when t overruns t*(x)."""
    if t < 0.0:
        raise ValueError(f"advance needs t >= 0, got {t}")
    if flow.kind == "trivial":
        return float(x)
    t_star = hit_time(flow, x)
    if t > t_star + PAST_BOUNDARY_TOL * max(1.0, t_star):
        raise PastBoundaryError(f"t={t} exceeds the boundary hitting time t*={t_star}")
    t_eff = min(float(t), t_star)
    if flow.kind == "affine1d":
        if flow.alpha1 == 0.0:
            return float(x) + flow.alpha0 * t_eff
        ystar = -flow.alpha0 / flow.alpha1
        return ystar + (float(x) - ystar) * math.exp(flow.alpha1 * t_eff)
    return _tabulated_advance(flow, float(x), t_eff)


@dataclass(frozen=True)
class FlowMesh:
    """Time nodes along one flow line and the states at those nodes.

    The final node time is exactly min(t*(x), t_max).
    """

    origin: float
    times: np.ndarray
    states: np.ndarray

    @property
    def end_time(self) -> float:
        return float(self.times[-1])


def build_mesh(flow: FlowSpec, x: float, resolution: int, rate_cap: float | None = None) -> FlowMesh:
    """Uniform time mesh on [0, min(t*(x), t_max)].

    ``rate_cap`` (an upper bound on the jump rate) caps node spacing at
    1/(4*rate_cap) so survival factors stay resolved.
    """
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    end = min(hit_time(flow, x), flow.t_max)
    n_intervals = resolution - 1
    if rate_cap is not None and rate_cap > 0.0 and end > 0.0:
        n_intervals = max(n_intervals, int(math.ceil(end * 4.0 * rate_cap)))
    times = np.linspace(0.0, end, n_intervals + 1)
    times[-1] = end
    if flow.kind == "trivial":
        states = np.full_like(times, float(x))
    else:
        states = np.array([advance(flow, x, t) for t in times])
    return FlowMesh(origin=float(x), times=times, states=states)


def flow_derivative(flow: FlowSpec, h: Table1D, x: float) -> float:
    """Directional derivative of h along the flow at x, from grid differences.

    Central where x has table neighbors on both sides, one-sided at the ends
    of the flow line.  Exactly zero for the trivial flow.
    """
    v = velocity_at(flow, x)
    if v == 0.0:
        return 0.0
    coords = h.coords
    values = h.values
    n = coords.size
    if n < 2:
        return 0.0
    j = int(np.argmin(np.abs(coords - x)))
    if abs(coords[j] - x) <= 1e-12 * max(1.0, abs(x)):
        if 0 < j < n - 1:
            slope = (values[j + 1] - values[j - 1]) / (coords[j + 1] - coords[j - 1])
        elif j == 0:
            slope = (values[1] - values[0]) / (coords[1] - coords[0])
        else:
            slope = (values[-1] - values[-2]) / (coords[-1] - coords[-2])
    else:
        i = min(max(int(np.searchsorted(coords, x)) - 1, 0), n - 2)
        slope = (values[i + 1] - values[i]) / (coords[i + 1] - coords[i])
    return float(slope * v)
