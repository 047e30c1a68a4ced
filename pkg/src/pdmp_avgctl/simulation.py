"""Monte Carlo simulation of the controlled process under a feedback policy.

Trajectories follow the standard construction: deterministic flow between
jumps, spontaneous jumps via the inhomogeneous hazard (sampled by inverse
transform on the tabulated cumulative hazard), forced jumps at boundary hits,
post-jump states drawn from the transition kernel.  Cost integrals reuse the
operator engine's meshes so the simulated running cost and the solver's flow
integrals are the same discretization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .operators import OperatorWorkspace

DEFAULT_BATCHES = 20
RATE_FLOOR = 1e-12


class SimulationError(RuntimeError):
    """Simulation could not proceed (invalid model behavior at runtime)."""


class SimulationExplosionError(SimulationError):
    """Jump-count guard tripped; diagnostics carried on ``.stats``."""

    def __init__(self, message: str, stats: dict):
        super().__init__(message)
        self.stats = stats


@dataclass(frozen=True)
class _StateTables:
    """Per-start-state arrays driving sojourn sampling and cost integration."""

    times: np.ndarray
    states: np.ndarray
    hazard: np.ndarray       # cumulative hazard at nodes
    slope: np.ndarray        # hazard slope per interval
    cost_cum: np.ndarray     # cumulative running cost at nodes
    f_left: np.ndarray
    f_right: np.ndarray
    actions: np.ndarray      # interval actions
    hit: bool
    boundary_index: int
    boundary_action: int
    lam_tail: float
    f_tail: float
    state_tail: float
    action_tail: int
    dt_size: int


class SimulationTables:
    """Frozen per-policy simulation data for every grid state."""

    def __init__(self, model, policy, *, workspace: OperatorWorkspace | None = None):
        self.model = model
        self.policy = policy
        ws = workspace if workspace is not None else OperatorWorkspace(model)
        self.per_state = []
        for path in ws.policy_paths(policy):
            f_left, f_right = path.node_table_values(model.running_cost)
            cost_cum = np.empty(path.times.size)
            cost_cum[0] = 0.0
            np.cumsum(0.5 * path.dt * (f_left + f_right), out=cost_cum[1:])
            self.per_state.append(_StateTables(
                times=path.times,
                states=path.states,
                hazard=path.cum_hazard,
                slope=path.hazard_slope,
                cost_cum=cost_cum,
                f_left=f_left,
                f_right=f_right,
                actions=path.interval_actions,
                hit=path.hit,
                boundary_index=path.boundary_index,
                boundary_action=path.boundary_action,
                lam_tail=float(path.lam_right[-1]) if path.dt.size else 0.0,
                f_tail=float(f_right[-1]) if path.dt.size else 0.0,
                state_tail=float(path.states[-1]),
                action_tail=int(path.interval_actions[-1]) if path.dt.size else 0,
                dt_size=int(path.dt.size),
            ))

    def cost_to(self, tab: _StateTables, tau: float) -> float:
        """Running-cost integral over [0, tau] along one line."""
        end = tab.times[-1]
        if tau >= end:
            return float(tab.cost_cum[-1] + (tau - end) * tab.f_tail)
        k = min(max(int(np.searchsorted(tab.times, tau, side="right")) - 1, 0), tab.dt_size - 1)
        dt = tab.times[k + 1] - tab.times[k]
        sigma = tau - tab.times[k]
        f_at = tab.f_left[k] + (tab.f_right[k] - tab.f_left[k]) * (sigma / dt if dt > 0 else 0.0)
        return float(tab.cost_cum[k] + 0.5 * sigma * (tab.f_left[k] + f_at))


def prepare_simulation(model, policy, *, workspace: OperatorWorkspace | None = None) -> SimulationTables:
    return SimulationTables(model, policy, workspace=workspace)


def _draw_sojourn(tab: _StateTables, rng) -> tuple[float, bool, float, int]:
    """(sojourn, hit_boundary, jump_state, jump_action) for one inter-jump leg."""
    level = -math.log1p(-rng.random())
    hazard_end = tab.hazard[-1]
    if level >= hazard_end:
        if tab.hit:
            return float(tab.times[-1]), True, tab.state_tail, tab.boundary_action
        if tab.lam_tail <= RATE_FLOOR:
            raise SimulationError(
                "drawn hazard level exceeds the tabulated horizon and the tail "
                "jump rate is (numerically) zero; the model violates the "
                "divergence the rate floor is supposed to guarantee"
            )
        t = float(tab.times[-1]) + (level - hazard_end) / tab.lam_tail
        return t, False, tab.state_tail, tab.action_tail
    k = min(max(int(np.searchsorted(tab.hazard, level, side="right")) - 1, 0), tab.dt_size - 1)
    m = tab.slope[k]
    t_k = tab.times[k]
    dt = tab.times[k + 1] - t_k
    sigma = (level - tab.hazard[k]) / m if m > RATE_FLOOR else 0.0
    frac = sigma / dt if dt > 0 else 0.0
    y = tab.states[k] + (tab.states[k + 1] - tab.states[k]) * frac
    return float(t_k + sigma), False, float(y), int(tab.actions[k])


def sample_sojourn(model, policy, x: int, rng, *,
                   tables: SimulationTables | None = None) -> tuple[float, bool]:
    """Draw one inter-jump time from state index ``x``; flags boundary hits."""
    tabs = tables if tables is not None else prepare_simulation(model, policy)
    t, hit, _, _ = _draw_sojourn(tabs.per_state[x], rng)
    return t, hit


@dataclass(frozen=True)
class TrajectoryRecord:
    """One simulated path: jump times, post-jump states, costs, counters."""

    jump_times: np.ndarray
    post_jump_states: np.ndarray
    hit_boundary: np.ndarray
    cost_at_jumps: np.ndarray
    running_cost_total: float
    boundary_cost_total: float
    boundary_hits: int
    jump_count: int
    final_time: float

    def to_rows(self) -> list[tuple]:
        rows = []
        for t, z, hb, cum in zip(self.jump_times, self.post_jump_states,
                                 self.hit_boundary, self.cost_at_jumps):
            rows.append((float(t), "boundary" if hb else "jump", int(z), float(cum)))
        rows.append((self.final_time, "end", -1,
                     self.running_cost_total + self.boundary_cost_total))
        return rows


@dataclass(frozen=True)
class SimulationSummary:
    average: float
    se: float
    jumps: int
    boundary_hits: int
    seed: int
    replication: int
    horizon: float
    batches: int

    def to_dict(self) -> dict:
        return {
            "schema": "pdmp-sim/1",
            "average": self.average,
            "se": self.se,
            "jumps": self.jumps,
            "boundary_hits": self.boundary_hits,
            "seed": self.seed,
            "replication": self.replication,
            "horizon": self.horizon,
            "batches": self.batches,
        }


def _rng_stream(seed: int, replication: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed), int(replication)]))


def simulate(model, policy, x0: int, horizon: float, seed: int, *,
             replication: int = 0, batches: int = DEFAULT_BATCHES,
             max_jumps: int | None = None, record: bool = True,
             tables: SimulationTables | None = None) -> tuple[TrajectoryRecord, SimulationSummary]:
    """Simulate the controlled process from grid state index ``x0``.

    Identical (model, policy, x0, horizon, seed, replication) reproduce the
    trajectory bit for bit (counter-based generator, fixed draw order: one
    uniform for the sojourn and one for the post-jump state per jump).
    """
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if not 0 <= int(x0) < model.n_states:
        raise ValueError(f"x0 must be a grid state index in [0, {model.n_states}), got {x0}")
    problems = policy.feasibility_problems(model)
    if problems:
        raise ValueError("infeasible policy: " + "; ".join(problems))
    tabs = tables if tables is not None else prepare_simulation(model, policy)
    rng = _rng_stream(seed, replication)
    if max_jumps is None:
        max_jumps = int(max(100_000, 100.0 * (model.lambda_sup + 1.0) * horizon))

    points = model.grid.points
    kern_int = model.kernel_interior
    kern_bnd = model.kernel_boundary
    n = model.n_states

    edges = np.linspace(horizon / batches, horizon, batches)
    edge_costs = np.empty(batches)
    edge_ptr = 0

    t = 0.0
    j = int(x0)
    cost_f = 0.0
    cost_r = 0.0
    jumps = 0
    hits = 0
    jt, jz, jh, jcum = [], [], [], []

    while t < horizon:
        tab = tabs.per_state[j]
        sojourn, hit, y_jump, act = _draw_sojourn(tab, rng)
        t_next = t + sojourn
        # a jump landing exactly on the horizon still counts (T_i <= t convention)
        if t_next > horizon:
            while edge_ptr < batches and edges[edge_ptr] < horizon:
                edge_costs[edge_ptr] = cost_f + cost_r + tabs.cost_to(tab, edges[edge_ptr] - t)
                edge_ptr += 1
            cost_f += tabs.cost_to(tab, horizon - t)
            t = horizon
            break
        while edge_ptr < batches and edges[edge_ptr] < t_next:
            edge_costs[edge_ptr] = cost_f + cost_r + tabs.cost_to(tab, edges[edge_ptr] - t)
            edge_ptr += 1
        cost_f += tabs.cost_to(tab, sojourn)
        if hit:
            cost_r += float(model.boundary_cost[tab.boundary_index, tab.boundary_action])
            hits += 1
            row = kern_bnd[tab.boundary_index, tab.boundary_action]
        else:
            i = min(max(int(np.searchsorted(points, y_jump, side="right")) - 1, 0), n - 2)
            w = 1.0 - min(max((y_jump - points[i]) / (points[i + 1] - points[i]), 0.0), 1.0)
            row = w * kern_int[i, act] + (1.0 - w) * kern_int[i + 1, act]
        u2 = rng.random()
        j = min(int(np.searchsorted(np.cumsum(row), u2 * row.sum())), n - 1)
        jumps += 1
        t = t_next
        if record:
            jt.append(t)
            jz.append(j)
            jh.append(hit)
            jcum.append(cost_f + cost_r)
        if jumps > max_jumps:
            raise SimulationExplosionError(
                f"jump count exceeded the guard ({max_jumps}) at t={t:.6g}",
                stats={"jumps": jumps, "time": t, "horizon": horizon,
                       "recent_rate": jumps / max(t, 1e-12)},
            )

    while edge_ptr < batches:
        edge_costs[edge_ptr] = cost_f + cost_r
        edge_ptr += 1

    batch_totals = np.diff(np.concatenate([[0.0], edge_costs]))
    batch_means = batch_totals / (horizon / batches)
    se = float(np.std(batch_means, ddof=1) / math.sqrt(batches)) if batches > 1 else 0.0

    record_obj = TrajectoryRecord(
        jump_times=np.asarray(jt),
        post_jump_states=np.asarray(jz, dtype=np.int64),
        hit_boundary=np.asarray(jh, dtype=bool),
        cost_at_jumps=np.asarray(jcum),
        running_cost_total=cost_f,
        boundary_cost_total=cost_r,
        boundary_hits=hits,
        jump_count=jumps,
        final_time=t,
    )
    summary = SimulationSummary(
        average=(cost_f + cost_r) / horizon,
        se=se,
        jumps=jumps,
        boundary_hits=hits,
        seed=int(seed),
        replication=int(replication),
        horizon=float(horizon),
        batches=batches,
    )
    return record_obj, summary


@dataclass(frozen=True)
class McVerdict:
    passed: bool
    pooled_mean: float
    pooled_se: float
    rho: float
    replications: int
    horizon: float
    seed: int
    rep_means: np.ndarray

    def to_dict(self) -> dict:
        return {
            "schema": "pdmp-mc/1",
            "passed": bool(self.passed),
            "pooled_mean": self.pooled_mean,
            "pooled_se": self.pooled_se,
            "rho": self.rho,
            "replications": self.replications,
            "horizon": self.horizon,
            "seed": self.seed,
            "rep_means": self.rep_means.tolist(),
        }


def mc_validate(model, policy, rho: float, x0: int, horizon: float,
                replications: int, seed: int, *,
                workspace: OperatorWorkspace | None = None) -> McVerdict:
    """Independent replications; passes iff |pooled mean - rho| <= 3 SE.

    A small absolute floor (1e-9 * max(1, |rho|)) keeps the check meaningful
    on deterministic models where the batch spread is exactly zero.
    """
    tabs = prepare_simulation(model, policy, workspace=workspace)
    means = np.empty(replications)
    for r in range(replications):
        _, summary = simulate(model, policy, x0, horizon, seed, replication=r,
                              record=False, tables=tabs)
        means[r] = summary.average
    pooled = float(means.mean())
    se = float(means.std(ddof=1) / math.sqrt(replications)) if replications > 1 else 0.0
    atol = 1e-9 * max(1.0, abs(rho))
    passed = abs(pooled - rho) <= 3.0 * se + atol
    return McVerdict(passed=passed, pooled_mean=pooled, pooled_se=se, rho=float(rho),
                     replications=replications, horizon=float(horizon), seed=int(seed),
                     rep_means=means)
