"""Receding-horizon grid search with look-ahead anticipation (adaptive solver)."""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .anticipation import (
    Aggregators,
    AnticipationConfig,
    effective_utility_batch,
    enumerate_scenarios,
    nearest_lane,
)
from .dynamics import ZERO_ACTION, ActionPair, Trajectory, VehicleState, _step_clamped
from .scenario import NoiseModel, Scenario
from .utility import AgentUtilitySpec, phi7_crash, phi8_collision

log = logging.getLogger(__name__)

STEER_SCALE = 10.0  # steering [rad] -> commensurate with acceleration [m/s^2]
TIE_TOL = 1e-9
CALAMITY_LEVEL = 0.99


@dataclass(frozen=True)
class ActionGrid:
    alpha_values: tuple[float, ...]
    delta_values: tuple[float, ...]  # [rad]

    def __post_init__(self):
        for name in ("alpha_values", "delta_values"):
            vals = np.asarray(getattr(self, name), dtype=float)
            if vals.size == 0:
                raise ValueError(f"{name} is empty")
            if np.any(np.diff(vals) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
            if not np.any(np.isclose(vals, 0.0, atol=1e-12)):
                raise ValueError(f"{name} must contain 0")
            object.__setattr__(self, name, tuple(float(v) for v in vals))

    @classmethod
    def default(cls) -> "ActionGrid":
        """Acceleration every 0.5 m/s^2 over [-6, 5]; steering graded finer near zero.

        Steering uses 0.1 deg steps inside +-1 deg, 0.25 deg inside +-3 deg and
        1 deg out to +-10 deg. At highway speed a uniform 1 deg step is too
        coarse to hold a lane center.
        """
        alphas = np.round(np.arange(-6.0, 5.0 + 1e-9, 0.5), 10)
        deg = np.concatenate([np.arange(-1, 1.001, 0.1), np.arange(-3, 3.001, 0.25), np.arange(-10, 10.001, 1.0)])
        deltas = np.radians(np.unique(np.round(deg, 6)))
        return cls(tuple(alphas), tuple(deltas))

    @classmethod
    def uniform(cls, alpha_step: float = 0.5, delta_step_deg: float = 1.0) -> "ActionGrid":
        alphas = np.round(np.arange(-6.0, 5.0 + 1e-9, alpha_step), 10)
        deltas = np.radians(np.round(np.arange(-10.0, 10.0 + 1e-9, delta_step_deg), 10))
        return cls(tuple(alphas), tuple(deltas))

    def candidates(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened candidate arrays; index = i_alpha * n_delta + i_delta."""
        a, d = np.meshgrid(self.alpha_values, self.delta_values, indexing="ij")
        return a.ravel(), d.ravel()

    def __len__(self):
        return len(self.alpha_values) * len(self.delta_values)


def pick_best(values: np.ndarray, alpha: np.ndarray, delta: np.ndarray) -> int:
    """Argmax with ties (within TIE_TOL) broken by gentlest action, then lowest index."""
    best = np.max(values)
    tied = np.flatnonzero(values >= best - TIE_TOL)
    if tied.size == 1:
        return int(tied[0])
    mag = np.hypot(alpha[tied], STEER_SCALE * delta[tied])
    return int(tied[np.lexsort((tied, mag))[0]])


@dataclass(frozen=True)
class SolverConfig:
    grid: ActionGrid = field(default_factory=ActionGrid.default)
    aggregators: Aggregators = field(default_factory=Aggregators)
    neighbor_radius: float = 60.0  # [m]


def neighbor_scenarios(spec: AgentUtilitySpec, cfg: AnticipationConfig, perceived: dict, agent_id, dt: float,
                       home_lanes: dict | None = None, radius: float = 60.0, geometries: dict | None = None):
    """Scenario sets for every other agent within ``radius`` of ``agent_id``."""
    me = perceived[agent_id]
    sets = []
    for other_id, st in perceived.items():
        if other_id == agent_id or math.hypot(st.x - me.x, st.y - me.y) > radius:
            continue
        geom = (geometries or {}).get(other_id, spec.geometry)
        home = None if home_lanes is None else home_lanes.get(other_id)
        sets.append(enumerate_scenarios(spec, cfg, geom, st, dt, home, other_id))
    return sets


def grid_values(spec, cfg, aggs, grid: ActionGrid, s: VehicleState, prev_action, scenario_sets, dt,
                origin_lane=None) -> np.ndarray:
    alpha, delta = grid.candidates()
    return effective_utility_batch(spec, cfg, aggs, s, prev_action, alpha, delta, scenario_sets, dt, origin_lane)


def optimal_action(spec: AgentUtilitySpec, cfg: AnticipationConfig, aggs: Aggregators, grid: ActionGrid,
                   perceived: dict, prev_action: ActionPair, agent_id, dt: float, home_lanes: dict | None = None,
                   radius: float = 60.0, geometries: dict | None = None) -> tuple[ActionPair, float]:
    """Exhaustive grid argmax of the effective utility; returns the action and its value."""
    sets = neighbor_scenarios(spec, cfg, perceived, agent_id, dt, home_lanes, radius, geometries)
    origin = None if home_lanes is None else home_lanes.get(agent_id)
    vals = grid_values(spec, cfg, aggs, grid, perceived[agent_id], prev_action, sets, dt, origin)
    alpha, delta = grid.candidates()
    k = pick_best(vals, alpha, delta)
    return ActionPair(float(alpha[k]), float(delta[k])), float(vals[k])


def _agent_key(agent_id) -> int:
    return zlib.crc32(str(agent_id).encode())


def apply_noise(noise: NoiseModel, s: VehicleState, a: ActionPair, tick: int, agent_id):
    """Perceived state and realized action under additive noise.

    Draws come from a generator keyed on (seed, agent, tick), so the values do
    not depend on evaluation order or on which other agents exist.
    """
    if not noise.enabled:
        return s, a
    rng = np.random.default_rng(np.random.SeedSequence([noise.seed, _agent_key(agent_id), tick]))
    z = rng.standard_normal(6)
    ss = (np.asarray(noise.state_sigma) * z[:4]).tolist()
    sa = (np.asarray(noise.action_sigma) * z[4:]).tolist()
    perceived = VehicleState(s.x + ss[0], s.y + ss[1], s.psi + ss[2], max(0.0, s.v + ss[3]))
    realized = ActionPair(a.alpha + sa[0], a.delta + sa[1])
    return perceived, realized


@dataclass
class SimulationResult:
    scenario_name: str
    dt: float
    trajectories: dict[str, Trajectory]
    start_ticks: dict[str, int]
    optimal_actions: dict[str, list[ActionPair]]
    realized_actions: dict[str, list[ActionPair]]
    effective_utility: dict[str, list[float]]
    events: list[dict] = field(default_factory=list)

    def calamities(self) -> list[dict]:
        return [e for e in self.events if e["kind"] == "calamity"]


def _calamity_events(scenario: Scenario, states: dict, tick: int) -> list[dict]:
    out = []
    ids = sorted(states)
    for i in ids:
        spec = scenario.effective_spec(scenario.agent(i), "nash")
        s = states[i]
        if spec.weights.w7 != 0 and phi7_crash(spec, s.x, s.y) > CALAMITY_LEVEL:
            out.append({"tick": tick, "kind": "calamity", "agent": i, "feature": "crash"})
        full = phi8_collision(spec, 0.0, 0.0)
        for j in ids:
            if j <= i:
                continue
            o = states[j]
            if phi8_collision(spec, s.x - o.x, s.y - o.y) > CALAMITY_LEVEL * full:
                out.append({"tick": tick, "kind": "calamity", "agent": i, "other": j, "feature": "collision"})
    return out


def _update_home(cfg: AnticipationConfig, home: float, y: float) -> float:
    c = nearest_lane(cfg, y)
    return c if abs(y - c) < cfg.crossing_threshold else home


def simulate(scenario: Scenario, solver: SolverConfig | None = None, noise: NoiseModel | None = None,
             T: int | None = None) -> SimulationResult:
    """Closed-loop run: every active agent decides on the tick-start state, then all move together."""
    solver = solver or SolverConfig()
    noise = scenario.noise if noise is None else noise
    T = scenario.T if T is None else T
    dt, cfg = scenario.dt, scenario.anticipation
    specs = {a.id: scenario.effective_spec(a, "adaptive") for a in scenario.agents}
    geoms = {i: sp.geometry for i, sp in specs.items()}

    states: dict[str, VehicleState] = {}
    history: dict[str, list[VehicleState]] = {}
    start: dict[str, int] = {}
    prev: dict[str, ActionPair] = {}
    home: dict[str, float] = {}
    opt_log: dict[str, list[ActionPair]] = {}
    real_log: dict[str, list[ActionPair]] = {}
    util_log: dict[str, list[float]] = {}
    clamps: dict[str, list[int]] = {}
    events: list[dict] = []
    n_scen: dict[tuple, int] = {}

    for t in range(T):
        for a in scenario.agents:
            if a.entry_tick == t:
                states[a.id] = a.state
                history[a.id] = [a.state]
                start[a.id] = t
                prev[a.id] = ZERO_ACTION
                home[a.id] = nearest_lane(cfg, a.state.y)
                for log_ in (opt_log, real_log, util_log, clamps):
                    log_[a.id] = []
                events.append({"tick": t, "kind": "enter", "agent": a.id})
            elif a.id in states and not a.active(t):
                del states[a.id]
                events.append({"tick": t, "kind": "exit", "agent": a.id})
        if not states:
            continue

        perceived = {}
        for i, s in states.items():
            perceived[i] = apply_noise(noise, s, ZERO_ACTION, t, i)[0]

        realized = {}
        for i in sorted(states):
            sets = neighbor_scenarios(specs[i], cfg, perceived, i, dt, home, solver.neighbor_radius, geoms)
            for group in sets:
                key = (i, group[0].agent_id)
                if n_scen.get(key, 1) != len(group):
                    events.append({"tick": t, "kind": "scenario_switch", "agent": i,
                                   "other": group[0].agent_id, "scenarios": [str(sc.intent) for sc in group]})
                n_scen[key] = len(group)
            vals = grid_values(specs[i], cfg, solver.aggregators, solver.grid, perceived[i], prev[i], sets, dt,
                               home[i])
            alpha, delta = solver.grid.candidates()
            k = pick_best(vals, alpha, delta)
            a_star = ActionPair(float(alpha[k]), float(delta[k]))
            a_hat = apply_noise(noise, states[i], a_star, t, i)[1]
            opt_log[i].append(a_star)
            real_log[i].append(a_hat)
            util_log[i].append(float(vals[k]))
            realized[i] = a_hat

        for i, a_hat in realized.items():
            nxt, hit = _step_clamped(geoms[i], states[i], a_hat, dt)
            if hit:
                clamps[i].append(t - start[i])
                events.append({"tick": t, "kind": "speed_clamp", "agent": i})
            states[i] = nxt
            history[i].append(nxt)
            prev[i] = a_hat
            home[i] = _update_home(cfg, home[i], nxt.y)
        events.extend(_calamity_events(scenario, states, t + 1))

    trajectories = {
        i: Trajectory(dt=dt, states=history[i], actions=real_log[i], clamped=clamps[i])
        for i in history if real_log[i]
    }
    return SimulationResult(scenario.name, dt, trajectories, start, opt_log, real_log, util_log, events)
