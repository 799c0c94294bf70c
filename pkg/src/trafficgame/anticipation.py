"""Finite look-ahead: hypothesized h-step paths and the effective utility built on them.

Two routes are kept on purpose. ``anticipate_self`` / ``effective_utility``
walk one candidate at a time through the scalar dynamics; the ``*_batch``
functions score a whole action grid with numpy. The adaptive solver uses the
batched route and the tests hold it against the scalar one.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ActionPair, VehicleGeometry, VehicleState, step
from .utility import N_FEATURES, AgentUtilitySpec, feature_stack


class AnticipationError(ValueError):
    pass


class Aggregation(str, enum.Enum):
    MEAN = "mean"
    FIRST = "first"
    MAX = "max"


DEFAULT_RULES = (
    Aggregation.MEAN,  # forward reward
    Aggregation.FIRST,  # accel roughness
    Aggregation.FIRST,  # steer roughness
    Aggregation.FIRST,  # hard accel
    Aggregation.MEAN,  # lane departure
    Aggregation.MAX,  # out of road
    Aggregation.MAX,  # crash
    Aggregation.MAX,  # collision
)


@dataclass(frozen=True)
class Aggregators:
    rules: tuple[Aggregation, ...] = DEFAULT_RULES

    def __post_init__(self):
        if len(self.rules) != N_FEATURES:
            raise AnticipationError(f"need exactly {N_FEATURES} aggregation rules")
        object.__setattr__(self, "rules", tuple(Aggregation(r) for r in self.rules))

    def apply(self, feats: np.ndarray) -> np.ndarray:
        """Collapse the trailing period axis of an ``(8, ..., h)`` feature array."""
        out = np.empty(feats.shape[:-1])
        for k, rule in enumerate(self.rules):
            if rule is Aggregation.MEAN:
                out[k] = feats[k].mean(axis=-1)
            elif rule is Aggregation.FIRST:
                out[k] = feats[k][..., 0]
            else:
                out[k] = feats[k].max(axis=-1)
        return out


@dataclass(frozen=True)
class AnticipationConfig:
    horizon: int = 15
    stanley_kappa: float = 0.15
    persistence_fraction: float = 1 / 3
    crossing_threshold: float = 0.5  # [m]
    lane_centers: tuple[float, ...] = (-1.85, 1.85)
    # None: steer so the next heading lands on the Stanley target (one-step match).
    # A number: steering = gain * (target heading - heading).
    stanley_gain: float | None = None
    steer_limit: float = math.radians(15.0)
    # after the persistence window, an own vehicle that has not crossed either
    # keeps its candidate action ("hold") or steers back to its home lane ("lane_keep")
    self_follow: str = "lane_keep"
    # also entertain a lane change for a vehicle that has not started one yet
    # but is driving toward the barrier
    anticipate_blocked: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise AnticipationError("horizon must be >= 1")
        if not self.stanley_kappa > 0:
            raise AnticipationError("stanley_kappa must be positive")
        if not 0 < self.persistence_fraction < 1:
            raise AnticipationError("persistence_fraction must lie in (0, 1)")
        if not self.crossing_threshold > 0:
            raise AnticipationError("crossing_threshold must be positive")
        if not self.lane_centers:
            raise AnticipationError("need at least one lane")
        if self.self_follow not in ("hold", "lane_keep"):
            raise AnticipationError(f"unknown self_follow {self.self_follow!r}")
        object.__setattr__(self, "lane_centers", tuple(sorted(float(c) for c in self.lane_centers)))

    @property
    def persistence_steps(self) -> int:
        return math.ceil(self.horizon * self.persistence_fraction)


@dataclass(frozen=True)
class Intent:
    target_y: float | None = None  # None means keep lane

    @property
    def keep_lane(self) -> bool:
        return self.target_y is None

    def __str__(self):
        return "keep-lane" if self.keep_lane else f"change-to-lane({self.target_y:+.2f})"


KEEP_LANE = Intent()


@dataclass(frozen=True)
class PathScenario:
    agent_id: object
    intent: Intent
    states: tuple[VehicleState, ...]

    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([s.x for s in self.states]), np.array([s.y for s in self.states]))


def stanley_heading(cfg: AnticipationConfig, d: float, v: float):
    """Target heading toward a lane center at signed lateral offset ``d``."""
    return np.arctan(cfg.stanley_kappa * d / np.sqrt(1.0 + v))


def nearest_lane(cfg: AnticipationConfig, y: float) -> float:
    return min(cfg.lane_centers, key=lambda c: (abs(c - y), c))


def adjacent_lane(cfg: AnticipationConfig, origin: float, direction: float) -> float:
    """Next lane center from ``origin`` on the side given by ``direction``; ``origin`` at the edge."""
    lanes = cfg.lane_centers
    if direction > 0:
        above = [c for c in lanes if c > origin]
        return above[0] if above else origin
    below = [c for c in lanes if c < origin]
    return below[-1] if below else origin


def _stanley_steer(cfg, geom, psi, heading_target, v, dt):
    err = heading_target - psi
    if cfg.stanley_gain is not None:
        delta = cfg.stanley_gain * err
    else:
        # invert the bicycle yaw update: dt*v/L*cos(beta)*tan(delta) = err
        reach = dt * v / geom.wheelbase
        c = np.divide(err, reach, out=np.zeros_like(np.asarray(err, float)), where=np.asarray(reach) > 1e-9)
        r = geom.cg_to_rear / geom.wheelbase
        denom = np.sqrt(np.maximum(1.0 - (r * c) ** 2, 1e-12))
        delta = np.arctan(c / denom)
    return np.clip(delta, -cfg.steer_limit, cfg.steer_limit)


def _target_after_crossing(cfg, origin, y):
    return adjacent_lane(cfg, origin, y - origin)


def anticipate_other(cfg: AnticipationConfig, geom: VehicleGeometry, s: VehicleState, intent: Intent,
                     dt: float, agent_id=None) -> PathScenario:
    """Zero action for keep-lane; zero acceleration plus Stanley steering for a lane change."""
    states = []
    cur = s
    for _ in range(cfg.horizon):
        if intent.keep_lane:
            a = ActionPair(0.0, 0.0)
        else:
            target = stanley_heading(cfg, intent.target_y - cur.y, cur.v)
            a = ActionPair(0.0, float(_stanley_steer(cfg, geom, cur.psi, target, cur.v, dt)))
        cur = step(geom, cur, a, dt)
        states.append(cur)
    return PathScenario(agent_id, intent, tuple(states))


def anticipate_self(cfg: AnticipationConfig, geom: VehicleGeometry, s: VehicleState, candidate: ActionPair,
                    dt: float, origin_lane: float | None = None, agent_id=None) -> PathScenario:
    """Hold ``candidate`` for the persistence window, then Stanley-steer if the divider was crossed."""
    origin = nearest_lane(cfg, s.y) if origin_lane is None else origin_lane
    n_hold = cfg.persistence_steps
    states = []
    cur = s
    for k in range(1, cfg.horizon + 1):
        a = candidate
        if k > n_hold:
            crossed = abs(cur.y - origin) >= cfg.crossing_threshold
            if crossed or cfg.self_follow == "lane_keep":
                target_y = _target_after_crossing(cfg, origin, cur.y) if crossed else origin
                target = stanley_heading(cfg, target_y - cur.y, cur.v)
                a = ActionPair(candidate.alpha, float(_stanley_steer(cfg, geom, cur.psi, target, cur.v, dt)))
        cur = step(geom, cur, a, dt)
        states.append(cur)
    intent = KEEP_LANE if abs(states[-1].y - origin) < cfg.crossing_threshold else Intent(
        _target_after_crossing(cfg, origin, states[-1].y))
    return PathScenario(agent_id, intent, tuple(states))


def _check_scenarios(cfg, scenario_sets):
    for j, group in enumerate(scenario_sets):
        if not group:
            raise AnticipationError(f"other agent #{j} has an empty scenario set")
        for sc in group:
            if len(sc.states) != cfg.horizon:
                raise AnticipationError(f"scenario for {sc.agent_id} has {len(sc.states)} states, need {cfg.horizon}")


def effective_utility(spec: AgentUtilitySpec, cfg: AnticipationConfig, aggs: Aggregators, s: VehicleState,
                      prev_action: ActionPair, candidate: ActionPair, scenario_sets, dt: float,
                      origin_lane: float | None = None) -> float:
    """Worst case, over one scenario per other agent, of the aggregated look-ahead utility."""
    _check_scenarios(cfg, scenario_sets)
    own = anticipate_self(cfg, spec.geometry, s, candidate, dt, origin_lane)
    ox = np.array([q.x for q in own.states])
    oy = np.array([q.y for q in own.states])
    ov = np.array([q.v for q in own.states])
    w = spec.weights.as_array()
    worst = math.inf
    for combo in itertools.product(*scenario_sets):
        others = [sc.xy() for sc in combo]
        feats = feature_stack(spec, ox, oy, ov, candidate.alpha, candidate.delta,
                              prev_action.alpha, prev_action.delta,
                              [p[0] for p in others], [p[1] for p in others])
        worst = min(worst, float(w @ aggs.apply(feats)))
    return worst


def anticipate_self_batch(cfg: AnticipationConfig, geom: VehicleGeometry, s: VehicleState, alpha, delta,
                          dt: float, origin_lane: float | None = None):
    """Vectorized ``anticipate_self`` for candidate arrays of shape ``(B,)``; returns x, y, v of shape ``(B, h)``."""
    origin = nearest_lane(cfg, s.y) if origin_lane is None else origin_lane
    alpha = np.asarray(alpha, float)
    delta = np.asarray(delta, float)
    B = alpha.shape[0]
    L, r = geom.wheelbase, geom.cg_to_rear / geom.wheelbase
    x = np.full(B, s.x)
    y = np.full(B, s.y)
    psi = np.full(B, s.psi)
    v = np.full(B, s.v)
    n_hold = cfg.persistence_steps
    lanes = np.array(cfg.lane_centers)
    above = lanes[lanes > origin]
    below = lanes[lanes < origin]
    up_target = above[0] if above.size else origin
    down_target = below[-1] if below.size else origin
    xs, ys, vs = (np.empty((B, cfg.horizon)) for _ in range(3))
    for k in range(1, cfg.horizon + 1):
        d = delta
        if k > n_hold:
            crossed = np.abs(y - origin) >= cfg.crossing_threshold
            follow = crossed if cfg.self_follow == "hold" else np.ones(B, dtype=bool)
            if follow.any():
                target_y = np.where(crossed, np.where(y - origin > 0, up_target, down_target), origin)
                target = stanley_heading(cfg, target_y - y, v)
                d = np.where(follow, _stanley_steer(cfg, geom, psi, target, v, dt), delta)
        tan_d = np.tan(d)
        beta = np.arctan(r * tan_d)
        heading = psi + beta
        x = x + dt * v * np.cos(heading)
        y = y + dt * v * np.sin(heading)
        psi = psi + dt * v / L * np.cos(beta) * tan_d
        v = np.maximum(0.0, v + dt * alpha)
        xs[:, k - 1], ys[:, k - 1], vs[:, k - 1] = x, y, v
    return xs, ys, vs


def effective_utility_batch(spec: AgentUtilitySpec, cfg: AnticipationConfig, aggs: Aggregators, s: VehicleState,
                            prev_action: ActionPair, alpha, delta, scenario_sets, dt: float,
                            origin_lane: float | None = None) -> np.ndarray:
    _check_scenarios(cfg, scenario_sets)
    alpha = np.asarray(alpha, float)
    delta = np.asarray(delta, float)
    ox, oy, ov = anticipate_self_batch(cfg, spec.geometry, s, alpha, delta, dt, origin_lane)
    w = spec.weights.as_array()
    worst = np.full(alpha.shape[0], np.inf)
    a_col, d_col = alpha[:, None], delta[:, None]
    for combo in itertools.product(*scenario_sets):
        others = [sc.xy() for sc in combo]
        feats = feature_stack(spec, ox, oy, ov, a_col, d_col, prev_action.alpha, prev_action.delta,
                              [p[0] for p in others], [p[1] for p in others])
        worst = np.minimum(worst, np.tensordot(w, aggs.apply(feats), axes=1))
    return worst


def barrier_ahead(spec: AgentUtilitySpec, cfg: AnticipationConfig, s: VehicleState, dt: float) -> bool:
    """True when ``s`` sits in a blocked lane and can reach the crash zone within the horizon."""
    p = spec.params
    if spec.weights.w7 == 0 or s.y >= p.crash_ly or s.x >= p.barrier_x:
        return False
    reach = s.v * cfg.horizon * dt + p.crash_lx
    return p.barrier_x - s.x <= reach


def enumerate_scenarios(spec: AgentUtilitySpec, cfg: AnticipationConfig, geom: VehicleGeometry, s: VehicleState,
                        dt: float, home_lane: float | None = None, agent_id=None) -> list[PathScenario]:
    """Path scenarios an observer with ``spec`` entertains for another vehicle in state ``s``.

    Keep-lane is always included. A lane change is added when the vehicle has
    already left its home lane or, with ``cfg.anticipate_blocked``, when it is
    driving toward the barrier.
    """
    home = nearest_lane(cfg, s.y) if home_lane is None else home_lane
    out = [anticipate_other(cfg, geom, s, KEEP_LANE, dt, agent_id)]
    target = None
    if abs(s.y - home) >= cfg.crossing_threshold:
        target = _target_after_crossing(cfg, home, s.y)
    elif cfg.anticipate_blocked and barrier_ahead(spec, cfg, s, dt):
        open_lanes = [c for c in cfg.lane_centers if c >= spec.params.crash_ly]
        if open_lanes:
            target = min(open_lanes, key=lambda c: (abs(c - s.y), c))
    if target is not None and target != home:
        out.append(anticipate_other(cfg, geom, s, Intent(target), dt, agent_id))
    return out
