"""Per-period utility features and their weighted sums.

Every feature accepts scalars or numpy arrays and broadcasts, so the same code
scores a single period or a whole batch of candidate trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.special import expit

from .dynamics import ZERO_ACTION, ActionPair, Trajectory, VehicleGeometry, VehicleState, rollout_arrays

N_FEATURES = 8


class UtilityError(ValueError):
    pass


@dataclass(frozen=True)
class UtilityParams:
    speed_limit: float = 31.0  # v0 [m/s]
    accel_max: float = 4.0  # [m/s^2]
    accel_min: float = -5.0  # [m/s^2]
    kappa4: float = 15.0
    lane_width: float = 3.7  # W [m]
    kappa6: float = 3.0  # [1/m]
    crash_lx: float = 5.0  # [m]
    crash_ly: float = 1.0  # [m]
    kappa7x: float = 2.0  # [1/m]
    kappa7y: float = 20.0  # [1/m]
    coll_lx: float = 10.0  # [m]
    coll_ly: float = 2.0  # [m]
    kappa8x: float = 0.5  # [1/m]
    kappa8y: float = 9.0  # [1/m]
    barrier_x: float = 0.0  # [m]

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise UtilityError(f"{f.name} must be finite")
        if not self.speed_limit > 0:
            raise UtilityError("speed_limit must be positive")
        if not self.accel_min < 0 < self.accel_max:
            raise UtilityError("need accel_min < 0 < accel_max")
        for name in ("kappa4", "kappa6", "kappa7x", "kappa7y", "kappa8x", "kappa8y",
                     "crash_lx", "crash_ly", "coll_lx", "coll_ly", "lane_width"):
            if not getattr(self, name) > 0:
                raise UtilityError(f"{name} must be positive")


@dataclass(frozen=True)
class UtilityWeights:
    w1: float = 1.0
    w2: float = -0.01
    w3: float = -1.5
    w4: float = -1.0
    w5: float = -0.3
    w6: float = -24.0
    w7: float = -20.0
    w8: float = -14.0

    def __post_init__(self):
        ws = self.as_array()
        if not np.all(np.isfinite(ws)):
            raise UtilityError("weights must be finite")
        if self.w1 < 0:
            raise UtilityError("w1 is a reward weight and cannot be negative")
        if np.any(ws[1:] > 0):
            raise UtilityError("penalty weights w2..w8 must be <= 0")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f"w{k}") for k in range(1, N_FEATURES + 1)], dtype=float)

    def scaled(self, factor: float) -> "UtilityWeights":
        return UtilityWeights(*(factor * self.as_array()))


@dataclass(frozen=True)
class AgentUtilitySpec:
    params: UtilityParams = field(default_factory=UtilityParams)
    weights: UtilityWeights = field(default_factory=UtilityWeights)
    geometry: VehicleGeometry = field(default_factory=VehicleGeometry)

    def with_params(self, **kw) -> "AgentUtilitySpec":
        return replace(self, params=replace(self.params, **kw))

    def with_weights(self, **kw) -> "AgentUtilitySpec":
        return replace(self, weights=replace(self.weights, **kw))


@dataclass(frozen=True)
class PeriodContext:
    own_state: VehicleState
    own_action: ActionPair = ZERO_ACTION
    prev_action: ActionPair = ZERO_ACTION
    others: tuple[VehicleState, ...] = ()


def sigmoid(z):
    return expit(z)


def softplus(z):
    # max(z, 0) + log1p(exp(-|z|)); never overflows
    return np.logaddexp(0.0, z)


def phi1_forward(spec: AgentUtilitySpec, v):
    v0 = spec.params.speed_limit
    return 1.0 - ((v - v0) / v0) ** 2


def phi2_accel_smooth(alpha, alpha_prev):
    return (alpha - alpha_prev) ** 2


def phi3_steer_smooth(delta, delta_prev):
    return (delta - delta_prev) ** 2


def phi4_hard_accel(spec: AgentUtilitySpec, alpha):
    p = spec.params
    return softplus(p.kappa4 * (alpha - p.accel_max)) + softplus(-p.kappa4 * (alpha - p.accel_min))


def phi5_lane_departure(spec: AgentUtilitySpec, y):
    W = spec.params.lane_width
    return np.minimum((y**2 - (W / 2) ** 2) ** 2 / (3 * W**4 / 4), 1.0)


def phi6_out_of_road(spec: AgentUtilitySpec, y):
    p = spec.params
    edge = p.lane_width + spec.geometry.body_width / 2
    return sigmoid(p.kappa6 * (np.abs(y) - edge))


def phi7_crash(spec: AgentUtilitySpec, x, y):
    p = spec.params
    return sigmoid(p.kappa7x * (x - p.barrier_x + p.crash_lx)) * sigmoid(-p.kappa7y * (y - p.crash_ly))


def _bump(kappa, half_length, d):
    # (S(k(d+l)) - 1/2) + (S(k(l-d)) - 1/2) rewritten as S(k(l-d)) - S(-k(d+l)):
    # same value, but no cancellation far from the bump so the tails stay positive
    d = np.abs(d)  # even in d; evaluating on the positive side keeps the subtraction benign
    return expit(kappa * (half_length - d)) - expit(-kappa * (d + half_length))


def phi8_collision(spec: AgentUtilitySpec, dx, dy):
    p = spec.params
    return _bump(p.kappa8x, p.coll_lx, dx) * _bump(p.kappa8y, p.coll_ly, dy)


def feature_stack(spec: AgentUtilitySpec, x, y, v, alpha, delta, alpha_prev, delta_prev, others_x=(), others_y=()):
    """All eight features, broadcast together; returns an array with a leading axis of 8.

    ``others_x``/``others_y`` are sequences (one entry per other agent) of
    values broadcastable against ``x``; phi8 is summed over them.
    """
    x, y, v = np.asarray(x, float), np.asarray(y, float), np.asarray(v, float)
    alpha, delta = np.asarray(alpha, float), np.asarray(delta, float)
    coll = np.zeros(np.broadcast_shapes(x.shape, y.shape))
    for ox, oy in zip(others_x, others_y):
        coll = coll + phi8_collision(spec, x - ox, y - oy)
    feats = [
        phi1_forward(spec, v),
        phi2_accel_smooth(alpha, alpha_prev),
        phi3_steer_smooth(delta, delta_prev),
        phi4_hard_accel(spec, alpha),
        phi5_lane_departure(spec, y),
        phi6_out_of_road(spec, y),
        phi7_crash(spec, x, y),
        coll,
    ]
    shape = np.broadcast_shapes(*(np.shape(f) for f in feats))
    return np.stack([np.broadcast_to(f, shape) for f in feats])


def period_features(spec: AgentUtilitySpec, ctx: PeriodContext) -> np.ndarray:
    s, a, p = ctx.own_state, ctx.own_action, ctx.prev_action
    return feature_stack(
        spec, s.x, s.y, s.v, a.alpha, a.delta, p.alpha, p.delta,
        [o.x for o in ctx.others], [o.y for o in ctx.others],
    )


def period_utility(spec: AgentUtilitySpec, ctx: PeriodContext) -> float:
    return float(spec.weights.as_array() @ period_features(spec, ctx))


def cumulative_utility_batch(spec: AgentUtilitySpec, s0: VehicleState, alpha, delta, others_xy, dt: float,
                             prev_action: ActionPair = ZERO_ACTION):
    """Cumulative utility of a batch of own action sequences.

    ``alpha``/``delta`` have shape ``(..., T)``; ``others_xy`` is a list of
    ``(x, y)`` pairs of length-T arrays giving each other agent's position at
    the start of every period. Returns shape ``(...)``.
    """
    alpha = np.asarray(alpha, float)
    delta = np.asarray(delta, float)
    x, y, _, v = rollout_arrays(spec.geometry, s0.as_tuple(), alpha, delta, dt)
    x, y, v = x[..., :-1], y[..., :-1], v[..., :-1]
    a_prev = np.concatenate([np.full(alpha.shape[:-1] + (1,), prev_action.alpha), alpha[..., :-1]], axis=-1)
    d_prev = np.concatenate([np.full(delta.shape[:-1] + (1,), prev_action.delta), delta[..., :-1]], axis=-1)
    feats = feature_stack(spec, x, y, v, alpha, delta, a_prev, d_prev,
                          [ox for ox, _ in others_xy], [oy for _, oy in others_xy])
    per_period = np.tensordot(spec.weights.as_array(), feats, axes=1)
    return per_period.sum(axis=-1)


def others_positions(others_trajectories, T: int):
    out = []
    for traj in others_trajectories:
        if len(traj) != T:
            raise UtilityError(f"other trajectory has {len(traj)} periods, expected {T}")
        arr = traj.state_array()
        out.append((arr[:T, 0], arr[:T, 1]))
    return out


def cumulative_utility(spec: AgentUtilitySpec, s0: VehicleState, own_actions, others_trajectories: list[Trajectory],
                       dt: float, prev_action: ActionPair = ZERO_ACTION) -> float:
    """Undiscounted sum of period utilities over the horizon of ``own_actions``."""
    T = len(own_actions)
    if T == 0:
        raise UtilityError("empty action sequence")
    acts = np.array([(a.alpha, a.delta) for a in own_actions], dtype=float)
    others = others_positions(others_trajectories, T)
    return float(cumulative_utility_batch(spec, s0, acts[:, 0], acts[:, 1], others, dt, prev_action))
