"""Kinematic bicycle model with front-wheel steering.

Scalar ``step``/``rollout`` operate on the dataclasses and are the reference
path for realized trajectories. ``rollout_arrays`` is the batched numpy form
used inside the optimizers, where thousands of candidate sequences are rolled
out at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

STEER_LIMIT = math.pi / 2


class DynamicsError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleGeometry:
    wheelbase: float = 2.88  # L [m]
    cg_to_rear: float | None = None  # b [m], defaults to L/2
    body_width: float = 2.0  # w [m]
    body_length: float = 4.8  # [m], only used for gap metrics and plots

    def __post_init__(self):
        if self.cg_to_rear is None:
            object.__setattr__(self, "cg_to_rear", self.wheelbase / 2)
        if not self.wheelbase > 0:
            raise DynamicsError("wheelbase must be positive")
        if not 0 < self.cg_to_rear <= self.wheelbase:
            raise DynamicsError("cg_to_rear must lie in (0, wheelbase]")
        if not self.body_width > 0 or not self.body_length > 0:
            raise DynamicsError("body dimensions must be positive")


@dataclass(frozen=True)
class VehicleState:
    x: float  # [m]
    y: float  # [m]
    psi: float  # heading [rad]
    v: float  # speed [m/s]

    def __post_init__(self):
        vals = (self.x, self.y, self.psi, self.v)
        if not all(math.isfinite(q) for q in vals):
            raise DynamicsError(f"non-finite state {vals}")
        if self.v < 0:
            raise DynamicsError(f"negative speed {self.v}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.psi, self.v)


@dataclass(frozen=True)
class ActionPair:
    alpha: float = 0.0  # acceleration [m/s^2]
    delta: float = 0.0  # steering [rad]

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.delta)):
            raise DynamicsError(f"non-finite action ({self.alpha}, {self.delta})")
        if abs(self.delta) >= STEER_LIMIT:
            raise DynamicsError(f"steering {self.delta} rad at or beyond pi/2")


ZERO_ACTION = ActionPair(0.0, 0.0)


@dataclass
class Trajectory:
    dt: float
    states: list[VehicleState]
    actions: list[ActionPair]
    clamped: list[int] = field(default_factory=list)  # step indices where v hit 0

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise DynamicsError("states must be one longer than actions")

    def __len__(self):
        return len(self.actions)

    def state_array(self) -> np.ndarray:
        """(T+1, 4) array of x, y, psi, v."""
        return np.array([s.as_tuple() for s in self.states], dtype=float)

    def action_array(self) -> np.ndarray:
        """(T, 2) array of alpha, delta."""
        return np.array([(a.alpha, a.delta) for a in self.actions], dtype=float).reshape(-1, 2)


def slip_angle(geom: VehicleGeometry, delta: float) -> float:
    if abs(delta) >= STEER_LIMIT:
        raise DynamicsError(f"steering {delta} rad at or beyond pi/2")
    return math.atan(geom.cg_to_rear / geom.wheelbase * math.tan(delta))


def _step_clamped(geom, s, a, dt):
    beta = slip_angle(geom, a.delta)
    heading = s.psi + beta
    x = s.x + dt * s.v * math.cos(heading)
    y = s.y + dt * s.v * math.sin(heading)
    psi = s.psi + dt * s.v / geom.wheelbase * math.cos(beta) * math.tan(a.delta)
    v_raw = s.v + dt * a.alpha
    return VehicleState(x, y, psi, max(0.0, v_raw)), v_raw < 0


def step(geom: VehicleGeometry, s: VehicleState, a: ActionPair, dt: float) -> VehicleState:
    if not dt > 0:
        raise DynamicsError("dt must be positive")
    return _step_clamped(geom, s, a, dt)[0]


def rollout(geom: VehicleGeometry, s0: VehicleState, actions, dt: float) -> Trajectory:
    if not actions:
        raise DynamicsError("rollout needs at least one action")
    if not dt > 0:
        raise DynamicsError("dt must be positive")
    states = [s0]
    clamped = []
    for k, a in enumerate(actions):
        try:
            nxt, hit = _step_clamped(geom, states[-1], a, dt)
        except DynamicsError as exc:
            raise DynamicsError(f"step {k}: {exc}") from exc
        if hit:
            clamped.append(k)
        states.append(nxt)
    return Trajectory(dt=dt, states=states, actions=list(actions), clamped=clamped)


def rollout_arrays(geom: VehicleGeometry, s0, alpha, delta, dt: float):
    """Batched rollout.

    ``s0`` is ``(x, y, psi, v)`` with scalar or ``(B,)`` entries; ``alpha`` and
    ``delta`` have shape ``(..., T)``. Returns ``(x, y, psi, v)`` each of shape
    ``(..., T+1)``.
    """
    alpha = np.asarray(alpha, dtype=float)
    delta = np.asarray(delta, dtype=float)
    shape = np.broadcast_shapes(alpha.shape, delta.shape)
    T = shape[-1]
    L = geom.wheelbase
    beta = np.arctan(geom.cg_to_rear / L * np.tan(delta))
    yaw_gain = dt / L * np.cos(beta) * np.tan(delta)
    out = np.empty((4,) + shape[:-1] + (T + 1,))
    x, y, psi, v = (np.broadcast_to(np.asarray(q, dtype=float), shape[:-1]).copy() for q in s0)
    for q, col in zip(out, (x, y, psi, v)):
        q[..., 0] = col
    for t in range(T):
        b_t = beta[..., t]
        heading = psi + b_t
        x = x + dt * v * np.cos(heading)
        y = y + dt * v * np.sin(heading)
        psi = psi + v * yaw_gain[..., t]
        v = np.maximum(0.0, v + dt * alpha[..., t])
        out[0, ..., t + 1] = x
        out[1, ..., t + 1] = y
        out[2, ..., t + 1] = psi
        out[3, ..., t + 1] = v
    return out[0], out[1], out[2], out[3]
