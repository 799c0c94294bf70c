"""Scenario description shared by both solvers, plus the bundled presets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .anticipation import AnticipationConfig
from .dynamics import VehicleState
from .utility import AgentUtilitySpec


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Barrier:
    x: float = 0.0
    blocked_lane: float = -1.85


@dataclass(frozen=True)
class NoiseModel:
    state_sigma: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)  # x, y, psi[rad], v
    action_sigma: tuple[float, float] = (0.0, 0.0)  # alpha, delta[rad]
    distribution: str = "none"  # "none" | "gaussian"
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in ("none", "gaussian"):
            raise ScenarioError(f"unknown noise distribution {self.distribution!r}")
        if len(self.state_sigma) != 4 or len(self.action_sigma) != 2:
            raise ScenarioError("state_sigma needs 4 entries and action_sigma 2")
        if any(s < 0 or not math.isfinite(s) for s in (*self.state_sigma, *self.action_sigma)):
            raise ScenarioError("noise sigmas must be finite and >= 0")
        object.__setattr__(self, "state_sigma", tuple(float(s) for s in self.state_sigma))
        object.__setattr__(self, "action_sigma", tuple(float(s) for s in self.action_sigma))

    @property
    def enabled(self) -> bool:
        return self.distribution != "none"


@dataclass(frozen=True)
class AgentSetup:
    id: str
    state: VehicleState
    spec: AgentUtilitySpec = field(default_factory=AgentUtilitySpec)
    entry_tick: int = 0
    exit_tick: int | None = None  # exclusive; None = stays until the end

    def active(self, tick: int) -> bool:
        return self.entry_tick <= tick and (self.exit_tick is None or tick < self.exit_tick)


@dataclass(frozen=True)
class Scenario:
    name: str
    dt: float
    T: int
    lanes: tuple[float, ...]
    agents: tuple[AgentSetup, ...]
    barrier: Barrier | None = None
    anticipation: AnticipationConfig = field(default_factory=AnticipationConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    # utility parameter overrides applied only when running the adaptive solver
    adaptive_overrides: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.T < 1:
            raise ScenarioError("T must be >= 1")
        if not self.dt > 0:
            raise ScenarioError("dt must be positive")
        if not self.lanes:
            raise ScenarioError("lanes must be nonempty")
        if not self.agents:
            raise ScenarioError("scenario needs at least one agent")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ScenarioError(f"duplicate agent ids in {ids}")
        for a in self.agents:
            if a.entry_tick < 0 or (a.exit_tick is not None and a.exit_tick <= a.entry_tick):
                raise ScenarioError(f"agent {a.id}: bad entry/exit ticks")
        object.__setattr__(self, "lanes", tuple(float(c) for c in self.lanes))
        object.__setattr__(self, "adaptive_overrides", tuple(sorted(dict(self.adaptive_overrides).items())))

    @property
    def agent_ids(self) -> list[str]:
        return [a.id for a in self.agents]

    def agent(self, agent_id: str) -> AgentSetup:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    def effective_spec(self, agent: AgentSetup, solver: str) -> AgentUtilitySpec:
        """Utility spec with the barrier placement and solver-specific overrides applied."""
        spec = agent.spec
        if self.barrier is None:
            spec = spec.with_weights(w7=0.0)
        else:
            spec = spec.with_params(barrier_x=self.barrier.x)
        if solver == "adaptive" and self.adaptive_overrides:
            spec = spec.with_params(**dict(self.adaptive_overrides))
        return spec

    def with_noise(self, noise: NoiseModel) -> "Scenario":
        return replace(self, noise=noise)


def _two_lane(name, open_x, blocked_x, speed=31.0):
    lanes = (-1.85, 1.85)
    agents = (
        AgentSetup("open", VehicleState(open_x, 1.85, 0.0, speed)),
        AgentSetup("blocked", VehicleState(blocked_x, -1.85, 0.0, speed)),
    )
    return Scenario(
        name=name, dt=0.2, T=40, lanes=lanes, agents=agents, barrier=Barrier(0.0, -1.85),
        anticipation=AnticipationConfig(horizon=15, lane_centers=lanes),
        adaptive_overrides=(("crash_lx", 10.0),),
    )


def ic1() -> Scenario:
    """Blocked-lane vehicle leads by 10 m."""
    return _two_lane("ic1", -90.0, -80.0)


def ic2() -> Scenario:
    """Both vehicles side by side."""
    return _two_lane("ic2", -80.0, -80.0)


def single() -> Scenario:
    lanes = (-1.85, 1.85)
    return Scenario(
        name="single", dt=0.2, T=40, lanes=lanes,
        agents=(AgentSetup("solo", VehicleState(-100.0, 1.85, 0.0, 31.0)),),
        anticipation=AnticipationConfig(horizon=15, lane_centers=lanes),
    )


PRESETS = {"ic1": ic1, "ic2": ic2, "single": single}
