"""Glue between a Scenario and the two solvers."""

from __future__ import annotations

import time

import numpy as np

from .adaptive import SolverConfig, simulate
from .export import RunResult
from .nash import DEFAULT_PROBES, BestResponseConfig, probe_equilibria, solve_nash, verify_nash
from .scenario import Scenario, ScenarioError


def nash_inputs(scenario: Scenario):
    """Per-agent specs and start states; the full-horizon game needs every agent present throughout."""
    for a in scenario.agents:
        if a.entry_tick != 0 or a.exit_tick is not None:
            raise ScenarioError(f"agent {a.id}: the equilibrium solver does not support entry/exit ticks")
    specs = {a.id: scenario.effective_spec(a, "nash") for a in scenario.agents}
    s0 = {a.id: a.state for a in scenario.agents}
    return specs, s0


def run_nash(scenario: Scenario, cfg: BestResponseConfig | None = None, max_iterations: int = 30,
             tol: float = 1e-3, probes=DEFAULT_PROBES, cert_tol: float = 1e-3) -> RunResult:
    specs, s0 = nash_inputs(scenario)
    init = {i: np.zeros((scenario.T, 2)) for i in s0}  # scenario listing order is the update order
    t0 = time.perf_counter()
    sol = solve_nash(specs, s0, init, cfg, scenario.dt, max_iterations, tol, probes, cert_tol)
    wall = time.perf_counter() - t0
    _, curves = verify_nash(sol.sequences, specs, s0, scenario.dt, probes, cert_tol)
    return RunResult(scenario, "nash", sol, wall, deviation_curves=curves, probes=probes)


def run_adaptive(scenario: Scenario, solver: SolverConfig | None = None) -> RunResult:
    t0 = time.perf_counter()
    res = simulate(scenario, solver)
    return RunResult(scenario, "adaptive", res, time.perf_counter() - t0)


def run_probe(scenario: Scenario, n_starts: int, rng_seed: int = 0, cfg: BestResponseConfig | None = None,
              max_iterations: int = 30, tol: float = 1e-3):
    specs, s0 = nash_inputs(scenario)
    return probe_equilibria(specs, s0, scenario.T, cfg, scenario.dt, n_starts, rng_seed,
                            max_iterations=max_iterations, tol=tol)
