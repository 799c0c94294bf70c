"""Writing run results to disk and reading them back.

A run directory holds:

- ``scenario.yaml``: the scenario exactly as solved
- ``trajectories.csv``: one row per agent and tick (actions blank on the final state row)
- ``actions.csv``: one row per agent and decision tick, with steering also in radians
- ``run.json``: fingerprint, solver, timing, convergence and outcome summary
- ``plot_data/*.csv`` and ``figures/*.svg``: what the figures are drawn from, and the figures
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .adaptive import SimulationResult
from .dynamics import Trajectory
from .metrics import merge_outcome, settle_tick
from .nash import EquilibriumSolution
from .scenario import Scenario
from .scenario_io import dump_scenario, fingerprint, parse_scenario

TRAJECTORY_HEADER = ["tick", "time_s", "agent", "x_m", "y_m", "psi_deg", "v_mps", "alpha_mps2", "delta_deg"]
ACTION_HEADER = ["tick", "time_s", "agent", "alpha_mps2", "delta_deg", "delta_rad"]
ADAPTIVE_EXTRA = ["optimal_alpha_mps2", "optimal_delta_deg", "effective_utility"]
DEVIATION_HEADER = ["agent", "tick", "coordinate", "probe", "probe_unit", "utility_change"]
SNAPSHOT_EVERY = 5


class ExportError(OSError):
    pass


@dataclass
class RunResult:
    scenario: Scenario
    solver: str  # "nash" | "adaptive"
    result: EquilibriumSolution | SimulationResult
    wall_time: float
    version: str = __version__
    deviation_curves: dict | None = None  # agent -> (2, T, n_probe) utility changes
    probes: tuple | None = None  # (alpha probes [m/s^2], delta probes [rad])
    notes: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.scenario)

    @property
    def trajectories(self) -> dict[str, Trajectory]:
        return self.result.trajectories

    def start_ticks(self) -> dict[str, int]:
        if isinstance(self.result, SimulationResult):
            return dict(self.result.start_ticks)
        return {i: 0 for i in self.result.trajectories}


def _num(x: float) -> str:
    return repr(float(x))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def trajectory_rows(run: RunResult):
    dt = run.scenario.dt
    starts = run.start_ticks()
    for agent in sorted(run.trajectories):
        tr = run.trajectories[agent]
        for k, s in enumerate(tr.states):
            tick = starts[agent] + k
            if k < len(tr.actions):
                a = tr.actions[k]
                act = [_num(a.alpha), _num(math.degrees(a.delta))]
            else:
                act = ["", ""]
            yield [tick, _num(tick * dt), agent, _num(s.x), _num(s.y), _num(math.degrees(s.psi)), _num(s.v), *act]


def action_rows(run: RunResult):
    dt = run.scenario.dt
    starts = run.start_ticks()
    adaptive = isinstance(run.result, SimulationResult)
    for agent in sorted(run.trajectories):
        tr = run.trajectories[agent]
        for k, a in enumerate(tr.actions):
            tick = starts[agent] + k
            row = [tick, _num(tick * dt), agent, _num(a.alpha), _num(math.degrees(a.delta)), _num(a.delta)]
            if adaptive:
                o = run.result.optimal_actions[agent][k]
                row += [_num(o.alpha), _num(math.degrees(o.delta)), _num(run.result.effective_utility[agent][k])]
            yield row


def deviation_rows(run: RunResult):
    if run.deviation_curves is None:
        return
    alpha_probes, delta_probes = run.probes
    for agent in sorted(run.deviation_curves):
        table = run.deviation_curves[agent]
        for c, (name, probes, unit, conv) in enumerate((
                ("alpha", alpha_probes, "mps2", float), ("delta", delta_probes, "deg", math.degrees))):
            for t in range(table.shape[1]):
                for p, gain in zip(probes, table[c, t]):
                    yield [agent, t, name, _num(conv(p)), unit, _num(gain)]


def snapshot_rows(run: RunResult):
    for row in trajectory_rows(run):
        T_end = run.scenario.T
        if row[0] % SNAPSHOT_EVERY == 0 or row[0] == T_end:
            yield [row[0], row[1], row[2], row[3], row[4], row[5], row[6]]


def summary(run: RunResult) -> dict:
    res = run.result
    trajs = run.trajectories
    meta = {
        "tool": "trafficgame",
        "version": run.version,
        "solver": run.solver,
        "scenario": run.scenario.name,
        "fingerprint": run.fingerprint,
        "fingerprint_algorithm": "sha256 of canonical JSON (sorted keys, floats at 12 significant digits)",
        "wall_time_s": round(run.wall_time, 3),
        "dt_s": run.scenario.dt,
        "steps": run.scenario.T,
        "settle_tick": settle_tick([tr.action_array() for tr in trajs.values()]),
    }
    meta["settle_time_s"] = meta["settle_tick"] * run.scenario.dt
    if isinstance(res, EquilibriumSolution):
        cert = res.certificate
        meta.update({
            "converged": res.converged,
            "iterations": res.iterations_used,
            "utilities": res.utilities,
            "certificate": None if cert is None else {
                "max_unilateral_gain": cert.max_unilateral_gain,
                "argmax": list(cert.argmax) if cert.argmax else None,
                "probe_grid": cert.probe_grid,
                "tolerance": cert.tolerance,
                "passed": cert.passed,
            },
            "warnings": len(res.warnings),
        })
    else:
        meta.update({
            "calamities": len(res.calamities()),
            "events": res.events,
            "noise": {"distribution": run.scenario.noise.distribution, "seed": run.scenario.noise.seed},
        })
    if {"open", "blocked"} <= set(trajs) and run.start_ticks()["open"] == run.start_ticks()["blocked"]:
        out = merge_outcome(trajs["blocked"], trajs["open"])
        meta["merge"] = {"kind": out.kind, "merger_final_y_m": out.merger_final_y, "final_dx_m": out.final_dx,
                         "min_dx_alongside_m": out.min_dx_alongside}
    meta.update(run.notes)
    return meta


def export_result(run: RunResult, out_dir, figures: bool = True) -> list[Path]:
    """Write the full file set for ``run`` into ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    try:
        (out / "plot_data").mkdir(parents=True, exist_ok=True)
        written = []

        def put(rel, text):
            p = out / rel
            p.write_text(text)
            written.append(p)

        put("scenario.yaml", dump_scenario(run.scenario))
        put("trajectories.csv", _csv_text(TRAJECTORY_HEADER, trajectory_rows(run)))
        adaptive = isinstance(run.result, SimulationResult)
        put("actions.csv", _csv_text(ACTION_HEADER + (ADAPTIVE_EXTRA if adaptive else []), action_rows(run)))
        put("plot_data/snapshots.csv", _csv_text(TRAJECTORY_HEADER[:7], snapshot_rows(run)))
        if run.deviation_curves is not None:
            put("plot_data/deviation_curves.csv", _csv_text(DEVIATION_HEADER, deviation_rows(run)))
        put("run.json", json.dumps(summary(run), indent=2, sort_keys=True, default=_json_default) + "\n")
        if figures:
            from .plots import render_all

            (out / "figures").mkdir(exist_ok=True)
            written += render_all(run, out / "figures")
    except OSError as exc:
        raise ExportError(f"cannot write results to {out}: {exc.strerror or exc}") from None
    return written


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


@dataclass
class LoadedRun:
    scenario: Scenario
    meta: dict
    actions: dict[str, np.ndarray]  # (T_i, 2) in [m/s^2, rad]
    states: dict[str, np.ndarray]  # (T_i + 1, 4) in [m, m, rad, m/s]
    start_ticks: dict[str, int]


def load_run(run_dir) -> LoadedRun:
    d = Path(run_dir)
    try:
        scenario = parse_scenario((d / "scenario.yaml").read_text(), str(d / "scenario.yaml"))
        meta = json.loads((d / "run.json").read_text())
        with open(d / "actions.csv", newline="") as fh:
            act_rows = list(csv.DictReader(fh))
        with open(d / "trajectories.csv", newline="") as fh:
            traj_rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ExportError(f"cannot read run directory {d}: {exc.strerror or exc}") from None
    actions, states, starts = {}, {}, {}
    for r in act_rows:
        actions.setdefault(r["agent"], []).append((float(r["alpha_mps2"]), float(r["delta_rad"])))
    for r in traj_rows:
        starts.setdefault(r["agent"], int(r["tick"]))
        states.setdefault(r["agent"], []).append(
            (float(r["x_m"]), float(r["y_m"]), math.radians(float(r["psi_deg"])), float(r["v_mps"])))
    return LoadedRun(scenario, meta, {k: np.array(v) for k, v in actions.items()},
                     {k: np.array(v) for k, v in states.items()}, starts)
