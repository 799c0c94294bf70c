"""Static SVG figures for a run. Rendering is deterministic so re-exports are byte-identical."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

SVG_META = {"Date": None, "Creator": None}


def _save(fig, path: Path) -> Path:
    with matplotlib.rc_context({"svg.hashsalt": "trafficgame", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return path


def plot_snapshots(run, path: Path, every: int = 5) -> Path:
    """Vehicle footprints every ``every`` ticks on the road, colored by speed."""
    sc = run.scenario
    fig, ax = plt.subplots(figsize=(10, 2.8))
    speeds = np.concatenate([tr.state_array()[:, 3] for tr in run.trajectories.values()])
    norm = matplotlib.colors.Normalize(vmin=float(speeds.min()) - 0.5, vmax=float(speeds.max()) + 0.5)
    cmap = matplotlib.colormaps["viridis"]
    half = sc.agents[0].spec.params.lane_width / 2
    lo, hi = min(sc.lanes) - half, max(sc.lanes) + half
    xs = np.concatenate([tr.state_array()[:, 0] for tr in run.trajectories.values()])
    ax.axhline(lo, color="k", lw=1.2)
    ax.axhline(hi, color="k", lw=1.2)
    for c0, c1 in zip(sorted(sc.lanes)[:-1], sorted(sc.lanes)[1:]):
        ax.axhline((c0 + c1) / 2, color="0.5", lw=0.8, ls="--")
    if sc.barrier is not None:
        ax.add_patch(Rectangle((sc.barrier.x, sc.barrier.blocked_lane - half), 1.0, 2 * half, color="firebrick"))
    for agent in sorted(run.trajectories):
        arr = run.trajectories[agent].state_array()
        geom = sc.agent(agent).spec.geometry
        ax.plot(arr[:, 0], arr[:, 1], lw=0.8, color="0.3")
        for k in range(0, len(arr), every):
            x, y, psi, v = arr[k]
            rect = Rectangle((x - geom.body_length / 2, y - geom.body_width / 2), geom.body_length, geom.body_width,
                             angle=math.degrees(psi), rotation_point="center", color=cmap(norm(v)), alpha=0.85)
            ax.add_patch(rect)
        ax.annotate(agent, (arr[0, 0], arr[0, 1]), xytext=(-6, 8), textcoords="offset points", fontsize=8)
    ax.set_xlim(float(xs.min()) - 5, max(float(xs.max()), sc.barrier.x if sc.barrier else -math.inf) + 5)
    ax.set_ylim(lo - 1, hi + 1)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.colorbar(matplotlib.cm.ScalarMappable(norm=norm, cmap=cmap), ax=ax, label="speed [m/s]")
    ax.set_title(f"{sc.name}: {run.solver}")
    fig.tight_layout()
    return _save(fig, path)


def plot_actions(run, path: Path) -> Path:
    dt = run.scenario.dt
    starts = run.start_ticks()
    fig, (ax_a, ax_d) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    for agent in sorted(run.trajectories):
        acts = run.trajectories[agent].action_array()
        t = (starts[agent] + np.arange(len(acts))) * dt
        ax_a.step(t, acts[:, 0], where="post", label=agent)
        ax_d.step(t, np.degrees(acts[:, 1]), where="post", label=agent)
    ax_a.set_ylabel("acceleration [m/s²]")
    ax_d.set_ylabel("steering [deg]")
    ax_d.set_xlabel("time [s]")
    ax_a.legend()
    ax_a.grid(alpha=0.3)
    ax_d.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_deviations(run, path: Path) -> Path:
    """Utility change when a single decision variable is nudged; one curve per time index."""
    agents = sorted(run.deviation_curves)
    alpha_probes, delta_probes = run.probes
    fig, axes = plt.subplots(len(agents), 2, figsize=(9, 3 * len(agents)), squeeze=False)
    for r, agent in enumerate(agents):
        table = run.deviation_curves[agent]
        for c, (probes, label) in enumerate(((alpha_probes, "acceleration deviation [m/s²]"),
                                             (np.degrees(delta_probes), "steering deviation [deg]"))):
            ax = axes[r, c]
            for t in range(table.shape[1]):
                ax.plot(probes, table[c, t], lw=0.6, color=matplotlib.colormaps["plasma"](t / table.shape[1]))
            ax.axvline(0, color="k", lw=0.6)
            ax.set_xlabel(label)
            ax.set_ylabel(f"{agent}: utility change")
    fig.tight_layout()
    return _save(fig, path)


def render_all(run, out_dir: Path) -> list[Path]:
    out = [plot_snapshots(run, out_dir / "trajectories.svg"), plot_actions(run, out_dir / "actions.svg")]
    if run.deviation_curves is not None:
        out.append(plot_deviations(run, out_dir / "deviations.svg"))
    return out
