import csv
import json
import math

import numpy as np
import pytest

from trafficgame.dynamics import ActionPair, VehicleGeometry, VehicleState, rollout
from trafficgame.export import ExportError, export_result, load_run
from trafficgame.nash import BestResponseConfig
from trafficgame.runner import run_adaptive, run_nash
from trafficgame.scenario import NoiseModel, ic1
from trafficgame.scenario_io import fingerprint

ONE_SWEEP = BestResponseConfig(restarts=1, local_opt_max_evals=40)


@pytest.fixture(scope="module")
def nash_run():
    return run_nash(ic1(), ONE_SWEEP, max_iterations=1)


@pytest.fixture(scope="module")
def noisy_adaptive_run():
    sc = ic1().with_noise(NoiseModel(action_sigma=(0.05, math.radians(0.1)), distribution="gaussian", seed=11))
    return run_adaptive(sc)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_file_set(nash_run, tmp_path):
    export_result(nash_run, tmp_path)
    names = sorted(p.relative_to(tmp_path).as_posix() for p in tmp_path.rglob("*") if p.is_file())
    assert names == ["actions.csv", "figures/actions.svg", "figures/deviations.svg", "figures/trajectories.svg",
                     "plot_data/deviation_curves.csv", "plot_data/snapshots.csv", "run.json", "scenario.yaml",
                     "trajectories.csv"]


def test_table_shapes(nash_run, tmp_path):
    export_result(nash_run, tmp_path, figures=False)
    traj, acts = _rows(tmp_path / "trajectories.csv"), _rows(tmp_path / "actions.csv")
    assert len(traj) == 2 * 41 and len(acts) == 2 * 40
    with open(tmp_path / "trajectories.csv") as fh:
        assert fh.readline().strip() == "tick,time_s,agent,x_m,y_m,psi_deg,v_mps,alpha_mps2,delta_deg"
    last = [r for r in traj if r["tick"] == "40"]
    assert len(last) == 2 and all(r["alpha_mps2"] == "" for r in last)


def test_exports_are_byte_identical(nash_run, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    export_result(nash_run, a)
    export_result(nash_run, b)
    for p in a.rglob("*"):
        if p.is_file():
            assert p.read_bytes() == (b / p.relative_to(a)).read_bytes(), p.name


def test_deviation_table_has_one_series_per_coordinate(nash_run, tmp_path):
    export_result(nash_run, tmp_path, figures=False)
    rows = _rows(tmp_path / "plot_data" / "deviation_curves.csv")
    series = {(r["agent"], r["tick"], r["coordinate"]) for r in rows}
    assert len(series) == 2 * 40 * 2
    assert len(rows) == len(series) * 11
    zero = [float(r["utility_change"]) for r in rows if float(r["probe"]) == 0.0]
    assert zero and all(z == 0.0 for z in zero)


def test_summary(nash_run, tmp_path):
    export_result(nash_run, tmp_path, figures=False)
    meta = json.loads((tmp_path / "run.json").read_text())
    assert meta["solver"] == "nash" and meta["iterations"] == 1
    assert meta["fingerprint"] == fingerprint(ic1())
    assert meta["converged"] is False


@pytest.mark.parametrize("which", ["nash_run", "noisy_adaptive_run"])
def test_loaded_actions_reproduce_the_trajectory_table(which, request, tmp_path):
    run = request.getfixturevalue(which)
    export_result(run, tmp_path, figures=False)
    loaded = load_run(tmp_path)
    assert fingerprint(loaded.scenario) == run.fingerprint
    geom = VehicleGeometry()
    for agent, acts in loaded.actions.items():
        s0 = VehicleState(*loaded.states[agent][0])
        again = rollout(geom, s0, [ActionPair(*a) for a in acts], loaded.scenario.dt).state_array()
        np.testing.assert_allclose(again, loaded.states[agent], rtol=0, atol=1e-9)
        np.testing.assert_array_equal(acts, run.trajectories[agent].action_array())


def test_adaptive_tables_carry_optimum_and_realized(noisy_adaptive_run, tmp_path):
    export_result(noisy_adaptive_run, tmp_path, figures=False)
    rows = _rows(tmp_path / "actions.csv")
    assert {"optimal_alpha_mps2", "effective_utility"} <= set(rows[0])
    assert any(r["alpha_mps2"] != r["optimal_alpha_mps2"] for r in rows)
    assert not (tmp_path / "plot_data" / "deviation_curves.csv").exists()


def test_unwritable_target(nash_run, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ExportError):
        export_result(nash_run, blocker / "sub", figures=False)


def test_missing_run_directory(tmp_path):
    with pytest.raises(ExportError):
        load_run(tmp_path / "absent")
