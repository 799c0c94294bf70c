"""Scenario files (YAML with unit-suffixed keys) and their canonical fingerprint.

Angles are written in degrees and converted to radians on load. Every key is
checked; anything unknown is rejected with the line it sits on.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import fields
from importlib import resources
from pathlib import Path

import yaml

from .anticipation import AnticipationConfig
from .dynamics import VehicleGeometry, VehicleState
from .scenario import AgentSetup, Barrier, NoiseModel, Scenario, ScenarioError
from .utility import AgentUtilitySpec, UtilityParams, UtilityWeights

# file key -> UtilityParams field
PARAM_KEYS = {
    "speed_limit_mps": "speed_limit",
    "accel_max_mps2": "accel_max",
    "accel_min_mps2": "accel_min",
    "accel_sharpness_s2_per_m": "kappa4",
    "lane_width_m": "lane_width",
    "road_edge_sharpness_per_m": "kappa6",
    "crash_lx_m": "crash_lx",
    "crash_ly_m": "crash_ly",
    "crash_sharpness_x_per_m": "kappa7x",
    "crash_sharpness_y_per_m": "kappa7y",
    "collision_lx_m": "coll_lx",
    "collision_ly_m": "coll_ly",
    "collision_sharpness_x_per_m": "kappa8x",
    "collision_sharpness_y_per_m": "kappa8y",
}
WEIGHT_KEYS = {
    "forward_speed": "w1",
    "accel_change": "w2",
    "steer_change": "w3",
    "hard_accel": "w4",
    "lane_departure": "w5",
    "off_road": "w6",
    "crash": "w7",
    "collision": "w8",
}
GEOMETRY_KEYS = {
    "wheelbase_m": "wheelbase",
    "cg_to_rear_m": "cg_to_rear",
    "body_width_m": "body_width",
    "body_length_m": "body_length",
}

_REQUIRED = object()


def _key_lines(text: str) -> dict[tuple, int]:
    """Map every key path in a YAML document to its 1-based line number."""
    out: dict[tuple, int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                out[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                p = path + (i,)
                out[p] = item.start_mark.line + 1
                walk(item, p)

    root = yaml.compose(text)
    if root is not None:
        walk(root, ())
    return out


def _path_str(path) -> str:
    s = ""
    for p in path:
        s += f"[{p}]" if isinstance(p, int) else (f".{p}" if s else str(p))
    return s or "<root>"


class _Section:
    """A mapping being consumed key by key, with error messages that point back into the file."""

    def __init__(self, data, path: tuple, lines: dict):
        if not isinstance(data, dict):
            raise self._error_at(path, lines, "expected a mapping")
        self.data, self.path, self.lines, self.used = data, path, lines, set()

    @staticmethod
    def _error_at(path, lines, msg):
        line = lines.get(path)
        where = _path_str(path) + (f" (line {line})" if line else "")
        return ScenarioError(f"{where}: {msg}")

    def error(self, key, msg):
        return self._error_at(self.path + ((key,) if key is not None else ()), self.lines, msg)

    def has(self, key) -> bool:
        return key in self.data

    def raw(self, key, default=_REQUIRED):
        if key not in self.data:
            if default is _REQUIRED:
                raise self.error(None, f"missing required field {key!r}")
            return default
        self.used.add(key)
        return self.data[key]

    def number(self, key, default=_REQUIRED, allow_none=False):
        v = self.raw(key, default)
        if v is None and allow_none:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise self.error(key, f"must be a finite number, got {v!r}")
        return float(v)

    def integer(self, key, default=_REQUIRED, allow_none=False):
        v = self.raw(key, default)
        if v is None and allow_none:
            return None
        if isinstance(v, bool) or not isinstance(v, int):
            raise self.error(key, f"must be an integer, got {v!r}")
        return v

    def text(self, key, default=_REQUIRED):
        v = self.raw(key, default)
        if not isinstance(v, str):
            raise self.error(key, f"must be a string, got {v!r}")
        return v

    def flag(self, key, default=_REQUIRED):
        v = self.raw(key, default)
        if not isinstance(v, bool):
            raise self.error(key, f"must be true or false, got {v!r}")
        return v

    def section(self, key):
        v = self.raw(key, None)
        return None if v is None else _Section(v, self.path + (key,), self.lines)

    def items(self, key):
        v = self.raw(key)
        if not isinstance(v, list):
            raise self.error(key, "expected a list")
        return v

    def finish(self):
        extra = [k for k in self.data if k not in self.used]
        if extra:
            raise self.error(extra[0], f"unknown key {extra[0]!r}")

    def build(self, factory, *args, **kw):
        try:
            return factory(*args, **kw)
        except (ValueError, TypeError) as exc:
            raise self.error(None, str(exc)) from None


def _mapped(sec: _Section | None, table: dict) -> dict:
    if sec is None:
        return {}
    out = {}
    for key, name in table.items():
        if sec.has(key):
            out[name] = sec.number(key, allow_none=(name == "cg_to_rear"))
    sec.finish()
    return out


def _parse_agent(item, idx: int, lines: dict) -> AgentSetup:
    sec = _Section(item, ("agents", idx), lines)
    agent_id = sec.raw("id")
    if not isinstance(agent_id, (str, int)) or isinstance(agent_id, bool):
        raise sec.error("id", "must be a string")
    agent_id = str(agent_id)
    state = sec.build(VehicleState, sec.number("x_m"), sec.number("y_m"),
                      math.radians(sec.number("heading_deg", 0.0)), sec.number("speed_mps"))
    params_sec, weights_sec, geom_sec = sec.section("params"), sec.section("weights"), sec.section("geometry")
    params = (params_sec or sec).build(UtilityParams, **_mapped(params_sec, PARAM_KEYS))
    weights = (weights_sec or sec).build(UtilityWeights, **_mapped(weights_sec, WEIGHT_KEYS))
    geom = (geom_sec or sec).build(VehicleGeometry, **_mapped(geom_sec, GEOMETRY_KEYS))
    entry = sec.integer("entry_tick", 0)
    exit_ = sec.integer("exit_tick", None, allow_none=True)
    sec.finish()
    return AgentSetup(agent_id, state, AgentUtilitySpec(params, weights, geom), entry, exit_)


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        data = yaml.safe_load(text)
        lines = _key_lines(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ScenarioError(f"{source}:{where} YAML parse error: {getattr(exc, 'problem', exc)}") from None
    try:
        return _parse_root(data, lines)
    except ScenarioError as exc:
        raise ScenarioError(f"{source}: {exc}") from None


def _parse_root(data, lines) -> Scenario:
    root = _Section(data if data is not None else {}, (), lines)
    name = root.text("name")
    dt = root.number("dt_s")
    T = root.integer("steps")
    if T < 1:
        raise root.error("steps", "must be >= 1")
    if not dt > 0:
        raise root.error("dt_s", "must be positive")
    lanes_raw = root.raw("lanes_m")
    if not isinstance(lanes_raw, list) or not all(
            isinstance(c, (int, float)) and not isinstance(c, bool) for c in lanes_raw):
        raise root.error("lanes_m", "must be a list of numbers")
    lanes = tuple(float(c) for c in lanes_raw)

    barrier = None
    bsec = root.section("barrier")
    if bsec is not None:
        barrier = Barrier(bsec.number("x_m"), bsec.number("blocked_lane_m"))
        bsec.finish()

    asec = root.section("anticipation")
    akw = {"lane_centers": lanes}
    if asec is not None:
        akw.update(
            horizon=asec.integer("horizon_steps", 15),
            stanley_kappa=asec.number("stanley_kappa", 0.15),
            persistence_fraction=asec.number("persistence_fraction", 1 / 3),
            crossing_threshold=asec.number("crossing_threshold_m", 0.5),
            stanley_gain=asec.number("stanley_gain", None, allow_none=True),
            steer_limit=math.radians(asec.number("steer_limit_deg", 15.0)),
            self_follow=asec.text("self_follow", "lane_keep"),
            anticipate_blocked=asec.flag("anticipate_blocked", False),
        )
        asec.finish()
    anticipation = (asec or root).build(AnticipationConfig, **akw)

    nsec = root.section("noise")
    noise = NoiseModel()
    if nsec is not None:
        ss = nsec.section("state_sigma")
        sa = nsec.section("action_sigma")
        state_sigma = (0.0, 0.0, 0.0, 0.0)
        action_sigma = (0.0, 0.0)
        if ss is not None:
            state_sigma = (ss.number("x_m", 0.0), ss.number("y_m", 0.0),
                           math.radians(ss.number("psi_deg", 0.0)), ss.number("v_mps", 0.0))
            ss.finish()
        if sa is not None:
            action_sigma = (sa.number("alpha_mps2", 0.0), math.radians(sa.number("delta_deg", 0.0)))
            sa.finish()
        noise = nsec.build(NoiseModel, state_sigma, action_sigma, nsec.text("distribution", "gaussian"),
                           nsec.integer("seed", 0))
        nsec.finish()

    osec = root.section("adaptive_overrides")
    overrides = tuple(_mapped(osec, PARAM_KEYS).items())

    agents = tuple(_parse_agent(item, i, lines) for i, item in enumerate(root.items("agents")))
    root.finish()
    return root.build(Scenario, name=name, dt=dt, T=T, lanes=lanes, agents=agents, barrier=barrier,
                      anticipation=anticipation, noise=noise, adaptive_overrides=overrides)


def load_scenario(path) -> Scenario:
    """Load a scenario file, or a bundled scenario by name (``ic1``, ``ic2``, ``single``)."""
    p = Path(path)
    if not p.exists() and str(path) in bundled_names():
        return parse_scenario(bundled_text(str(path)), f"<bundled {path}>")
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from None
    return parse_scenario(text, str(path))


def bundled_names() -> list[str]:
    files = resources.files("trafficgame") / "scenarios"
    return sorted(f.name[: -len(".yaml")] for f in files.iterdir() if f.name.endswith(".yaml"))


def bundled_text(name: str) -> str:
    return (resources.files("trafficgame") / "scenarios" / f"{name}.yaml").read_text()


def _inverse(table):
    return {v: k for k, v in table.items()}


def _deg(rad: float) -> float:
    # 15 significant digits hides radian round-off such as 14.999999999999998
    return float(format(math.degrees(rad), ".15g"))


def scenario_to_dict(sc: Scenario) -> dict:
    """Plain-data form of a scenario using file keys and units; ``parse_scenario`` inverts it."""
    a = sc.anticipation
    out = {
        "name": sc.name,
        "dt_s": sc.dt,
        "steps": sc.T,
        "lanes_m": list(sc.lanes),
    }
    if sc.barrier is not None:
        out["barrier"] = {"x_m": sc.barrier.x, "blocked_lane_m": sc.barrier.blocked_lane}
    out["anticipation"] = {
        "horizon_steps": a.horizon,
        "stanley_kappa": a.stanley_kappa,
        "persistence_fraction": a.persistence_fraction,
        "crossing_threshold_m": a.crossing_threshold,
        "stanley_gain": a.stanley_gain,
        "steer_limit_deg": _deg(a.steer_limit),
        "self_follow": a.self_follow,
        "anticipate_blocked": a.anticipate_blocked,
    }
    n = sc.noise
    out["noise"] = {
        "distribution": n.distribution,
        "seed": n.seed,
        "state_sigma": {"x_m": n.state_sigma[0], "y_m": n.state_sigma[1],
                        "psi_deg": _deg(n.state_sigma[2]), "v_mps": n.state_sigma[3]},
        "action_sigma": {"alpha_mps2": n.action_sigma[0], "delta_deg": _deg(n.action_sigma[1])},
    }
    if sc.adaptive_overrides:
        inv = _inverse(PARAM_KEYS)
        out["adaptive_overrides"] = {inv[k]: v for k, v in sc.adaptive_overrides}
    pinv, winv, ginv = _inverse(PARAM_KEYS), _inverse(WEIGHT_KEYS), _inverse(GEOMETRY_KEYS)
    agents = []
    for ag in sc.agents:
        sp = ag.spec
        agents.append({
            "id": ag.id,
            "x_m": ag.state.x,
            "y_m": ag.state.y,
            "heading_deg": _deg(ag.state.psi),
            "speed_mps": ag.state.v,
            "entry_tick": ag.entry_tick,
            "exit_tick": ag.exit_tick,
            "params": {pinv[f.name]: getattr(sp.params, f.name) for f in fields(sp.params) if f.name in pinv},
            "weights": {winv[f.name]: getattr(sp.weights, f.name) for f in fields(sp.weights)},
            "geometry": {ginv[f.name]: getattr(sp.geometry, f.name) for f in fields(sp.geometry)},
        })
    out["agents"] = agents
    return out


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)


def _canonical(obj):
    # 12 significant digits absorbs the last-bit noise of degree/radian round trips
    if isinstance(obj, float):
        return format(obj, ".12g")
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


def fingerprint(sc: Scenario) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, floats at 12 significant digits)."""
    blob = json.dumps(_canonical(scenario_to_dict(sc)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
