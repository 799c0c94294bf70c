"""Full-horizon Nash equilibrium by iterated best response.

Each agent's decision is its whole action sequence, 2T numbers. A best
response is a basin-hopping search: a bounded L-BFGS-B polish from the
incumbent, then repeated smooth random kicks followed by another polish,
keeping whatever scores best. Agents update in a fixed order (Gauss-Seidel)
until no sequence moves and single-coordinate probing finds no profitable
deviation.
"""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .dynamics import ActionPair, Trajectory, VehicleState, rollout, rollout_arrays
from .utility import ZERO_ACTION, AgentUtilitySpec, cumulative_utility_batch

log = logging.getLogger(__name__)

STEER_SCALE = 10.0


@dataclass
class ActionSequence:
    agent_id: str
    actions: np.ndarray  # (T, 2): alpha [m/s^2], delta [rad]

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=float).reshape(-1, 2)
        if self.actions.shape[0] == 0:
            raise ValueError("empty action sequence")
        if np.any(np.abs(self.actions[:, 1]) >= math.pi / 2) or not np.all(np.isfinite(self.actions)):
            raise ValueError(f"invalid actions for {self.agent_id}")

    def __len__(self):
        return self.actions.shape[0]

    def to_pairs(self) -> list[ActionPair]:
        return [ActionPair(float(a), float(d)) for a, d in self.actions]


@dataclass(frozen=True)
class BestResponseConfig:
    restarts: int = 4
    perturbation_scale: tuple[float, float] = (1.5, math.radians(1.5))  # alpha [m/s^2], delta [rad]
    local_opt_max_evals: int = 250
    alpha_bounds: tuple[float, float] = (-8.0, 6.0)
    delta_bounds: tuple[float, float] = (-math.radians(15.0), math.radians(15.0))
    rng_seed: int = 0
    fd_step: float = 1e-6
    improve_tol: float = 1e-9

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.local_opt_max_evals < 1:
            raise ValueError("local_opt_max_evals must be >= 1")
        if not all(s > 0 for s in self.perturbation_scale):
            raise ValueError("perturbation_scale must be positive")
        for lo, hi in (self.alpha_bounds, self.delta_bounds):
            if not lo < hi:
                raise ValueError("bounds must be nonempty intervals")


@dataclass(frozen=True)
class NashCertificate:
    max_unilateral_gain: float
    argmax: tuple  # (agent, t, coordinate, probe)
    probe_grid: str
    tolerance: float
    passed: bool


@dataclass
class EquilibriumSolution:
    sequences: dict[str, ActionSequence]
    trajectories: dict[str, Trajectory]
    iterations_used: int
    converged: bool
    utilities: dict[str, float]
    certificate: NashCertificate | None
    history: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def action_arrays(self) -> dict[str, np.ndarray]:
        return {i: s.actions for i, s in self.sequences.items()}


def _scaled_distance(a: np.ndarray, b: np.ndarray) -> float:
    d = np.abs(np.asarray(a) - np.asarray(b))
    return float(max(d[:, 0].max(), STEER_SCALE * d[:, 1].max()))


class SequenceObjective:
    """Cumulative utility of one agent as a function of its own flattened, scaled sequence.

    Variables are ``[alpha_0..alpha_{T-1}, 10*delta_0..10*delta_{T-1}]``.
    """

    def __init__(self, spec: AgentUtilitySpec, s0: VehicleState, others_xy, T: int, dt: float,
                 prev_action: ActionPair = ZERO_ACTION):
        self.spec, self.s0, self.others_xy, self.T, self.dt = spec, s0, others_xy, T, dt
        self.prev_action = prev_action
        self.n_evals = 0

    def pack(self, actions: np.ndarray) -> np.ndarray:
        return np.concatenate([actions[:, 0], STEER_SCALE * actions[:, 1]])

    def unpack(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, float)
        return np.stack([z[..., : self.T], z[..., self.T:] / STEER_SCALE], axis=-1)

    def values(self, Z: np.ndarray) -> np.ndarray:
        """Utilities for a batch of packed vectors, shape ``(B, 2T) -> (B,)``."""
        Z = np.atleast_2d(Z)
        self.n_evals += Z.shape[0]
        return cumulative_utility_batch(self.spec, self.s0, Z[:, : self.T], Z[:, self.T:] / STEER_SCALE,
                                        self.others_xy, self.dt, self.prev_action)

    def value(self, z: np.ndarray) -> float:
        return float(self.values(z[None, :])[0])

    def value_and_grad(self, z: np.ndarray, h: float = 1e-6):
        n = z.size
        Z = np.empty((2 * n + 1, n))
        Z[:] = z
        idx = np.arange(n)
        Z[1 + idx, idx] += h
        Z[1 + n + idx, idx] -= h
        vals = self.values(Z)
        return float(vals[0]), (vals[1: n + 1] - vals[n + 1:]) / (2 * h)


def _bounds(cfg: BestResponseConfig, T: int):
    return [cfg.alpha_bounds] * T + [(STEER_SCALE * cfg.delta_bounds[0], STEER_SCALE * cfg.delta_bounds[1])] * T


def _local_opt(obj: SequenceObjective, z0: np.ndarray, cfg: BestResponseConfig):
    bounds = _bounds(cfg, obj.T)

    def fun(z):
        f, g = obj.value_and_grad(z, cfg.fd_step)
        return -f, -g

    res = minimize(fun, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxfun": cfg.local_opt_max_evals, "maxiter": cfg.local_opt_max_evals,
                            "ftol": 1e-13, "gtol": 1e-8, "maxcor": 30})
    z = np.clip(res.x, [b[0] for b in bounds], [b[1] for b in bounds])
    return z, obj.value(z), res


def _smooth_kick(rng: np.random.Generator, T: int, scale: float) -> np.ndarray:
    """A few random Gaussian bumps: coherent multi-step maneuvers rather than white noise."""
    t = np.arange(T)
    out = np.zeros(T)
    for _ in range(rng.integers(1, 4)):
        center = rng.uniform(0, T)
        width = rng.uniform(1.5, max(1.5, T / 4))
        out += rng.normal(0.0, scale) * np.exp(-0.5 * ((t - center) / width) ** 2)
    return out


def perturb(rng: np.random.Generator, z: np.ndarray, T: int, cfg: BestResponseConfig) -> np.ndarray:
    z = z.copy()
    z[:T] += _smooth_kick(rng, T, cfg.perturbation_scale[0])
    z[T:] += STEER_SCALE * _smooth_kick(rng, T, cfg.perturbation_scale[1])
    bounds = _bounds(cfg, T)
    return np.clip(z, [b[0] for b in bounds], [b[1] for b in bounds])


def optimize_sequence(spec: AgentUtilitySpec, s0: VehicleState, incumbent: np.ndarray, others_xy, dt: float,
                      cfg: BestResponseConfig, rng: np.random.Generator, prev_action: ActionPair = ZERO_ACTION):
    """Basin-hopping maximization of one agent's cumulative utility. Never returns worse than ``incumbent``."""
    incumbent = np.asarray(incumbent, float).reshape(-1, 2)
    T = incumbent.shape[0]
    obj = SequenceObjective(spec, s0, others_xy, T, dt, prev_action)
    best_z = obj.pack(incumbent)
    best_f = obj.value(best_z)
    start_f = best_f
    flags = []
    z, f, res = _local_opt(obj, best_z, cfg)
    if not res.success:
        flags.append(f"local optimizer: {res.message}")
    if f > best_f + cfg.improve_tol:
        best_z, best_f = z, f
    for _ in range(cfg.restarts):
        z, f, _ = _local_opt(obj, perturb(rng, best_z, T, cfg), cfg)
        if f > best_f + cfg.improve_tol:
            best_z, best_f = z, f
    return obj.unpack(best_z), best_f, start_f, flags


def _positions(spec: AgentUtilitySpec, s0: VehicleState, actions: np.ndarray, dt: float):
    x, y, _, _ = rollout_arrays(spec.geometry, s0.as_tuple(), actions[:, 0], actions[:, 1], dt)
    return x[:-1], y[:-1]


def _agent_rng(cfg: BestResponseConfig, agent_id, *counters) -> np.random.Generator:
    key = zlib.crc32(str(agent_id).encode())
    return np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, key, *counters]))


def best_response(specs: dict, s0_all: dict, sequences: dict, agent_id, cfg: BestResponseConfig, dt: float,
                  iteration: int = 0) -> tuple[ActionSequence, dict]:
    """Best response of ``agent_id`` with every other agent's sequence held fixed."""
    T = len(sequences[agent_id])
    others = []
    for j, seq in sequences.items():
        if j == agent_id:
            continue
        if len(seq) != T:
            raise ValueError(f"sequence length mismatch for {j}")
        others.append(_positions(specs[j], s0_all[j], seq.actions, dt))
    rng = _agent_rng(cfg, agent_id, iteration)
    acts, f, f0, flags = optimize_sequence(specs[agent_id], s0_all[agent_id], sequences[agent_id].actions,
                                           others, dt, cfg, rng)
    return ActionSequence(agent_id, acts), {"utility": f, "incumbent_utility": f0, "flags": flags}


def agent_utilities(specs: dict, s0_all: dict, sequences: dict, dt: float) -> dict[str, float]:
    pos = {j: _positions(specs[j], s0_all[j], seq.actions, dt) for j, seq in sequences.items()}
    out = {}
    for i, seq in sequences.items():
        others = [p for j, p in pos.items() if j != i]
        out[i] = float(cumulative_utility_batch(specs[i], s0_all[i], seq.actions[:, 0], seq.actions[:, 1],
                                                others, dt))
    return out


DEFAULT_PROBES = (np.linspace(-1.0, 1.0, 11), np.radians(np.linspace(-2.0, 2.0, 11)))


def verify_nash(sequences: dict, specs: dict, s0_all: dict, dt: float, probes=DEFAULT_PROBES,
                tol: float = 1e-3) -> tuple[NashCertificate, dict]:
    """Single-coordinate deviation check.

    Returns the certificate and, per agent, the ``(2, T, n_probe)`` table of
    utility changes, which is what deviation plots are drawn from.
    """
    alpha_probes = np.asarray(probes[0], float)
    delta_probes = np.asarray(probes[1], float)
    pos = {j: _positions(specs[j], s0_all[j], seq.actions, dt) for j, seq in sequences.items()}
    worst, where = -math.inf, None
    curves = {}
    for i, seq in sequences.items():
        base = seq.actions
        T = base.shape[0]
        others = [p for j, p in pos.items() if j != i]
        table = np.empty((2, T, alpha_probes.size))
        for c, pr in enumerate((alpha_probes, delta_probes)):
            A = np.broadcast_to(base[:, 0], (T, pr.size, T)).copy()
            D = np.broadcast_to(base[:, 1], (T, pr.size, T)).copy()
            tgt = A if c == 0 else D
            t_idx = np.arange(T)
            tgt[t_idx, :, t_idx] += pr[None, :]
            vals = cumulative_utility_batch(specs[i], s0_all[i], A, D, others, dt)
            table[c] = vals
        u0 = float(cumulative_utility_batch(specs[i], s0_all[i], base[:, 0], base[:, 1], others, dt))
        gains = table - u0
        curves[i] = gains
        k = np.unravel_index(np.argmax(gains), gains.shape)
        if gains[k] > worst:
            probe = (alpha_probes, delta_probes)[k[0]][k[2]]
            worst, where = float(gains[k]), (i, int(k[1]), ("alpha", "delta")[k[0]], float(probe))
    desc = (f"alpha {alpha_probes.min():+.3g}..{alpha_probes.max():+.3g} m/s^2 x{alpha_probes.size}, "
            f"delta {math.degrees(delta_probes.min()):+.3g}..{math.degrees(delta_probes.max()):+.3g} deg "
            f"x{delta_probes.size}")
    return NashCertificate(worst, where, desc, tol, worst <= tol), curves


def _trajectories(specs, s0_all, sequences, dt):
    return {i: rollout(specs[i].geometry, s0_all[i], seq.to_pairs(), dt) for i, seq in sequences.items()}


def solve_nash(specs: dict, s0_all: dict, initial: dict, cfg: BestResponseConfig | None = None, dt: float = 0.2,
               max_iterations: int = 20, tol: float = 1e-3, probes=DEFAULT_PROBES, cert_tol: float = 1e-3,
               order: list | None = None, parallel: bool = False) -> EquilibriumSolution:
    """Best-response dynamics.

    ``parallel=False`` (default) updates agents one after another against the
    latest sequences; ``parallel=True`` lets every agent respond to the
    previous sweep's profile. Agents update in ``order``, which defaults to
    the key order of ``initial`` (agent 1 first).
    """
    cfg = cfg or BestResponseConfig()
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    order = list(order or initial)
    seqs = {i: ActionSequence(i, np.array(initial[i], float)) for i in order}
    lengths = {len(s) for s in seqs.values()}
    if len(lengths) != 1:
        raise ValueError("initial sequences must share one length")
    history, warnings = [], []
    converged = False
    cert = None
    it = 0
    for it in range(1, max_iterations + 1):
        frozen = dict(seqs)
        moves = {}
        for i in order:
            basis = frozen if parallel else seqs
            new, info = best_response(specs, s0_all, basis, i, cfg, dt, it)
            if info["utility"] < info["incumbent_utility"] - 1e-9:
                raise RuntimeError("best response lowered the agent's utility")
            warnings.extend(f"iter {it} agent {i}: {m}" for m in info["flags"])
            moves[i] = _scaled_distance(new.actions, seqs[i].actions)
            seqs[i] = new
        utils = agent_utilities(specs, s0_all, seqs, dt)
        history.append({"iteration": it, "moves": moves, "utilities": utils})
        log.info("sweep %d: moves %s", it, {k: f"{v:.2e}" for k, v in moves.items()})
        if max(moves.values()) < tol:
            cert, _ = verify_nash(seqs, specs, s0_all, dt, probes, cert_tol)
            if cert.passed:
                converged = True
                break
    if cert is None:
        cert, _ = verify_nash(seqs, specs, s0_all, dt, probes, cert_tol)
    return EquilibriumSolution(
        sequences=seqs,
        trajectories=_trajectories(specs, s0_all, seqs, dt),
        iterations_used=it,
        converged=converged,
        utilities=agent_utilities(specs, s0_all, seqs, dt),
        certificate=cert,
        history=history,
        warnings=warnings,
    )


def random_initial(rng: np.random.Generator, ids, T: int, scale=(1.0, math.radians(1.0))) -> dict:
    """Smooth random starting sequences for multi-equilibrium probing."""
    out = {}
    for i in ids:
        a = _smooth_kick(rng, T, scale[0])
        d = _smooth_kick(rng, T, scale[1])
        out[i] = np.stack([a, d], axis=1)
    return out


def probe_equilibria(specs: dict, s0_all: dict, T: int, cfg: BestResponseConfig | None = None, dt: float = 0.2,
                     n_random_starts: int = 20, rng_seed: int = 0, dedup: float = 0.1,
                     include_zero_start: bool = False, **solve_kw) -> list[EquilibriumSolution]:
    """Run best-response dynamics from several random starts; return distinct solutions.

    Each distinct solution records in ``history[-1]["hits"]`` how many starts
    reached it.
    """
    if n_random_starts < 1:
        raise ValueError("n_random_starts must be >= 1")
    cfg = cfg or BestResponseConfig()
    ids = list(s0_all)
    found: list[EquilibriumSolution] = []
    hits: list[int] = []
    for k in range(n_random_starts):
        if include_zero_start and k == 0:
            init = {i: np.zeros((T, 2)) for i in ids}
        else:
            init = random_initial(np.random.default_rng(np.random.SeedSequence([rng_seed, k])), ids, T)
        run_cfg = BestResponseConfig(**{**cfg.__dict__, "rng_seed": cfg.rng_seed + 1000 * k})
        sol = solve_nash(specs, s0_all, init, run_cfg, dt, **solve_kw)
        for m, other in enumerate(found):
            if max(_scaled_distance(sol.sequences[i].actions, other.sequences[i].actions) for i in ids) <= dedup:
                hits[m] += 1
                break
        else:
            found.append(sol)
            hits.append(1)
    for sol, n in zip(found, hits):
        sol.history.append({"hits": n})
    return found


def tail_improvement(solution: EquilibriumSolution, specs: dict, agent_id, t: int, cfg: BestResponseConfig,
                     dt: float) -> float:
    """How much ``agent_id`` gains by re-optimizing its actions from tick ``t`` on.

    The agent restarts from its realized state at ``t`` with the others' tails
    held fixed. Near zero at an equilibrium.
    """
    seqs = solution.sequences
    T = len(seqs[agent_id])
    if not 0 <= t < T:
        raise ValueError(f"t must be in [0, {T})")
    s_t = solution.trajectories[agent_id].states[t]
    prev = ZERO_ACTION if t == 0 else ActionPair(*seqs[agent_id].actions[t - 1])
    others = []
    for j, seq in seqs.items():
        if j != agent_id:
            arr = solution.trajectories[j].state_array()
            others.append((arr[t:T, 0], arr[t:T, 1]))
    tail = seqs[agent_id].actions[t:]
    rng = _agent_rng(cfg, agent_id, 10_000 + t)
    _, best, start, _ = optimize_sequence(specs[agent_id], s_t, tail, others, dt, cfg, rng, prev)
    return best - start
