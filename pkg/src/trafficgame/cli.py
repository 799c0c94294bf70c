"""Command-line entry point: ``trafficgame simulate|verify|probe|compare``.

Exit codes: 0 success, 1 solver did not converge (or certificate failed),
2 bad input. ``TRAFFICGAME_OUT`` sets the parent directory for runs when
``--out`` is omitted.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from .export import ExportError, export_result, load_run
from .metrics import merge_outcome
from .nash import ActionSequence, BestResponseConfig, verify_nash
from .runner import nash_inputs, run_adaptive, run_nash, run_probe
from .scenario import ScenarioError
from .scenario_io import load_scenario

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INPUT = 0, 1, 2
OUT_ENV = "TRAFFICGAME_OUT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def _default_out(scenario_name: str, solver: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "runs")) / f"{scenario_name}-{solver}"


def _cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    out = Path(args.out) if args.out else _default_out(sc.name, args.solver)
    if args.solver == "nash":
        cfg = BestResponseConfig(rng_seed=args.seed if args.seed is not None else 0)
        run = run_nash(sc, cfg, max_iterations=args.max_iter, tol=args.tol)
        sol = run.result
        export_result(run, out, figures=not args.no_figures)
        cert = sol.certificate
        print(f"{sc.name} nash: converged={sol.converged} sweeps={sol.iterations_used} "
              f"max_gain={cert.max_unilateral_gain:.3g} wall={run.wall_time:.1f}s -> {out}")
        _print_merge(run.trajectories)
        return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED
    if args.seed is not None:
        sc = sc.with_noise(replace(sc.noise, seed=args.seed))
    run = run_adaptive(sc)
    export_result(run, out, figures=not args.no_figures)
    print(f"{sc.name} adaptive: calamities={len(run.result.calamities())} wall={run.wall_time:.1f}s -> {out}")
    _print_merge(run.trajectories)
    return EXIT_OK


def _print_merge(trajs):
    if {"open", "blocked"} <= set(trajs):
        m = merge_outcome(trajs["blocked"], trajs["open"])
        print(f"merge: {m.kind} (final dx {m.final_dx:+.1f} m, merger y {m.merger_final_y:.2f} m, "
              f"closest alongside {m.min_dx_alongside:.1f} m)")


def _cmd_verify(args) -> int:
    loaded = load_run(args.result)
    if loaded.meta.get("solver") != "nash":
        raise ScenarioError(f"{args.result} is not an equilibrium run")
    specs, s0 = nash_inputs(loaded.scenario)
    seqs = {i: ActionSequence(i, loaded.actions[i]) for i in sorted(specs)}
    cert, _ = verify_nash(seqs, specs, s0, loaded.scenario.dt, tol=args.tol)
    print(f"max unilateral gain {cert.max_unilateral_gain:.3g} at {cert.argmax} "
          f"(probes {cert.probe_grid}; tol {cert.tolerance:g}): {'PASS' if cert.passed else 'FAIL'}")
    return EXIT_OK if cert.passed else EXIT_NOT_CONVERGED


def _cmd_probe(args) -> int:
    sc = load_scenario(args.scenario)
    sols = run_probe(sc, args.starts, args.seed, max_iterations=args.max_iter)
    print(f"{len(sols)} distinct solution(s) from {args.starts} starts")
    for k, sol in enumerate(sols):
        kind = "-"
        if {"open", "blocked"} <= set(sol.trajectories):
            kind = merge_outcome(sol.trajectories["blocked"], sol.trajectories["open"]).kind
        print(f"  #{k}: hits={sol.history[-1]['hits']} merge={kind} converged={sol.converged} "
              f"max_gain={sol.certificate.max_unilateral_gain:.3g}")
    return EXIT_OK


def _by_tick(run, agent) -> dict:
    """tick -> (action taken at tick, state reached after it)."""
    start = run.start_ticks[agent]
    acts, states = run.actions[agent], run.states[agent]
    return {start + k: (acts[k], states[k + 1]) for k in range(len(acts))}


def _cmd_compare(args) -> int:
    a, b = load_run(args.a), load_run(args.b)
    shared = sorted(set(a.actions) & set(b.actions))
    if not shared:
        raise ScenarioError("the two runs share no agents")
    print(f"# a={args.a} ({a.meta.get('solver')})  b={args.b} ({b.meta.get('solver')})")
    print("tick,agent,d_alpha_mps2,d_delta_deg,d_x_m,d_y_m,d_v_mps")
    for agent in shared:
        rows_a, rows_b = _by_tick(a, agent), _by_tick(b, agent)
        for tick in sorted(set(rows_a) & set(rows_b)):
            (act_a, st_a), (act_b, st_b) = rows_a[tick], rows_b[tick]
            da, ds = act_a - act_b, st_a - st_b
            print(f"{tick},{agent},{da[0]:+.4f},{math.degrees(da[1]):+.4f},{ds[0]:+.3f},{ds[1]:+.3f},{ds[3]:+.3f}")
    for name, run in (("a", a), ("b", b)):
        print(f"# {name}: settle_time_s={run.meta.get('settle_time_s')} merge={run.meta.get('merge', {}).get('kind')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trafficgame", description="Game-theoretic lane-merge planning.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="solve a scenario and export the run")
    s.add_argument("--solver", choices=("nash", "adaptive"), required=True)
    s.add_argument("--scenario", required=True, help="scenario file or bundled name (ic1, ic2, single)")
    s.add_argument("--out", help=f"run directory (default: ${OUT_ENV}/<scenario>-<solver>, else runs/...)")
    s.add_argument("--seed", type=int, help="optimizer seed (nash) or noise seed (adaptive)")
    s.add_argument("--max-iter", type=int, default=30, help="best-response sweeps (nash)")
    s.add_argument("--tol", type=float, default=1e-3, help="sweep convergence tolerance (nash)")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=_cmd_simulate)

    v = sub.add_parser("verify", help="re-run the equilibrium certificate on an exported nash run")
    v.add_argument("--result", required=True)
    v.add_argument("--tol", type=float, default=1e-3)
    v.set_defaults(func=_cmd_verify)

    pr = sub.add_parser("probe", help="search for multiple equilibria from random starts")
    pr.add_argument("--scenario", required=True)
    pr.add_argument("--starts", type=int, default=20)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--max-iter", type=int, default=30)
    pr.set_defaults(func=_cmd_probe)

    c = sub.add_parser("compare", help="per-tick action and state differences between two runs")
    c.add_argument("--a", required=True)
    c.add_argument("--b", required=True)
    c.set_defaults(func=_cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "max_iter", 1) < 1 or getattr(args, "starts", 1) < 1:
        print("trafficgame: error: counts must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (ScenarioError, ExportError, ValueError) as exc:
        print(f"trafficgame: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
