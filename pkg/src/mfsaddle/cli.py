"""Command-line entry point.

Exit codes: 0 success (or saddle verdict pass), 1 input or validation error
(including a failed verdict), 2 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from .adjoint import AdjointError, RegressionBasis, solve_adjoint_general, solve_adjoint_lq
from .cost import cost
from .model import ControlProcess, ModelError, validate_lq, validate_problem
from .saddle import (
    PerturbationConfig,
    convexity_probe,
    lq_saddle_controls,
    stationarity_residual,
    verify_saddle,
)
from .simulate import GridConfig, SimulationError, simulate, simulate_forward

log = logging.getLogger("mfsaddle")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2
RESIDUAL_TOL_LQ = 1e-6
RESIDUAL_TOL_GENERAL = 5e-2


class InputError(Exception):
    pass


def _grid(args, doc) -> GridConfig:
    defaults = doc.get("grid", {}) if isinstance(doc, dict) else {}
    steps = args.steps if args.steps is not None else int(defaults.get("steps", 1000))
    particles = args.particles if args.particles is not None else int(defaults.get("particles", 10000))
    seed = args.seed if args.seed is not None else int(defaults.get("seed", 42))
    return GridConfig(steps, particles, seed)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    problem, spec, doc = io.load_problem(args.problem)
    report = validate_lq(spec) if spec is not None else validate_problem(problem)
    if not report.passed:
        raise InputError(f"problem validation failed: {report.message()}")
    return problem, spec, doc, report


def _check_grid(control: ControlProcess, grid: GridConfig, horizon: float, name: str) -> None:
    times = grid.times(horizon)
    if control.times[-1] >= horizon:
        raise InputError(f"{name}: control time {control.times[-1]:g} is not before the horizon {horizon:g}")
    idx = np.searchsorted(times, control.times - 1e-9)
    idx = np.minimum(idx, len(times) - 1)
    if np.any(np.abs(times[idx] - control.times) > 1e-9):
        raise InputError(f"{name}: control breakpoints are not on the simulation grid (dt = {horizon / grid.step_count:g})")


def _controls(args, problem, grid, required: bool):
    u1_path, u2_path = args.u1, args.u2
    if getattr(args, "controls", None):
        base = Path(args.controls)
        u1_path = u1_path or base / "controls_u1.csv"
        u2_path = u2_path or base / "controls_u2.csv"
    if u1_path is None and u2_path is None:
        if required:
            raise InputError("candidate controls required: pass --controls DIR or --u1/--u2 CSV files")
        return ControlProcess.zero(1, problem.k1), ControlProcess.zero(2, problem.k2)
    c1 = io.read_control_csv(u1_path, 1) if u1_path else ControlProcess.zero(1, problem.k1)
    c2 = io.read_control_csv(u2_path, 2) if u2_path else ControlProcess.zero(2, problem.k2)
    for c, name, k in ((c1, "u1", problem.k1), (c2, "u2", problem.k2)):
        if c.dim != k:
            raise InputError(f"{name}: control dimension {c.dim}, problem expects {k}")
        _check_grid(c, grid, problem.horizon, name)
    return c1, c2


def cmd_simulate(args) -> int:
    problem, spec, doc, _ = _load(args)
    grid = _grid(args, doc)
    controls = _controls(args, problem, grid, required=False)
    bundle = simulate(problem, controls, grid, threads=args.threads)
    out = _out_dir(args)
    meta = io.metadata(grid.seed, grid.dt(problem.horizon), grid.particle_count, grid.step_count)
    io.write_trajectory_csv(out / "trajectory.csv", bundle, meta, args.path_particles)
    summary = io.trajectory_summary(bundle)
    summary["meta"] = meta
    io.write_json(out / "summary.json", summary)
    log.info("wrote %s", out / "trajectory.csv")
    return EXIT_OK


def cmd_solve_lq(args) -> int:
    problem, spec, doc, report = _load(args)
    if spec is None:
        raise InputError("solve-lq needs a problem of type 'lq'; use verify with explicit controls for general problems")
    grid = _grid(args, doc)
    adj = solve_adjoint_lq(spec, grid)
    u1, u2 = lq_saddle_controls(spec, adj)
    out = _out_dir(args)
    meta = io.metadata(grid.seed, grid.dt(problem.horizon), None, grid.step_count)
    io.write_adjoint_csv(out / "adjoint.csv", adj, meta)
    io.write_control_csv(out / "controls_u1.csv", u1, meta)
    io.write_control_csv(out / "controls_u2.csv", u2, meta)
    manifest = {
        "meta": meta,
        "delta": report.delta,
        "adjoint": io.adjoint_summary(adj),
        "files": {"adjoint": "adjoint.csv", "u1": "controls_u1.csv", "u2": "controls_u2.csv"},
    }
    io.write_json(out / "solution.json", manifest)
    return EXIT_OK


def cmd_verify(args) -> int:
    problem, spec, doc, _ = _load(args)
    grid = _grid(args, doc)
    candidate = _controls(args, problem, grid, required=True)
    formulation = "strong" if args.formulation == "both" else args.formulation

    bundle = simulate(problem, candidate, grid, threads=args.threads)
    if spec is not None:
        adj = solve_adjoint_lq(spec, grid)
        tol = args.tol_residual if args.tol_residual is not None else RESIDUAL_TOL_LQ
    else:
        adj = solve_adjoint_general(problem, candidate, bundle, RegressionBasis(degree=args.basis_degree))
        tol = args.tol_residual if args.tol_residual is not None else RESIDUAL_TOL_GENERAL
    profile = stationarity_residual(problem, candidate, adj, grid, bundle)

    report = verify_saddle(
        problem,
        candidate,
        grid,
        PerturbationConfig(count=args.perturbations, seed=args.perturbation_seed),
        formulation=formulation,
        threads=args.threads,
    )
    report.stationarity = profile
    report.residual_tol = tol
    if args.triples > 0:
        report.convexity = convexity_probe(
            problem, candidate, grid, triples=args.triples, formulation=formulation, threads=args.threads
        )
    names = ("strong", "weak") if args.formulation == "both" else (args.formulation,)
    for name in names:
        report.costs[name] = cost(problem, candidate, grid, name, bundle=bundle)

    out = _out_dir(args)
    meta = io.metadata(grid.seed, grid.dt(problem.horizon), grid.particle_count, grid.step_count)
    doc_out = report.to_dict()
    doc_out["meta"] = meta
    io.write_json(out / "saddle_report.json", doc_out)
    io.write_saddle_csv(out / "saddle_checks.csv", report, meta)
    verdict = "pass" if report.verdict else "fail"
    print(f"verdict: {verdict}  J = {report.candidate.value:.6g} +/- {report.candidate.standard_error:.2g}  "
          f"max residual = {profile.max:.3g} (tol {tol:g})  violations = {len(report.violations())}")
    return EXIT_OK if report.verdict else EXIT_INPUT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfsaddle", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("problem", help="problem JSON file")
        p.add_argument("--steps", type=int, default=None, help="time steps (default 1000)")
        p.add_argument("--particles", type=int, default=None, help="particles (default 10000)")
        p.add_argument("--seed", type=int, default=None, help="random seed (default 42)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("simulate", help="simulate trajectories and the density process")
    common(p)
    p.add_argument("--u1", help="player-1 control CSV (default zero)")
    p.add_argument("--u2", help="player-2 control CSV (default zero)")
    p.add_argument("--path-particles", type=int, default=None, help="write only the first K particles to the CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve-lq", help="adjoint and open-loop saddle controls of an LQ game")
    common(p)
    p.set_defaults(func=cmd_solve_lq)

    p = sub.add_parser("verify", help="check a candidate saddle point")
    common(p)
    p.add_argument("--controls", help="directory holding controls_u1.csv and controls_u2.csv")
    p.add_argument("--u1", help="player-1 control CSV")
    p.add_argument("--u2", help="player-2 control CSV")
    p.add_argument("--perturbations", type=int, default=20, help="deviations per player")
    p.add_argument("--perturbation-seed", type=int, default=0)
    p.add_argument("--triples", type=int, default=10, help="convexity probe triples per player (0 disables)")
    p.add_argument("--tol-residual", type=float, default=None)
    p.add_argument("--formulation", choices=("strong", "weak", "both"), default="strong")
    p.add_argument("--basis-degree", type=int, default=2)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, ModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SimulationError, AdjointError, np.linalg.LinAlgError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
