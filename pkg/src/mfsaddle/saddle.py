"""Saddle synthesis for the LQ game and Monte Carlo saddle verification.

Player 1 minimizes and player 2 maximizes. A candidate ``(u1, u2)`` is
checked three ways:

* stationarity: ``E[H_{u_i} | F^Y_t] + E[H_{v_i}]`` vanishes (or satisfies
  the variational inequality when controls are boxed);
* unilateral deviations: ``J(u1, u2') <= J(u1, u2) <= J(u1', u2)`` with
  paired differences under common random numbers;
* structure: midpoint convexity in ``u1``, concavity in ``u2`` and, for LQ
  games, quadratic growth of ``J(lam d, .) / lam^2`` to a limit of the right
  sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointSolution, Projector, RegressionBasis, hamiltonian_gradients
from .cost import CostEstimate, cost, paired_difference, standard_error
from .model import ControlProcess, LQSpec, ModelError, ProblemSpec
from .simulate import GridConfig, TrajectoryBundle, simulate_forward, step_args

# an inequality check passes when the paired difference clears -Z_CRIT SEs
Z_CRIT = 2.0
# absolute slack for differences that are pure roundoff (deterministic costs)
ABS_TOL = 1e-10


# --------------------------------------------------------------------------
# synthesis


def lq_saddle_controls(spec: LQSpec, adj: AdjointSolution) -> tuple[ControlProcess, ControlProcess]:
    """Open-loop saddle controls from the deterministic LQ adjoint.

    With ``q = q~ = 0`` and ``p`` deterministic the stationarity conditions
    reduce, per grid time, to

        2 (N_i1 + N_i2) u_i = -(B_i1 + B_i2 - h (G_i1 + G_i2))^T p.
    """
    if not adj.deterministic_reduction:
        raise ModelError("LQ synthesis needs the deterministic adjoint (solve_adjoint_lq)")
    times = adj.t[:-1]
    out = []
    for i in (1, 2):
        vals = []
        for k, t in enumerate(times):
            m = spec.at(t)
            h = float(m["h"])
            beta = m[f"B{i}1"] + m[f"B{i}2"] - h * (m[f"G{i}1"] + m[f"G{i}2"])
            gamma = m[f"D{i}1"] + m[f"D{i}2"]
            rhs = -(beta.T @ adj.p[k] + gamma.T @ adj.q[k])
            vals.append(np.linalg.solve(2.0 * (m[f"N{i}1"] + m[f"N{i}2"]), rhs))
        out.append(ControlProcess.deterministic(i, times, np.array(vals)))
    return out[0], out[1]


# --------------------------------------------------------------------------
# stationarity


@dataclass
class StationarityProfile:
    t: np.ndarray
    residual1: np.ndarray
    residual2: np.ndarray

    @property
    def max1(self) -> float:
        return float(self.residual1.max(initial=0.0))

    @property
    def max2(self) -> float:
        return float(self.residual2.max(initial=0.0))

    @property
    def max(self) -> float:
        return max(self.max1, self.max2)

    def to_dict(self) -> dict:
        return {
            "t": self.t.tolist(),
            "residual1": self.residual1.tolist(),
            "residual2": self.residual2.tolist(),
            "max1": self.max1,
            "max2": self.max2,
        }


def _observation_projector(bundle: TrajectoryBundle, int_Y: np.ndarray, k: int) -> Projector:
    phi = np.column_stack([np.ones(bundle.particle_count), bundle.Y[k], int_Y[k]])
    return Projector(phi, RegressionBasis(), k)


def _box(problem: ProblemSpec, player: int):
    """``(lo, hi)`` for the player, or None when unconstrained."""
    if problem.control_bounds is None or problem.control_bounds[player - 1] is None:
        return None
    lo, hi = problem.control_bounds[player - 1]
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def stationarity_gradients(
    problem: ProblemSpec, adj: AdjointSolution, bundle: TrajectoryBundle
) -> tuple[np.ndarray, np.ndarray]:
    """``E[H_{u_i} | F^Y_t] + E[H_{v_i}]`` per particle, shapes ``(K, N, k_i)``.

    The conditional expectation is a regression on ``(1, Y(t), int_0^t Y)``.
    """
    if adj.step_count != bundle.step_count:
        raise ModelError(
            f"adjoint has {adj.step_count} steps but the simulation grid has {bundle.step_count}"
        )
    K, N = bundle.step_count, bundle.particle_count
    int_Y = bundle.int_Y
    g1 = np.empty((K, N, problem.k1))
    g2 = np.empty((K, N, problem.k2))
    for k in range(K):
        t, *args = step_args(bundle, k)
        p, q, qt = adj.at(k, N)
        grads = hamiltonian_gradients(problem, t, *args, p, q, qt)
        proj = _observation_projector(bundle, int_Y, k)
        g1[k] = proj(grads["u1"]) + grads["v1"].mean(axis=0)
        g2[k] = proj(grads["u2"]) + grads["v2"].mean(axis=0)
    return g1, g2


def stationarity_residual(
    problem: ProblemSpec,
    controls: tuple[ControlProcess, ControlProcess],
    adj: AdjointSolution,
    grid: GridConfig,
    bundle: TrajectoryBundle | None = None,
) -> StationarityProfile:
    """Root-mean-square (over particles) norm of the optimality-condition
    gradient at each grid time, for both players.

    With unconstrained controls the conditions say the gradient vanishes.
    With a box the residual is ``u - Proj(u -/+ gradient)`` (minus for the
    minimizing player, plus for the maximizing one).
    """
    if bundle is None:
        bundle = simulate_forward(problem, controls, grid)
    g1, g2 = stationarity_gradients(problem, adj, bundle)
    res = []
    for player, g, u in ((1, g1, bundle.u1), (2, g2, bundle.u2)):
        box = _box(problem, player)
        if box is not None:
            step = -g if player == 1 else g
            g = u - np.clip(u + step, box[0], box[1])
        res.append(np.sqrt(np.mean(np.sum(g**2, axis=2), axis=1)))
    return StationarityProfile(bundle.t[:-1], res[0], res[1])


# --------------------------------------------------------------------------
# perturbations


@dataclass(frozen=True)
class PerturbationConfig:
    """Random piecewise-constant deviations with unit L2(0, T) norm scaled
    by a magnitude drawn from ``magnitudes``."""

    count: int = 20
    pieces: int = 10
    magnitudes: tuple[float, ...] = (0.1, 0.5, 1.0)
    seed: int = 0


def random_direction(
    rng: np.random.Generator, player: int, dim: int, grid_times: np.ndarray, pieces: int
) -> ControlProcess:
    """Unit-norm piecewise-constant direction on ``pieces`` grid-aligned intervals."""
    K = len(grid_times) - 1
    pieces = max(1, min(pieces, K))
    starts = (np.arange(pieces) * K) // pieces
    times = grid_times[starts]
    values = rng.standard_normal((pieces, dim))
    d = ControlProcess.deterministic(player, times, values)
    return d.scaled(1.0 / d.l2_norm(grid_times[-1]))


def _replace(controls, player, new):
    return (new, controls[1]) if player == 1 else (controls[0], new)


@dataclass
class InequalityCheck:
    perturbation_id: int
    player: int
    description: str
    J: float
    se: float
    delta: float
    se_delta: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def inequality_holds(player: int, delta: float, se_delta: float) -> bool:
    """Player 1 deviations must not lower the cost, player 2 deviations must
    not raise it, up to ``Z_CRIT`` paired SEs."""
    slack = Z_CRIT * se_delta + ABS_TOL
    return delta >= -slack if player == 1 else delta <= slack


@dataclass
class ProbeCheck:
    player: int
    kind: str
    value: float
    se: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ProbeReport:
    checks: list[ProbeCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}


@dataclass
class SaddleReport:
    candidate: CostEstimate
    checks: list[InequalityCheck] = field(default_factory=list)
    stationarity: StationarityProfile | None = None
    residual_tol: float | None = None
    convexity: ProbeReport | None = None
    costs: dict[str, CostEstimate] = field(default_factory=dict)

    @property
    def inequalities_pass(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def stationarity_pass(self) -> bool:
        if self.stationarity is None:
            return True
        return self.stationarity.max <= self.residual_tol

    @property
    def verdict(self) -> bool:
        probe = self.convexity is None or self.convexity.passed
        return self.inequalities_pass and self.stationarity_pass and probe

    def violations(self) -> list[InequalityCheck]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.verdict else "fail",
            "candidate": self.candidate.to_dict(),
            "costs": {k: v.to_dict() for k, v in self.costs.items()},
            "inequalities": {
                "passed": self.inequalities_pass,
                "z_crit": Z_CRIT,
                "checks": [c.to_dict() for c in self.checks],
            },
            "stationarity": None
            if self.stationarity is None
            else {**self.stationarity.to_dict(), "tol": self.residual_tol, "passed": self.stationarity_pass},
            "convexity": None if self.convexity is None else self.convexity.to_dict(),
        }


def verify_saddle(
    problem: ProblemSpec,
    candidate: tuple[ControlProcess, ControlProcess],
    grid: GridConfig,
    perturbations: PerturbationConfig | None = None,
    formulation: str = "strong",
    threads: int = 1,
) -> SaddleReport:
    """Compare the candidate's cost with random unilateral deviations of each
    player, all under the same random numbers."""
    cfg = perturbations or PerturbationConfig()
    rng = np.random.default_rng(cfg.seed)
    base = cost(problem, candidate, grid, formulation, threads=threads)
    report = SaddleReport(candidate=base)
    grid_times = grid.times(problem.horizon)
    pid = 0
    for player, dim in ((1, problem.k1), (2, problem.k2)):
        for _ in range(cfg.count):
            mag = float(rng.choice(cfg.magnitudes))
            d = random_direction(rng, player, dim, grid_times, cfg.pieces).scaled(mag)
            trial = _replace(candidate, player, candidate[player - 1] + d)
            J = cost(problem, trial, grid, formulation, threads=threads)
            delta, se_delta = paired_difference(J, base)
            report.checks.append(
                InequalityCheck(
                    perturbation_id=pid,
                    player=player,
                    description=f"player {player} deviation, |d| = {mag:g}, {cfg.pieces} pieces",
                    J=J.value,
                    se=J.standard_error,
                    delta=delta,
                    se_delta=se_delta,
                    passed=inequality_holds(player, delta, se_delta),
                )
            )
            pid += 1
    return report


def convexity_probe(
    problem: ProblemSpec,
    controls: tuple[ControlProcess, ControlProcess],
    grid: GridConfig,
    triples: int = 50,
    seed: int = 1,
    pieces: int = 10,
    formulation: str = "strong",
    scales: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0),
    coercivity: bool | None = None,
    threads: int = 1,
) -> ProbeReport:
    """Midpoint convexity in ``u1`` and concavity in ``u2`` along random
    directions; for LQ games also the sign of ``lim J(lam d) / lam^2``."""
    rng = np.random.default_rng(seed)
    grid_times = grid.times(problem.horizon)
    report = ProbeReport()

    def J(trial):
        return cost(problem, trial, grid, formulation, threads=threads)

    for player, dim in ((1, problem.k1), (2, problem.k2)):
        base = controls[player - 1]
        worst = None
        ok = True
        for _ in range(triples):
            d = random_direction(rng, player, dim, grid_times, pieces)
            la, lb = rng.uniform(-1.0, 1.0, size=2)
            ja = J(_replace(controls, player, base + d.scaled(la)))
            jb = J(_replace(controls, player, base + d.scaled(lb)))
            jm = J(_replace(controls, player, base + d.scaled(0.5 * (la + lb))))
            defect = 0.5 * (ja.samples + jb.samples) - jm.samples
            mean = float(defect.mean())
            se = standard_error(defect)
            passed = inequality_holds(player, mean, se)
            ok = ok and passed
            score = mean / max(se, 1e-300) if player == 1 else -mean / max(se, 1e-300)
            if worst is None or score < worst[0]:
                worst = (score, mean, se)
        kind = "midpoint convexity" if player == 1 else "midpoint concavity"
        report.checks.append(
            ProbeCheck(player, kind, worst[1], worst[2], ok, f"{triples} triples; worst defect shown")
        )

    if coercivity is None:
        coercivity = problem.lq is not None
    if coercivity:
        lam = np.asarray(scales, dtype=float)
        design = np.column_stack([np.ones_like(lam), 1.0 / lam, 1.0 / lam**2])
        weights = np.linalg.pinv(design)[0]
        delta = None
        if problem.lq is not None:
            from .model import validate_lq

            delta = validate_lq(problem.lq).delta
        for player, dim in ((1, problem.k1), (2, problem.k2)):
            d = random_direction(rng, player, dim, grid_times, pieces)
            ratios = []
            for s in lam:
                ratios.append(J(_replace(controls, player, d.scaled(s))).samples / s**2)
            ratios = np.array(ratios)
            limit_samples = weights @ ratios
            limit = float(limit_samples.mean())
            se = standard_error(limit_samples)
            sign_ok = limit > Z_CRIT * se if player == 1 else limit < -Z_CRIT * se
            fit = design @ np.linalg.lstsq(design, ratios.mean(axis=1), rcond=None)[0]
            misfit = float(np.max(np.abs(fit - ratios.mean(axis=1))))
            detail = (
                "ratios " + ", ".join(f"{r:.6g}" for r in ratios.mean(axis=1)) + f"; fit misfit {misfit:.3g}"
            )
            passed = sign_ok
            if delta is not None:
                # definiteness bound: the limit is at least delta |d|^2 in magnitude
                bound_ok = abs(limit) >= delta - Z_CRIT * se - 1e-9
                detail += f"; |limit| >= delta = {delta:.6g}: {bound_ok}"
                passed = passed and bound_ok
            kind = "coercivity" if player == 1 else "anti-coercivity"
            report.checks.append(ProbeCheck(player, kind, limit, se, passed, detail))
    return report


# --------------------------------------------------------------------------
# finite-difference bridge to the stationarity integrand


@dataclass
class GradientBridge:
    fd: float
    se: float
    analytic: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def gradient_bridge(
    problem: ProblemSpec,
    controls: tuple[ControlProcess, ControlProcess],
    adj: AdjointSolution,
    grid: GridConfig,
    player: int,
    interval: tuple[float, float],
    component: int = 0,
    eps: float = 0.05,
    tol_se: float = 3.0,
) -> GradientBridge:
    """Central finite difference of the strong cost with respect to the
    control value on ``interval`` versus the integral of the stationarity
    gradient over that interval.

    ``interval`` endpoints must be simulation grid times.
    """
    t0, t1 = interval
    dim = problem.k1 if player == 1 else problem.k2
    e = np.zeros(dim)
    e[component] = 1.0
    times = [0.0, t0, t1] if t0 > 0 else [0.0, t1]
    vals = [np.zeros(dim), e, np.zeros(dim)] if t0 > 0 else [e, np.zeros(dim)]
    if t1 >= problem.horizon:
        times, vals = times[:-1], vals[:-1]
    bump = ControlProcess.deterministic(player, times, vals)
    base = controls[player - 1]
    jp = cost(problem, _replace(controls, player, base + bump.scaled(eps)), grid)
    jm = cost(problem, _replace(controls, player, base + bump.scaled(-eps)), grid)
    fd_samples = (jp.samples - jm.samples) / (2 * eps)
    fd = float(fd_samples.mean())
    se = standard_error(fd_samples)

    bundle = simulate_forward(problem, controls, grid)
    g1, g2 = stationarity_gradients(problem, adj, bundle)
    g = g1 if player == 1 else g2
    t = bundle.t[:-1]
    inside = (t >= t0 - 1e-12) & (t < t1 - 1e-12)
    analytic = float(g[inside, :, component].mean(axis=1).sum() * bundle.dt)
    return GradientBridge(fd, se, analytic, abs(fd - analytic) <= tol_se * se)
