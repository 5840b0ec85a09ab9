"""Hamiltonian and adjoint mean-field BSDE solvers.

The adjoint triple ``(p, q, q~)`` solves

    dp = -[H_x + E[H_y]] dt + q dW + q~ dY,   p(T) = m_x + E[m_y],

with ``H = <p, b - g~ h> + <q, g> + <q~, g~> + l``. For deterministic LQ data
the solution is deterministic (``q = q~ = 0``) and ``p`` solves a linear
terminal-value ODE; otherwise it is computed by least-squares Monte Carlo
on a simulated particle bundle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np
import scipy.linalg

from .model import ARG_NAMES, ControlProcess, LQSpec, ModelError, ProblemSpec, broadcast_args
from .simulate import GridConfig, TrajectoryBundle, simulate_forward, step_args


class AdjointError(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass
class AdjointSolution:
    """Adjoint paths on the grid ``t``.

    ``p, q, qt`` are ``(K+1, n)`` when ``deterministic_reduction`` holds and
    ``(K+1, N, n)`` otherwise. ``condition_numbers`` holds the regression
    design condition number per step (general solver only).
    """

    t: np.ndarray
    p: np.ndarray
    q: np.ndarray
    qt: np.ndarray
    deterministic_reduction: bool
    condition_numbers: np.ndarray | None = field(default=None, repr=False)

    @property
    def step_count(self) -> int:
        return len(self.t) - 1

    def at(self, k: int, N: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(p, q, q~)`` at step ``k`` as ``(N, n)`` arrays."""
        n = self.p.shape[-1]
        return tuple(np.broadcast_to(a[k], (N, n)) for a in (self.p, self.q, self.qt))

    def mean_path(self) -> np.ndarray:
        return self.p if self.deterministic_reduction else self.p.mean(axis=1)


# --------------------------------------------------------------------------
# Hamiltonian


def _coefficients(problem: ProblemSpec, t, args):
    return (
        problem.drift_b(t, *args),
        problem.diffusion_g(t, *args),
        problem.diffusion_gtilde(t, *args),
        problem.observation_h(t, *args),
        problem.running_cost_l(t, *args),
    )


def _pqq(p, q, qt, N, n):
    out = []
    for a in (p, q, qt):
        a = np.asarray(a, dtype=float)
        if a.ndim <= 1:
            a = a.reshape(1, -1)
        if a.shape[-1] != n:
            raise ModelError(f"adjoint variable has dimension {a.shape[-1]}, expected {n}")
        out.append(np.broadcast_to(a, (N, n)))
    return out


def hamiltonian(problem: ProblemSpec, t, x, y, u1, v1, u2, v2, p, q, qt) -> np.ndarray:
    """``H`` at the given points, one value per row."""
    args = broadcast_args(problem, x, y, u1, v1, u2, v2)
    N = args[0].shape[0]
    p, q, qt = _pqq(p, q, qt, N, problem.n)
    b, g, gt, h, l = _coefficients(problem, t, args)
    return (
        np.sum(p * (b - gt * h[:, None]), axis=1)
        + np.sum(q * g, axis=1)
        + np.sum(qt * gt, axis=1)
        + l
    )


def hamiltonian_gradients(problem: ProblemSpec, t, x, y, u1, v1, u2, v2, p, q, qt) -> dict:
    """Partials ``H_x, H_y, H_u1, H_v1, H_u2, H_v2`` as ``(N, dim)`` arrays."""
    missing = [c for c in ("b", "g", "gtilde", "h", "l") if c not in problem.gradients]
    if missing:
        raise ModelError(f"analytic gradients missing for {missing}")
    args = broadcast_args(problem, x, y, u1, v1, u2, v2)
    N = args[0].shape[0]
    p, q, qt = _pqq(p, q, qt, N, problem.n)
    gt = problem.diffusion_gtilde(t, *args)
    h = problem.observation_h(t, *args)
    J = {c: problem.gradients[c](t, *args) for c in ("b", "g", "gtilde", "h", "l")}
    p_dot_gt = np.sum(p * gt, axis=1)
    out = {}
    for a in ARG_NAMES:
        out[a] = (
            np.einsum("nid,ni->nd", J["b"][a], p)
            - h[:, None] * np.einsum("nid,ni->nd", J["gtilde"][a], p)
            - p_dot_gt[:, None] * J["h"][a]
            + np.einsum("nid,ni->nd", J["g"][a], q)
            + np.einsum("nid,ni->nd", J["gtilde"][a], qt)
            + J["l"][a]
        )
    return out


# --------------------------------------------------------------------------
# LQ: deterministic reduction


def _lq_rhs(spec: LQSpec, t: float, p: np.ndarray) -> np.ndarray:
    m = spec.at(t)
    h = float(m["h"])
    A = m["A1"] + m["A2"] - h * (m["F1"] + m["F2"])
    return -(A.T @ p + m["Q"])


def solve_adjoint_lq(spec: LQSpec, grid: GridConfig | int) -> AdjointSolution:
    """Deterministic adjoint of the LQ game.

    With deterministic coefficients and ``p(T) = M`` the BSDE has
    ``q = q~ = 0`` and ``dp/dt = -[(A1 + A2 - h (F1 + F2))^T p + Q]``. The
    ODE is integrated backward with classical RK4; coefficients are read on
    the left end of each step so tabulated data aligned with the grid is
    handled exactly.
    """
    K = grid if isinstance(grid, int) else grid.step_count
    t = np.arange(K + 1) * (spec.T / K)
    dt = spec.T / K
    p = np.empty((K + 1, spec.n))
    p[K] = spec.M
    for k in range(K - 1, -1, -1):
        tc = t[k]
        f = lambda v: _lq_rhs(spec, tc, v)  # noqa: E731
        pk = p[k + 1]
        # integrate from t_{k+1} down to t_k, i.e. step -dt
        k1 = f(pk)
        k2 = f(pk - 0.5 * dt * k1)
        k3 = f(pk - 0.5 * dt * k2)
        k4 = f(pk - dt * k3)
        p[k] = pk - dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    zeros = np.zeros_like(p)
    return AdjointSolution(t, p, zeros, zeros.copy(), deterministic_reduction=True)


def lq_backward_residual(spec: LQSpec, adj: AdjointSolution) -> np.ndarray:
    """Per-step residual of the explicit backward Euler form of the LQ
    adjoint equation, evaluated on ``adj`` (``q = q~ = 0``)."""
    dt = adj.t[1] - adj.t[0]
    K = adj.step_count
    res = np.empty((K, spec.n))
    for k in range(K):
        res[k] = adj.p[k] - adj.p[k + 1] + dt * _lq_rhs(spec, adj.t[k], adj.p[k + 1])
    return res


# --------------------------------------------------------------------------
# general: least-squares Monte Carlo


@dataclass(frozen=True)
class RegressionBasis:
    """Polynomials in the state up to ``degree``, optionally with the
    current observation value ``Y(t_k)``.

    With ``prune`` set, columns that are constant or exact linear
    combinations of earlier columns at a step (e.g. at ``t = 0``, or when
    the state is affine in ``Y``) are dropped before the conditioning check.
    """

    degree: int = 2
    observation: bool = True
    max_condition: float = 1e12
    prune: bool = True

    def features(self, x: np.ndarray, Y: np.ndarray | None) -> np.ndarray:
        N, n = x.shape
        cols = [np.ones(N)]
        for d in range(1, self.degree + 1):
            for idx in combinations_with_replacement(range(n), d):
                cols.append(np.prod(x[:, idx], axis=1))
        if self.observation and Y is not None:
            cols.append(Y)
        return np.column_stack(cols)


_REDUNDANT = 1e-9


class Projector:
    """Least-squares projection onto the basis span at one time step."""

    def __init__(self, phi: np.ndarray, basis: RegressionBasis, step: int):
        rest = phi[:, 1:]
        mean = rest.mean(axis=0)
        std = rest.std(axis=0)
        if basis.prune:
            keep = std > 1e-12 * np.maximum(1.0, np.abs(mean))
            rest = (rest[:, keep] - mean[keep]) / std[keep]
        else:
            rest = (rest - mean) / np.where(std > 0, std, 1.0)
        design = np.column_stack([np.ones(len(phi)), rest])
        if basis.prune and design.shape[1] > 2:
            _, r, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
            diag = np.abs(np.diag(r))
            design = design[:, np.sort(piv[diag > _REDUNDANT * diag[0]])]
        self.cond = float(np.linalg.cond(design)) if design.shape[1] > 1 else 1.0
        if not np.isfinite(self.cond) or self.cond > basis.max_condition:
            raise AdjointError(
                f"regression design is rank deficient at step {step} "
                f"(condition number {self.cond:.3g}); use a smaller basis",
                step=step,
            )
        self.design = design

    def __call__(self, target: np.ndarray) -> np.ndarray:
        coef = np.linalg.lstsq(self.design, target, rcond=None)[0]
        return self.design @ coef


def solve_adjoint_general(
    problem: ProblemSpec,
    controls: tuple[ControlProcess, ControlProcess] | None = None,
    bundle: TrajectoryBundle | None = None,
    basis: RegressionBasis | None = None,
    grid: GridConfig | None = None,
) -> AdjointSolution:
    """Backward least-squares Monte Carlo for the adjoint BSDE.

    At each step ``q`` and ``q~`` come from regressing ``p(t_{k+1}) dW_k/dt``
    and ``p(t_{k+1}) dY_k/dt`` on the basis, the driver is evaluated with
    those estimates and ``p(t_{k+1})``, and ``p(t_k)`` is the regression of
    ``p(t_{k+1}) + driver dt``. ``E[H_y]`` uses the ensemble mean.
    """
    if bundle is None:
        if controls is None or grid is None:
            raise ModelError("need either a bundle or controls and a grid")
        bundle = simulate_forward(problem, controls, grid)
    if "m" not in problem.gradients:
        raise ModelError("analytic gradient of the terminal cost is missing")
    basis = basis or RegressionBasis()
    K, N, n = bundle.step_count, bundle.particle_count, problem.n
    dt = bundle.dt

    p = np.empty((K + 1, N, n))
    q = np.zeros((K + 1, N, n))
    qt = np.zeros((K + 1, N, n))
    conds = np.ones(K + 1)

    xT = bundle.x[K]
    mg = problem.gradients["m"](xT, np.broadcast_to(xT.mean(axis=0), xT.shape))
    p[K] = np.asarray(mg["x"]) + np.asarray(mg["y"]).mean(axis=0)

    for k in range(K - 1, -1, -1):
        proj = Projector(basis.features(bundle.x[k], bundle.Y[k]), basis, k)
        conds[k] = proj.cond
        nxt = p[k + 1]
        mart = proj(np.hstack([nxt * (bundle.dW[k] / dt)[:, None], nxt * (bundle.dY[k] / dt)[:, None]]))
        q[k], qt[k] = mart[:, :n], mart[:, n:]
        t, *args = step_args(bundle, k)
        grads = hamiltonian_gradients(problem, t, *args, nxt, q[k], qt[k])
        driver = grads["x"] + grads["y"].mean(axis=0)
        if not np.all(np.isfinite(driver)):
            raise AdjointError(f"non-finite adjoint driver at step {k}", step=k)
        p[k] = proj(nxt + driver * dt)

    q[K], qt[K] = q[K - 1], qt[K - 1]
    return AdjointSolution(bundle.t, p, q, qt, deterministic_reduction=False, condition_numbers=conds)
