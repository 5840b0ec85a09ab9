"""Particle simulation of the controlled state under the reference measure.

Under the reference measure the observation ``Y`` is a Brownian motion
independent of ``W``, and the state solves

    dx = (b - g~ h) dt + g dW + g~ dY,   x(0) = a,

with ``E[x]`` and ``E[u_i]`` replaced by ensemble means. The Girsanov
density ``dZ = Z h dY``, ``Z(0) = 1`` is advanced with its exact
log-exponential step, which keeps every ``Z`` strictly positive.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from collections import OrderedDict

import numpy as np

from . import rng
from .model import ControlProcess, ModelError, ProblemSpec


class SimulationError(RuntimeError):
    """Numerical abort during a simulation."""

    def __init__(self, message, step=None, particle=None):
        super().__init__(message)
        self.step = step
        self.particle = particle


@dataclass(frozen=True)
class GridConfig:
    step_count: int
    particle_count: int
    seed: int = 42

    def __post_init__(self):
        if self.step_count < 1:
            raise ModelError("step_count must be positive")
        if self.particle_count < 2:
            raise ModelError("particle_count must be at least 2")
        if not 0 <= int(self.seed) < 2**64:
            raise ModelError("seed must be a 64-bit unsigned integer")

    def dt(self, horizon: float) -> float:
        return horizon / self.step_count

    def times(self, horizon: float) -> np.ndarray:
        return np.arange(self.step_count + 1) * (horizon / self.step_count)

    def with_steps(self, steps: int) -> "GridConfig":
        return dataclasses.replace(self, step_count=steps)

    def with_particles(self, particles: int) -> "GridConfig":
        return dataclasses.replace(self, particle_count=particles)


@dataclass(frozen=True)
class TrajectoryBundle:
    """Particle paths on a uniform grid.

    Shapes: ``t (K+1,)``, ``x (K+1, N, n)``, ``Y, Z (K+1, N)``,
    ``dW, dY (K, N)``, ``u1 (K, N, k1)``, ``u2 (K, N, k2)``. ``Z`` is None
    until :func:`simulate_density` has run. ``u_i[k]`` is the control used
    on ``[t_k, t_{k+1})``.
    """

    t: np.ndarray
    x: np.ndarray
    Y: np.ndarray
    dW: np.ndarray
    dY: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    seed: int
    Z: np.ndarray | None = None

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def step_count(self) -> int:
        return len(self.t) - 1

    @property
    def particle_count(self) -> int:
        return self.x.shape[1]

    @property
    def x_mean(self) -> np.ndarray:
        return self.x.mean(axis=1)

    @property
    def x_se(self) -> np.ndarray:
        return self.x.std(axis=1, ddof=1) / np.sqrt(self.particle_count)

    @property
    def Z_mean(self) -> np.ndarray | None:
        return None if self.Z is None else self.Z.mean(axis=1)

    @property
    def Z_se(self) -> np.ndarray | None:
        if self.Z is None:
            return None
        return self.Z.std(axis=1, ddof=1) / np.sqrt(self.particle_count)

    @property
    def int_Y(self) -> np.ndarray:
        """Left-endpoint running integral of ``Y``, shape ``(K+1, N)``."""
        out = np.zeros_like(self.Y)
        out[1:] = np.cumsum(self.Y[:-1] * self.dt, axis=0)
        return out


_NOISE_CACHE: OrderedDict = OrderedDict()
_NOISE_CACHE_SIZE = 2


def standard_normals(grid: GridConfig, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """The ``(K, N)`` normal arrays driving ``W`` and ``Y`` for ``grid``.

    Cached, so repeated simulations on one grid share their random numbers.
    ``threads`` only changes how the generation is split, never the values.
    """
    key = (int(grid.seed), grid.step_count, grid.particle_count)
    if key in _NOISE_CACHE:
        _NOISE_CACHE.move_to_end(key)
        return _NOISE_CACHE[key]
    seed, steps, particles = key
    ids = np.arange(particles, dtype=np.uint64)
    zw = np.empty((steps, particles))
    zy = np.empty((steps, particles))

    def fill(k):
        zw[k] = rng.normals(seed, ids, k, rng.W_STREAM)
        zy[k] = rng.normals(seed, ids, k, rng.Y_STREAM)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(steps)))
    else:
        for k in range(steps):
            fill(k)
    zw.flags.writeable = False
    zy.flags.writeable = False
    _NOISE_CACHE[key] = (zw, zy)
    while len(_NOISE_CACHE) > _NOISE_CACHE_SIZE:
        _NOISE_CACHE.popitem(last=False)
    return zw, zy


def clear_noise_cache() -> None:
    _NOISE_CACHE.clear()


def _check_controls(problem: ProblemSpec, controls):
    if len(controls) != 2:
        raise ModelError("need one control per player")
    c1, c2 = controls
    if not isinstance(c1, ControlProcess) or not isinstance(c2, ControlProcess):
        raise ModelError("controls must be ControlProcess instances")
    if (c1.player, c2.player) != (1, 2):
        raise ModelError("controls must be ordered (player 1, player 2)")
    if c1.dim != problem.k1 or c2.dim != problem.k2:
        raise ModelError(
            f"control dimensions ({c1.dim}, {c2.dim}) do not match problem ({problem.k1}, {problem.k2})"
        )


def _first_bad(arr: np.ndarray) -> int:
    bad = ~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
    return int(np.argmax(bad))


def simulate_forward(
    problem: ProblemSpec,
    controls: tuple[ControlProcess, ControlProcess],
    grid: GridConfig,
    threads: int = 1,
) -> TrajectoryBundle:
    """Euler-Maruyama particle simulation of the state under the reference
    measure; mean-field arguments are ensemble means at the current step."""
    _check_controls(problem, controls)
    c1, c2 = controls
    K, N, n = grid.step_count, grid.particle_count, problem.n
    dt = grid.dt(problem.horizon)
    t = grid.times(problem.horizon)
    zw, zy = standard_normals(grid, threads)
    sq = np.sqrt(dt)

    x = np.empty((K + 1, N, n))
    x[0] = problem.initial_state
    Y = np.zeros((K + 1, N))
    int_Y = np.zeros(N)
    u1 = np.empty((K, N, problem.k1))
    u2 = np.empty((K, N, problem.k2))
    dW = zw * sq
    dY = zy * sq

    for k in range(K):
        xk = x[k]
        y = np.broadcast_to(xk.mean(axis=0), xk.shape)
        u1[k] = c1.evaluate(t[k], Y[k], int_Y, N)
        u2[k] = c2.evaluate(t[k], Y[k], int_Y, N)
        v1 = np.broadcast_to(u1[k].mean(axis=0), u1[k].shape)
        v2 = np.broadcast_to(u2[k].mean(axis=0), u2[k].shape)
        args = (t[k], xk, y, u1[k], v1, u2[k], v2)
        # overflow is detected just below and reported with its location
        with np.errstate(over="ignore", invalid="ignore"):
            b = problem.drift_b(*args)
            g = problem.diffusion_g(*args)
            gt = problem.diffusion_gtilde(*args)
            h = problem.observation_h(*args)
            x[k + 1] = (
                xk
                + (b - gt * h[:, None]) * dt
                + g * dW[k][:, None]
                + gt * dY[k][:, None]
            )
        if not np.all(np.isfinite(x[k + 1])):
            p = _first_bad(x[k + 1])
            raise SimulationError(
                f"non-finite state at step {k + 1} (t={t[k + 1]:.6g}), particle {p}",
                step=k + 1,
                particle=p,
            )
        int_Y = int_Y + Y[k] * dt
        Y[k + 1] = Y[k] + dY[k]

    return TrajectoryBundle(t=t, x=x, Y=Y, dW=dW, dY=dY, u1=u1, u2=u2, seed=int(grid.seed))


def observation_path(problem: ProblemSpec, bundle: TrajectoryBundle) -> np.ndarray:
    """``h`` evaluated along the bundle, shape ``(K, N)``."""
    K = bundle.step_count
    out = np.empty((K, bundle.particle_count))
    for k in range(K):
        out[k] = problem.observation_h(*step_args(bundle, k))
    return out


def step_args(bundle: TrajectoryBundle, k: int):
    """Coefficient arguments ``(t, x, E x, u1, E u1, u2, E u2)`` at step k."""
    xk = bundle.x[k]
    u1, u2 = bundle.u1[k], bundle.u2[k]
    return (
        bundle.t[k],
        xk,
        np.broadcast_to(xk.mean(axis=0), xk.shape),
        u1,
        np.broadcast_to(u1.mean(axis=0), u1.shape),
        u2,
        np.broadcast_to(u2.mean(axis=0), u2.shape),
    )


def simulate_density(problem: ProblemSpec, bundle: TrajectoryBundle) -> TrajectoryBundle:
    """Fill in the Girsanov density ``Z`` along an existing bundle."""
    K, N = bundle.step_count, bundle.particle_count
    dt = bundle.dt
    h = observation_path(problem, bundle)
    if not np.all(np.isfinite(h)):
        k, p = np.argwhere(~np.isfinite(h))[0]
        raise SimulationError(f"non-finite observation drift at step {k}, particle {p}", k, p)
    log_inc = h * bundle.dY - 0.5 * h**2 * dt
    log_z = np.zeros((K + 1, N))
    np.cumsum(log_inc, axis=0, out=log_z[1:])
    big = np.abs(log_z) > 700.0
    if big.any():
        k, p = np.argwhere(big)[0]
        raise SimulationError(
            f"density exponent overflow (|log Z| > 700) at step {k}, particle {p}; "
            "use a smaller dt or a bounded observation drift h",
            step=int(k),
            particle=int(p),
        )
    return dataclasses.replace(bundle, Z=np.exp(log_z))


def simulate(problem, controls, grid, threads: int = 1) -> TrajectoryBundle:
    """State paths and density in one call."""
    return simulate_density(problem, simulate_forward(problem, controls, grid, threads))
