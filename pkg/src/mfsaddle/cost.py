"""Monte Carlo evaluation of the game payoff.

The strong form averages the running and terminal costs over particles under
the reference measure. The weak form weights the running integrand at
``t_k`` by ``Z(t_k)`` and the terminal cost by ``Z(T)``. In both forms the
mean-field arguments are ensemble means under the reference measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ControlProcess, ProblemSpec
from .simulate import GridConfig, TrajectoryBundle, simulate, simulate_forward, step_args

FORMULATIONS = ("strong", "weak")


@dataclass
class CostEstimate:
    value: float
    standard_error: float
    particle_count: int
    running: float
    terminal: float
    formulation: str = "strong"
    dt: float = float("nan")
    seed: int = 0
    samples: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "J": self.value,
            "se": self.standard_error,
            "running": self.running,
            "terminal": self.terminal,
            "N": self.particle_count,
            "dt": self.dt,
            "seed": self.seed,
            "formulation": self.formulation,
        }


def standard_error(samples: np.ndarray) -> float:
    """Standard error of the sample mean. The variance is taken about the
    first sample (it is shift invariant), so identical samples give 0."""
    return float((samples - samples[0]).std(ddof=1) / np.sqrt(len(samples)))


def paired_difference(a: CostEstimate, b: CostEstimate) -> tuple[float, float]:
    """Mean and standard error of ``a - b`` from per-particle samples
    (common random numbers)."""
    d = a.samples - b.samples
    return float(d.mean()), standard_error(d)


def per_particle_costs(
    problem: ProblemSpec, bundle: TrajectoryBundle, formulation: str = "strong"
) -> tuple[np.ndarray, np.ndarray]:
    """Running and terminal cost of every particle, shape ``(N,)`` each."""
    if formulation not in FORMULATIONS:
        raise ValueError(f"formulation must be one of {FORMULATIONS}")
    weak = formulation == "weak"
    if weak and bundle.Z is None:
        raise ValueError("weak cost needs a bundle with density paths")
    dt = bundle.dt
    running = np.zeros(bundle.particle_count)
    for k in range(bundle.step_count):
        lk = problem.running_cost_l(*step_args(bundle, k))
        running += (bundle.Z[k] * lk if weak else lk) * dt
    xT = bundle.x[-1]
    mT = problem.terminal_cost_m(xT, np.broadcast_to(xT.mean(axis=0), xT.shape))
    terminal = bundle.Z[-1] * mT if weak else np.asarray(mT, dtype=float)
    return running, terminal


def estimate(problem, bundle, formulation="strong") -> CostEstimate:
    running, terminal = per_particle_costs(problem, bundle, formulation)
    total = running + terminal
    N = len(total)
    return CostEstimate(
        value=float(total.mean()),
        standard_error=standard_error(total),
        particle_count=N,
        running=float(running.mean()),
        terminal=float(terminal.mean()),
        formulation=formulation,
        dt=bundle.dt,
        seed=bundle.seed,
        samples=total,
    )


def cost_strong(
    problem: ProblemSpec,
    controls: tuple[ControlProcess, ControlProcess],
    grid: GridConfig,
    bundle: TrajectoryBundle | None = None,
    threads: int = 1,
) -> CostEstimate:
    """Payoff without density weighting (left-endpoint quadrature)."""
    if bundle is None:
        bundle = simulate_forward(problem, controls, grid, threads)
    return estimate(problem, bundle, "strong")


def cost_weak(
    problem: ProblemSpec,
    controls: tuple[ControlProcess, ControlProcess],
    grid: GridConfig,
    bundle: TrajectoryBundle | None = None,
    threads: int = 1,
) -> CostEstimate:
    """Payoff with the Girsanov density weight (Bayes form)."""
    if bundle is None or bundle.Z is None:
        bundle = simulate(problem, controls, grid, threads)
    return estimate(problem, bundle, "weak")


def cost(problem, controls, grid, formulation="strong", bundle=None, threads=1) -> CostEstimate:
    fn = cost_weak if formulation == "weak" else cost_strong
    return fn(problem, controls, grid, bundle=bundle, threads=threads)
