"""Problem descriptions: general mean-field games, the LQ subclass, controls.

Coefficient functions are vectorized over particles. Every coefficient takes
``(t, x, y, u1, v1, u2, v2)`` where ``t`` is a float and the remaining
arguments are 2-D arrays with one row per particle::

    x, y   : (N, n)    state and its mean
    u1, v1 : (N, k1)   player-1 control and its mean
    u2, v2 : (N, k2)   player-2 control and its mean

Vector coefficients (b, g, g~) return ``(N, n)``; scalar ones (h, l) return
``(N,)``. The terminal cost takes ``(x, y)`` and returns ``(N,)``.

Gradient callables share the signature and return a dict keyed by argument
name (``"x", "y", "u1", "v1", "u2", "v2"``) of Jacobians: ``(N, n, d)`` for a
vector coefficient, ``(N, d)`` for a scalar one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

ARG_NAMES = ("x", "y", "u1", "v1", "u2", "v2")
COEFFICIENTS = ("b", "g", "gtilde", "h", "l")
VECTOR_COEFFICIENTS = ("b", "g", "gtilde")


class ModelError(ValueError):
    """Raised for malformed or inconsistent problem data."""


# --------------------------------------------------------------------------
# time-indexed coefficients


class TimeMatrix:
    """A deterministic coefficient of time, constant or piecewise constant.

    A tabulated value holds on ``[times[i], times[i+1])``; the last value
    holds up to the horizon.
    """

    def __init__(self, values, times=None):
        values = np.asarray(values, dtype=float)
        if times is None:
            self.times = None
            self.values = values
            self.shape = values.shape
        else:
            times = np.asarray(times, dtype=float)
            if times.ndim != 1 or len(times) == 0:
                raise ModelError("tabulated coefficient needs a non-empty 1-D time list")
            if times[0] != 0.0:
                raise ModelError("tabulated coefficient must start at t = 0")
            if np.any(np.diff(times) <= 0):
                raise ModelError("tabulated times must be strictly increasing")
            if values.shape[0] != len(times):
                raise ModelError(
                    f"{values.shape[0]} tabulated values for {len(times)} times"
                )
            self.times = times
            self.values = values
            self.shape = values.shape[1:]

    @property
    def is_constant(self) -> bool:
        return self.times is None

    @property
    def breakpoints(self) -> np.ndarray:
        return np.zeros(1) if self.times is None else self.times

    def __call__(self, t: float) -> np.ndarray:
        if self.times is None:
            return self.values
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(i, 0)]

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def reshaped(self, shape: tuple[int, ...], name: str) -> "TimeMatrix":
        """Coerce to ``shape``, accepting any layout with the same size."""
        size = int(np.prod(shape))
        if self.times is None:
            if self.values.size != size:
                raise ModelError(f"{name}: expected shape {shape}, got {self.values.shape}")
            return TimeMatrix(self.values.reshape(shape))
        if int(np.prod(self.shape)) != size:
            raise ModelError(f"{name}: expected shape {shape}, got {self.shape}")
        return TimeMatrix(self.values.reshape((len(self.times),) + shape), self.times)

    def __repr__(self) -> str:
        kind = "const" if self.times is None else f"table[{len(self.times)}]"
        return f"TimeMatrix({kind}, shape={self.shape})"


def as_time_matrix(value) -> TimeMatrix:
    if isinstance(value, TimeMatrix):
        return value
    if isinstance(value, Mapping):
        try:
            return TimeMatrix(value["values"], value["times"])
        except KeyError as exc:
            raise ModelError(f"tabulated coefficient missing key {exc}") from None
    return TimeMatrix(value)


# --------------------------------------------------------------------------
# validation reports


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[Check] = field(default_factory=list)
    delta: float | None = None
    max_gradient_error: float | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(Check(name, bool(passed), detail))

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "delta": self.delta,
            "max_gradient_error": self.max_gradient_error,
            "checks": [c.__dict__ for c in self.checks],
        }

    def message(self) -> str:
        return "; ".join(f"{c.name}: {c.detail}" for c in self.failures) or "ok"


# --------------------------------------------------------------------------
# general problems


@dataclass(frozen=True)
class ProblemSpec:
    """A partially observed zero-sum mean-field game with given coefficients."""

    state_dim: int
    control_dims: tuple[int, int]
    horizon: float
    initial_state: np.ndarray
    drift_b: Callable
    diffusion_g: Callable
    diffusion_gtilde: Callable
    observation_h: Callable
    running_cost_l: Callable
    terminal_cost_m: Callable
    gradients: Mapping[str, Callable] = field(default_factory=dict)
    control_bounds: tuple | None = None
    name: str = ""
    lq: "LQSpec | None" = None

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.initial_state, dtype=float))
        object.__setattr__(self, "initial_state", a)
        object.__setattr__(self, "control_dims", tuple(int(k) for k in self.control_dims))
        if self.state_dim < 1 or min(self.control_dims) < 1:
            raise ModelError("dimensions must be positive")
        if a.shape != (self.state_dim,):
            raise ModelError(f"initial state has shape {a.shape}, expected ({self.state_dim},)")
        if not self.horizon > 0:
            raise ModelError("horizon must be positive")

    @property
    def n(self) -> int:
        return self.state_dim

    @property
    def k1(self) -> int:
        return self.control_dims[0]

    @property
    def k2(self) -> int:
        return self.control_dims[1]

    def coefficient(self, name: str) -> Callable:
        return {
            "b": self.drift_b,
            "g": self.diffusion_g,
            "gtilde": self.diffusion_gtilde,
            "h": self.observation_h,
            "l": self.running_cost_l,
            "m": self.terminal_cost_m,
        }[name]

    def has_gradients(self) -> bool:
        return all(k in self.gradients for k in COEFFICIENTS + ("m",))

    def arg_dims(self) -> dict[str, int]:
        n, k1, k2 = self.n, self.k1, self.k2
        return {"x": n, "y": n, "u1": k1, "v1": k1, "u2": k2, "v2": k2}


def broadcast_args(problem: ProblemSpec, x, y, u1, v1, u2, v2):
    """Shape point arguments as ``(N, dim)`` arrays sharing one particle axis."""
    dims = problem.arg_dims()
    raw = dict(zip(ARG_NAMES, (x, y, u1, v1, u2, v2)))
    arrs = {}
    for k, v in raw.items():
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.shape[1] != dims[k]:
            raise ModelError(f"argument {k} has dimension {arr.shape[1]}, expected {dims[k]}")
        arrs[k] = arr
    N = max(a.shape[0] for a in arrs.values())
    return tuple(np.broadcast_to(arrs[k], (N, dims[k])) for k in ARG_NAMES)


def _sample_point(problem: ProblemSpec, rng: np.random.Generator):
    t = float(rng.uniform(0.0, problem.horizon))
    args = [rng.standard_normal((1, d)) for d in problem.arg_dims().values()]
    return t, args


def _fd_jacobian(f, args, i, eps_rel):
    """Central-difference Jacobian of ``f(*args)`` in argument ``i``."""
    base = args[i]
    cols = []
    for j in range(base.shape[1]):
        eps = eps_rel * max(1.0, abs(base[0, j]))
        plus = [a.copy() for a in args]
        minus = [a.copy() for a in args]
        plus[i][0, j] += eps
        minus[i][0, j] -= eps
        cols.append((np.asarray(f(*plus)) - np.asarray(f(*minus))) / (2 * eps))
    return np.stack(cols, axis=-1)


def validate_problem(
    spec: ProblemSpec, samples: int = 100, tol: float = 1e-5, seed: int = 0
) -> ValidationReport:
    """Spot-check finiteness of every coefficient and, where analytic
    gradients are supplied, compare them with central finite differences at
    ``samples`` random points (relative error ``|a - fd| / max(1, |fd|)``)."""
    rng = np.random.default_rng(seed)
    report = ValidationReport()
    worst = 0.0
    names = COEFFICIENTS + ("m",)
    bad_eval: dict[str, str] = {}
    grad_err = {name: 0.0 for name in names if name in spec.gradients}
    max_abs = {name: 0.0 for name in names}
    for _ in range(samples):
        t, args = _sample_point(spec, rng)
        for name in names:
            if name in bad_eval:
                continue
            if name == "m":
                f = lambda *a: spec.terminal_cost_m(a[0], a[1])  # noqa: E731
                fargs = args[:2]
            else:
                coef = spec.coefficient(name)
                f = lambda *a, c=coef: c(t, *a)  # noqa: E731
                fargs = args
            val = np.asarray(f(*fargs), dtype=float)
            if not np.all(np.isfinite(val)):
                point = ", ".join(f"{k}={v.ravel().tolist()}" for k, v in zip(ARG_NAMES, fargs))
                bad_eval[name] = f"non-finite value at t={t:.6g}, {point}"
                continue
            max_abs[name] = max(max_abs[name], float(np.max(np.abs(val))) if val.size else 0.0)
            if name not in spec.gradients:
                continue
            if name == "m":
                grads = spec.gradients["m"](*fargs)
            else:
                grads = spec.gradients[name](t, *fargs)
            for i, arg in enumerate(ARG_NAMES[: len(fargs)]):
                fd = _fd_jacobian(f, fargs, i, 1e-6)
                an = np.asarray(grads[arg], dtype=float).reshape(fd.shape)
                err = float(np.max(np.abs(an - fd) / np.maximum(1.0, np.abs(fd)), initial=0.0))
                grad_err[name] = max(grad_err[name], err)
    for name in names:
        if name in bad_eval:
            report.add(f"finite:{name}", False, bad_eval[name])
        else:
            report.add(f"finite:{name}", True, f"max |value| = {max_abs[name]:.3g}")
    for name, err in grad_err.items():
        worst = max(worst, err)
        report.add(f"gradient:{name}", err <= tol, f"max relative error {err:.3g} (tol {tol:g})")
    report.max_gradient_error = worst if grad_err else None
    return report


# --------------------------------------------------------------------------
# LQ subclass

_LQ_SHAPES = {
    **{k: ("n", "n") for k in ("A1", "A2", "C1", "C2", "F1", "F2")},
    **{k: ("n", "k1") for k in ("B11", "B12", "D11", "D12", "G11", "G12")},
    **{k: ("n", "k2") for k in ("B21", "B22", "D21", "D22", "G21", "G22")},
    "N11": ("k1", "k1"),
    "N12": ("k1", "k1"),
    "N21": ("k2", "k2"),
    "N22": ("k2", "k2"),
    "Q": ("n",),
    "h": (),
}
LQ_MATRIX_NAMES = tuple(_LQ_SHAPES)


class LQSpec:
    """Deterministic coefficients of the linear-quadratic game.

    Any matrix left out is zero. ``M`` is a constant vector; every other
    coefficient may be tabulated in time (see :class:`TimeMatrix`).
    """

    def __init__(self, n, k1, k2, T, a, M=None, **matrices):
        self.n, self.k1, self.k2 = int(n), int(k1), int(k2)
        self.T = float(T)
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        if self.a.shape != (self.n,):
            raise ModelError(f"a: expected shape ({self.n},), got {self.a.shape}")
        if not self.T > 0:
            raise ModelError("T must be positive")
        unknown = set(matrices) - set(_LQ_SHAPES)
        if unknown:
            raise ModelError(f"unknown LQ coefficient(s): {sorted(unknown)}")
        dims = {"n": self.n, "k1": self.k1, "k2": self.k2}
        for name, sym in _LQ_SHAPES.items():
            shape = tuple(dims[s] for s in sym)
            value = matrices.get(name)
            tm = TimeMatrix(np.zeros(shape)) if value is None else as_time_matrix(value)
            setattr(self, name, tm.reshaped(shape, name))
        M = np.zeros(self.n) if M is None else np.asarray(M, dtype=float)
        if M.size != self.n:
            raise ModelError(f"M: expected {self.n} entries, got {M.size}")
        self.M = M.reshape(self.n)
        self._constant = all(getattr(self, nm).is_constant for nm in LQ_MATRIX_NAMES)
        self._cached = None

    def matrix(self, name: str) -> TimeMatrix:
        return getattr(self, name)

    def at(self, t: float) -> dict[str, np.ndarray]:
        if self._constant:
            if self._cached is None:
                self._cached = {name: getattr(self, name).values for name in LQ_MATRIX_NAMES}
            return self._cached
        return {name: getattr(self, name)(t) for name in LQ_MATRIX_NAMES}

    def breakpoints(self, names=LQ_MATRIX_NAMES) -> np.ndarray:
        pts = np.concatenate([getattr(self, nm).breakpoints for nm in names])
        return np.unique(pts[pts < self.T])

    def max_abs(self) -> float:
        vals = [getattr(self, nm).max_abs() for nm in LQ_MATRIX_NAMES]
        return max(vals + [float(np.max(np.abs(self.M), initial=0.0))])


def validate_lq(spec: LQSpec, sym_tol: float = 1e-12) -> ValidationReport:
    """Check boundedness, symmetry and the uniform definiteness of the
    N-matrices; report the largest admissible ``delta``."""
    report = ValidationReport()
    finite = all(np.all(np.isfinite(getattr(spec, nm).values)) for nm in LQ_MATRIX_NAMES)
    finite = finite and bool(np.all(np.isfinite(spec.M)))
    report.add("bounded", finite, "all coefficients finite" if finite else "non-finite coefficient entries")
    if not finite:
        return report

    n_names = ("N11", "N12", "N21", "N22")
    worst_asym = {}
    for nm in n_names:
        vals = getattr(spec, nm).values
        asym = float(np.max(np.abs(vals - np.swapaxes(vals, -1, -2)), initial=0.0))
        worst_asym[nm] = asym
        report.add(f"symmetric:{nm}", asym <= sym_tol, f"max |N - N^T| = {asym:.3g}")
    if any(v > sym_tol for v in worst_asym.values()):
        return report

    times = spec.breakpoints(n_names)
    lows = {"N11": np.inf, "N11+N12": np.inf, "-N21": np.inf, "-(N21+N22)": np.inf}
    for t in times:
        m = spec.at(t)
        lows["N11"] = min(lows["N11"], np.linalg.eigvalsh(m["N11"])[0])
        lows["N11+N12"] = min(lows["N11+N12"], np.linalg.eigvalsh(m["N11"] + m["N12"])[0])
        lows["-N21"] = min(lows["-N21"], -np.linalg.eigvalsh(m["N21"])[-1])
        lows["-(N21+N22)"] = min(lows["-(N21+N22)"], -np.linalg.eigvalsh(m["N21"] + m["N22"])[-1])
    delta = float(min(lows.values()))
    report.delta = delta
    for name, low in lows.items():
        report.add(
            f"definite:{name}",
            low > 0,
            f"smallest eigenvalue {low:.6g}" + ("" if low > 0 else " (Assumption 5.2 violated)"),
        )
    return report


def _quad(N, u):
    return np.einsum("ij,nj,ni->n", N, u, u)


def lift_lq(spec: LQSpec) -> ProblemSpec:
    """Express an LQ game through general coefficient functions, with
    analytic gradients."""
    s = spec

    def lin(t, x, y, u1, v1, u2, v2, X, Y_, U1, V1, U2, V2):
        m = s.at(t)
        return (
            x @ m[X].T + y @ m[Y_].T + u1 @ m[U1].T + v1 @ m[V1].T + u2 @ m[U2].T + v2 @ m[V2].T
        )

    def lin_grad(t, x, names):
        m = s.at(t)
        N = x.shape[0]
        return {arg: np.broadcast_to(m[nm], (N,) + m[nm].shape) for arg, nm in zip(ARG_NAMES, names)}

    b_names = ("A1", "A2", "B11", "B12", "B21", "B22")
    g_names = ("C1", "C2", "D11", "D12", "D21", "D22")
    gt_names = ("F1", "F2", "G11", "G12", "G21", "G22")

    def b(t, x, y, u1, v1, u2, v2):
        return lin(t, x, y, u1, v1, u2, v2, *b_names)

    def g(t, x, y, u1, v1, u2, v2):
        return lin(t, x, y, u1, v1, u2, v2, *g_names)

    def gt(t, x, y, u1, v1, u2, v2):
        return lin(t, x, y, u1, v1, u2, v2, *gt_names)

    def h(t, x, y, u1, v1, u2, v2):
        return np.full(x.shape[0], float(s.h(t)))

    def l(t, x, y, u1, v1, u2, v2):
        m = s.at(t)
        return (
            x @ m["Q"]
            + _quad(m["N11"], u1)
            + _quad(m["N12"], v1)
            + _quad(m["N21"], u2)
            + _quad(m["N22"], v2)
        )

    def mterm(x, y):
        return x @ s.M

    def h_grad(t, x, y, u1, v1, u2, v2):
        N = x.shape[0]
        return {k: np.zeros((N, a.shape[1])) for k, a in zip(ARG_NAMES, (x, y, u1, v1, u2, v2))}

    def l_grad(t, x, y, u1, v1, u2, v2):
        m = s.at(t)
        N = x.shape[0]
        sym = lambda A: A + A.T  # noqa: E731
        return {
            "x": np.broadcast_to(m["Q"], (N, s.n)),
            "y": np.zeros((N, s.n)),
            "u1": u1 @ sym(m["N11"]).T,
            "v1": v1 @ sym(m["N12"]).T,
            "u2": u2 @ sym(m["N21"]).T,
            "v2": v2 @ sym(m["N22"]).T,
        }

    def m_grad(x, y):
        N = x.shape[0]
        return {"x": np.broadcast_to(s.M, (N, s.n)), "y": np.zeros((N, s.n))}

    grads = {
        "b": lambda t, x, *rest: lin_grad(t, x, b_names),
        "g": lambda t, x, *rest: lin_grad(t, x, g_names),
        "gtilde": lambda t, x, *rest: lin_grad(t, x, gt_names),
        "h": h_grad,
        "l": l_grad,
        "m": m_grad,
    }
    problem = ProblemSpec(
        state_dim=s.n,
        control_dims=(s.k1, s.k2),
        horizon=s.T,
        initial_state=s.a,
        drift_b=b,
        diffusion_g=g,
        diffusion_gtilde=gt,
        observation_h=h,
        running_cost_l=l,
        terminal_cost_m=mterm,
        gradients=grads,
        name="lq",
        lq=spec,
    )
    return problem


# --------------------------------------------------------------------------
# controls

FEEDBACK_FEATURES = ("1", "Y", "int_Y")


@dataclass(frozen=True)
class ControlProcess:
    """Piecewise-constant admissible control of one player.

    ``times`` are the left endpoints of the constancy intervals (first one
    0). For a deterministic control ``values`` is ``(K, k)``. For a feedback
    control it is ``(K, 3, k)``: on interval ``i`` the control is
    ``features @ values[i]`` where the features ``(1, Y(t_i), int_0^{t_i} Y)``
    are read from the particle's own observation path, so the value at
    ``t_i`` only sees observations up to ``t_i``.
    """

    player: int
    times: np.ndarray
    values: np.ndarray
    kind: str = "deterministic"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if self.player not in (1, 2):
            raise ModelError("player must be 1 or 2")
        if self.kind not in ("deterministic", "feedback"):
            raise ModelError(f"unknown control kind {self.kind!r}")
        if times.ndim != 1 or len(times) == 0 or times[0] != 0.0:
            raise ModelError("control times must be a 1-D grid starting at 0")
        if np.any(np.diff(times) <= 0):
            raise ModelError("control times must be strictly increasing")
        if values.ndim == 1 and self.kind == "deterministic":
            values = values[:, None]
        want = 2 if self.kind == "deterministic" else 3
        if values.ndim != want or values.shape[0] != len(times):
            raise ModelError(f"control values have shape {values.shape} for {len(times)} times")
        if self.kind == "feedback" and values.shape[1] != len(FEEDBACK_FEATURES):
            raise ModelError(f"feedback coefficients need {len(FEEDBACK_FEATURES)} feature rows")
        if not np.all(np.isfinite(values)):
            raise ModelError("control values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def deterministic(cls, player, times, values) -> "ControlProcess":
        return cls(player, times, values, "deterministic")

    @classmethod
    def constant(cls, player, value, dim: int | None = None) -> "ControlProcess":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        if dim is not None and v.size == 1:
            v = np.full(dim, float(v[0]))
        return cls(player, np.zeros(1), v[None, :])

    @classmethod
    def zero(cls, player, dim) -> "ControlProcess":
        return cls.constant(player, np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    def index(self, t: float) -> int:
        # small slack so that grid times computed as k*dt land on their own interval
        return int(np.searchsorted(self.times, t + 1e-12, side="right")) - 1

    def evaluate(self, t: float, Y=None, int_Y=None, N: int = 1) -> np.ndarray:
        """Control values ``(N, k)`` at time ``t``."""
        i = self.index(t)
        if self.kind == "deterministic":
            return np.broadcast_to(self.values[i], (N, self.dim))
        Y = np.asarray(Y, dtype=float)
        feats = np.stack([np.ones_like(Y), Y, np.asarray(int_Y, dtype=float)], axis=-1)
        return feats @ self.values[i]

    def on_grid(self, times) -> np.ndarray:
        """Deterministic values sampled at ``times``."""
        if self.kind != "deterministic":
            raise ModelError("only deterministic controls can be sampled without observations")
        return np.stack([self.values[self.index(t)] for t in np.asarray(times)])

    def __add__(self, other: "ControlProcess") -> "ControlProcess":
        """Add a deterministic control; for a feedback control the shift goes
        into the constant feature."""
        if other.kind != "deterministic":
            raise ModelError("only deterministic controls can be added")
        if self.dim != other.dim:
            raise ModelError("control dimensions differ")
        times = np.union1d(self.times, other.times)
        extra = other.on_grid(times)
        if self.kind == "deterministic":
            return ControlProcess(self.player, times, self.on_grid(times) + extra)
        coef = np.stack([self.values[self.index(t)] for t in times])
        coef[:, 0, :] += extra
        return ControlProcess(self.player, times, coef, "feedback")

    def scaled(self, lam: float) -> "ControlProcess":
        return ControlProcess(self.player, self.times, lam * self.values, self.kind)

    def shifted(self, delta) -> "ControlProcess":
        if self.kind != "deterministic":
            raise ModelError("shift is defined for deterministic controls")
        return ControlProcess(self.player, self.times, self.values + np.asarray(delta, dtype=float))

    def l2_norm(self, horizon: float) -> float:
        """``(int_0^T |u|^2 dt)^(1/2)`` for a deterministic control."""
        if self.kind != "deterministic":
            raise ModelError("norm is defined for deterministic controls")
        widths = np.diff(np.append(self.times, horizon))
        return float(np.sqrt(np.sum(widths * np.sum(self.values**2, axis=1))))
