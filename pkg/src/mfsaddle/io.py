"""Problem files and CSV/JSON artifacts.

Floats are written with 17 significant digits everywhere so artifacts
round-trip exactly and equal inputs give byte-identical files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .families import build_coefficient
from .model import ControlProcess, LQSpec, ModelError, ProblemSpec, lift_lq

FLOAT_FMT = "%.17g"


class ProblemFileError(ModelError):
    pass


# --------------------------------------------------------------------------
# JSON with fixed float precision


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return FLOAT_FMT % x
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def metadata(seed: int, dt: float, N: int | None, steps: int) -> dict:
    return {"seed": int(seed), "dt": float(dt), "N": N, "steps": int(steps), "version": __version__}


# --------------------------------------------------------------------------
# problem files


def _require(doc, key, where="problem"):
    if key not in doc:
        raise ProblemFileError(f"{where}: missing required field {key!r}")
    return doc[key]


def parse_problem(doc: dict) -> tuple[ProblemSpec, LQSpec | None]:
    """Build a problem from a decoded JSON document.

    Returns the general problem and, for ``"type": "lq"``, the LQ data it was
    lifted from.
    """
    if not isinstance(doc, dict):
        raise ProblemFileError("problem file must hold a JSON object")
    kind = _require(doc, "type")
    n, k1, k2 = (int(_require(doc, key)) for key in ("n", "k1", "k2"))
    T = float(_require(doc, "T"))
    a = _require(doc, "a")
    if kind == "lq":
        mats = dict(_require(doc, "matrices"))
        for key in ("N11", "N21"):
            if key not in mats:
                raise ProblemFileError(f"matrices: missing required field {key!r}")
        M = mats.pop("M", None)
        spec = LQSpec(n, k1, k2, T, a, M=M, **mats)
        return lift_lq(spec), spec
    if kind == "general":
        coefs = dict(doc.get("coefficients", {}))
        unknown = set(coefs) - {"b", "g", "gtilde", "h", "l", "m"}
        if unknown:
            raise ProblemFileError(f"coefficients: unknown entries {sorted(unknown)}")
        dims = {"x": n, "y": n, "u1": k1, "v1": k1, "u2": k2, "v2": k2}
        built = {role: build_coefficient(role, dims, coefs.get(role)) for role in ("b", "g", "gtilde", "h", "l", "m")}
        bounds = doc.get("control_bounds")
        if bounds is not None:
            if len(bounds) != 2:
                raise ProblemFileError("control_bounds: expected one [lo, hi] entry (or null) per player")
            bounds = tuple(
                None if b is None else (np.asarray(b[0], float), np.asarray(b[1], float)) for b in bounds
            )
        problem = ProblemSpec(
            state_dim=n,
            control_dims=(k1, k2),
            horizon=T,
            initial_state=a,
            drift_b=built["b"][0],
            diffusion_g=built["g"][0],
            diffusion_gtilde=built["gtilde"][0],
            observation_h=built["h"][0],
            running_cost_l=built["l"][0],
            terminal_cost_m=built["m"][0],
            gradients={role: fg[1] for role, fg in built.items()},
            control_bounds=bounds,
            name=str(doc.get("name", "general")),
        )
        return problem, None
    raise ProblemFileError(f"unknown problem type {kind!r}; expected 'lq' or 'general'")


def load_problem(path) -> tuple[ProblemSpec, LQSpec | None, dict]:
    """Read a problem file; returns ``(problem, lq_spec_or_None, document)``."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    try:
        problem, spec = parse_problem(doc)
    except ProblemFileError:
        raise
    except (ModelError, TypeError, ValueError) as exc:
        raise ProblemFileError(f"{path}: {exc}") from None
    return problem, spec, doc


# --------------------------------------------------------------------------
# CSV


def _meta_line(meta: dict) -> str:
    return "# " + " ".join(f"{k}={v if not isinstance(v, float) else FLOAT_FMT % v}" for k, v in meta.items())


def _write_csv(path, header: list[str], rows: np.ndarray, meta: dict | None) -> None:
    with open(path, "w", newline="") as fh:
        if meta is not None:
            fh.write(_meta_line(meta) + "\n")
        fh.write(",".join(header) + "\n")
        if len(rows):
            np.savetxt(fh, rows, fmt=FLOAT_FMT, delimiter=",")


def _read_csv(path) -> tuple[list[str], np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ProblemFileError(f"{path}: empty CSV")
    header = [h.strip() for h in lines[0].split(",")]
    try:
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    except ValueError as exc:
        raise ProblemFileError(f"{path}: {exc}") from None
    if rows.size and rows.shape[1] != len(header):
        raise ProblemFileError(f"{path}: rows do not match the header")
    return header, rows.reshape(-1, len(header))


def write_trajectory_csv(path, bundle, meta=None, max_particles: int | None = None) -> None:
    K1, N, n = bundle.x.shape
    P = N if max_particles is None else min(N, max_particles)
    Z = bundle.Z if bundle.Z is not None else np.full((K1, N), np.nan)
    rows = np.empty((K1 * P, 3 + n))
    rows[:, 0] = np.repeat(bundle.t, P)
    rows[:, 1] = np.tile(np.arange(P), K1)
    rows[:, 2 : 2 + n] = bundle.x[:, :P, :].reshape(-1, n)
    rows[:, 2 + n] = Z[:, :P].reshape(-1)
    header = ["time", "particle"] + [f"x_{i}" for i in range(n)] + ["Z"]
    with open(path, "w", newline="") as fh:
        if meta is not None:
            fh.write(_meta_line(meta) + "\n")
        fh.write(",".join(header) + "\n")
        fmt = [FLOAT_FMT, "%d"] + [FLOAT_FMT] * (n + 1)
        np.savetxt(fh, rows, fmt=fmt, delimiter=",")


def trajectory_summary(bundle) -> dict:
    out = {
        "t": bundle.t,
        "x_mean": bundle.x_mean,
        "Z_mean": bundle.Z_mean if bundle.Z is not None else None,
        "x_se": bundle.x_se,
    }
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in out.items()}


def write_adjoint_csv(path, adj, meta=None) -> None:
    """Ensemble-mean adjoint path when the solution is per particle."""
    n = adj.p.shape[-1]
    p, q, qt = (a if adj.deterministic_reduction else a.mean(axis=1) for a in (adj.p, adj.q, adj.qt))
    rows = np.column_stack([adj.t, p, q, qt])
    header = ["time"] + [f"p_{i}" for i in range(n)] + [f"q_{i}" for i in range(n)] + [f"qt_{i}" for i in range(n)]
    _write_csv(path, header, rows, meta)


def adjoint_summary(adj) -> dict:
    return {
        "deterministic_reduction": adj.deterministic_reduction,
        "steps": adj.step_count,
        "p_initial": adj.mean_path()[0].tolist(),
        "p_terminal": adj.mean_path()[-1].tolist(),
        "condition_numbers": None if adj.condition_numbers is None else adj.condition_numbers.tolist(),
    }


def write_control_csv(path, control: ControlProcess, meta=None) -> None:
    if control.kind != "deterministic":
        raise ModelError("only deterministic controls can be written to CSV")
    header = ["time"] + [f"u_{i}" for i in range(control.dim)]
    _write_csv(path, header, np.column_stack([control.times, control.values]), meta)


def read_control_csv(path, player: int) -> ControlProcess:
    header, rows = _read_csv(path)
    if not header or header[0] != "time" or len(header) < 2:
        raise ProblemFileError(f"{path}: expected header 'time,u_0,...'")
    if len(rows) == 0:
        raise ProblemFileError(f"{path}: no control rows")
    try:
        return ControlProcess.deterministic(player, rows[:, 0], rows[:, 1:])
    except ModelError as exc:
        raise ProblemFileError(f"{path}: {exc}") from None


def write_saddle_csv(path, report, meta=None) -> None:
    header = ["perturbation_id", "player", "J", "SE", "delta", "se_delta", "verdict"]
    with open(path, "w", newline="") as fh:
        if meta is not None:
            fh.write(_meta_line(meta) + "\n")
        fh.write(",".join(header) + "\n")
        for c in report.checks:
            fh.write(
                f"{c.perturbation_id},{c.player},{FLOAT_FMT % c.J},{FLOAT_FMT % c.se},"
                f"{FLOAT_FMT % c.delta},{FLOAT_FMT % c.se_delta},{'pass' if c.passed else 'fail'}\n"
            )
