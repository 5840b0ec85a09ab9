"""Built-in coefficient families for problems described in config files.

Each family builder receives the problem dimensions and a parameter dict and
returns ``(function, gradient)`` following the conventions in
:mod:`mfsaddle.model`.

Vector families (b, g, gtilde):
    linear         ``Ax x + Ay y + Au1 u1 + Av1 v1 + Au2 u2 + Av2 v2 + c``
    bilinear       linear part plus ``x_j * (K1 u1)_j + x_j * (K2 u2)_j``
    smooth_bounded ``scale * tanh(W x + Wy y + c)`` elementwise

Scalar families (h, l):
    constant   ``c``
    linear     ``<cx, x> + <cy, y> + <cu1, u1> + ... + c``
    sin        ``scale * sin(<w, x> + <wy, y> + c)``
    quadratic  ``<Qx x, x> + <qx, x> + <Qy y, y> + <R1 u1, u1> + <S1 v1, v1>
                 + <R2 u2, u2> + <S2 v2, v2>``

Terminal families (m):
    linear     ``<M, x> + <My, y>``
    quadratic  ``1/2 <P x, x> + <M, x> + 1/2 <Py y, y> + <My, y>``
"""

from __future__ import annotations

import numpy as np

from .model import ARG_NAMES, ModelError

_VEC_KEYS = {"x": "Ax", "y": "Ay", "u1": "Au1", "v1": "Av1", "u2": "Au2", "v2": "Av2"}
_SCALAR_KEYS = {"x": "cx", "y": "cy", "u1": "cu1", "v1": "cv1", "u2": "cu2", "v2": "cv2"}


def _param(params, key, shape, name):
    value = params.get(key)
    if value is None:
        return np.zeros(shape)
    arr = np.asarray(value, dtype=float)
    if arr.size != int(np.prod(shape)):
        raise ModelError(f"{name}.{key}: expected shape {shape}, got {arr.shape}")
    return arr.reshape(shape)


def _check_keys(params, allowed, name):
    extra = set(params) - set(allowed)
    if extra:
        raise ModelError(f"{name}: unknown parameter(s) {sorted(extra)}")


def _vector_linear(dims, params, name):
    n = dims["x"]
    _check_keys(params, list(_VEC_KEYS.values()) + ["c", "K1", "K2"], name)
    mats = {a: _param(params, k, (n, dims[a]), name) for a, k in _VEC_KEYS.items()}
    c = _param(params, "c", (n,), name)

    def f(t, *args):
        out = np.broadcast_to(c, (args[0].shape[0], n)).copy()
        for a, arg in zip(ARG_NAMES, args):
            out += arg @ mats[a].T
        return out

    def grad(t, *args):
        N = args[0].shape[0]
        return {a: np.broadcast_to(mats[a], (N,) + mats[a].shape) for a in ARG_NAMES}

    return f, grad


def _vector_bilinear(dims, params, name):
    n = dims["x"]
    base, base_grad = _vector_linear(dims, params, name)
    K1 = _param(params, "K1", (n, dims["u1"]), name)
    K2 = _param(params, "K2", (n, dims["u2"]), name)

    def f(t, x, y, u1, v1, u2, v2):
        return base(t, x, y, u1, v1, u2, v2) + x * (u1 @ K1.T) + x * (u2 @ K2.T)

    def grad(t, x, y, u1, v1, u2, v2):
        out = {k: np.array(v) for k, v in base_grad(t, x, y, u1, v1, u2, v2).items()}
        idx = np.arange(n)
        out["x"][:, idx, idx] += u1 @ K1.T + u2 @ K2.T
        out["u1"] = out["u1"] + x[:, :, None] * K1[None]
        out["u2"] = out["u2"] + x[:, :, None] * K2[None]
        return out

    return f, grad


def _vector_smooth(dims, params, name):
    n = dims["x"]
    _check_keys(params, ["W", "Wy", "c", "scale"], name)
    W = _param(params, "W", (n, n), name)
    Wy = _param(params, "Wy", (n, n), name)
    c = _param(params, "c", (n,), name)
    scale = float(params.get("scale", 1.0))

    def f(t, x, y, *rest):
        return scale * np.tanh(x @ W.T + y @ Wy.T + c)

    def grad(t, x, y, u1, v1, u2, v2):
        s = scale * (1.0 - np.tanh(x @ W.T + y @ Wy.T + c) ** 2)
        N = x.shape[0]
        return {
            "x": s[:, :, None] * W[None],
            "y": s[:, :, None] * Wy[None],
            "u1": np.zeros((N, n, u1.shape[1])),
            "v1": np.zeros((N, n, v1.shape[1])),
            "u2": np.zeros((N, n, u2.shape[1])),
            "v2": np.zeros((N, n, v2.shape[1])),
        }

    return f, grad


def _zeros_like_args(args):
    return {a: np.zeros_like(arg) for a, arg in zip(ARG_NAMES, args)}


def _scalar_constant(dims, params, name):
    _check_keys(params, ["c"], name)
    c = float(params.get("c", 0.0))

    def f(t, x, *rest):
        return np.full(x.shape[0], c)

    def grad(t, *args):
        return _zeros_like_args(args)

    return f, grad


def _scalar_linear(dims, params, name):
    _check_keys(params, list(_SCALAR_KEYS.values()) + ["c"], name)
    vecs = {a: _param(params, k, (dims[a],), name) for a, k in _SCALAR_KEYS.items()}
    c = float(params.get("c", 0.0))

    def f(t, *args):
        return c + sum(arg @ vecs[a] for a, arg in zip(ARG_NAMES, args))

    def grad(t, *args):
        return {a: np.broadcast_to(vecs[a], arg.shape) for a, arg in zip(ARG_NAMES, args)}

    return f, grad


def _scalar_sin(dims, params, name):
    _check_keys(params, ["w", "wy", "c", "scale"], name)
    w = _param(params, "w", (dims["x"],), name)
    wy = _param(params, "wy", (dims["y"],), name)
    c = float(params.get("c", 0.0))
    scale = float(params.get("scale", 1.0))

    def f(t, x, y, *rest):
        return scale * np.sin(x @ w + y @ wy + c)

    def grad(t, x, y, *rest):
        d = scale * np.cos(x @ w + y @ wy + c)
        out = _zeros_like_args((x, y) + rest)
        out["x"] = d[:, None] * w
        out["y"] = d[:, None] * wy
        return out

    return f, grad


def _scalar_quadratic(dims, params, name):
    keys = {"x": "Qx", "y": "Qy", "u1": "R1", "v1": "S1", "u2": "R2", "v2": "S2"}
    _check_keys(params, list(keys.values()) + ["qx", "c"], name)
    mats = {a: _param(params, k, (dims[a], dims[a]), name) for a, k in keys.items()}
    qx = _param(params, "qx", (dims["x"],), name)
    c = float(params.get("c", 0.0))

    def f(t, *args):
        out = c + args[0] @ qx
        for a, arg in zip(ARG_NAMES, args):
            out = out + np.einsum("ij,nj,ni->n", mats[a], arg, arg)
        return out

    def grad(t, *args):
        out = {a: arg @ (mats[a] + mats[a].T).T for a, arg in zip(ARG_NAMES, args)}
        out["x"] = out["x"] + qx
        return out

    return f, grad


def _terminal_linear(dims, params, name):
    _check_keys(params, ["M", "My"], name)
    M = _param(params, "M", (dims["x"],), name)
    My = _param(params, "My", (dims["y"],), name)

    def f(x, y):
        return x @ M + y @ My

    def grad(x, y):
        return {"x": np.broadcast_to(M, x.shape), "y": np.broadcast_to(My, y.shape)}

    return f, grad


def _terminal_quadratic(dims, params, name):
    _check_keys(params, ["P", "M", "Py", "My"], name)
    n = dims["x"]
    P = _param(params, "P", (n, n), name)
    Py = _param(params, "Py", (n, n), name)
    M = _param(params, "M", (n,), name)
    My = _param(params, "My", (n,), name)

    def f(x, y):
        return (
            0.5 * np.einsum("ij,nj,ni->n", P, x, x)
            + x @ M
            + 0.5 * np.einsum("ij,nj,ni->n", Py, y, y)
            + y @ My
        )

    def grad(x, y):
        return {"x": x @ (0.5 * (P + P.T)).T + M, "y": y @ (0.5 * (Py + Py.T)).T + My}

    return f, grad


VECTOR_FAMILIES = {
    "linear": _vector_linear,
    "bilinear": _vector_bilinear,
    "smooth_bounded": _vector_smooth,
}
SCALAR_FAMILIES = {
    "constant": _scalar_constant,
    "linear": _scalar_linear,
    "sin": _scalar_sin,
    "quadratic": _scalar_quadratic,
}
TERMINAL_FAMILIES = {"linear": _terminal_linear, "quadratic": _terminal_quadratic}


def build_coefficient(role: str, dims: dict[str, int], spec: dict):
    """Build ``(function, gradient)`` for coefficient ``role`` from a
    ``{"family": ..., "params": {...}}`` entry."""
    if role in ("b", "g", "gtilde"):
        registry = VECTOR_FAMILIES
    elif role in ("h", "l"):
        registry = SCALAR_FAMILIES
    elif role == "m":
        registry = TERMINAL_FAMILIES
    else:
        raise ModelError(f"unknown coefficient {role!r}")
    if spec is None:
        spec = {"family": "linear" if role != "h" else "constant"}
    family = spec.get("family")
    if family not in registry:
        raise ModelError(f"{role}: unknown family {family!r}; choose from {sorted(registry)}")
    return registry[family](dims, dict(spec.get("params", {})), role)
