"""Shared builders for test problems."""

from __future__ import annotations

import numpy as np
import pytest

from mfsaddle.families import build_coefficient
from mfsaddle.model import LQSpec, ProblemSpec, lift_lq
from mfsaddle.simulate import clear_noise_cache


def make_problem(n=1, k1=1, k2=1, T=1.0, a=None, bounds=None, **coefs) -> ProblemSpec:
    """General problem from family entries, e.g. ``b={"family": "linear", ...}``."""
    dims = {"x": n, "y": n, "u1": k1, "v1": k1, "u2": k2, "v2": k2}
    built = {r: build_coefficient(r, dims, coefs.get(r)) for r in ("b", "g", "gtilde", "h", "l", "m")}
    return ProblemSpec(
        state_dim=n,
        control_dims=(k1, k2),
        horizon=T,
        initial_state=np.zeros(n) if a is None else a,
        drift_b=built["b"][0],
        diffusion_g=built["g"][0],
        diffusion_gtilde=built["gtilde"][0],
        observation_h=built["h"][0],
        running_cost_l=built["l"][0],
        terminal_cost_m=built["m"][0],
        gradients={r: fg[1] for r, fg in built.items()},
        control_bounds=bounds,
    )


def const_vec(c):
    return {"family": "linear", "params": {"c": list(np.atleast_1d(c))}}


def const_scalar(c):
    return {"family": "constant", "params": {"c": c}}


def scalar_saddle_spec(**over) -> LQSpec:
    """Validated scalar game used across the saddle tests (delta = 1)."""
    kw = dict(A1=0.3, B11=1.0, B21=0.5, C1=0.5, F1=0.1, h=0.5, Q=1.0, N11=1.0, N21=-1.0)
    kw.update(over)
    M = kw.pop("M", [1.0])
    return LQSpec(1, 1, 1, 1.0, [1.0], M=M, **kw)


def oracle_spec() -> LQSpec:
    """A = F = 0, Q = 1, M = 1, T = 1: the adjoint is p(t) = 2 - t."""
    return LQSpec(1, 1, 1, 1.0, [1.0], M=[1.0], Q=1.0, B11=1.0, B21=1.0, N11=1.0, N21=-1.0)


@pytest.fixture
def saddle_spec():
    return scalar_saddle_spec()


@pytest.fixture
def saddle_problem(saddle_spec):
    return lift_lq(saddle_spec)


@pytest.fixture(autouse=True)
def _fresh_noise_cache():
    clear_noise_cache()
    yield


# ---------------------------------------------------------------- acceptance lines

_ACCEPTANCE: dict[int, str] = {}


class AcceptanceRecorder:
    def __init__(self):
        self.lines = _ACCEPTANCE

    def __call__(self, number: int, title: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} | {detail}"
        self.lines[number] = line
        print(line)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceRecorder()


def pytest_runtest_makereport(item, call):
    number = getattr(item.function, "criterion", None)
    if number is not None and call.when == "call" and call.excinfo is not None and number not in _ACCEPTANCE:
        _ACCEPTANCE[number] = f"[FAIL] criterion {number}: error before measurement ({call.excinfo.typename})"


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
