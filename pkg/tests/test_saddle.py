import dataclasses

import numpy as np
import pytest

from mfsaddle.adjoint import AdjointSolution, solve_adjoint_lq
from mfsaddle.cost import cost_strong
from mfsaddle.model import ControlProcess, LQSpec, lift_lq
from mfsaddle.saddle import (
    PerturbationConfig,
    convexity_probe,
    inequality_holds,
    lq_saddle_controls,
    random_direction,
    stationarity_residual,
    verify_saddle,
)
from mfsaddle.simulate import GridConfig

from conftest import const_vec, make_problem, scalar_saddle_spec

ZERO = (ControlProcess.zero(1, 1), ControlProcess.zero(2, 1))


def _constant_adjoint(value, K=10, T=1.0):
    t = np.linspace(0.0, T, K + 1)
    p = np.full((K + 1, 1), float(value))
    return AdjointSolution(t, p, np.zeros_like(p), np.zeros_like(p), True)


# ---------------------------------------------------------------- synthesis


def test_zero_adjoint_gives_zero_controls():
    u1, u2 = lq_saddle_controls(scalar_saddle_spec(), _constant_adjoint(0.0))
    assert np.all(u1.values == 0) and np.all(u2.values == 0)


def test_player_one_worked_value():
    spec = LQSpec(1, 1, 1, 1.0, [0.0], B11=1.0, N11=1.0, N21=-1.0)
    u1, _ = lq_saddle_controls(spec, _constant_adjoint(2.0))
    np.testing.assert_array_equal(u1.values, -1.0)


def test_player_two_worked_value():
    spec = LQSpec(1, 1, 1, 1.0, [0.0], B21=1.0, N11=1.0, N21=-1.0)
    _, u2 = lq_saddle_controls(spec, _constant_adjoint(2.0))
    np.testing.assert_array_equal(u2.values, 1.0)


def test_observation_and_mean_field_terms_in_synthesis():
    # 2 (N11 + N12) u1 = -(B11 + B12 - h (G11 + G12)) p = -(1 + 0.5 - 0.5 * (0.4 + 0.6)) 2 = -2
    spec = LQSpec(1, 1, 1, 1.0, [0.0], B11=1.0, B12=0.5, G11=0.4, G12=0.6, h=0.5, N11=0.6, N12=0.4, N21=-1.0)
    u1, _ = lq_saddle_controls(spec, _constant_adjoint(2.0))
    np.testing.assert_allclose(u1.values, -1.0, rtol=1e-15)


# ---------------------------------------------------------------- stationarity


def test_synthesized_controls_are_stationary(saddle_spec, saddle_problem):
    grid = GridConfig(100, 2000)
    adj = solve_adjoint_lq(saddle_spec, grid)
    cand = lq_saddle_controls(saddle_spec, adj)
    profile = stationarity_residual(saddle_problem, cand, adj, grid)
    assert profile.max < 1e-6


def test_shifted_control_residual_is_twice_the_shift(saddle_spec, saddle_problem):
    grid = GridConfig(100, 2000)
    adj = solve_adjoint_lq(saddle_spec, grid)
    u1, u2 = lq_saddle_controls(saddle_spec, adj)
    profile = stationarity_residual(saddle_problem, (u1.shifted(0.1), u2), adj, grid)
    np.testing.assert_allclose(profile.residual1, 0.2, atol=1e-8)
    assert profile.max2 < 1e-6


def test_zero_problem_has_zero_residual():
    problem = lift_lq(LQSpec(1, 1, 1, 1.0, [0.0], N11=1.0, N21=-1.0))
    grid = GridConfig(20, 100)
    adj = solve_adjoint_lq(problem.lq, grid)
    profile = stationarity_residual(problem, ZERO, adj, grid)
    assert profile.max == 0.0


def test_box_constraint_uses_projected_residual():
    # minimizing player pinned at the lower bound while the gradient pushes down
    spec = LQSpec(1, 1, 1, 1.0, [0.0], M=[1.0], B11=1.0, N11=1.0, N21=-1.0)
    problem = dataclasses.replace(lift_lq(spec), control_bounds=((np.array([-0.2]), np.array([5.0])), None))
    grid = GridConfig(20, 100)
    adj = solve_adjoint_lq(spec, grid)
    pinned = (ControlProcess.constant(1, [-0.2]), ZERO[1])
    assert stationarity_residual(problem, pinned, adj, grid).max1 < 1e-12
    interior = (ControlProcess.constant(1, [0.0]), ZERO[1])
    assert stationarity_residual(problem, interior, adj, grid).max1 == pytest.approx(0.2)


# ---------------------------------------------------------------- inequalities


def test_inequality_direction_per_player():
    assert inequality_holds(1, 0.5, 0.1) and not inequality_holds(1, -0.5, 0.1)
    assert inequality_holds(2, -0.5, 0.1) and not inequality_holds(2, 0.5, 0.1)
    assert inequality_holds(1, -0.15, 0.1) and inequality_holds(2, 0.15, 0.1)


def test_random_direction_is_unit_and_grid_aligned():
    times = np.linspace(0, 1, 101)
    d = random_direction(np.random.default_rng(3), 1, 2, times, 10)
    assert d.l2_norm(1.0) == pytest.approx(1.0)
    assert np.all(np.isin(d.times, times))


def test_candidate_passes_saddle_checks(saddle_spec, saddle_problem):
    grid = GridConfig(50, 4000)
    cand = lq_saddle_controls(saddle_spec, solve_adjoint_lq(saddle_spec, grid))
    report = verify_saddle(saddle_problem, cand, grid, PerturbationConfig(count=6))
    assert len(report.checks) == 12
    assert report.verdict and not report.violations()
    assert report.to_dict()["verdict"] == "pass"


def test_wrong_candidate_violates_player_one(saddle_spec, saddle_problem):
    grid = GridConfig(50, 4000)
    u1, u2 = lq_saddle_controls(saddle_spec, solve_adjoint_lq(saddle_spec, grid))
    report = verify_saddle(saddle_problem, (u1.shifted(1.0), u2), grid, PerturbationConfig(count=6))
    bad = report.violations()
    assert bad and any(c.player == 1 for c in bad)
    assert report.to_dict()["verdict"] == "fail"


def test_zero_problem_passes_trivially():
    problem = make_problem(g=const_vec(1.0))
    report = verify_saddle(problem, ZERO, GridConfig(20, 200), PerturbationConfig(count=3))
    assert report.verdict
    assert all(c.delta == 0.0 for c in report.checks)


def test_saddle_value_stable_under_grid_refinement(saddle_spec, saddle_problem):
    values = []
    for K in (50, 100):
        grid = GridConfig(K, 10000)
        cand = lq_saddle_controls(saddle_spec, solve_adjoint_lq(saddle_spec, grid))
        values.append(cost_strong(saddle_problem, cand, grid))
    a, b = values
    assert abs(a.value - b.value) <= 2 * np.hypot(a.standard_error, b.standard_error)


# ---------------------------------------------------------------- convexity probe


def test_probe_on_lq_game(saddle_spec, saddle_problem):
    grid = GridConfig(50, 2000)
    cand = lq_saddle_controls(saddle_spec, solve_adjoint_lq(saddle_spec, grid))
    report = convexity_probe(saddle_problem, cand, grid, triples=4)
    kinds = {(c.player, c.kind): c for c in report.checks}
    assert kinds[(1, "midpoint convexity")].passed
    assert kinds[(2, "midpoint concavity")].passed
    assert kinds[(1, "coercivity")].value > 0 > kinds[(2, "anti-coercivity")].value
    assert report.passed


def test_probe_on_cost_free_problem():
    problem = make_problem(g=const_vec(1.0))
    report = convexity_probe(problem, ZERO, GridConfig(20, 200), triples=3)
    assert report.passed
    assert all(c.value == 0.0 for c in report.checks)
