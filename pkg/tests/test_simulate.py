import numpy as np
import pytest

from mfsaddle.model import ControlProcess, lift_lq
from mfsaddle.simulate import (
    GridConfig,
    SimulationError,
    simulate,
    simulate_density,
    simulate_forward,
    standard_normals,
    clear_noise_cache,
)

from conftest import const_scalar, const_vec, make_problem, scalar_saddle_spec

ZERO = (ControlProcess.zero(1, 1), ControlProcess.zero(2, 1))


def test_zero_problem_stays_at_initial_state():
    problem = make_problem(a=[1.0])
    bundle = simulate(problem, ZERO, GridConfig(20, 50))
    assert np.all(bundle.x == 1.0)
    assert np.all(bundle.Z == 1.0)


def test_linear_growth_mean_matches_exponential():
    problem = make_problem(a=[1.0], b={"family": "linear", "params": {"Ax": [[1.0]]}})
    bundle = simulate_forward(problem, ZERO, GridConfig(1000, 10))
    assert bundle.x_mean[-1, 0] == pytest.approx(np.e, rel=0.01)


def test_observation_driven_state_is_y_minus_t():
    problem = make_problem(a=[0.0], gtilde=const_vec(1.0), h=const_scalar(1.0))
    bundle = simulate_forward(problem, ZERO, GridConfig(100, 2000))
    np.testing.assert_allclose(bundle.x[..., 0], -bundle.t[:, None] + bundle.Y, atol=1e-12)
    assert abs(bundle.x_mean[-1, 0] + 1.0) < 3 * bundle.x_se[-1, 0]


def test_zero_observation_drift_gives_unit_density():
    problem = make_problem(a=[0.3], g=const_vec(1.0))
    bundle = simulate(problem, ZERO, GridConfig(50, 100))
    assert np.all(bundle.Z == 1.0)


def test_constant_observation_drift_closed_form_density():
    c = 0.8
    problem = make_problem(h=const_scalar(c))
    bundle = simulate(problem, ZERO, GridConfig(200, 10000))
    expected = np.exp(c * bundle.Y[-1] - 0.5 * c * c * 1.0)
    np.testing.assert_allclose(bundle.Z[-1], expected, rtol=1e-10)
    assert abs(bundle.Z_mean[-1] - 1.0) < 3 * bundle.Z_se[-1]


def test_density_strictly_positive():
    problem = make_problem(h={"family": "sin", "params": {"w": [1.0], "scale": 2.0}}, g=const_vec(1.0))
    bundle = simulate(problem, ZERO, GridConfig(100, 500))
    assert bundle.Z.min() > 0


def test_density_martingale_for_bounded_drift():
    problem = make_problem(
        a=[0.2],
        g=const_vec(0.5),
        h={"family": "sin", "params": {"w": [1.0], "scale": 1.0}},
    )
    bundle = simulate(problem, ZERO, GridConfig(100, 10000, seed=3))
    assert np.all(np.abs(bundle.Z_mean - 1.0) <= 4 * bundle.Z_se + 1e-15)


def test_strong_order_one_half():
    # dx = 0.5 x dt + x dW has x(T) = a exp(0 * T + W(T)); refine dt by 4
    problem = make_problem(
        a=[1.0],
        b={"family": "linear", "params": {"Ax": [[0.5]]}},
        g={"family": "linear", "params": {"Ax": [[1.0]]}},
    )
    errors = []
    for K in (16, 64, 256):
        bundle = simulate_forward(problem, ZERO, GridConfig(K, 4000, seed=9))
        exact = np.exp(bundle.dW.sum(axis=0))
        errors.append(np.sqrt(np.mean((bundle.x[-1, :, 0] - exact) ** 2)))
    for coarse, fine in zip(errors, errors[1:]):
        assert 0.5 * 0.7 <= fine / coarse <= 0.5 * 1.3


def test_standard_error_scales_with_particle_count():
    problem = make_problem(a=[1.0], g=const_vec(1.0), b={"family": "linear", "params": {"Ay": [[-0.5]]}})
    se = [simulate_forward(problem, ZERO, GridConfig(50, N, seed=5)).x_se[-1, 0] for N in (4000, 8000)]
    assert se[0] / se[1] == pytest.approx(np.sqrt(2), rel=0.2)


def test_mean_field_uses_ensemble_mean():
    # dx = -(x - E x) dt keeps every particle at a when a is shared
    problem = make_problem(a=[2.0], b={"family": "linear", "params": {"Ax": [[-1.0]], "Ay": [[1.0]]}})
    bundle = simulate_forward(problem, ZERO, GridConfig(20, 10))
    assert np.all(bundle.x == 2.0)


def test_bundles_bit_identical_across_thread_counts():
    problem = lift_lq(scalar_saddle_spec())
    grid = GridConfig(40, 3001, seed=17)
    a = simulate(problem, ZERO, grid, threads=1)
    clear_noise_cache()
    b = simulate(problem, ZERO, grid, threads=4)
    for field in ("x", "Y", "Z", "dW", "dY"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))


def test_noise_is_a_function_of_particle_id():
    small = standard_normals(GridConfig(5, 10, seed=1))[0]
    clear_noise_cache()
    big = standard_normals(GridConfig(5, 20, seed=1))[0]
    np.testing.assert_array_equal(small, big[:, :10])


def test_feedback_control_sees_own_observation():
    problem = make_problem(b={"family": "linear", "params": {"Au1": [[1.0]]}}, gtilde=const_vec(1.0))
    fb = ControlProcess(1, np.zeros(1), np.array([[[0.0], [1.0], [0.0]]]), "feedback")
    bundle = simulate_forward(problem, (fb, ZERO[1]), GridConfig(10, 30))
    np.testing.assert_allclose(bundle.u1[:, :, 0], bundle.Y[:-1], atol=0)


def test_blow_up_raises_with_location():
    fast = make_problem(a=[1.0], b={"family": "linear", "params": {"Ax": [[1e6]]}})
    with pytest.raises(SimulationError) as err:
        simulate_forward(fast, ZERO, GridConfig(200, 3))
    assert err.value.step is not None and err.value.particle == 0


def test_density_overflow_aborts():
    problem = make_problem(h=const_scalar(60.0))
    bundle = simulate_forward(problem, ZERO, GridConfig(10, 50))
    with pytest.raises(SimulationError, match="700"):
        simulate_density(problem, bundle)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridConfig(0, 10)
    with pytest.raises(ValueError):
        GridConfig(10, 1)
