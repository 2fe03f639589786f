import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import solve_continuous_lyapunov

from wellescape._validation import ParameterError
from wellescape.dynamics import (FlowBlowUpError, QuasiPeriodicForcing, QuasiTerm, SampledForcing,
                                 TimeGrid, ZeroForcing, eckart_1dof, flow_map, hamiltonian_2dof,
                                 integrate, ou_drift, ou_stationary_autocovariance, ou_transition,
                                 rk4_step, roll_heave_2dof, sample_ou_path)
from wellescape.experiments import ou_parameters


def test_rk4_fourth_order_on_exponential():
    f = lambda x, t: x
    errs = []
    for n in (10, 20, 40):
        x, h = 1.0, 1.0 / n
        for i in range(n):
            x = rk4_step(f, x, i * h, h)
        errs.append(abs(x - np.e))
    assert 14.0 < errs[0] / errs[1] < 18.0
    assert 14.0 < errs[1] / errs[2] < 18.0


def test_time_grid_nodes_and_subgrid():
    g = TimeGrid(-15.0, 15.0, 601)
    assert g.dt == pytest.approx(0.05)
    assert g.index_of(0.0) == 300
    sub = g.sub(100, 200)
    assert sub.n == 101 and sub.t_minus == pytest.approx(g.times[100])
    with pytest.raises(ParameterError):
        g.index_of(0.01)
    with pytest.raises(ParameterError):
        TimeGrid(1.0, 0.0, 10)


def test_saddles_are_equilibria():
    assert np.allclose(eckart_1dof(1.0).f0(np.zeros(2)), 0.0)
    for side in (1, -1):
        sys = roll_heave_2dof(1.0, 1.0, 1.0, side)
        assert np.allclose(sys.saddle, [1.0, side, 0.0, 0.0])
        assert np.allclose(sys.f0(sys.saddle), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(0.2, 4.0))
def test_roll_heave_jacobian_matches_finite_differences(state, h):
    sys = roll_heave_2dof(h, 0.7, 0.3, 1)
    s = np.array(state)
    J = sys.jacobian_at(s)
    eps = 1e-6
    num = np.column_stack([(sys.f0(s + eps * e) - sys.f0(s - eps * e)) / (2 * eps)
                           for e in np.eye(4)])
    assert np.allclose(J, num, atol=1e-6)


def test_eckart_jacobian_matches_finite_differences():
    sys = eckart_1dof(2.0)
    for q in (-1.3, 0.0, 0.4):
        s = np.array([q, 0.2])
        num = np.column_stack([(sys.f0(s + 1e-6 * e) - sys.f0(s - 1e-6 * e)) / 2e-6
                               for e in np.eye(2)])
        assert np.allclose(sys.jacobian_at(s), num, atol=1e-7)


def test_quasi_forcing_values_and_derivative():
    f = QuasiPeriodicForcing([QuasiTerm(1.0, np.sqrt(2.0), 0.0, 3), QuasiTerm(2.0, 4.0, 0.5, 3)], 4)
    t = np.linspace(-3, 3, 7)
    expect = np.cos(np.sqrt(2) * t) + 2 * np.cos(4 * t + 0.5)
    assert np.allclose(f(t)[:, 3], expect)
    assert np.allclose(f(t)[:, :3], 0.0)
    fd = (f(t + 1e-6) - f(t - 1e-6)) / 2e-6
    assert np.allclose(f.derivative(t), fd, atol=1e-6)
    g = QuasiPeriodicForcing.from_json(f.to_json())
    assert np.allclose(g(t), f(t))
    with pytest.raises(ParameterError):
        QuasiPeriodicForcing([QuasiTerm(1.0, 1.0, 0.0, 4)], 4)


def test_sampled_forcing_interpolates_and_handles_outside():
    t = np.linspace(0.0, 1.0, 11)
    vals = np.column_stack([t, t ** 2])
    f = SampledForcing(t, vals)
    assert np.allclose(f(0.05), [0.05, 0.5 * (0.0 + 0.01)])
    assert np.allclose(f(2.0), 0.0)
    g = SampledForcing(t, vals, outside="raise")
    with pytest.raises(ParameterError):
        g(-0.5)
    with pytest.raises(ParameterError):
        SampledForcing(np.array([0.0, 0.1, 0.3]), np.zeros((3, 2)))


def test_flow_map_batch_and_time_reversal():
    sys = roll_heave_2dof(1.0, 1.0, 1.0, 1, QuasiPeriodicForcing([QuasiTerm(1.0, 1.3, 0.0, 3)], 4))
    X = np.array([[0.1, 0.2, 0.0, 0.0], [0.3, -0.1, 0.2, 0.1]])
    batch = flow_map(sys, X, np.array([0.0, 0.5]), 0.1)
    single = np.array([flow_map(sys, X[0], 0.0, 0.1), flow_map(sys, X[1], 0.5, 0.1)])
    assert np.allclose(batch, single, atol=1e-14)
    back = flow_map(sys, single[0], 0.1, -0.1)
    assert np.allclose(back, X[0], atol=1e-10)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_integrate_blow_up_is_reported():
    sys = eckart_1dof(0.0, QuasiPeriodicForcing([QuasiTerm(0.0, 1.0, 0.0, 1)], 2))
    t, x = integrate(sys, [0.0, 0.0], 0.0, 1.0, step=0.1)
    assert len(t) == 11 and np.allclose(x, 0.0)
    unstable = roll_heave_2dof(1.0, 0.0, 0.0, 1)
    with pytest.raises(FlowBlowUpError):
        integrate(unstable, [0.0, 5.0, 0.0, 50.0], 0.0, 20.0, step=0.05)


def test_saddle_energy_is_one_quarter():
    for side in (1, -1):
        assert hamiltonian_2dof(1.0, 1.0, side, 0.0, 0.0) == pytest.approx(0.25)
    assert hamiltonian_2dof(1.0, 0.0, 0.0, 0.0, 0.0) == 0.0


def _well_states(rng, n, h=1.0):
    out = []
    while len(out) < n:
        s = rng.uniform([-1, -1, -np.sqrt(h), -np.sqrt(2)], [1, 1, np.sqrt(h), np.sqrt(2)])
        if hamiltonian_2dof(h, *s) < 0.25:
            out.append(s)
    return np.array(out)


def test_energy_decreases_for_unforced_damped_model(rng):
    h, kx, ky = 1.0, 1.0, 1.0
    sys = roll_heave_2dof(h, kx, ky, 1)
    X = _well_states(rng, 100, h)
    _, path = integrate(sys, X, 0.0, 10.0, step=0.005)
    H = hamiltonian_2dof(h, *np.moveaxis(path, -1, 0))
    assert np.all(np.diff(H, axis=0) <= 1e-12)
    # the decrease rate is kx vx^2/(2h) + ky vy^2 exactly
    s = X
    grad = np.column_stack([0.5 * (s[:, 0] - s[:, 1] ** 2),
                            s[:, 1] - s[:, 0] * s[:, 1],
                            s[:, 2] / (2 * h), s[:, 3]])
    rate = np.sum(grad * sys.f0(s), axis=1)
    assert np.allclose(rate, -(kx * s[:, 2] ** 2 / (2 * h) + ky * s[:, 3] ** 2), atol=1e-12)


def test_ou_parameters_for_reference_case():
    lam, omega, B = ou_parameters(1.0, 1.0)
    assert lam == pytest.approx((1 + np.sqrt(5)) / 2)
    assert omega == pytest.approx(np.sqrt(7) / 2)
    assert np.allclose(B, [[0.5, 0.5], [-0.5, 0.5]])


def test_ou_transition_preserves_stationary_covariance():
    lam, omega, B = ou_parameters(1.0, 1.0)
    D = ou_drift(lam, omega)
    S = solve_continuous_lyapunov(D, -B @ B.T)
    Phi, Q = ou_transition(D, B, 0.05)
    assert np.allclose(Phi @ S @ Phi.T + Q, S, atol=1e-14)
    assert np.allclose(ou_stationary_autocovariance(lam, omega, B, 0.0), S)


def test_ou_path_is_seeded_and_has_stationary_variance():
    lam, omega, B = ou_parameters(1.0, 1.0)
    grid = TimeGrid(0.0, 4000.0, 80001)
    a = sample_ou_path(lam, omega, B, 7, grid)
    b = sample_ou_path(lam, omega, B, 7, grid)
    assert np.array_equal(a.values, b.values)
    assert np.all(a.values[:, :2] == 0.0)
    S = ou_stationary_autocovariance(lam, omega, B, 0.0)
    eta = a.values[2000:, 2:]
    emp = eta.T @ eta / len(eta)
    assert np.allclose(emp, S, atol=0.03)
    zero = sample_ou_path(lam, omega, np.zeros((2, 2)), 7, TimeGrid(0.0, 1.0, 11))
    assert np.allclose(zero.values, 0.0)


def test_zero_forcing_shape():
    f = ZeroForcing(3)
    assert f(np.zeros((2, 5))).shape == (2, 5, 3)
