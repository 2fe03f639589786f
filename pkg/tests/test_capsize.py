import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from wellescape import experiments as ex
from wellescape.atlas import sample_manifold
from wellescape.capsize import (CAPSIZE_MINUS, CAPSIZE_PLUS, SAFE, DividingManifold,
                                DividingManifoldError, HorizonExceeded, IntegrationClassifier,
                                InconsistentGraphsError, ManifoldGraphClassifier,
                                build_dividing_manifold, classification_metrics,
                                classify_by_integration, classify_state, integrity_measure,
                                label_from_margins, spanning_set, time_to_capsize,
                                transition_time_1dof, well_volume)
from wellescape.dynamics import ZeroForcing, hamiltonian_2dof, roll_heave_2dof


@pytest.fixture(scope="module")
def quasi_classifier(quasi_samples):
    return ManifoldGraphClassifier(quasi_samples[1], quasi_samples[-1], on_conflict="nearest").fit()


@pytest.fixture(scope="module")
def full_dividing(quasi_pair):
    return ex.dividing_pair(quasi_pair, t_end=11.0, threads=4)


def _outward_v4(saddle):
    v4 = saddle.eig.unstable_basis[:, 0]
    return v4 if v4[1] * saddle.side > 0 else -v4


def test_tie_rule_and_conflicts():
    labels, both = label_from_margins(np.array([5e-13, 0.2, -0.1, 0.0]),
                                      np.array([0.3, 0.4, -0.2, -5e-13]))
    assert labels.tolist() == [SAFE, CAPSIZE_PLUS, CAPSIZE_MINUS, SAFE]
    assert not both.any()
    with pytest.raises(InconsistentGraphsError):
        label_from_margins(np.array([0.1]), np.array([-0.3]))
    labels, both = label_from_margins(np.array([0.1, 0.5]), np.array([-0.3, -0.2]),
                                      on_conflict="nearest")
    assert labels.tolist() == [CAPSIZE_MINUS, CAPSIZE_PLUS] and both.all()


def test_sampled_hyperbolic_point_is_a_tie(quasi_classifier, quasi_samples):
    pt = quasi_samples[1].lookup([0, 0, 0], 0.0)
    r = classify_state(pt, 0.0, quasi_classifier.graph_plus_, quasi_classifier.graph_minus_)
    assert r.label == "safe" and abs(r.margin) < 1e-12 and r.notes["tie"]
    assert r.crossing_time is None


def test_origin_is_safe(quasi_classifier, quasi_pair):
    assert quasi_classifier.predict(np.zeros((1, 4)))[0] == SAFE
    res = classify_by_integration(quasi_pair[1].sys, np.zeros(4))
    assert res.labels[0] == SAFE
    assert res.report(np.zeros((1, 4)), 0).crossing_time is None


def test_integration_oracle_on_reference_states():
    sys = roll_heave_2dof(1.0, 1.0, 1.0, 1, ZeroForcing(4))
    res = classify_by_integration(sys, np.array([[1.0, 1.5, 0.0, 2.0], [1.0, -1.5, 0.0, -2.0],
                                                 [0.1, 0.1, 0.0, 0.0]]))
    assert res.labels.tolist() == [CAPSIZE_PLUS, CAPSIZE_MINUS, SAFE]
    # the refined crossing lands on the threshold
    t = res.times[0]
    sol = solve_ivp(lambda tt, z: sys.f(z, tt), (0, t), [1.0, 1.5, 0.0, 2.0], rtol=1e-11,
                    atol=1e-12)
    assert abs(sol.y[1, -1] ** 2 - 10.0) < 1e-4
    with pytest.raises(Exception):
        classify_by_integration(sys, np.zeros(4), t_max=-1.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(-0.8, 0.8), st.floats(-1.2, 1.2))
def test_deep_well_states_stay_safe_without_forcing(x, y, vx, vy):
    if hamiltonian_2dof(1.0, x, y, vx, vy) >= 0.2 or abs(y) >= 0.9:
        return
    sys = roll_heave_2dof(1.0, 1.0, 1.0, 1, ZeroForcing(4))
    assert classify_by_integration(sys, [x, y, vx, vy], t_max=5.0, step=0.01).labels[0] == SAFE


def test_outward_ray_is_capsize_without_flicker(quasi_classifier, quasi_pair):
    s = quasi_pair[1]
    ray = s.X.at(0.0) + np.linspace(0.01, 0.5, 25)[:, None] * _outward_v4(s)
    assert np.all(quasi_classifier.predict(ray) == CAPSIZE_PLUS)


def test_labels_swap_under_reflection(unforced_samples, rng):
    clf = ManifoldGraphClassifier(unforced_samples[1], unforced_samples[-1],
                                  on_conflict="nearest").fit()
    X = ex.hypercube_states(500, 3)
    assert np.array_equal(clf.predict(X * [1, -1, 1, -1]), -clf.predict(X))


def test_estimator_interfaces(quasi_classifier, quasi_pair):
    X = ex.hypercube_states(50, 1)
    d = quasi_classifier.decision_function(X)
    pred = quasi_classifier.predict(X)
    assert np.all((d > 1e-12) == (pred != SAFE))
    oracle = IntegrationClassifier(quasi_pair[1].sys, t_max=2.0).fit()
    assert set(np.unique(oracle.predict(X))) <= {-1, 0, 1}
    g = ManifoldGraphClassifier.from_graphs(quasi_classifier.graph_plus_,
                                            quasi_classifier.graph_minus_, on_conflict="nearest")
    assert np.array_equal(g.predict(X), pred)


def test_classification_metrics():
    pred = np.array([1, 1, -1, 0, 0, 0, -1, 1])
    truth = np.array([1, 0, 1, 0, 0, -1, -1, 1])
    m = classification_metrics(pred, truth)
    assert m["confusion"] == {"tp": 4, "fp": 1, "fn": 1, "tn": 2}
    assert m["accuracy"] == pytest.approx(6 / 8)
    assert m["sensitivity"] == pytest.approx(4 / 5)
    assert m["specificity"] == pytest.approx(2 / 3)
    assert m["side_agreement"] == pytest.approx(3 / 4)


def test_dividing_manifold_passes_through_the_hyperbolic_path(quasi_dividing, quasi_pair):
    for side, d in quasi_dividing.items():
        X = quasi_pair[side].X
        assert d.window == (0.0, pytest.approx(3.0))
        assert np.max(np.abs([d(X.at(t), t) for t in d.times])) < 1e-12
        assert np.allclose(np.linalg.norm(d.normals, axis=1), 1.0)
        assert d(X.at(0.0) + 0.1 * _outward_v4(quasi_pair[side]), 0.0) > 0


def test_dividing_manifold_is_tangent_along_the_centre_directions(quasi_dividing, quasi_pair):
    # the centre directions span the surface, so the error is quadratic; the
    # strong stable direction is tilted halfway towards the unstable one and
    # its error is first order
    s, d = quasi_pair[1], quasi_dividing[1]
    err = []
    for eps in (0.1, 0.05, 0.025):
        Q = eps * np.array([[1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0], [1, 1, 0]])
        T = sample_manifold(s.sys, s.eig, s.X, "stable", 1, q_points=Q, eps_c=1e-10, eps_f=1e-10)
        err.append(np.max(np.abs(d(T.points, 0.0))))
    assert err[0] < 2e-3
    assert err[0] / err[1] > 3.0 and err[1] / err[2] > 3.0


def test_dividing_manifold_json_and_horizon(quasi_dividing):
    d = quasi_dividing[1]
    e = DividingManifold.from_json(d.to_json())
    x = np.ones(4)
    assert e(x, 1.234) == d(x, 1.234)
    with pytest.raises(HorizonExceeded):
        d(x, 5.0)


def test_rank_deficient_spanning_set_is_rejected(quasi_pair):
    s = quasi_pair[1]
    v4 = s.eig.unstable_basis[:, 0]
    J = np.column_stack([v4, v4, v4])
    with pytest.raises(DividingManifoldError):
        build_dividing_manifold(s.X, [J], [0.0], s.eig, 1)
    assert spanning_set(np.eye(4)[:, :3], v4).shape == (4, 3)


def test_time_to_capsize_basic_cases(quasi_dividing, quasi_pair):
    s = quasi_pair[1]
    D = [quasi_dividing[1], quasi_dividing[-1]]
    out = time_to_capsize(s.sys, [s.X.at(0.5) + 0.2 * _outward_v4(s), np.zeros(4)], 0.5, D)
    assert (out[0].status, out[0].side, out[0].time) == ("capsized", 1, 0.5)
    assert out[1].status == "none"
    assert [r.status for r in time_to_capsize(s.sys, [np.zeros(4)], 0.0, D, t_end=6.0)] == ["horizon"]


def test_capsize_time_decreases_along_the_unstable_direction(quasi_dividing, quasi_pair):
    s = quasi_pair[1]
    T = sample_manifold(s.sys, s.eig, s.X, "stable", 1, q_points=[[0, 0, 0.5]],
                        eps_c=1e-10, eps_f=1e-10)
    P = T.points[0]
    assert quasi_dividing[1](P, 0.0) < 0
    ray = P + np.array([0.01, 0.02, 0.04, 0.08, 0.16])[:, None] * _outward_v4(s)
    res = time_to_capsize(s.sys, ray, 0.0, [quasi_dividing[1], quasi_dividing[-1]])
    assert all(r.status == "capsized" and r.side == 1 for r in res)
    assert np.all(np.diff([r.time for r in res]) < 0)


@pytest.mark.slow
def test_capsizing_states_cross_the_dividing_manifold(quasi_pair, quasi_classifier, full_dividing):
    X = ex.hypercube_states(300, 5)
    both = (quasi_classifier.predict(X) != 0) & (classify_by_integration(quasi_pair[1].sys, X).labels != 0)
    res = time_to_capsize(quasi_pair[1].sys, X[both], 0.0, [full_dividing[1], full_dividing[-1]])
    assert both.sum() > 100
    assert all(r.status == "capsized" and 0.0 <= r.time <= 11.0 for r in res)


def test_transition_times_match_event_detection(saddle_k1):
    s = saddle_k1
    Y = np.random.default_rng(4).uniform([-1.5, -3.0], [1.5, 3.0], (10, 2))
    times, dirs = transition_time_1dof(s.sys, s.X, Y, 0.0, 8.0)
    spline = CubicSpline(s.X.times, s.X.states[:, 0])
    crossed = 0
    for y, t, d in zip(Y, times, dirs):
        ev = lambda tt, z: z[0] - spline(tt)
        ev.terminal = True
        sol = solve_ivp(lambda tt, z: s.sys.f(z, tt), (0, 8), y, events=ev, rtol=1e-11, atol=1e-12)
        if len(sol.t_events[0]):
            crossed += 1
            assert abs(t - sol.t_events[0][0]) < 1e-5
            assert d == (1 if y[0] < spline(0.0) else -1)
        else:
            assert t == -1.0 and d == 0
    assert crossed >= 3
    with pytest.raises(HorizonExceeded):
        transition_time_1dof(s.sys, s.X, Y, 0.0, 20.0)


def test_well_volume_closed_form_against_monte_carlo():
    res = integrity_measure(ex.accept_all, 1.0, 1_000_000, seed=0)
    assert res.relative == 1.0
    assert well_volume(1.0) == pytest.approx(2.7080, abs=1e-4)
    assert abs(res.volume_mc - res.volume_exact) < 3 * res.volume_mc_stderr
    assert well_volume(4.0) == pytest.approx(2 * well_volume(1.0))


def test_integrity_counts_safe_fraction(rng):
    half = integrity_measure(lambda X: (X[:, 1] > 0).astype(int), 1.0, 20000, seed=1)
    assert half.relative == pytest.approx(0.5, abs=0.01)
    assert half.absolute == pytest.approx(0.5 * well_volume(1.0), rel=0.02)
    again = integrity_measure(lambda X: (X[:, 1] > 0).astype(int), 1.0, 20000, seed=1)
    assert again == half
