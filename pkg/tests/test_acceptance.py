"""Acceptance criteria at their stated tolerances.

Each test gathers its sub-checks, prints one PASS/FAIL line and asserts
every sub-check.  Nothing here is loosened to make a check pass.
"""

import numpy as np
import pytest

from wellescape import experiments as ex
from wellescape.bvp import BvpProblem, NewtonMatrix, hyperbolic_trajectory
from wellescape.capsize import IntegrationClassifier, ManifoldGraphClassifier, integrity_measure
from wellescape.dynamics import (TimeGrid, ZeroForcing, eckart_1dof, hamiltonian_2dof, integrate,
                                 roll_heave_2dof)
from wellescape.saddle import (eigenstructure_1dof, eigenstructure_2dof, roll_heave_alpha_beta, roll_heave_eigenvalues,
                               roll_heave_jacobian)
from wellescape.validation import (SEED_TIMES, advect_manifold_1dof, bvp_manifold_curve,
                                   correct_orbit, differential_correction, energy,
                                   globalize_manifolds, shared_hausdorff)

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.filterwarnings("ignore")


def _report(number, title, checks):
    """``checks`` maps a description to ``(passed, detail)``."""
    ok = all(p for p, _ in checks.values())
    parts = "; ".join(f"{'ok' if p else 'FAIL'} {name} [{detail}]"
                      for name, (p, detail) in checks.items())
    line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {parts}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    failed = [name for name, (p, _) in checks.items() if not p]
    assert not failed, f"failed sub-checks: {failed}"


@pytest.fixture(scope="module")
def ou_pair():
    return ex.hyperbolic_pair(ex.ou_forcing_2dof(ex.OU_SEED))


def test_criterion_1_newton_iterations(quasi_pair, ou_pair):
    checks = {}
    for k in (1.0, 3.0):
        n = ex.hyperbolic_1dof(k).report.iterations
        checks[f"1DoF k={k:g} == 7"] = (n == 7, f"{n} iterations")
    q = [quasi_pair[s].report.iterations for s in (1, -1)]
    checks["2DoF quasi == 8/8"] = (q == [8, 8], f"{q[0]}/{q[1]}")
    o = [ou_pair[s].report.iterations for s in (1, -1)]
    checks[f"2DoF filtered noise (seed {ex.OU_SEED}) in 12 +- 3"] = (
        all(9 <= n <= 15 for n in o), f"{o[0]}/{o[1]}")
    _report(1, "Newton iteration counts", checks)


def _classification(pair, samples):
    run = ex.classification_run(pair, samples)
    return run.metrics


@pytest.mark.slow
def test_criterion_2_classification(quasi_pair, quasi_samples, ou_pair):
    mq = _classification(quasi_pair, quasi_samples)
    mo = _classification(ou_pair, ex.stable_samples(ou_pair, threads=4))
    checks = {
        "quasi accuracy 96.9 +- 1.5 pp": (abs(mq["accuracy"] - 0.969) <= 0.015,
                                          f"{100 * mq['accuracy']:.2f}%"),
        "filtered-noise accuracy >= 90%": (mo["accuracy"] >= 0.90, f"{100 * mo['accuracy']:.2f}%"),
    }
    for name, m in (("quasi", mq), ("filtered-noise", mo)):
        checks[f"{name} sensitivity >= 0.90"] = (m["sensitivity"] >= 0.90, f"{m['sensitivity']:.4f}")
        checks[f"{name} specificity >= 0.90"] = (m["specificity"] >= 0.90, f"{m['specificity']:.4f}")
    _report(2, "classification against direct integration", checks)


def _graph_integrity(pair, n=100_000, seed=0):
    samples = ex.stable_samples(pair, threads=4)
    clf = ManifoldGraphClassifier(samples[1], samples[-1], on_conflict="nearest").fit()
    return integrity_measure(clf, 1.0, n, seed)


@pytest.mark.slow
def test_criterion_3_integrity(unforced_pair, quasi_pair):
    checks = {}
    zero = _graph_integrity(unforced_pair)
    checks["zero forcing 1.00 within MC error"] = (
        abs(zero.relative - 1.0) <= max(3 * zero.stderr, 1.0 / zero.n_well),
        f"{zero.relative:.4f} +- {zero.stderr:.4f}")
    quasi = _graph_integrity(quasi_pair)
    checks["quasi 0.42 +- 0.05"] = (abs(quasi.relative - 0.42) <= 0.05, f"{quasi.relative:.4f}")
    ou = []
    for seed in range(5):
        pair = ex.hyperbolic_pair(ex.ou_forcing_2dof(seed))
        ou.append(_graph_integrity(pair, seed=seed).relative)
    checks["filtered noise in [0.30, 0.50] over seeds 0-4"] = (
        all(0.30 <= v <= 0.50 for v in ou), ", ".join(f"{v:.4f}" for v in ou))
    # diagnostic beside the gated number: direct integration on the same region
    direct = integrity_measure(IntegrationClassifier(quasi_pair[1].sys).fit(), 1.0, 20_000, 0)
    vol = integrity_measure(ex.accept_all, 1.0, 1_000_000, 0)
    checks["MC volume of the well region 3.45 +- 1%"] = (
        abs(vol.volume_mc - 3.45) <= 0.0345,
        f"MC {vol.volume_mc:.4f} +- {vol.volume_mc_stderr:.4f}, closed form {vol.volume_exact:.4f}; "
        f"quasi by direct integration {direct.relative:.4f}")
    _report(3, "integrity measure", checks)


def test_criterion_4_one_dof_manifolds():
    checks = {}
    for k in (1.0, 3.0):
        s = ex.hyperbolic_1dof(k)
        for branch in ("stable", "unstable"):
            curve = advect_manifold_1dof(s.sys, s.eig, s.X, branch, SEED_TIMES[(k, branch)])
            ref = bvp_manifold_curve(s.sys, s.eig, s.X, branch, 0.0, np.linspace(-1, 1, 201))
            d = shared_hausdorff(curve.points, ref)
            checks[f"k={k:g} {branch} Hausdorff < 5e-3"] = (d < 5e-3, f"{d:.2e}")
    sys, eig = eckart_1dof(0.0), eigenstructure_1dof(0.0)
    X, _ = hyperbolic_trajectory(sys, eig, TimeGrid(-10, 10, 401))
    worst = 0.0
    for branch, sign in (("stable", -1), ("unstable", 1)):
        ref = bvp_manifold_curve(sys, eig, X, branch, 0.0, np.linspace(-0.6, 0.6, 25),
                                 eps_c=1e-10, eps_f=1e-10)
        worst = max(worst, np.max(np.abs(ref[:, 1] - sign * np.tanh(ref[:, 0]))))
    checks["unforced limit v = -+tanh x to 1e-4"] = (worst < 1e-4, f"{worst:.2e}")
    _report(4, "1DoF manifold fidelity", checks)


def _inner_gap(make, T_long, T_short, dt):
    a = make(T_long, int(round(2 * T_long / dt)) + 1)
    b = make(T_short, int(round(2 * T_short / dt)) + 1)
    t = np.linspace(-T_short / 2, T_short / 2, 201)
    return max(np.max(np.abs(a[s].X.at(t) - b[s].X.at(t))) for s in a)


@pytest.mark.slow
def test_criterion_5_property_suite():
    checks = {}
    # zero-forcing exactness
    worst = 0.0
    for s in ex.hyperbolic_pair(ZeroForcing(4)).values():
        worst = max(worst, np.max(np.abs(s.X.states - s.sys.saddle)))
    z = ex.hyperbolic_1dof(1.0, forcing=ZeroForcing(2))
    worst = max(worst, np.max(np.abs(z.X.states)))
    checks["zero forcing gives the saddle to 1e-9"] = (worst < 1e-9, f"{worst:.1e}")

    # window insensitivity on the inner half of the shorter window
    quasi = _inner_gap(lambda T, N: ex.hyperbolic_pair(ex.quasi_forcing_2dof(), T=T, N=N),
                       15.0, 12.0, 0.05)
    one = _inner_gap(lambda T, N: {0: ex.hyperbolic_1dof(1.0, T=T, N=N)}, 10.0, 8.0, 0.05)
    checks["window insensitivity 1e-5"] = (max(quasi, one) < 1e-5,
                                           f"2DoF [-15,15] vs [-12,12]: {quasi:.2e}; "
                                           f"1DoF [-10,10] vs [-8,8]: {one:.2e}")

    # Lyapunov decrease for the unforced damped model
    rng = np.random.default_rng(2024)
    states = []
    while len(states) < 100:
        s = rng.uniform([-1, -1, -1, -np.sqrt(2)], [1, 1, 1, np.sqrt(2)])
        if hamiltonian_2dof(1.0, *s) < 0.25 and abs(s[1]) < 1:
            states.append(s)
    _, path = integrate(roll_heave_2dof(1.0, 1.0, 1.0, 1), np.array(states), 0.0, 10.0, step=0.005)
    H = hamiltonian_2dof(1.0, *np.moveaxis(path, -1, 0))
    rise = float(np.max(np.diff(H, axis=0)))
    checks["Lyapunov decrease on 100 well states"] = (rise <= 1e-12, f"max step change {rise:.1e}")

    # closed-form eigenvalues on an (h, k) grid
    worst = 0.0
    for h in (0.25, 0.5, 1.0, 2.0, 4.0):
        alpha, _ = roll_heave_alpha_beta(h)
        for k in np.linspace(0.0, 0.95 * np.sqrt(alpha), 6):
            for side in (1, -1):
                key = lambda z: (round(z.real, 8), z.imag)
                c = np.array(sorted(roll_heave_eigenvalues(h, k), key=key))
                n = np.array(sorted(np.linalg.eigvals(roll_heave_jacobian(h, k, k, side)), key=key))
                worst = max(worst, np.max(np.abs(c - n)))
    checks["closed-form eigenvalues to 1e-10"] = (worst < 1e-10, f"{worst:.1e}")

    # banded against dense solves
    eig = eigenstructure_2dof(1.0, 1.0, 1)
    sys = roll_heave_2dof(1.0, 1.0, 1.0, 1, ex.quasi_forcing_2dof())
    worst = 0.0
    for kind, q in (("hyperbolic", None), ("stable", [0.3, -0.2, 0.1]), ("centre", [0.2, 0.1]),
                    ("unstable", [0.1, 0.2, -0.3])):
        M = NewtonMatrix(BvpProblem(sys, eig, TimeGrid(-3.0, 3.0, 121), kind, q=q, J=60))
        rhs = rng.normal(size=(121, 4))
        zb = M.solve(rhs)
        zd = np.linalg.solve(M.to_dense(), rhs.reshape(-1)).reshape(121, 4)
        worst = max(worst, np.max(np.abs(zb - zd)) / max(1.0, np.abs(zd).max()))
    checks["banded vs dense to 1e-10"] = (worst < 1e-10, f"{worst:.1e}")

    # periodic orbit family of the conservative model
    orbit = differential_correction(1.0, 0.26)
    e_orbit = float(np.max(np.abs(energy(orbit.sample(200)) - 0.26)))
    bundle = max(globalize_manifolds(orbit, 1e-6, b, 50).max_energy_error
                 for b in ("stable", "unstable"))
    checks["energy conservation 1e-8"] = (max(e_orbit, bundle) < 1e-8,
                                          f"orbit {e_orbit:.1e}, manifolds {bundle:.1e}")
    closure = orbit.closure()
    checks["E = 0.26 orbit closure < 1e-8"] = (closure < 1e-8 and abs(orbit.energy - 0.26) < 1e-8,
                                               f"closure {closure:.1e}, period {orbit.period:.5f}")
    small = correct_orbit(1.0, 1e-3).period
    rel = abs(small / (2 * np.pi / np.sqrt(2)) - 1)
    checks["small-amplitude period 2 pi / sqrt 2 within 1%"] = (rel < 0.01, f"{rel:.1e}")
    _report(5, "property suite", checks)
