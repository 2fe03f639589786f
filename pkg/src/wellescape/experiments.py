"""Reference experiments: forcings, parameter sets and end-to-end pipelines.

These functions glue the numerical modules together the way the command
line driver and the acceptance checks use them.  Every pipeline takes plain
parameters and returns plain results so the same code serves both.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ._validation import ParameterError
from .atlas import (ManifoldSampleSet, immersion_jacobian, immersion_jacobian_samples,
                    sample_manifold)
from .bvp import hyperbolic_trajectory
from .capsize import (ManifoldGraphClassifier, build_dividing_manifold, classification_metrics,
                      classify_by_integration, integrity_measure)
from .dynamics import (QuasiPeriodicForcing, QuasiTerm, TimeGrid, ZeroForcing, eckart_1dof,
                       roll_heave_2dof, sample_ou_path)
from .saddle import (eigenstructure_1dof, eigenstructure_2dof, numeric_eigenstructure,
                     roll_heave_alpha_beta, roll_heave_jacobian)

log = logging.getLogger(__name__)

OU_SEED = 2
OU_FINE_POINTS = 6001


def forcing_1dof():
    """``F(s) = 0.1 cos(0.7 s) - 0.15 cos(2 s)`` on the velocity equation."""
    return QuasiPeriodicForcing([QuasiTerm(0.1, 0.7, 0.0, 1), QuasiTerm(-0.15, 2.0, 0.0, 1)], 2)


def quasi_forcing_2dof():
    """Roll moment ``cos(sqrt(2) t) + 2 cos(4 t)``; no heave force."""
    return QuasiPeriodicForcing([QuasiTerm(1.0, np.sqrt(2.0), 0.0, 3),
                                 QuasiTerm(2.0, 4.0, 0.0, 3)], 4)


def ou_parameters(h=1.0, k=1.0):
    """Decay rate, rotation rate and noise matrix of the filtered white noise."""
    alpha, beta = roll_heave_alpha_beta(h)
    lam = 0.5 * (k + np.sqrt(k * k + beta))  # |strong stable eigenvalue|
    omega = 0.5 * np.sqrt(alpha - k * k)
    B = 0.5 * np.array([[1.0, 1.0], [-1.0, 1.0]])
    return lam, omega, B


def ou_forcing_2dof(seed=OU_SEED, h=1.0, k=1.0, T=15.0, n_fine=OU_FINE_POINTS):
    lam, omega, B = ou_parameters(h, k)
    return sample_ou_path(lam, omega, B, seed, TimeGrid(-T, T, n_fine))


def make_forcing(kind, model="roll-heave-2dof", seed=OU_SEED, h=1.0, k=1.0, T=15.0, terms=None):
    dim = 2 if model == "eckart-1dof" else 4
    if kind == "none":
        return ZeroForcing(dim)
    if kind == "quasi":
        if terms:
            return QuasiPeriodicForcing([QuasiTerm(**t) for t in terms], dim)
        return forcing_1dof() if dim == 2 else quasi_forcing_2dof()
    if kind == "ou":
        if dim != 4:
            raise ParameterError("filtered-noise forcing is defined for the 2DoF model")
        return ou_forcing_2dof(seed, h, k, T)
    raise ParameterError(f"unknown forcing kind {kind!r}")


def eigenstructure_for(h, kx, ky, side):
    if kx == ky:
        return eigenstructure_2dof(h, kx, side)
    return numeric_eigenstructure(roll_heave_jacobian(h, kx, ky, side), n_centre=2)


@dataclass
class Saddle:
    side: int
    sys: object
    eig: object
    X: object
    report: object


def hyperbolic_pair(forcing, h=1.0, kx=1.0, ky=1.0, T=15.0, N=601, eps_c=1e-5, eps_f=1e-6,
                    guess="constant", damping=False, max_iter=50):
    """Hyperbolic trajectories of both roll-heave saddles, keyed by side."""
    grid = TimeGrid(-T, T, N)
    out = {}
    for side in (1, -1):
        sys = roll_heave_2dof(h, kx, ky, side, forcing)
        eig = eigenstructure_for(h, kx, ky, side)
        X, rep = hyperbolic_trajectory(sys, eig, grid, guess, eps_c, eps_f, max_iter,
                                       damping=damping)
        out[side] = Saddle(side, sys, eig, X, rep)
    return out


def hyperbolic_1dof(k, forcing=None, T=10.0, N=401, eps_c=1e-7, eps_f=1e-6, guess="linearised",
                    damping=False, max_iter=50):
    forcing = forcing_1dof() if forcing is None else forcing
    sys = eckart_1dof(k, forcing)
    eig = eigenstructure_1dof(k)
    X, rep = hyperbolic_trajectory(sys, eig, TimeGrid(-T, T, N), guess, eps_c, eps_f, max_iter,
                                   damping=damping)
    return Saddle(0, sys, eig, X, rep)


def stable_samples(pair, bounds=1.5, counts=5, t0=0.0, threads=1, eps_c=1e-5, eps_f=1e-6,
                   max_iter=300, growth=10.0):
    return {side: sample_manifold(s.sys, s.eig, s.X, "stable", side, bounds, counts, (t0,),
                                  eps_c=eps_c, eps_f=eps_f, max_iter=max_iter, growth=growth,
                                  threads=threads)
            for side, s in pair.items()}


def hypercube_states(n=10000, seed=0):
    """Uniform states in ``[-1,1]^2 x [-5,5]^2``."""
    rng = np.random.default_rng(seed)
    return rng.uniform([-1.0, -1.0, -5.0, -5.0], [1.0, 1.0, 5.0, 5.0], (n, 4))


@dataclass
class ClassificationRun:
    states: np.ndarray
    predicted: np.ndarray
    margins: np.ndarray
    extrapolated: np.ndarray
    truth: np.ndarray
    truth_times: np.ndarray
    metrics: dict
    classifier: ManifoldGraphClassifier
    timings: dict = field(default_factory=dict)


def classification_run(pair, samples, n=10000, seed=0, t_max=11.5, escape_y2=10.0,
                       step=0.005, on_conflict="nearest"):
    """Graph classifier against the direct-integration oracle on random states."""
    t_start = time.perf_counter()
    clf = ManifoldGraphClassifier(samples[1], samples[-1], on_conflict=on_conflict).fit()
    X = hypercube_states(n, seed)
    mp, mm, out = clf.margins(X)
    pred = clf.predict(X)
    t_graph = time.perf_counter()
    truth = classify_by_integration(pair[1].sys, X, 0.0, escape_y2, t_max, step)
    t_int = time.perf_counter()
    margin = np.where(pred == 1, mp, np.where(pred == -1, mm,
                                              np.where(np.abs(mp) <= np.abs(mm), mp, mm)))
    metrics = classification_metrics(pred, truth.labels)
    metrics["conflicts"] = int(np.sum((mp > 0) & (mm < 0)))
    metrics["extrapolated_fraction"] = float(out.mean())
    return ClassificationRun(X, pred, margin, out, truth.labels, truth.times, metrics, clf,
                             {"graph": t_graph - t_start, "integration": t_int - t_graph})


def dividing_pair(pair, t_end=11.0, q_step=0.25, threads=1, eps_c=1e-7, eps_f=1e-8, max_iter=100):
    """Dividing manifolds of both saddles on the forward nodes ``0 <= t <= t_end``."""
    out = {}
    for side, s in pair.items():
        times = s.X.times[(s.X.times >= -1e-9) & (s.X.times <= t_end + 1e-9)]
        S = immersion_jacobian_samples(s.sys, s.eig, s.X, times, q_step, side=side, threads=threads,
                                       eps_c=eps_c, eps_f=eps_f, max_iter=max_iter)
        jacs = [immersion_jacobian(S, t, q_step) for t in times]
        out[side] = build_dividing_manifold(s.X, jacs, times, s.eig, side, sys=s.sys)
    return out


def integrity_run(classifier, h=1.0, n_samples=100_000, seed=0):
    return integrity_measure(classifier, h, n_samples, seed)


def accept_all(X):
    return np.zeros(len(X), dtype=int)


def merge_samples(sets):
    out = sets[0]
    for s in sets[1:]:
        out = out.merge(s)
    return out


__all__ = ["forcing_1dof", "quasi_forcing_2dof", "ou_parameters", "ou_forcing_2dof", "make_forcing",
           "hyperbolic_pair", "hyperbolic_1dof", "stable_samples", "hypercube_states",
           "classification_run", "dividing_pair", "integrity_run", "accept_all", "Saddle",
           "ManifoldSampleSet", "merge_samples", "OU_SEED"]
