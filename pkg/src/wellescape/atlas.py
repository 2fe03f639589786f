"""Sampled immersions of stable/centre manifolds and their graph interpolants.

A manifold BVP solve maps a parameter ``q`` and a time ``t0`` to the point
``Y_J`` of the manifold trajectory at ``t0``.  Solving over a lattice of
``q`` values gives a scattered sample of the immersion, which is then
interpolated with multiquadric radial basis functions.
"""

import itertools
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.spatial import Delaunay
from scipy.spatial.distance import cdist, pdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import ParameterError, check_int, check_positive
from .bvp import BvpError, manifold_trajectory
from .dynamics import FlowBlowUpError

log = logging.getLogger(__name__)


class SamplingError(RuntimeError):
    """Too many lattice solves failed to trust the sample set."""


class IllConditionedWarning(UserWarning):
    pass


class ExtrapolationWarning(UserWarning):
    pass


def lattice(bounds, counts, dim):
    """Regular lattice in ``[-bounds, bounds]^dim`` with ``counts`` points per axis."""
    bounds = check_positive(float(bounds), "bounds", strict=False)
    counts = check_int(counts, "counts", minimum=1)
    axis = np.linspace(-bounds, bounds, counts) if counts > 1 else np.zeros(1)
    return np.array(list(itertools.product(axis, repeat=dim)), dtype=float).reshape(-1, dim)


@dataclass
class ManifoldSampleSet:
    """Converged manifold points ``point = iota(q, t0)`` for one saddle side."""

    kind: str
    side: int
    q: np.ndarray
    t0: np.ndarray
    points: np.ndarray
    lattice_spec: dict = field(default_factory=dict)
    n_failed: int = 0
    failures: list = field(default_factory=list)
    iterations: np.ndarray = None

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def q_dim(self):
        return self.q.shape[1]

    @property
    def times(self):
        return np.unique(self.t0)

    def at_time(self, t, tol=1e-9):
        mask = np.abs(self.t0 - t) < tol
        return self.q[mask], self.points[mask]

    def lookup(self, q, t, tol=1e-9):
        """Sampled point for parameter ``q`` at time ``t``, or ``None``."""
        qs, pts = self.at_time(t, tol)
        hit = np.nonzero(np.all(np.abs(qs - np.asarray(q, dtype=float)) < tol, axis=1))[0]
        return pts[hit[0]] if len(hit) else None

    def merge(self, other):
        if (self.kind, self.side) != (other.kind, other.side):
            raise ParameterError("cannot merge sample sets of different kind or side")
        return ManifoldSampleSet(
            self.kind, self.side,
            np.vstack([self.q, other.q]), np.concatenate([self.t0, other.t0]),
            np.vstack([self.points, other.points]), dict(self.lattice_spec),
            self.n_failed + other.n_failed, self.failures + other.failures,
            np.concatenate([self.iterations, other.iterations]))

    def to_csv(self, path):
        m, d = self.q_dim, self.dim
        header = ["side", "kind", "t0"] + [f"q{i + 1}" for i in range(m)] + [f"x{i + 1}" for i in range(d)]
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for q, t, p in zip(self.q, self.t0, self.points):
                row = [str(self.side), self.kind, repr(float(t))]
                row += [repr(float(v)) for v in q] + [repr(float(v)) for v in p]
                fh.write(",".join(row) + "\n")

    def metadata(self):
        return {"kind": self.kind, "side": self.side, "n_samples": len(self),
                "n_failed": self.n_failed, "failures": self.failures,
                "lattice": self.lattice_spec, "times": self.times.tolist()}

    @classmethod
    def from_csv(cls, path, metadata=None):
        raw = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")
        raw = np.atleast_1d(raw)
        names = raw.dtype.names
        qn = [n for n in names if n.startswith("q")]
        xn = [n for n in names if n.startswith("x")]
        meta = metadata or {}
        return cls(str(raw["kind"][0]), int(raw["side"][0]),
                   np.column_stack([raw[n] for n in qn]).astype(float),
                   raw["t0"].astype(float),
                   np.column_stack([raw[n] for n in xn]).astype(float),
                   meta.get("lattice", {}), meta.get("n_failed", 0), meta.get("failures", []),
                   np.zeros(len(raw), dtype=int))


def sample_manifold(sys, eig, X_hyp, kind="stable", side=1, bounds=1.5, counts=5, t0s=(0.0,),
                    q_points=None, eps_c=1e-7, eps_f=1e-6, max_iter=50, substeps=10,
                    growth=10.0, threads=1, max_failure=0.2):
    """Solve the manifold BVP over a ``q`` lattice at each time in ``t0s``.

    Failed solves (divergence, flow blow-up) are excluded and counted.  More
    than ``max_failure`` of the lattice failing raises ``SamplingError``.
    ``q_points`` overrides the regular lattice with explicit parameters.
    """
    if kind == "stable":
        m = eig.n_centre + eig.n_minus
    elif kind == "centre":
        m = eig.n_centre
    elif kind == "unstable":
        m = eig.n_centre + eig.n_plus
    else:
        raise ParameterError("kind must be stable, centre or unstable")
    Q = lattice(bounds, counts, m) if q_points is None else np.atleast_2d(np.asarray(q_points, float))
    if Q.shape[1] != m or len(Q) == 0:
        raise ParameterError(f"q lattice must be nonempty with {m} columns")
    t0s = np.atleast_1d(np.asarray(t0s, dtype=float))
    jobs = [(q, t) for t in t0s for q in Q]

    def solve(job):
        q, t = job
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                traj, rep, J = manifold_trajectory(sys, eig, X_hyp, kind, q, t0=t, eps_c=eps_c,
                                                   eps_f=eps_f, max_iter=max_iter,
                                                   substeps=substeps, growth=growth)
        except (BvpError, FlowBlowUpError, ArithmeticError, np.linalg.LinAlgError) as exc:
            return None, 0, f"{type(exc).__name__}: {exc}"
        return traj.states[J], rep.iterations, None

    threads = check_int(threads, "threads", minimum=1)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(solve, jobs))
    else:
        results = [solve(j) for j in jobs]

    q_ok, t_ok, pts, its, failures = [], [], [], [], []
    for (q, t), (pt, it, err) in zip(jobs, results):
        if err is not None:
            failures.append({"q": q.tolist(), "t0": float(t), "error": err})
            continue
        q_ok.append(q)
        t_ok.append(t)
        pts.append(pt)
        its.append(it)
    if failures:
        log.info("%d of %d manifold solves failed and were excluded", len(failures), len(jobs))
    if len(failures) > max_failure * len(jobs):
        raise SamplingError(f"{len(failures)} of {len(jobs)} solves failed; "
                            f"try a smaller lattice bound than {bounds}")
    spec = {"bounds": float(bounds), "counts": int(counts), "growth": float(growth),
            "eps_c": eps_c, "eps_f": eps_f}
    return ManifoldSampleSet(kind, int(side), np.array(q_ok).reshape(-1, m), np.array(t_ok, float),
                             np.array(pts).reshape(-1, eig.dim), spec, len(failures), failures,
                             np.array(its, dtype=int))


# --------------------------------------------------------------------------
# multiquadric interpolation


def multiquadric(r, c):
    return np.sqrt(r * r + c * c)


class RbfGraph(RegressorMixin, BaseEstimator):
    """Multiquadric RBF interpolant ``sum_j w_j sqrt(|z - z_j|^2 + c^2)``.

    Inputs are standardized per axis before distances are taken.  ``c=None``
    sets the shape parameter to the median pairwise distance of the
    standardized centres.  If the kernel matrix condition number exceeds
    ``cond_limit`` the shape parameter is halved until it does not (the
    multiquadric matrix becomes better conditioned for smaller ``c``).
    """

    def __init__(self, c=None, tail=False, standardize=True, cond_limit=1e12):
        self.c = c
        self.tail = tail
        self.standardize = standardize
        self.cond_limit = cond_limit

    def _scale(self, X):
        return (X - self.mean_) / self.scale_

    def _system(self, Z, c):
        K = multiquadric(cdist(Z, Z), c)
        if not self.tail:
            return K
        n, p = Z.shape
        Pm = np.hstack([np.ones((n, 1)), Z])
        return np.block([[K, Pm], [Pm.T, np.zeros((p + 1, p + 1))]])

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if len(X) < 2:
            raise ParameterError("need at least two centres")
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            spread = X.std(axis=0)
            self.scale_ = np.where(spread > 0, spread, 1.0)
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        Z = self._scale(X)
        if np.linalg.matrix_rank(np.hstack([np.ones((len(Z), 1)), Z])) < min(len(Z), Z.shape[1] + 1):
            warnings.warn("centres do not span the input space", IllConditionedWarning, stacklevel=2)
        c = float(np.median(pdist(Z))) if self.c is None else check_positive(self.c, "c")
        A = self._system(Z, c)
        cond = np.linalg.cond(A)
        while cond > self.cond_limit:
            c *= 0.5
            warnings.warn(f"kernel condition {cond:.3g} > {self.cond_limit:.0e}; refitting with c={c:.4g}",
                          IllConditionedWarning, stacklevel=2)
            if c < 1e-8:
                raise ParameterError("cannot find a well-conditioned shape parameter")
            A = self._system(Z, c)
            cond = np.linalg.cond(A)
        rhs = np.concatenate([y, np.zeros(A.shape[0] - len(y))])
        self.weights_ = lu_solve(lu_factor(A), rhs)
        self.centers_ = Z
        self.c_ = c
        self.condition_ = float(cond)
        self.n_features_in_ = X.shape[1]
        self._hull = None
        return self

    def predict(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X)
        Z = self._scale(X)
        K = multiquadric(cdist(Z, self.centers_), self.c_)
        n = len(self.centers_)
        out = K @ self.weights_[:n]
        if self.tail:
            out += self.weights_[n] + Z @ self.weights_[n + 1:]
        return out

    def outside_hull(self, X):
        """Boolean mask of query points outside the convex hull of the centres."""
        check_is_fitted(self, "weights_")
        if self._hull is None:
            try:
                self._hull = Delaunay(self.centers_)
            except Exception:  # degenerate (flat) centre sets have no hull
                self._hull = False
        Z = self._scale(check_array(X))
        if self._hull is False:
            return np.ones(len(Z), dtype=bool)
        return self._hull.find_simplex(Z) < 0

    def predict_flagged(self, X):
        """Values and the beyond-hull extrapolation flag for each query."""
        return self.predict(X), self.outside_hull(X)

    def to_dict(self):
        check_is_fitted(self, "weights_")
        return {"kernel": "multiquadric", "c": self.c_, "tail": bool(self.tail),
                "centers": self.centers_.tolist(), "weights": self.weights_.tolist(),
                "standardization": {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()},
                "condition": self.condition_}

    @classmethod
    def from_dict(cls, data):
        obj = cls(c=data["c"], tail=data["tail"])
        obj.c_ = float(data["c"])
        obj.centers_ = np.asarray(data["centers"], dtype=float)
        obj.weights_ = np.asarray(data["weights"], dtype=float)
        obj.mean_ = np.asarray(data["standardization"]["mean"], dtype=float)
        obj.scale_ = np.asarray(data["standardization"]["scale"], dtype=float)
        obj.condition_ = data.get("condition", float("nan"))
        obj.n_features_in_ = obj.centers_.shape[1]
        obj._hull = None
        return obj


@dataclass
class ManifoldGraph:
    """Stable manifold written as ``x[axis] = g(t?, x[base])`` for one saddle side."""

    rbf: RbfGraph
    side: int
    axis: int
    base: tuple
    use_time: bool

    def inputs(self, states, t=0.0):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        cols = [states[:, list(self.base)]]
        if self.use_time:
            tt = np.broadcast_to(np.asarray(t, dtype=float), (len(states),))
            cols.insert(0, tt[:, None])
        return np.hstack(cols)

    def __call__(self, states, t=0.0):
        return self.rbf.predict(self.inputs(states, t))

    def evaluate(self, states, t=0.0):
        """Graph values and extrapolation flags."""
        return self.rbf.predict_flagged(self.inputs(states, t))

    def to_json(self):
        return json.dumps({"side": self.side, "axis": self.axis, "base": list(self.base),
                           "use_time": self.use_time, "rbf": self.rbf.to_dict()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(RbfGraph.from_dict(d["rbf"]), d["side"], d["axis"], tuple(d["base"]), d["use_time"])


def check_graph_property(samples, axis=-1, base_tol=1e-6, value_tol=1e-4):
    """True if no two samples share base coordinates but differ on ``axis``."""
    axis = axis % samples.dim
    base = [i for i in range(samples.dim) if i != axis]
    X = np.column_stack([samples.t0, samples.points[:, base]])
    D = cdist(X, X, "chebyshev")
    np.fill_diagonal(D, np.inf)
    i, j = np.nonzero(D < base_tol)
    return bool(np.all(np.abs(samples.points[i, axis] - samples.points[j, axis]) <= value_tol))


def fit_graph(samples, axis=-1, use_time="auto", c=None, tail=False, cond_limit=1e12):
    """Fit ``x[axis]`` as a multiquadric function of the other coordinates.

    Time enters as an extra input when the samples cover more than one
    ``t0`` (``use_time="auto"``).
    """
    if len(samples) < 2:
        raise ParameterError("need at least two samples to fit a graph")
    axis = axis % samples.dim
    base = tuple(i for i in range(samples.dim) if i != axis)
    if use_time == "auto":
        use_time = len(samples.times) > 1
    X = samples.points[:, list(base)]
    if use_time:
        X = np.column_stack([samples.t0, X])
    rbf = RbfGraph(c=c, tail=tail, cond_limit=cond_limit).fit(X, samples.points[:, axis])
    return ManifoldGraph(rbf, samples.side, axis, base, bool(use_time))


# --------------------------------------------------------------------------
# immersion derivatives


class MissingSamplesError(ParameterError):
    """The samples needed for a central difference are absent."""


def immersion_jacobian(samples, t, step=None, X_hyp=None):
    """Central-difference ``d iota / d q`` at ``q = 0`` and time ``t``.

    Column ``i`` is ``(iota(+s e_i) - iota(-s e_i)) / (2 s)`` with ``s`` the
    lattice step (smallest positive coordinate present if not given).
    """
    qs, pts = samples.at_time(t)
    if len(qs) == 0:
        raise MissingSamplesError(f"no samples at t={t}; sample a denser time lattice")
    if step is None:
        pos = np.abs(qs[qs != 0])
        if len(pos) == 0:
            raise MissingSamplesError("lattice has no nonzero step")
        step = float(pos.min())
    m = samples.q_dim
    cols = []
    for i in range(m):
        e = np.zeros(m)
        e[i] = step
        plus, minus = samples.lookup(e, t), samples.lookup(-e, t)
        if plus is None or minus is None:
            raise MissingSamplesError(f"no samples bracketing q=0 along axis {i} at t={t}; "
                                      "use a denser lattice")
        cols.append((plus - minus) / (2.0 * step))
    return np.column_stack(cols)


def axial_stencil(m, step):
    """The ``2m`` parameters ``+-step e_i`` (q = 0 is the hyperbolic point)."""
    E = np.eye(m) * step
    return np.vstack([E, -E])


def immersion_jacobian_samples(sys, eig, X_hyp, times, step=0.25, kind="stable", side=1,
                               threads=1, **solve_kw):
    """Sample just the axial stencil needed for Jacobians at every time in ``times``."""
    m = eig.n_centre + (eig.n_minus if kind == "stable" else eig.n_plus)
    return sample_manifold(sys, eig, X_hyp, kind, side, t0s=times, q_points=axial_stencil(m, step),
                           threads=threads, max_failure=0.0, **solve_kw)
