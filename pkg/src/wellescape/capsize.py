"""Capsize/safe classification, dividing manifolds, escape times and basin integrity."""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.metrics import confusion_matrix
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import ParameterError, check_int, check_positive
from .atlas import fit_graph
from .dynamics import rk4_step

SAFE, CAPSIZE_PLUS, CAPSIZE_MINUS = 0, 1, -1
LABEL_NAMES = {SAFE: "safe", CAPSIZE_PLUS: "capsize+", CAPSIZE_MINUS: "capsize-"}
TIE_TOL = 1e-12


class InconsistentGraphsError(RuntimeError):
    """A state lies above the positive graph and below the negative one."""


class DividingManifoldError(RuntimeError):
    pass


class HorizonExceeded(RuntimeError):
    """The requested time lies outside the dividing manifold's window."""


@dataclass
class ClassificationReport:
    state: np.ndarray
    label: str
    method: str
    crossing_time: Optional[float] = None
    margin: Optional[float] = None
    flagged: bool = False
    notes: dict = field(default_factory=dict)

    @property
    def code(self):
        return {v: k for k, v in LABEL_NAMES.items()}[self.label]

    def to_dict(self):
        return {"state": np.asarray(self.state).tolist(), "label": self.label, "method": self.method,
                "crossing_time": self.crossing_time, "margin": self.margin,
                "flagged": self.flagged, "notes": self.notes}


# --------------------------------------------------------------------------
# classification by the stable-manifold graphs


def graph_margins(states, t, graph_plus, graph_minus):
    """``v - g_+`` and ``v - g_-`` on the graph axis, plus extrapolation flags."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    gp, out_p = graph_plus.evaluate(states, t)
    gm, out_m = graph_minus.evaluate(states, t)
    v = states[:, graph_plus.axis]
    return v - gp, v - gm, out_p | out_m


def label_from_margins(m_plus, m_minus, tie=TIE_TOL, on_conflict="raise"):
    """Labels from graph margins; ties within ``tie`` count as safe.

    ``on_conflict="nearest"`` resolves a state lying beyond both graphs to
    the side with the larger margin instead of raising.
    """
    up = m_plus > tie
    down = m_minus < -tie
    both = up & down
    if np.any(both):
        if on_conflict == "raise":
            raise InconsistentGraphsError(
                f"{int(both.sum())} state(s) beyond both graphs; the graphs overlap or are extrapolated")
        pick_up = m_plus >= -m_minus
        up = np.where(both, pick_up, up)
        down = np.where(both, ~pick_up, down)
    return np.where(up, CAPSIZE_PLUS, np.where(down, CAPSIZE_MINUS, SAFE)).astype(int), both


def classify_state(state, t, graph_plus, graph_minus):
    """Classify one state at time ``t`` by the sign of ``v_y - g(t, x, y, v_x)``."""
    state = np.asarray(state, dtype=float).reshape(-1)
    mp, mm, out = graph_margins(state, t, graph_plus, graph_minus)
    labels, _ = label_from_margins(mp, mm)
    lab = int(labels[0])
    if lab == CAPSIZE_PLUS:
        margin = mp[0]
    elif lab == CAPSIZE_MINUS:
        margin = mm[0]
    else:
        margin = mp[0] if abs(mp[0]) <= abs(mm[0]) else mm[0]
    tie = min(abs(mp[0]), abs(mm[0])) < TIE_TOL
    return ClassificationReport(state, LABEL_NAMES[lab], "manifold-graph", None, float(margin),
                                bool(out[0] or tie), {"extrapolated": bool(out[0]), "tie": bool(tie)})


class ManifoldGraphClassifier(ClassifierMixin, BaseEstimator):
    """Capsize classifier built from the stable-manifold samples of both saddles.

    ``fit`` interpolates the two graphs; it takes no labels (``X, y`` are
    accepted for estimator compatibility and ignored).  Labels are
    ``+1``/``-1`` for escape over the positive/negative saddle and ``0`` for safe.
    """

    def __init__(self, samples_plus=None, samples_minus=None, axis=-1, c=None, tail=False,
                 t=0.0, on_conflict="raise"):
        self.samples_plus = samples_plus
        self.samples_minus = samples_minus
        self.axis = axis
        self.c = c
        self.tail = tail
        self.t = t
        self.on_conflict = on_conflict

    def fit(self, X=None, y=None):
        if self.samples_plus is None or self.samples_minus is None:
            raise ParameterError("both saddle sample sets are required")
        self.graph_plus_ = fit_graph(self.samples_plus, self.axis, c=self.c, tail=self.tail)
        self.graph_minus_ = fit_graph(self.samples_minus, self.axis, c=self.c, tail=self.tail)
        self.classes_ = np.array([CAPSIZE_MINUS, SAFE, CAPSIZE_PLUS])
        self.n_features_in_ = self.samples_plus.dim
        return self

    def margins(self, X):
        check_is_fitted(self, "graph_plus_")
        X = check_array(X)
        return graph_margins(X, self.t, self.graph_plus_, self.graph_minus_)

    def predict(self, X):
        mp, mm, _ = self.margins(X)
        return label_from_margins(mp, mm, on_conflict=self.on_conflict)[0]

    def decision_function(self, X):
        """Signed distance beyond the nearer graph (positive means capsize)."""
        mp, mm, _ = self.margins(X)
        return np.maximum(mp, -mm)

    @classmethod
    def from_graphs(cls, graph_plus, graph_minus, t=0.0, on_conflict="raise"):
        obj = cls(t=t, on_conflict=on_conflict)
        obj.graph_plus_, obj.graph_minus_ = graph_plus, graph_minus
        obj.classes_ = np.array([CAPSIZE_MINUS, SAFE, CAPSIZE_PLUS])
        obj.n_features_in_ = len(graph_plus.base) + 1
        return obj


# --------------------------------------------------------------------------
# classification by direct integration


@dataclass
class IntegrationResult:
    labels: np.ndarray
    times: np.ndarray
    flagged: np.ndarray

    def report(self, states, i):
        lab = int(self.labels[i])
        t = None if lab == SAFE else float(self.times[i])
        return ClassificationReport(np.asarray(states[i]), LABEL_NAMES[lab], "direct-integration",
                                    t, None, bool(self.flagged[i]))


def _bisect_crossing(sys, x0, t0, h, g, tol):
    """Sub-step ``tau`` in ``[0, h]`` where ``g(rk4(x0, tau), t0+tau)`` turns nonnegative.

    ``g`` must be negative at ``tau=0`` and nonnegative at ``tau=h`` for each row.
    """
    lo = np.zeros(len(x0))
    hi = np.full(len(x0), h)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        xm = np.stack([rk4_step(sys.f, x0[i], t0, mid[i]) for i in range(len(x0))])
        pos = g(xm, t0 + mid) >= 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    return hi


def classify_by_integration(sys, states, t0=0.0, escape_y2=10.0, t_max=11.5, step=0.005,
                            coordinate=1, tol=1e-6):
    """Escape test by RK4 integration: capsize when ``y^2 >= escape_y2`` before ``t_max``.

    The side is the sign of the escaping coordinate.  Crossing times are
    refined by bisection on the last step to ``tol``.  A non-finite state
    before the threshold counts as capsize on the side of its last finite
    value and is flagged.
    """
    check_positive(escape_y2, "escape_y2")
    check_positive(step, "step")
    if t_max <= t0:
        raise ParameterError("t_max must exceed t0")
    X = np.atleast_2d(np.asarray(states, dtype=float)).copy()
    n = len(X)
    labels = np.zeros(n, dtype=int)
    times = np.full(n, np.nan)
    flagged = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    pre = X[:, coordinate] ** 2 >= escape_y2
    labels[pre] = np.sign(X[pre, coordinate]).astype(int)
    times[pre] = t0
    active &= ~pre
    t = float(t0)
    nsteps = int(np.ceil((t_max - t0) / step - 1e-9))
    for k in range(nsteps):
        if not active.any():
            break
        h = min(step, t_max - t)
        idx = np.nonzero(active)[0]
        with np.errstate(over="ignore", invalid="ignore"):
            Xn = rk4_step(sys.f, X[idx], t, h)
        bad = ~np.all(np.isfinite(Xn), axis=1)
        esc = ~bad & (Xn[:, coordinate] ** 2 >= escape_y2)
        if np.any(bad):
            b = idx[bad]
            labels[b] = np.where(X[b, coordinate] >= 0, 1, -1)
            times[b] = t + h
            flagged[b] = True
            active[b] = False
        if np.any(esc):
            e = idx[esc]
            tau = _bisect_crossing(sys, X[e], t, h,
                                   lambda x, tt: x[:, coordinate] ** 2 - escape_y2, tol)
            labels[e] = np.sign(Xn[esc, coordinate]).astype(int)
            times[e] = t + tau
            active[e] = False
        ok = idx[~bad & ~esc]
        X[ok] = Xn[~bad & ~esc]
        t += h
    return IntegrationResult(labels, times, flagged)


class IntegrationClassifier(ClassifierMixin, BaseEstimator):
    """Direct-integration oracle with the same estimator interface."""

    def __init__(self, sys=None, t0=0.0, escape_y2=10.0, t_max=11.5, step=0.005):
        self.sys = sys
        self.t0 = t0
        self.escape_y2 = escape_y2
        self.t_max = t_max
        self.step = step

    def fit(self, X=None, y=None):
        if self.sys is None:
            raise ParameterError("a system is required")
        self.classes_ = np.array([CAPSIZE_MINUS, SAFE, CAPSIZE_PLUS])
        self.n_features_in_ = self.sys.dim
        return self

    def predict(self, X):
        check_is_fitted(self, "classes_")
        X = check_array(X)
        return classify_by_integration(self.sys, X, self.t0, self.escape_y2, self.t_max,
                                       self.step).labels


def classification_metrics(predicted, truth):
    """Agreement statistics of capsize predictions against an oracle.

    ``sensitivity`` is the fraction of capsize predictions that are correct
    and ``specificity`` the fraction of safe predictions that are correct;
    the usual recalls are reported as ``capsize_recall`` and ``safe_recall``.
    Side is ignored: any nonzero label counts as capsize.
    """
    p = np.asarray(predicted) != 0
    y = np.asarray(truth) != 0
    tn, fp, fn, tp = confusion_matrix(y, p, labels=[False, True]).ravel()
    div = lambda a, b: float(a / b) if b else float("nan")
    return {"n": int(len(p)), "accuracy": div(tp + tn, len(p)),
            "sensitivity": div(tp, tp + fp), "specificity": div(tn, tn + fn),
            "capsize_recall": div(tp, tp + fn), "safe_recall": div(tn, tn + fp),
            "side_agreement": div(np.sum((np.asarray(predicted) == np.asarray(truth)) & y & p), tp),
            "capsize_prevalence": div(tp + fn, len(p)),
            "confusion": {"tp": int(tp), "fp": int(fp), "fn": int(fn), "tn": int(tn)}}


# --------------------------------------------------------------------------
# dividing manifold


@dataclass
class DividingManifold:
    """Affine functionals ``L_t(x) = n_t . x - b_t`` on a time grid; ``L > 0`` is capsized."""

    side: int
    times: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray

    @property
    def window(self):
        return float(self.times[0]), float(self.times[-1])

    def _coeffs(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0] - 1e-12) or np.any(t > self.times[-1] + 1e-12):
            raise HorizonExceeded(f"t outside dividing-manifold window {self.window}")
        n = np.stack([np.interp(t, self.times, self.normals[:, j])
                      for j in range(self.normals.shape[1])], axis=-1)
        b = np.interp(t, self.times, self.offsets)
        return n, b

    def __call__(self, x, t):
        """``L_t(x)``; ``x`` of shape (..., d) and ``t`` broadcastable to its leading shape."""
        n, b = self._coeffs(t)
        return np.sum(np.asarray(x, dtype=float) * n, axis=-1) - b

    def to_json(self):
        return json.dumps({"side": self.side, "times": self.times.tolist(),
                           "normals": self.normals.tolist(), "offsets": self.offsets.tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["side"], np.array(d["times"]), np.array(d["normals"]), np.array(d["offsets"]))


def spanning_set(jacobian, v4):
    """Columns ``D e1, D e2, (D e3 + v4)/2`` of the tangent approximation."""
    J = np.asarray(jacobian, dtype=float)
    if J.shape[1] != 3:
        raise DividingManifoldError("expected a d x 3 immersion Jacobian")
    return np.column_stack([J[:, 0], J[:, 1], 0.5 * J[:, 2] + 0.5 * v4])


def _escape_side(sys, x, t, escape_y2=10.0, horizon=30.0, coordinate=1):
    res = classify_by_integration(sys, x, t, escape_y2, t + horizon, coordinate=coordinate)
    return int(res.labels[0])


def build_dividing_manifold(X_hyp, jacobians, times, eig, side, sys=None, probe=0.1,
                            rank_tol=1e-8, coordinate=1):
    """Dividing manifold from per-node immersion Jacobians of one saddle's stable manifold.

    ``jacobians[i]`` is ``d iota / d q`` at ``times[i]``.  The normal at each
    node annihilates the spanning set; it has unit length and points so that
    ``L > 0`` on the capsized side.  The sign is fixed at the first node
    (by integrating ``X_hyp + probe * v4`` when ``sys`` is given, otherwise by
    the escape coordinate of ``v4``) and then carried by continuity.
    """
    times = np.asarray(times, dtype=float)
    if len(times) < 1 or len(jacobians) != len(times):
        raise DividingManifoldError("need one Jacobian per node")
    v4 = eig.unstable_basis[:, 0]
    normals, offsets = [], []
    for i, (t, Jac) in enumerate(zip(times, jacobians)):
        S = spanning_set(Jac, v4)
        U, s, _ = np.linalg.svd(S, full_matrices=True)
        if s[-1] < rank_tol * s[0]:
            raise DividingManifoldError(f"spanning set is rank deficient at t={t}")
        n = U[:, -1]
        if normals and n @ normals[-1] < 0:
            n = -n
        normals.append(n)
        offsets.append(n @ X_hyp.at(t))
    normals = np.array(normals)
    offsets = np.array(offsets)
    x0 = X_hyp.at(times[0])
    direction = v4 if v4[coordinate] * side > 0 else -v4
    if sys is not None:
        went = _escape_side(sys, x0 + probe * direction, times[0], coordinate=coordinate)
        if went != side:
            direction = -direction
            went = _escape_side(sys, x0 + probe * direction, times[0], coordinate=coordinate)
            if went != side:
                raise DividingManifoldError("no probe along the unstable direction escapes on this side")
    if normals[0] @ direction < 0:
        normals, offsets = -normals, -offsets
    return DividingManifold(int(side), times, normals, offsets)


@dataclass
class CapsizeTime:
    status: str  # "capsized", "none" or "horizon"
    side: int = 0
    time: Optional[float] = None


def time_to_capsize(sys, states, t0, dividing, t_end=None, step=0.005, tol=1e-6):
    """First time each trajectory crosses into ``L > 0`` of any dividing manifold.

    ``dividing`` is a sequence of ``DividingManifold`` (one per saddle).
    Integration runs from ``t0`` to ``t_end`` (default: the common window
    end).  Asking for times outside the window returns status ``horizon``
    for every state.
    """
    X = np.atleast_2d(np.asarray(states, dtype=float)).copy()
    lo = max(d.window[0] for d in dividing)
    hi = min(d.window[1] for d in dividing)
    t_end = hi if t_end is None else t_end
    n = len(X)
    if t0 < lo - 1e-12 or t_end > hi + 1e-12:
        return [CapsizeTime("horizon") for _ in range(n)]
    out = [CapsizeTime("none") for _ in range(n)]
    active = np.ones(n, dtype=bool)
    for d in dividing:
        inside = d(X, t0) > 0
        for i in np.nonzero(inside & active)[0]:
            out[i] = CapsizeTime("capsized", d.side, float(t0))
        active &= ~inside
    t = float(t0)
    while t < t_end - 1e-12 and active.any():
        h = min(step, t_end - t)
        idx = np.nonzero(active)[0]
        with np.errstate(over="ignore", invalid="ignore"):
            Xn = rk4_step(sys.f, X[idx], t, h)
        for d in dividing:
            if not idx.size:
                break
            crossed = np.isfinite(Xn).all(axis=1) & (d(Xn, t + h) > 0)
            if np.any(crossed):
                e = idx[crossed]
                tau = _bisect_crossing(sys, X[e], t, h, d, tol)
                for i, ta in zip(e, tau):
                    out[i] = CapsizeTime("capsized", d.side, float(t + ta))
                active[e] = False
                keep = ~crossed
                idx, Xn = idx[keep], Xn[keep]
        X[idx] = Xn
        t += h
    return out


def transition_time_1dof(sys, X_hyp, states, t0, t_end, step=0.005, tol=1e-6):
    """First crossing of ``x = x_hyp(t)`` for the 1DoF model.

    Returns ``(times, directions)``; the direction is +1 when ``x`` passes the
    hyperbolic trajectory moving right and -1 moving left; states that do
    not cross before ``t_end`` get time ``-1`` and direction 0.
    """
    spline = CubicSpline(X_hyp.times, X_hyp.states[:, 0])
    if t0 < X_hyp.times[0] or t_end > X_hyp.times[-1]:
        raise HorizonExceeded("transition window exceeds the hyperbolic trajectory's grid")
    X = np.atleast_2d(np.asarray(states, dtype=float)).copy()
    n = len(X)
    times = np.full(n, -1.0)
    direction = np.zeros(n, dtype=int)
    gap = lambda x, tt: x[:, 0] - spline(tt)
    sign0 = np.sign(gap(X, np.full(n, t0)))
    active = sign0 != 0
    times[~active] = t0
    t = float(t0)
    while t < t_end - 1e-12 and active.any():
        h = min(step, t_end - t)
        idx = np.nonzero(active)[0]
        Xn = rk4_step(sys.f, X[idx], t, h)
        crossed = np.sign(gap(Xn, np.full(len(idx), t + h))) != sign0[idx]
        if np.any(crossed):
            e = idx[crossed]
            s = sign0[e]
            tau = _bisect_crossing(sys, X[e], t, h, lambda x, tt: -s * gap(x, tt), tol)
            times[e] = t + tau
            direction[e] = -s.astype(int)
            active[e] = False
        X[idx[~crossed]] = Xn[~crossed]
        t += h
    return times, direction


# --------------------------------------------------------------------------
# integrity measure


def well_volume(h=1.0):
    """Exact volume of ``{H < 1/4, |y| < 1}``: ``64 pi sqrt(2h) / 105``."""
    h = check_positive(h, "h")
    return 64.0 * np.pi * np.sqrt(2.0 * h) / 105.0


@dataclass
class IntegrityResult:
    absolute: float
    relative: float
    stderr: float
    n_well: int
    n_drawn: int
    volume_mc: float
    volume_mc_stderr: float
    volume_exact: float
    seed: int

    def to_dict(self):
        return dict(self.__dict__)


def _predict(classifier, X):
    return classifier.predict(X) if hasattr(classifier, "predict") else classifier(X)


def integrity_measure(classifier, h=1.0, n_samples=100_000, seed=0):
    """Safe volume inside the well region ``U`` by Monte Carlo on its bounding box.

    Half of the draws fall in ``y < 0`` and half in ``y > 0``; ``U`` is
    symmetric in ``y`` so the two strata carry equal weight.  ``classifier``
    is an estimator with ``predict`` or a callable returning labels (0 safe).
    """
    from .dynamics import hamiltonian_2dof

    h = check_positive(h, "h")
    n_samples = check_int(n_samples, "n_samples", minimum=2)
    rng = np.random.default_rng(seed)
    sx, sv = 1.0, np.sqrt(2.0)
    box_volume = 2.0 * 2.0 * (2.0 * np.sqrt(h)) * (2.0 * sv)
    fractions, variances, inside, n_well = [], [], [], 0
    half = n_samples // 2
    for lo, hi in ((-1.0, 0.0), (0.0, 1.0)):
        C = np.column_stack([rng.uniform(-sx, sx, half), rng.uniform(lo, hi, half),
                             rng.uniform(-np.sqrt(h), np.sqrt(h), half), rng.uniform(-sv, sv, half)])
        in_u = (hamiltonian_2dof(h, *C.T) < 0.25) & (np.abs(C[:, 1]) < 1.0)
        U = C[in_u]
        inside.append(in_u.mean())
        n_well += len(U)
        if len(U) == 0:
            raise ParameterError("no samples landed in the well region; increase n_samples")
        safe = np.asarray(_predict(classifier, U)) == SAFE
        p = safe.mean()
        fractions.append(p)
        variances.append(p * (1 - p) / len(U))
    rel = float(np.mean(fractions))
    se = float(0.5 * np.sqrt(sum(variances)))
    fin = np.mean(inside)
    vol = box_volume * fin
    vol_se = box_volume * np.sqrt(sum(f * (1 - f) / half for f in inside)) / 2.0
    exact = well_volume(h)
    return IntegrityResult(rel * exact, rel, se, n_well, 2 * half, float(vol), float(vol_se),
                           exact, int(seed))
