"""Independent cross-checks for the BVP manifolds.

Two routes are provided.  The first transports a short manifold segment
through the flow with curvature-driven point insertion and compares it with
the BVP curve at ``t = 0``.  The second treats the unforced, undamped
roll-heave model, where the saddles carry families of periodic orbits whose
contracting manifolds can be grown by integration.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from ._validation import ParameterError, check_int, check_positive
from .bvp import manifold_trajectory
from .dynamics import rk4_step

log = logging.getLogger(__name__)

# seed times of the transported segments, keyed by (damping, branch)
SEED_TIMES = {(1.0, "unstable"): -6.0, (1.0, "stable"): 4.25,
              (3.0, "unstable"): -5.0, (3.0, "stable"): 1.75}


class AdvectionAborted(RuntimeError):
    def __init__(self, curve):
        super().__init__(f"curve grew beyond {curve.max_points} points at t={curve.t:.4f}")
        self.curve = curve


class ContinuationError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# curve transport with point insertion


def turning_angles(points):
    """Angle between consecutive chords at each interior point (0 at the ends)."""
    seg = np.diff(points, axis=0)
    d = np.linalg.norm(seg, axis=1)
    ang = np.zeros(len(points))
    if len(points) > 2:
        with np.errstate(invalid="ignore", divide="ignore"):
            cosang = np.einsum("ij,ij->i", seg[:-1], seg[1:]) / (d[:-1] * d[1:])
        ang[1:-1] = np.arccos(np.clip(np.nan_to_num(cosang, nan=1.0), -1.0, 1.0))
    return ang, d


def insertion_flags(points, alpha=0.3, dalpha=1e-4, delta=1e-6):
    """Intervals that need a new midpoint.

    An interval of length ``d`` is split when ``d > delta`` and the larger
    turning angle ``a`` at its two ends satisfies ``a > alpha`` or
    ``a * d > dalpha``.  Straight runs are never split.
    """
    ang, d = turning_angles(points)
    a = np.maximum(ang[:-1], ang[1:])
    return (d > delta) & ((a > alpha) | (a * d > dalpha))


def refine_curve(points, alpha=0.3, dalpha=1e-4, delta=1e-6, max_rounds=50):
    """Insert arclength midpoints from a cubic spline until no interval is flagged."""
    inserted = 0
    for _ in range(max_rounds):
        flag = insertion_flags(points, alpha, dalpha, delta)
        if not flag.any():
            break
        d = np.linalg.norm(np.diff(points, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(d)])
        spline = CubicSpline(s, points, axis=0)
        mids = spline(0.5 * (s[:-1] + s[1:])[flag])
        points = np.insert(points, np.nonzero(flag)[0] + 1, mids, axis=0)
        inserted += int(flag.sum())
    return points, inserted


@dataclass
class AdvectedCurve:
    points: np.ndarray
    t: float
    dT: float
    alpha: float = 0.3
    dalpha: float = 1e-4
    delta: float = 1e-6
    max_points: int = 1000
    inserted: int = 0
    aborted: bool = False
    sizes: list = field(default_factory=list)

    def to_csv(self, path):
        np.savetxt(path, self.points, delimiter=",", header="x,v", comments="", fmt="%.17g")


def advect_curve(sys, points, t_start, t_end, dT=0.005, alpha=0.3, dalpha=1e-4, delta=1e-6,
                 max_points=1000):
    """Transport a polyline from ``t_start`` to ``t_end`` with RK4 steps of size ``dT``.

    After each step the curve is refined by ``refine_curve``.  Exceeding
    ``max_points`` raises ``AdvectionAborted`` carrying the partial curve.
    """
    check_positive(dT, "dT")
    pts = np.asarray(points, dtype=float).copy()
    n_steps = int(round(abs(t_end - t_start) / dT))
    h = np.sign(t_end - t_start) * dT
    curve = AdvectedCurve(pts, float(t_start), dT, alpha, dalpha, delta, max_points)
    t = float(t_start)
    for k in range(n_steps):
        pts = rk4_step(sys.f, pts, t, h)
        t = t_start + (k + 1) * h
        pts, n_new = refine_curve(pts, alpha, dalpha, delta)
        curve.inserted += n_new
        curve.sizes.append(len(pts))
        curve.points, curve.t = pts, t
        if len(pts) > max_points:
            curve.aborted = True
            raise AdvectionAborted(curve)
    return curve


def bvp_manifold_curve(sys, eig, X_hyp, branch, t, qs, eps_c=1e-7, eps_f=1e-6, max_iter=100):
    """Points of a 1DoF stable/unstable manifold at time ``t`` for parameters ``qs``."""
    out = []
    for q in np.asarray(qs, dtype=float):
        traj, _, J = manifold_trajectory(sys, eig, X_hyp, branch, [q], t0=t, eps_c=eps_c,
                                         eps_f=eps_f, max_iter=max_iter)
        out.append(traj.states[J])
    return np.array(out)


def seed_extent(eig, branch, t_seed, extent=1.0):
    """Parameter half-width at ``t_seed`` whose image at ``t = 0`` spans about ``extent``."""
    rate = abs(eig.lambda_minus) if branch == "stable" else eig.lambda_plus
    return extent * np.exp(-rate * abs(t_seed))


def advect_manifold_1dof(sys, eig, X_hyp, branch, t_seed, n_seed=100, extent=1.0, dT=0.005,
                         alpha=0.3, dalpha=1e-4, delta=1e-6, max_points=1000):
    """Transport a BVP-computed seed segment of a 1DoF manifold to ``t = 0``."""
    if branch not in ("stable", "unstable"):
        raise ParameterError("branch must be stable or unstable")
    n_seed = check_int(n_seed, "n_seed", minimum=2)
    w = seed_extent(eig, branch, t_seed, extent)
    seed = bvp_manifold_curve(sys, eig, X_hyp, branch, t_seed, np.linspace(-w, w, n_seed))
    return advect_curve(sys, seed, t_seed, 0.0, dT, alpha, dalpha, delta, max_points)


def polyline_distance(points, curve):
    """Distance from each point to the polyline through ``curve``."""
    a, b = curve[:-1], curve[1:]
    ab = b - a
    L = np.einsum("ij,ij->i", ab, ab)
    L = np.where(L > 0, L, 1.0)
    out = np.empty(len(points))
    for i, p in enumerate(points):
        s = np.clip(np.einsum("ij,ij->i", p - a, ab) / L, 0.0, 1.0)
        out[i] = np.sqrt(np.min(np.sum((a + s[:, None] * ab - p) ** 2, axis=1)))
    return out


def shared_hausdorff(curve_a, curve_b, axis=0):
    """Symmetric Hausdorff distance between two polylines over their common ``axis`` range."""
    lo = max(curve_a[:, axis].min(), curve_b[:, axis].min())
    hi = min(curve_a[:, axis].max(), curve_b[:, axis].max())
    if hi <= lo:
        raise ParameterError("curves do not overlap along the chosen axis")
    A = curve_a[(curve_a[:, axis] >= lo) & (curve_a[:, axis] <= hi)]
    B = curve_b[(curve_b[:, axis] >= lo) & (curve_b[:, axis] <= hi)]
    return float(max(polyline_distance(A, curve_b).max(), polyline_distance(B, curve_a).max()))


# --------------------------------------------------------------------------
# unforced, undamped roll-heave model


def conservative_field(h=1.0):
    def f(t, s):
        x, y, vx, vy = s[0], s[1], s[2], s[3]
        return np.array([vx, vy, -h * (x - y * y), -y + x * y])
    return f


def conservative_jacobian(s, h=1.0):
    x, y = s[0], s[1]
    return np.array([[0.0, 0.0, 1.0, 0.0],
                     [0.0, 0.0, 0.0, 1.0],
                     [-h, 2.0 * h * y, 0.0, 0.0],
                     [y, x - 1.0, 0.0, 0.0]])


def energy(s, h=1.0):
    s = np.asarray(s, dtype=float)
    x, y, vx, vy = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    return vx ** 2 / (4.0 * h) + 0.5 * vy ** 2 + 0.5 * (y * y + 0.5 * x * x - x * y * y)


def _variational(h):
    f = conservative_field(h)

    def rhs(t, z):
        s = z[:4]
        Phi = z[4:].reshape(4, 4)
        return np.concatenate([f(t, s), (conservative_jacobian(s, h) @ Phi).ravel()])
    return rhs


_TOL = dict(rtol=1e-12, atol=1e-13, method="DOP853")


@dataclass
class PeriodicOrbit:
    state: np.ndarray
    period: float
    energy: float
    h: float
    monodromy: np.ndarray = None
    multipliers: np.ndarray = None
    amplitude: float = 0.0
    corrections: int = 0

    def closure(self):
        sol = solve_ivp(conservative_field(self.h), (0.0, self.period), self.state, **_TOL)
        return float(np.max(np.abs(sol.y[:, -1] - self.state)))

    def sample(self, n=200):
        """States at ``n`` equally spaced phases."""
        ts = np.linspace(0.0, self.period, n, endpoint=False)
        sol = solve_ivp(conservative_field(self.h), (0.0, self.period), self.state, t_eval=ts, **_TOL)
        return sol.y.T

    def to_dict(self):
        return {"state": self.state.tolist(), "period": self.period, "energy": self.energy,
                "h": self.h, "amplitude": self.amplitude,
                "multipliers": None if self.multipliers is None
                else [[float(z.real), float(z.imag)] for z in self.multipliers]}


def centre_position_direction(h=1.0, side=1):
    """Position part of the undamped saddle's oscillatory mode (unit length)."""
    K = np.array([[h, -2.0 * h * side], [-side * 1.0, 0.0]])  # -(position block of the Jacobian)
    w, V = np.linalg.eig(K)
    i = int(np.argmax(w.real))  # positive eigenvalue of the stiffness: oscillation
    v = V[:, i].real
    v = v / np.linalg.norm(v)
    return v if v[0] > 0 else -v


def _half_period(x0, y0, h):
    """Integrate from rest at ``(x0, y0)`` to the next ``v_y = 0``; state and STM there."""
    rhs = _variational(h)

    def event(t, z):
        return z[3]
    event.terminal = True
    event.direction = 0
    # the start itself has v_y = 0, so step off it before watching for the event
    z0 = np.concatenate([[x0, y0, 0.0, 0.0], np.eye(4).ravel()])
    first = solve_ivp(rhs, (0.0, 1e-3), z0, **_TOL)
    sol = solve_ivp(rhs, (1e-3, 100.0), first.y[:, -1], events=event, **_TOL)
    if not sol.t_events[0].size:
        raise ContinuationError("no half-period crossing found")
    return sol.t_events[0][0], sol.y_events[0][0]


def correct_orbit(h, amplitude, side=1, y_guess=None, tol=1e-11, max_steps=50):
    """Brake orbit through ``x0 = 1 + amplitude * u_x``, correcting ``y0``.

    Starts from rest; the correction zeroes ``v_x`` at the half-period
    ``v_y = 0`` crossing, using the state transition matrix with the
    crossing-time adjustment.
    """
    u = centre_position_direction(h, side)
    x0 = 1.0 + amplitude * u[0]
    y0 = side * 1.0 + amplitude * u[1] if y_guess is None else y_guess
    f = conservative_field(h)
    for k in range(max_steps):
        t_half, z = _half_period(x0, y0, h)
        s, Phi = z[:4], z[4:].reshape(4, 4)
        if abs(s[2]) < tol:
            return PeriodicOrbit(np.array([x0, y0, 0.0, 0.0]), 2.0 * t_half,
                                 float(energy([x0, y0, 0.0, 0.0], h)), h, amplitude=amplitude,
                                 corrections=k)
        fs = f(0.0, s)
        slope = Phi[2, 1] - fs[2] / fs[3] * Phi[3, 1]
        y0 -= s[2] / slope
    raise ContinuationError(f"correction did not converge at amplitude {amplitude:.3g}")


def attach_monodromy(orbit):
    z0 = np.concatenate([orbit.state, np.eye(4).ravel()])
    sol = solve_ivp(_variational(orbit.h), (0.0, orbit.period), z0, **_TOL)
    M = sol.y[4:, -1].reshape(4, 4)
    orbit.monodromy = M
    orbit.multipliers = np.linalg.eigvals(M)
    return orbit


def differential_correction(h=1.0, target_energy=0.26, amplitude=1e-4, growth=1.3, side=1,
                            energy_tol=1e-10, max_continuation=200):
    """Periodic orbit of the saddle family at ``target_energy``.

    The family is continued from a small amplitude by multiplying the
    amplitude by ``growth``; once the target energy is bracketed the
    amplitude is bisected.
    """
    h = check_positive(h, "h")
    e_saddle = 0.25
    if target_energy <= e_saddle:
        raise ParameterError(f"target energy must exceed the saddle energy {e_saddle}")
    orbit = correct_orbit(h, amplitude, side)
    prev = orbit
    for _ in range(max_continuation):
        if orbit.energy >= target_energy:
            break
        prev = orbit
        orbit = correct_orbit(h, orbit.amplitude * growth, side, y_guess=None)
    else:
        raise ContinuationError("continuation did not reach the target energy")
    lo, hi = prev, orbit
    for _ in range(200):
        if abs(orbit.energy - target_energy) < energy_tol:
            break
        mid = correct_orbit(h, 0.5 * (lo.amplitude + hi.amplitude), side, y_guess=lo.state[1])
        if mid.energy < target_energy:
            lo = mid
        else:
            hi = mid
        orbit = mid
    return attach_monodromy(orbit)


@dataclass
class ManifoldBundle:
    branch: str
    eps: float
    seeds: np.ndarray
    seed_signs: np.ndarray
    phases: np.ndarray
    section_points: np.ndarray
    section_times: np.ndarray
    truncated: np.ndarray
    trajectories: list
    max_energy_error: float


def globalize_manifolds(orbit, eps=1e-6, branch="stable", n_phases=50, t_budget=40.0,
                        keep_trajectories=False, escape_y2=10.0):
    """Grow the orbit's contracting (``stable``) or expanding (``unstable``) manifold.

    Seeds sit at ``n_phases`` equally spaced phases, displaced by ``+-eps``
    along the monodromy eigenvector carried to that phase.  Stable seeds are
    integrated backward and unstable seeds forward until they first cross
    ``{x = 0, v_x > 0}``; seeds that do not cross within ``t_budget`` are
    flagged as truncated; so are seeds that leave the well region
    (``y^2 >= escape_y2``) first, which stops their integration.
    """
    if orbit.monodromy is None:
        attach_monodromy(orbit)
    mult = orbit.multipliers
    real = np.abs(mult.imag) < 1e-8
    if np.sum(real & (np.abs(np.abs(mult) - 1.0) > 1e-6)) < 2:
        raise ParameterError("orbit is not hyperbolic")
    w, V = np.linalg.eig(orbit.monodromy)
    i = int(np.argmin(np.abs(w))) if branch == "stable" else int(np.argmax(np.abs(w)))
    e0 = V[:, i].real
    e0 = e0 / np.linalg.norm(e0)
    z0 = np.concatenate([orbit.state, np.eye(4).ravel()])
    ref = solve_ivp(_variational(orbit.h), (0.0, orbit.period), z0, dense_output=True, **_TOL)
    phases = np.linspace(0.0, orbit.period, n_phases, endpoint=False)
    f = conservative_field(orbit.h)
    direction = -1.0 if branch == "stable" else 1.0

    def section(t, s):
        return s[0]

    def escape(t, s):
        return s[1] ** 2 - escape_y2
    escape.terminal = True

    seeds, signs, ph_out, sec_pts, sec_t, trunc, trajs = [], [], [], [], [], [], []
    max_err = 0.0
    E = orbit.energy
    for ph in phases:
        z = ref.sol(ph)
        e = z[4:].reshape(4, 4) @ e0
        e /= np.linalg.norm(e)
        for sgn in (1.0, -1.0):
            s0 = z[:4] + sgn * eps * e
            sol = solve_ivp(f, (0.0, direction * t_budget), s0, events=(section, escape),
                            **_TOL)
            hits = [(t, y) for t, y in zip(sol.t_events[0], sol.y_events[0]) if y[2] > 0]
            seeds.append(s0)
            signs.append(sgn)
            ph_out.append(ph)
            if hits:
                t_hit, y_hit = hits[0]
                sec_pts.append(y_hit)
                sec_t.append(t_hit)
                trunc.append(False)
                max_err = max(max_err, abs(energy(y_hit, orbit.h) - E))
            else:
                sec_pts.append(np.full(4, np.nan))
                sec_t.append(np.nan)
                trunc.append(True)
            max_err = max(max_err, float(np.max(np.abs(energy(sol.y.T, orbit.h) - E))))
            if keep_trajectories:
                trajs.append(sol.y.T)
    return ManifoldBundle(branch, eps, np.array(seeds), np.array(signs), np.array(ph_out),
                          np.array(sec_pts), np.array(sec_t), np.array(trunc), trajs, max_err)


def seeding_error(orbit, eps, phase=0.0, branch="stable"):
    """Distance from the one-period image of a seeded point to its linear prediction."""
    if orbit.monodromy is None:
        attach_monodromy(orbit)
    w, V = np.linalg.eig(orbit.monodromy)
    i = int(np.argmin(np.abs(w))) if branch == "stable" else int(np.argmax(np.abs(w)))
    e = V[:, i].real
    e = e / np.linalg.norm(e)
    mu = w[i].real
    s0 = orbit.state + eps * e
    # stable seeds are pulled in by mu per period forward; unstable seeds by 1/mu backward
    T = orbit.period if branch == "stable" else -orbit.period
    factor = mu if branch == "stable" else 1.0 / mu
    sol = solve_ivp(conservative_field(orbit.h), (0.0, T), s0, **_TOL)
    return float(np.linalg.norm(sol.y[:, -1] - (orbit.state + eps * factor * e)))
