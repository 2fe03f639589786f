"""Forced, damped vector fields, forcing signals and the RK4 flow map.

Every system here has the additive form ``f(x, t) = f0(x) + F(t)``.  All
callables are vectorised over leading axes so that a whole grid of
trajectory nodes (or a batch of initial states) can be advanced at once.
"""

import csv
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from ._validation import ParameterError, check_int, check_positive


class FlowBlowUpError(ArithmeticError):
    """Raised when integration produces a non-finite state."""

    def __init__(self, step, t=None, message=None):
        self.step = step
        self.t = t
        super().__init__(message or f"non-finite state at RK4 step {step} (t={t})")


# --------------------------------------------------------------------------
# time grids and trajectories


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = t_minus + i*dt``, ``i = 0..n-1``."""

    t_minus: float
    t_plus: float
    n: int

    def __post_init__(self):
        check_int(self.n, "n", minimum=4)
        if not self.t_plus > self.t_minus:
            raise ParameterError("t_plus must exceed t_minus")

    @property
    def dt(self):
        return (self.t_plus - self.t_minus) / (self.n - 1)

    @property
    def times(self):
        return self.t_minus + self.dt * np.arange(self.n)

    def index_of(self, t, tol=1e-9):
        """Index of the node at time ``t``; raises if ``t`` is not a node."""
        i = int(round((t - self.t_minus) / self.dt))
        if i < 0 or i >= self.n or abs(self.t_minus + i * self.dt - t) > tol * max(1.0, abs(t)):
            raise ParameterError(f"t={t} is not a node of {self}")
        return i

    def nearest_index(self, t):
        return int(np.clip(round((t - self.t_minus) / self.dt), 0, self.n - 1))

    def sub(self, i0, i1):
        """Grid made of nodes ``i0..i1`` inclusive."""
        if not (0 <= i0 < i1 < self.n):
            raise ParameterError(f"bad subgrid [{i0}, {i1}] of {self.n} nodes")
        t = self.times
        return TimeGrid(float(t[i0]), float(t[i1]), i1 - i0 + 1)

    def to_dict(self):
        return {"t_minus": self.t_minus, "t_plus": self.t_plus, "n": self.n}


@dataclass(frozen=True)
class GridTrajectory:
    grid: TimeGrid
    states: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] != self.grid.n:
            raise ParameterError(
                f"states must have shape ({self.grid.n}, d), got {states.shape}")
        object.__setattr__(self, "states", states)

    @property
    def times(self):
        return self.grid.times

    @property
    def dim(self):
        return self.states.shape[1]

    def at(self, t):
        """State at time ``t``, linearly interpolated between nodes."""
        t = np.asarray(t, dtype=float)
        out = np.stack([np.interp(t, self.times, self.states[:, j])
                        for j in range(self.dim)], axis=-1)
        return out

    def restrict(self, i0, i1):
        return GridTrajectory(self.grid.sub(i0, i1), self.states[i0:i1 + 1])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{j + 1}" for j in range(self.dim)])
            for t, row in zip(self.times, self.states):
                w.writerow([_fmt(t)] + [_fmt(v) for v in row])


def _fmt(v):
    return format(float(v), ".17g")


# --------------------------------------------------------------------------
# forcing signals


@dataclass(frozen=True)
class QuasiTerm:
    amp: float
    omega: float
    phase: float = 0.0
    component: int = 0


class ForcingSignal:
    """Base class: ``signal(t)`` returns an array of shape ``t.shape + (dim,)``."""

    kind = "abstract"
    dim: int

    def __call__(self, t):
        raise NotImplementedError

    def to_csv(self, path, times):
        times = np.asarray(times, dtype=float)
        vals = self(times)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"f{j + 1}" for j in range(self.dim)])
            for t, row in zip(times, vals):
                w.writerow([_fmt(t)] + [_fmt(v) for v in row])


class ZeroForcing(ForcingSignal):
    kind = "zero"

    def __init__(self, dim):
        self.dim = dim

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.zeros(t.shape + (self.dim,))

    def __repr__(self):
        return f"ZeroForcing(dim={self.dim})"


class QuasiPeriodicForcing(ForcingSignal):
    """Finite sum ``sum_i a_i cos(w_i t + phi_i) e_{c_i}``."""

    kind = "quasi-periodic"

    def __init__(self, terms, dim):
        self.terms = tuple(t if isinstance(t, QuasiTerm) else QuasiTerm(*t) for t in terms)
        self.dim = dim
        for term in self.terms:
            if not 0 <= term.component < dim:
                raise ParameterError(f"term component {term.component} out of range")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.dim,))
        for term in self.terms:
            out[..., term.component] += term.amp * np.cos(term.omega * t + term.phase)
        return out

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.dim,))
        for term in self.terms:
            out[..., term.component] -= term.amp * term.omega * np.sin(term.omega * t + term.phase)
        return out

    def to_json(self):
        return json.dumps({"dim": self.dim, "terms": [
            {"amp": x.amp, "omega": x.omega, "phase": x.phase, "component": x.component}
            for x in self.terms]})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        terms = [QuasiTerm(float(x["amp"]), float(x["omega"]), float(x.get("phase", 0.0)),
                           int(x["component"])) for x in obj["terms"]]
        return cls(terms, int(obj["dim"]))

    def __repr__(self):
        return f"QuasiPeriodicForcing({list(self.terms)}, dim={self.dim})"


class SampledForcing(ForcingSignal):
    """Forcing sampled on a uniform grid, linearly interpolated in between.

    Outside ``[times[0], times[-1]]`` the signal is zero (``outside="zero"``)
    or evaluation raises (``outside="raise"``).
    """

    kind = "sampled-path"

    def __init__(self, times, values, outside="zero", metadata=None):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != times.size:
            raise ParameterError("values must have shape (len(times), dim)")
        steps = np.diff(times)
        if times.size < 2 or np.any(steps <= 0) or np.ptp(steps) > 1e-9 * max(1.0, steps[0]):
            raise ParameterError("sampled forcing needs a strictly increasing uniform grid")
        if outside not in ("zero", "raise"):
            raise ParameterError("outside must be 'zero' or 'raise'")
        self.times = times
        self.values = values
        self.dim = values.shape[1]
        self.outside = outside
        self.metadata = dict(metadata or {})
        self._t0 = times[0]
        self._h = (times[-1] - times[0]) / (times.size - 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        s = (t - self._t0) / self._h
        n = self.times.size
        inside = (s >= -1e-9) & (s <= n - 1 + 1e-9)
        if self.outside == "raise" and not np.all(inside):
            raise ParameterError("forcing evaluated outside its sampled domain")
        s = np.clip(s, 0.0, n - 1)
        i = np.minimum(np.floor(s).astype(int), n - 2)
        w = (s - i)[..., None]
        out = (1.0 - w) * self.values[i] + w * self.values[i + 1]
        if self.outside == "zero":
            out = np.where(inside[..., None], out, 0.0)
        return out

    @classmethod
    def from_csv(cls, path, **kw):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:], **kw)

    def save_csv(self, path):
        self.to_csv(path, self.times)

    def __repr__(self):
        return f"SampledForcing(n={self.times.size}, dim={self.dim})"


# --------------------------------------------------------------------------
# systems


@dataclass(frozen=True)
class SaddleSystem:
    """Autonomous field ``f0`` plus additive forcing, with a saddle ``p``."""

    dim: int
    f0: Callable
    jacobian_at: Callable
    saddle: np.ndarray
    forcing: ForcingSignal
    name: str = "system"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.asarray(self.saddle, dtype=float)
        object.__setattr__(self, "saddle", p)
        if p.shape != (self.dim,):
            raise ParameterError("saddle has the wrong dimension")
        if np.linalg.norm(self.f0(p)) >= 1e-10:
            raise ParameterError("saddle is not an equilibrium of f0")
        if self.forcing.dim != self.dim:
            raise ParameterError("forcing dimension does not match the system")

    def f(self, x, t):
        return self.f0(x) + self.forcing(t)

    def with_forcing(self, forcing):
        return SaddleSystem(self.dim, self.f0, self.jacobian_at, self.saddle, forcing,
                            self.name, dict(self.params))


def eckart_1dof(k=1.0, forcing=None):
    """Rescaled Eckart barrier ``x'' = tanh x sech^2 x - k x' + F(s)``."""
    k = check_positive(k, "k", strict=False)

    def f0(x):
        x = np.asarray(x, dtype=float)
        q, v = x[..., 0], x[..., 1]
        sech2 = 1.0 / np.cosh(q) ** 2
        return np.stack([v, np.tanh(q) * sech2 - k * v], axis=-1)

    def jac(x):
        q = float(np.asarray(x)[0])
        sech2 = 1.0 / np.cosh(q) ** 2
        return np.array([[0.0, 1.0], [sech2 * (sech2 - 2.0 * np.tanh(q) ** 2), -k]])

    forcing = ZeroForcing(2) if forcing is None else forcing
    return SaddleSystem(2, f0, jac, np.zeros(2), forcing, "eckart-1dof", {"k": k})


def roll_heave_2dof(h=1.0, kx=1.0, ky=1.0, side=1, forcing=None):
    """Rescaled roll-heave model about the saddle ``(1, side, 0, 0)``.

    State is ``(x, y, v_x, v_y)``: heave, roll and their velocities.
    """
    h = check_positive(h, "h")
    kx = check_positive(kx, "kx", strict=False)
    ky = check_positive(ky, "ky", strict=False)
    if side not in (1, -1):
        raise ParameterError("side must be +1 or -1")

    def f0(s):
        s = np.asarray(s, dtype=float)
        x, y, vx, vy = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
        return np.stack([vx, vy, -h * (x - y * y) - kx * vx, -y + x * y - ky * vy], axis=-1)

    def jac(s):
        x, y = float(s[0]), float(s[1])
        return np.array([[0.0, 0.0, 1.0, 0.0],
                         [0.0, 0.0, 0.0, 1.0],
                         [-h, 2.0 * h * y, -kx, 0.0],
                         [y, x - 1.0, 0.0, -ky]])

    forcing = ZeroForcing(4) if forcing is None else forcing
    return SaddleSystem(4, f0, jac, np.array([1.0, float(side), 0.0, 0.0]), forcing,
                        "roll-heave-2dof", {"h": h, "kx": kx, "ky": ky, "side": side})


def hamiltonian_2dof(h, x, y, vx, vy):
    """Energy of the undamped, unforced roll-heave model (Lyapunov when damped)."""
    check_positive(h, "h")
    return vx * vx / (4.0 * h) + 0.5 * vy * vy + 0.5 * (y * y + 0.5 * x * x - x * y * y)


def energy_1dof(x, v):
    return 0.5 * v * v + 0.5 / np.cosh(x) ** 2


# --------------------------------------------------------------------------
# integration


def rk4_step(f, x, t, h):
    k1 = f(x, t)
    k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def flow_map(sys, x0, t0, dt, substeps=10):
    """Advance ``x0`` from ``t0`` by ``dt`` with ``substeps`` classical RK4 steps.

    ``x0`` may be a single state or a batch ``(n, d)``; ``t0`` may then be
    a scalar or an array of ``n`` start times.  Negative ``dt`` integrates
    backwards.
    """
    substeps = check_int(substeps, "substeps", minimum=1)
    x = np.array(x0, dtype=float)
    t = np.asarray(t0, dtype=float)
    if x.ndim == 2 and t.ndim == 1:
        t = t[:, None]
    h = dt / substeps
    for step in range(substeps):
        x = rk4_step(sys.f, x, t, h) if t.ndim < 2 else _rk4_batched(sys, x, t, h)
        if not np.all(np.isfinite(x)):
            raise FlowBlowUpError(step, float(np.min(t0)) + step * h)
        t = t + h
    return x


def _rk4_batched(sys, x, t, h):
    # t has shape (n, 1); forcing wants (n,)
    def f(xx, tt):
        return sys.f0(xx) + sys.forcing(tt[:, 0])
    return rk4_step(f, x, t, h)


def integrate(sys, x0, t0, t1, step=0.005):
    """Fixed-step RK4 path from ``t0`` to ``t1``; returns ``(times, states)``."""
    n = max(1, int(np.ceil(abs(t1 - t0) / step - 1e-9)))
    h = (t1 - t0) / n
    x = np.array(x0, dtype=float)
    out = np.empty((n + 1,) + x.shape)
    out[0] = x
    t = t0
    for i in range(n):
        x = rk4_step(sys.f, x, t, h)
        if not np.all(np.isfinite(x)):
            raise FlowBlowUpError(i, t)
        t = t0 + (i + 1) * h
        out[i + 1] = x
    return t0 + h * np.arange(n + 1), out


# --------------------------------------------------------------------------
# filtered white noise


def ou_transition(drift, diffusion, dt):
    """Exact one-step mean map and covariance of ``d eta = D eta dt + B dW``.

    Uses Van Loan's block exponential.  Returns ``(Phi, Q)`` with
    ``eta(t+dt) | eta(t) ~ N(Phi eta(t), Q)``.
    """
    D = np.asarray(drift, dtype=float)
    B = np.asarray(diffusion, dtype=float)
    n = D.shape[0]
    C = np.zeros((2 * n, 2 * n))
    C[:n, :n] = -D
    C[:n, n:] = B @ B.T
    C[n:, n:] = D.T
    E = expm(C * dt)
    Phi = E[n:, n:].T
    Q = Phi @ E[:n, n:]
    return Phi, 0.5 * (Q + Q.T)


def ou_drift(lam, omega):
    return np.array([[-lam, -omega], [omega, -lam]])


def sample_ou_path(lam, omega, B, seed, grid, components=(2, 3), dim=4):
    """One exact-discretisation sample of the rotating 2D OU process.

    The path starts at ``eta(grid.t_minus) = 0`` and is returned as a
    :class:`SampledForcing` whose two components are written into
    ``components`` of a ``dim``-vector (``(F, M)`` act on ``v_x, v_y``).
    """
    lam = check_positive(lam, "lambda")
    B = np.asarray(B, dtype=float)
    if B.shape != (2, 2):
        raise ParameterError("B must be 2x2")
    Phi, Q = ou_transition(ou_drift(lam, omega), B, grid.dt)
    # Q is PSD; a zero B gives a zero factor
    w, V = np.linalg.eigh(Q)
    L = V * np.sqrt(np.clip(w, 0.0, None))
    rng = np.random.Generator(np.random.PCG64(seed))
    z = rng.standard_normal((grid.n - 1, 2))
    eta = np.zeros((grid.n, 2))
    for i in range(grid.n - 1):
        eta[i + 1] = Phi @ eta[i] + L @ z[i]
    values = np.zeros((grid.n, dim))
    values[:, components[0]] = eta[:, 0]
    values[:, components[1]] = eta[:, 1]
    meta = {"lambda": lam, "omega": float(omega), "B": B.tolist(), "seed": int(seed),
            "rng": "numpy.PCG64", "eta0": [0.0, 0.0], "grid": grid.to_dict(),
            "scheme": "exact-gaussian"}
    return SampledForcing(grid.times, values, metadata=meta)


def ou_stationary_autocovariance(lam, omega, B, lag):
    """``E[eta(t+lag) eta(t)^T]`` in the stationary regime."""
    D = ou_drift(lam, omega)
    S = _stationary_cov(D, np.asarray(B, dtype=float))
    return expm(D * lag) @ S


def _stationary_cov(D, B):
    from scipy.linalg import solve_continuous_lyapunov
    return solve_continuous_lyapunov(D, -B @ B.T)
