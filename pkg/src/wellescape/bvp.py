"""Discretised Newton solver for hyperbolic trajectories and their manifolds.

The unknown is a displacement ``Y`` (shape ``(N, d)``) from a base path:
the saddle for the hyperbolic problem, the hyperbolic trajectory for the
manifold problems.  The residual stacks the ``N - 1`` shooting defects of
the RK4 flow map and one block of ``d`` boundary conditions, each of which
pins one coordinate ``(P^{-1} Y_n)_j`` at one node ``n``.

The Newton matrix replaces the flow derivative by ``exp(dt A)``.  Placing
every boundary row next to the shooting rows of its node makes the matrix
banded (bandwidth about ``2d``), so one LAPACK band LU factorisation is
computed per solve and reused in every iteration.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from ._validation import ParameterError, check_positive
from .dynamics import GridTrajectory, rk4_step
from .saddle import block_matrix_exp, linear_hyperbolic_trajectory

KINDS = ("hyperbolic", "centre", "stable", "unstable")


class BvpError(RuntimeError):
    pass


class ResidualBlowUpError(BvpError):
    def __init__(self, interval):
        self.interval = interval
        super().__init__(f"flow map blew up on interval {interval}")


class SingularMatrixError(BvpError):
    pass


class NewtonConvergenceError(BvpError):
    def __init__(self, message, report):
        self.report = report
        super().__init__(message)


class NewtonDivergenceError(NewtonConvergenceError):
    pass


class WindowTooShortWarning(UserWarning):
    pass


@dataclass
class NewtonReport:
    iterations: int
    final_residual: float
    final_step: float
    converged: bool
    eps_c: float
    eps_f: float
    residual_history: list = field(default_factory=list)
    step_history: list = field(default_factory=list)
    damped_iterations: int = 0

    def to_dict(self):
        return {"iterations": self.iterations, "final_residual": self.final_residual,
                "final_step": self.final_step, "converged": self.converged,
                "eps_c": self.eps_c, "eps_f": self.eps_f,
                "residual_history": list(self.residual_history),
                "step_history": list(self.step_history),
                "damped_iterations": self.damped_iterations}


@dataclass
class BvpProblem:
    """One boundary-value problem on a uniform grid.

    ``base`` is the path displacements are measured from.  ``J`` and ``q``
    are only used by the manifold kinds; ``q`` lists centre coordinates
    first, then stable (``stable`` kind) or unstable (``unstable`` kind)
    coordinates.
    """

    sys: object
    eig: object
    grid: object
    kind: str = "hyperbolic"
    base: np.ndarray = None
    q: np.ndarray = None
    J: int = None
    initial_guess: np.ndarray = None
    substeps: int = 10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"kind must be one of {KINDS}")
        d, n = self.eig.dim, self.grid.n
        if self.base is None:
            self.base = np.tile(self.sys.saddle, (n, 1))
        self.base = np.asarray(self.base, dtype=float)
        if self.base.shape != (n, d):
            raise ParameterError("base path has the wrong shape")
        if self.kind != "hyperbolic":
            if self.J is None:
                self.J = n // 2
            if not 0 < self.J < n - 1:
                raise ParameterError("J must be strictly between the first and last node")
            m = self.q_dim
            self.q = np.zeros(m) if self.q is None else np.asarray(self.q, dtype=float).reshape(-1)
            if self.q.shape != (m,):
                raise ParameterError(f"q must have length {m} for kind {self.kind}")
        if self.initial_guess is None:
            self.initial_guess = np.zeros((n, d))
        self.initial_guess = np.asarray(self.initial_guess, dtype=float)

    @property
    def q_dim(self):
        e = self.eig
        return {"hyperbolic": 0, "centre": e.n_centre, "stable": e.n_centre + e.n_minus,
                "unstable": e.n_centre + e.n_plus}[self.kind]

    def pins(self):
        """For each coordinate ``j`` of ``P^{-1} Y``: (node, target value)."""
        e, n = self.eig, self.grid.n
        ns, nc = e.n_minus, e.n_centre
        d = e.dim
        node = np.empty(d, dtype=int)
        target = np.zeros(d)
        if self.kind == "hyperbolic":
            node[:ns + nc] = 0
            node[ns + nc:] = n - 1
        elif self.kind == "centre":
            node[:ns] = 0
            node[ns:ns + nc] = self.J
            node[ns + nc:] = n - 1
            target[ns:ns + nc] = self.q
        elif self.kind == "stable":
            node[:ns + nc] = self.J
            node[ns + nc:] = n - 1
            target[:ns] = self.q[nc:]
            target[ns:ns + nc] = self.q[:nc]
        else:
            node[:ns] = 0
            node[ns:] = self.J
            target[ns:] = self.q
        return node, target


def _flow_nodes(sys, X, t, dt, substeps):
    """Advance every row of ``X`` (start times ``t``) by ``dt``."""
    h = dt / substeps
    tt = t.copy()

    def f(xx, ts):
        return sys.f0(xx) + sys.forcing(ts)

    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(substeps):
            X = rk4_step(f, X, tt, h)
            tt = tt + h
    return X


def build_residual(problem, Y):
    """Residual ``(N, d)``: shooting defects, then the boundary block."""
    Y = np.asarray(Y, dtype=float)
    if not np.all(np.isfinite(Y)):
        raise ParameterError("displacement contains non-finite values")
    g, base = problem.grid, problem.base
    t = g.times
    Z = Y + base
    out = np.empty_like(Y)
    flowed = _flow_nodes(problem.sys, Z[:-1], t[:-1], g.dt, problem.substeps)
    bad = ~np.all(np.isfinite(flowed), axis=1)
    if np.any(bad):
        raise ResidualBlowUpError(int(np.argmax(bad)))
    out[:-1] = flowed - Z[1:]
    node, target = problem.pins()
    Pinv = problem.eig.P_inv
    proj = Y[node] @ Pinv.T  # row j: P^{-1} Y_{node[j]}
    out[-1] = proj[np.arange(len(node)), np.arange(len(node))] - target
    return out


class NewtonMatrix:
    """Approximate Jacobian of the residual, with a band LU factorisation."""

    def __init__(self, problem):
        d, n = problem.eig.dim, problem.grid.n
        self.d, self.n = d, n
        E = block_matrix_exp(problem.eig.A, problem.grid.dt)
        Pinv = problem.eig.P_inv
        node, _ = problem.pins()
        rows, cols, vals = [], [], []
        for i in range(n - 1):
            r = i * d + np.arange(d)
            for a in range(d):
                rows += [r[a]] * (2 * d)
                cols += list(range(i * d, i * d + d)) + list(range((i + 1) * d, (i + 2) * d))
                vals += list(E[a]) + [-1.0 if b == a else 0.0 for b in range(d)]
        for j in range(d):
            rows += [(n - 1) * d + j] * d
            cols += list(range(node[j] * d, node[j] * d + d))
            vals += list(Pinv[j])
        self.rows = np.array(rows)
        self.cols = np.array(cols)
        self.vals = np.array(vals)
        keep = self.vals != 0.0
        self.rows, self.cols, self.vals = self.rows[keep], self.cols[keep], self.vals[keep]

        # banded ordering: boundary rows of node i precede the shooting rows of block i
        order = []
        for i in range(n):
            order += [(n - 1) * d + j for j in range(d) if node[j] == i]
            if i < n - 1:
                order += list(range(i * d, i * d + d))
        self.order = np.array(order)
        self.position = np.empty_like(self.order)
        self.position[self.order] = np.arange(n * d)
        pr = self.position[self.rows]
        self.kl = int(max(0, np.max(pr - self.cols)))
        self.ku = int(max(0, np.max(self.cols - pr)))
        kl, ku = self.kl, self.ku
        ab = np.zeros((2 * kl + ku + 1, n * d))
        ab[kl + ku + pr - self.cols, self.cols] = self.vals
        lub, piv, info = lapack.dgbtrf(ab, kl, ku)
        if info != 0:
            raise SingularMatrixError(
                f"Newton matrix is singular (dgbtrf info={info}); check subspace dimensions")
        self._lub, self._piv = lub, piv

    def solve(self, rhs):
        """Solve ``M z = rhs`` for ``rhs`` in residual order (shape ``(N, d)``)."""
        b = np.asarray(rhs, dtype=float).reshape(-1)[self.order]
        z, info = lapack.dgbtrs(self._lub, self.kl, self.ku, b, self._piv)
        if info != 0:
            raise SingularMatrixError(f"dgbtrs failed (info={info})")
        return z.reshape(self.n, self.d)

    def to_dense(self):
        """Dense matrix in residual row order (testing aid)."""
        M = np.zeros((self.n * self.d, self.n * self.d))
        M[self.rows, self.cols] = self.vals
        return M


def build_newton_matrix(problem):
    return NewtonMatrix(problem)


def newton_solve(problem, eps_c=1e-7, eps_f=1e-6, max_iter=50, damping=True, matrix=None):
    """Chord-Newton iteration ``M dY = -Phi(Y)``; returns ``(trajectory, report)``.

    Converged when both ``max|Y^k - Y^{k-1}| < eps_c`` and
    ``max|Phi(Y^k)| < eps_f``.  With ``damping`` the step is halved up to
    four times whenever the full step increases the residual.
    """
    check_positive(eps_c, "eps_c")
    check_positive(eps_f, "eps_f")
    M = build_newton_matrix(problem) if matrix is None else matrix
    Y = problem.initial_guess.copy()
    R = build_residual(problem, Y)
    rnorm = float(np.max(np.abs(R)))
    report = NewtonReport(0, rnorm, np.inf, False, eps_c, eps_f, [rnorm], [])
    for k in range(1, max_iter + 1):
        dY = M.solve(-R)
        scale = 1.0
        for attempt in range(5 if damping else 1):
            Yn = Y + scale * dY
            try:
                Rn = build_residual(problem, Yn)
                rn = float(np.max(np.abs(Rn)))
            except ResidualBlowUpError:
                if not damping or attempt == 4:
                    raise
                rn = np.inf
            if not damping or rn <= rnorm or attempt == 4:
                break
            scale *= 0.5
        if scale < 1.0:
            report.damped_iterations += 1
        step = float(np.max(np.abs(scale * dY)))
        Y, R, rnorm = Yn, Rn, rn
        report.iterations = k
        report.final_residual = rnorm
        report.final_step = step
        report.residual_history.append(rnorm)
        report.step_history.append(step)
        if step < eps_c and rnorm < eps_f:
            report.converged = True
            return GridTrajectory(problem.grid, Y + problem.base), report
        hist = report.residual_history
        if len(hist) >= 4 and all(hist[-i] > hist[-i - 1] for i in range(1, 4)) \
                and hist[-1] > 10.0 * hist[-4]:
            raise NewtonDivergenceError(
                f"residual grew from {hist[-4]:.3g} to {hist[-1]:.3g} in 3 iterations", report)
        if not np.isfinite(rnorm):
            raise NewtonDivergenceError("residual became non-finite", report)
    raise NewtonConvergenceError(
        f"no convergence in {max_iter} iterations (residual {rnorm:.3g}, step {step:.3g})",
        report)


# --------------------------------------------------------------------------
# user-facing solvers


def hyperbolic_trajectory(sys, eig, grid, guess="constant", eps_c=1e-7, eps_f=1e-6,
                          max_iter=50, substeps=10, damping=True):
    """Hyperbolic trajectory of ``sys`` near its saddle on ``grid``.

    ``guess="linearised"`` starts from the bounded solution of the
    linearised system (quasi-periodic or zero forcing only);
    ``guess="constant"`` starts from the saddle itself.
    """
    d = eig.dim
    if guess == "linearised":
        forcing = sys.forcing
        if forcing.kind == "zero":
            Y0 = np.zeros((grid.n, d))
        elif forcing.kind == "quasi-periodic":
            Y0 = linear_hyperbolic_trajectory(eig.A, forcing.terms, d)(grid.times)
        else:
            raise ParameterError("linearised guess needs zero or quasi-periodic forcing")
    elif guess == "constant":
        Y0 = np.zeros((grid.n, d))
    else:
        raise ParameterError("guess must be 'linearised' or 'constant'")
    problem = BvpProblem(sys, eig, grid, "hyperbolic", initial_guess=Y0, substeps=substeps)
    return newton_solve(problem, eps_c, eps_f, max_iter, damping)


def window_lengths(eig, growth=10.0, pairing="decay"):
    """Backward/forward window lengths ``(dT_minus, dT_plus)`` around ``t_J``.

    With ``pairing="decay"`` the backward length lets the strongest
    expansion change by ``growth`` and the forward length does the same for
    the strongest contraction.  ``pairing="expansion"`` swaps the rates, so
    each side is sized by the direction that grows fastest along it.
    """
    lg = np.log(growth)
    if pairing == "decay":
        return lg / eig.lambda_plus, lg / abs(eig.lambda_minus)
    if pairing == "expansion":
        return lg / abs(eig.lambda_minus), lg / eig.lambda_plus
    raise ParameterError("pairing must be 'decay' or 'expansion'")


def manifold_window(grid, J, eig, growth=10.0, kind="centre", pairing="decay"):
    """Node range ``(i0, i1)`` of the shortened window around node ``J``.

    The stable problem pins nothing before ``t_J`` and the unstable one
    nothing after it; that free side only continues ``Y_J`` through the flow
    (where it grows fastest) and is cut to a single interval.
    """
    dtm, dtp = window_lengths(eig, growth, pairing)
    m_minus = int(np.ceil(dtm / grid.dt - 1e-9))
    m_plus = int(np.ceil(dtp / grid.dt - 1e-9))
    if kind == "stable":
        m_minus = 1
    elif kind == "unstable":
        m_plus = 1
    i0, i1 = J - m_minus, J + m_plus
    if i0 < 0 or i1 > grid.n - 1:
        warnings.warn(f"manifold window [{i0}, {i1}] clipped to the grid", WindowTooShortWarning,
                      stacklevel=3)
    i0, i1 = max(i0, 0), min(i1, grid.n - 1)
    if not i0 < J < i1:
        raise ParameterError("node J leaves no room for a window on both sides")
    return i0, i1


def linear_manifold_guess(eig, grid, J, y_J):
    """``Y_i = exp((t_i - t_J) A) y_J`` on every node of ``grid``."""
    E = block_matrix_exp(eig.A, grid.dt)
    Einv = np.linalg.inv(E)
    Y = np.zeros((grid.n, eig.dim))
    Y[J] = y_J
    for i in range(J + 1, grid.n):
        Y[i] = E @ Y[i - 1]
    for i in range(J - 1, -1, -1):
        Y[i] = Einv @ Y[i + 1]
    return Y


def pinned_displacement(eig, kind, q):
    """Displacement at ``t_J`` whose pinned coordinates equal ``q``."""
    ns, nc = eig.n_minus, eig.n_centre
    coords = np.zeros(eig.dim)
    q = np.asarray(q, dtype=float)
    if kind == "centre":
        coords[ns:ns + nc] = q
    elif kind == "stable":
        coords[:ns] = q[nc:]
        coords[ns:ns + nc] = q[:nc]
    elif kind == "unstable":
        coords[ns:] = q
    return eig.P @ coords


def manifold_trajectory(sys, eig, X_hyp, kind, q, t0=None, J=None, eps_c=1e-7, eps_f=1e-6,
                        max_iter=50, substeps=10, growth=10.0, damping=True, window=True,
                        pairing="decay"):
    """Trajectory on the centre, stable or unstable manifold of ``X_hyp``.

    The pinned coordinates of ``P^{-1}(Y(t_J) - X_hyp(t_J))`` equal ``q``.
    By default the problem is solved on the shortened window around
    ``t_J = t0``; returns ``(trajectory on that window, report, local J)``.
    """
    if kind not in ("centre", "stable", "unstable"):
        raise ParameterError("kind must be centre, stable or unstable")
    m = {"centre": eig.n_centre, "stable": eig.n_centre + eig.n_minus,
         "unstable": eig.n_centre + eig.n_plus}[kind]
    if np.asarray(q, dtype=float).size != m:
        raise ParameterError(f"q must have length {m} for kind {kind}")
    grid = X_hyp.grid
    if J is None:
        J = grid.index_of(t0) if t0 is not None else grid.n // 2
    if window:
        i0, i1 = manifold_window(grid, J, eig, growth, kind, pairing)
    else:
        i0, i1 = 0, grid.n - 1
    sub = grid.sub(i0, i1)
    base = X_hyp.states[i0:i1 + 1]
    Jl = J - i0
    Y0 = linear_manifold_guess(eig, sub, Jl, pinned_displacement(eig, kind, q))
    problem = BvpProblem(sys, eig, sub, kind, base=base, q=q, J=Jl, initial_guess=Y0,
                         substeps=substeps)
    traj, report = newton_solve(problem, eps_c, eps_f, max_iter, damping)
    return traj, report, Jl
