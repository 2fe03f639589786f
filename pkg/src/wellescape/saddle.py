"""Eigenstructure of saddle linearisations and closed-form linear solutions."""

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from ._validation import ParameterError, check_positive


class UnsupportedRegimeError(ParameterError):
    """The closed forms assume an oscillatory (underdamped) centre pair."""


@dataclass(frozen=True)
class SaddleEigenstructure:
    """Real basis adapted to the splitting stable | centre | unstable.

    Columns of ``P`` are ordered ``(u_1..u_{n_minus}, w_1..w_{n_centre},
    v_1..v_{n_plus})``.  A complex centre pair is stored as the real and
    imaginary parts of one eigenvector; ``eigenvalues`` follow the same
    column order.
    """

    A: np.ndarray
    eigenvalues: np.ndarray
    P: np.ndarray
    n_minus: int
    n_centre: int
    n_plus: int

    def __post_init__(self):
        d = self.A.shape[0]
        if self.n_minus + self.n_centre + self.n_plus != d:
            raise ParameterError("subspace dimensions do not add up to d")

    @property
    def dim(self):
        return self.A.shape[0]

    @property
    def P_inv(self):
        return np.linalg.inv(self.P)

    @property
    def condition(self):
        return float(np.linalg.cond(self.P))

    @property
    def stable_basis(self):
        return self.P[:, :self.n_minus]

    @property
    def centre_basis(self):
        return self.P[:, self.n_minus:self.n_minus + self.n_centre]

    @property
    def unstable_basis(self):
        return self.P[:, self.n_minus + self.n_centre:]

    @property
    def lambda_minus(self):
        """Most negative real part among strong-stable and centre eigenvalues."""
        return float(np.min(self.eigenvalues[:self.n_minus + self.n_centre].real))

    @property
    def lambda_plus(self):
        return float(np.max(self.eigenvalues[self.n_minus + self.n_centre:].real))

    def to_json(self):
        return json.dumps({
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "P": self.P.reshape(-1).tolist(),
            "dims": {"n_minus": self.n_minus, "n_centre": self.n_centre, "n_plus": self.n_plus},
            "condition": self.condition,
        })


def eigenstructure_1dof(k):
    k = check_positive(k, "k", strict=False)
    A = np.array([[0.0, 1.0], [1.0, -k]])
    root = np.sqrt(4.0 + k * k)
    lm, lp = 0.5 * (-k - root), 0.5 * (-k + root)
    P = np.array([[1.0, 1.0], [lm, lp]])
    return SaddleEigenstructure(A, np.array([lm, lp], dtype=complex), P, 1, 0, 1)


def roll_heave_alpha_beta(h):
    r = 2.0 * np.sqrt(h) * np.sqrt(8.0 + h)
    return 2.0 * h + r, -2.0 * h + r


def roll_heave_eigenvalues(h, k):
    """Closed-form eigenvalues ``(lambda_1..lambda_4)`` for ``k_x = k_y = k``."""
    alpha, beta = roll_heave_alpha_beta(h)
    s1 = np.sqrt(complex(k * k - alpha))
    s2 = np.sqrt(k * k + beta)
    return np.array([0.5 * (-k - s1), 0.5 * (-k + s1),
                     0.5 * (-k - s2), 0.5 * (-k + s2)], dtype=complex)


def roll_heave_jacobian(h, kx, ky, side):
    return np.array([[0.0, 0.0, 1.0, 0.0],
                     [0.0, 0.0, 0.0, 1.0],
                     [-h, side * 2.0 * h, -kx, 0.0],
                     [side * 1.0, 0.0, 0.0, -ky]])


def roll_heave_eigenvector(lam, k, side):
    """Eigenvector of the saddle Jacobian for eigenvalue ``lam``, last entry 1."""
    lam = complex(lam)
    x = side * (lam + k)
    return np.array([x, 1.0 / lam, lam * x, 1.0], dtype=complex)


def eigenstructure_2dof(h=1.0, k=1.0, side=1):
    """Saddle eigenstructure of the roll-heave model with equal damping ``k``."""
    h = check_positive(h, "h")
    k = check_positive(k, "k", strict=False)
    if side not in (1, -1):
        raise ParameterError("side must be +1 or -1")
    alpha, _ = roll_heave_alpha_beta(h)
    if k * k >= alpha:
        raise UnsupportedRegimeError(
            f"k^2={k * k:.4g} >= alpha={alpha:.4g}: overdamped centre is not supported")
    A = roll_heave_jacobian(h, k, k, side)
    lam = roll_heave_eigenvalues(h, k)
    vc = roll_heave_eigenvector(lam[0], k, side)
    u = roll_heave_eigenvector(lam[2], k, side).real
    v = roll_heave_eigenvector(lam[3], k, side).real
    P = np.column_stack([u, vc.real, vc.imag, v])
    return SaddleEigenstructure(A, np.array([lam[2], lam[0], lam[1], lam[3]]), P, 1, 2, 1)


def numeric_eigenstructure(A, n_centre=0, tol=1e-10):
    """Eigenstructure of an arbitrary hyperbolic ``A`` from a numerical eigensolver.

    The ``n_centre`` contracting eigenvalues with the weakest contraction
    form the centre block; complex pairs use (Re, Im) of one eigenvector.
    Eigenvectors are normalised to unit norm.
    """
    A = np.asarray(A, dtype=float)
    w, V = np.linalg.eig(A)
    if np.any(np.abs(w.real) < tol):
        raise ParameterError("A has an eigenvalue on the imaginary axis")
    order = np.argsort(w.real, kind="stable")
    w, V = w[order], V[:, order]
    stable = [i for i in range(len(w)) if w[i].real < 0]
    unstable = [i for i in range(len(w)) if w[i].real > 0]
    centre = stable[len(stable) - n_centre:] if n_centre else []
    strong = stable[:len(stable) - n_centre]

    def real_columns(idx):
        cols, vals, skip = [], [], set()
        for i in idx:
            if i in skip:
                continue
            if abs(w[i].imag) > tol:
                j = next(j for j in idx if j != i and j not in skip
                         and abs(w[j] - np.conj(w[i])) < 1e-8 * max(1.0, abs(w[i])))
                lam = w[i] if w[i].imag < 0 else w[j]
                vec = V[:, i] if w[i].imag < 0 else V[:, j]
                vec = vec / np.linalg.norm(vec)
                cols += [vec.real, vec.imag]
                vals += [lam, np.conj(lam)]
                skip.update((i, j))
            else:
                vec = V[:, i].real
                cols.append(vec / np.linalg.norm(vec))
                vals.append(w[i])
        return cols, vals

    cs, ls = real_columns(strong)
    cc, lc = real_columns(centre)
    cu, lu = real_columns(unstable)
    P = np.column_stack(cs + cc + cu)
    return SaddleEigenstructure(A, np.array(ls + lc + lu, dtype=complex), P,
                                len(cs), len(cc), len(cu))


def block_matrix_exp(A, dt, cond_limit=1e8):
    """``exp(dt*A)``: eigendecomposition when well conditioned, else Pade."""
    check_positive(dt, "dt")
    A = np.asarray(A, dtype=float)
    w, V = np.linalg.eig(A)
    if np.linalg.cond(V) < cond_limit:
        E = (V * np.exp(dt * w)) @ np.linalg.inv(V)
        return E.real
    return expm(dt * A)


# --------------------------------------------------------------------------
# bounded solutions of the linearised forced system


def linear_hyperbolic_trajectory(A, terms, dim=None):
    """Bounded solution of ``y' = A y + sum_i a_i cos(w_i t + phi_i) e_{c_i}``.

    ``A`` must have no eigenvalue on the imaginary axis.  Each term is solved
    in complex modal coordinates, where the bounded particular solution of
    ``z' = lam z + b e^{i w t}`` is ``b e^{i w t} / (i w - lam)``; constant
    terms reduce to ``-A^{-1} F``.  Returns a callable ``t -> (..., d)``.
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[0] if dim is None else dim
    w, V = np.linalg.eig(A)
    Vinv = np.linalg.inv(V)
    modes = []
    for term in terms:
        amp, omega, phase, comp = term.amp, term.omega, term.phase, term.component
        e = np.zeros(d)
        e[comp] = 1.0
        if omega == 0.0:
            modes.append(("const", -np.linalg.solve(A, amp * np.cos(phase) * e)))
            continue
        b = Vinv @ e * amp
        coeff = V @ np.diag(1.0 / (1j * omega - w)) @ b * np.exp(1j * phase)
        modes.append(("wave", omega, coeff))

    def y(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (d,))
        for mode in modes:
            if mode[0] == "const":
                out += mode[1]
            else:
                out += (np.exp(1j * mode[1] * t)[..., None] * mode[2]).real
        return out

    return y


def linear_hyp_trajectory_1dof(k, terms):
    """Bounded solution of the Eckart linearisation with forcing in ``x''``."""
    eig = eigenstructure_1dof(k)
    for term in terms:
        if term.component != 1:
            raise ParameterError("1DoF forcing acts on the velocity component only")
    return linear_hyperbolic_trajectory(eig.A, terms)


def single_cosine_hyp_solution(mu_minus, mu_plus, a, omega, t):
    """Bounded solution of ``y' = diag(-mu_-, mu_+) y + (-a cos wt, a cos wt)``.

    Scalar form from the explicit integral; independent of the modal route.
    """
    t = np.asarray(t, dtype=float)
    alpha_m = a / (1.0 + mu_minus ** 2 / omega ** 2)
    alpha_p = a / (1.0 + mu_plus ** 2 / omega ** 2)
    # bounded parts: z_- = -a/(mu_- + i w) e^{iwt}, z_+ = a/(i w - mu_+) e^{iwt}, real parts
    y1 = -alpha_m * (np.sin(omega * t) / omega + mu_minus / omega ** 2 * np.cos(omega * t))
    y2 = alpha_p * (np.sin(omega * t) / omega - mu_plus / omega ** 2 * np.cos(omega * t))
    return np.stack([y1, y2], axis=-1)
