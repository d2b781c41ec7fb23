"""Problem builders and independent oracles shared by the test modules."""

import numpy as np
import scipy.optimize as so

from hesscov.kkt import ConstrainedProblem


def toy_problem():
    """max -(p^2 + q^2)/2 subject to p + q - 2 = 0."""
    return ConstrainedProblem(
        n_independent=1, n_dependent=1,
        merit=lambda z: -0.5 * float(z @ z),
        merit_gradient=lambda z: -np.asarray(z, dtype=float),
        merit_hessian=lambda z: -np.eye(2),
        constraints=lambda z: np.array([z[0] + z[1] - 2.0]),
        constraint_jacobian=lambda z: np.array([[1.0, 1.0]]),
        constraint_hessian_contraction=lambda z, lam: np.zeros((2, 2)),
        labels=['p', 'q'])


class SmoothProblem:
    """Random strictly concave merit with mildly nonlinear constraints.

    ``g(p, q) = B q + C p + c1 tanh(q) + c2 (D p)^2 - d`` with ``B`` close to
    a multiple of the identity, so the constraints can be solved for ``q``.
    The merit is ``-1/2 (z-c)' S (z-c) - k sum (z-c)^4``.
    """

    def __init__(self, rng, n, m):
        self.n, self.m = n, m
        nz = n + m
        G = rng.normal(size=(nz, nz))
        self.S = G @ G.T / nz + 0.5 * np.eye(nz)
        self.c = rng.normal(size=nz)
        self.k = 0.02
        self.B = 3 * np.eye(m) + 0.3 * rng.normal(size=(m, m))
        self.C = rng.normal(size=(m, n))
        self.D = rng.normal(size=(m, n)) * 0.5
        self.c1, self.c2 = 0.4, 0.15
        self.d = rng.normal(size=m)

    def merit(self, z):
        r = z - self.c
        return float(-0.5 * r @ self.S @ r - self.k * np.sum(r ** 4))

    def grad(self, z):
        r = z - self.c
        return -self.S @ r - 4 * self.k * r ** 3

    def hess(self, z):
        r = z - self.c
        return -self.S - np.diag(12 * self.k * r ** 2)

    def g(self, z):
        p, q = z[:self.n], z[self.n:]
        Dp = self.D @ p
        return self.B @ q + self.C @ p + self.c1 * np.tanh(q) + self.c2 * Dp ** 2 - self.d

    def jac(self, z):
        p, q = z[:self.n], z[self.n:]
        Dp = self.D @ p
        Jp = self.C + 2 * self.c2 * Dp[:, None] * self.D
        Jq = self.B + np.diag(self.c1 / np.cosh(q) ** 2)
        return np.hstack([Jp, Jq])

    def ghess(self, z, lam):
        p, q = z[:self.n], z[self.n:]
        H = np.zeros((self.n + self.m, self.n + self.m))
        H[:self.n, :self.n] = 2 * self.c2 * (self.D.T * lam) @ self.D
        t = np.tanh(q)
        H[self.n:, self.n:] = np.diag(lam * self.c1 * (-2 * t * (1 - t ** 2)))
        return H

    def problem(self):
        return ConstrainedProblem(self.n, self.m, self.merit, self.grad, self.hess,
                                  self.g, self.jac, self.ghess)

    # -- nonlinear elimination oracle ---------------------------------
    def solve_q(self, p, q0=None):
        q0 = np.zeros(self.m) if q0 is None else q0
        sol = so.root(lambda q: self.g(np.r_[p, q]), q0,
                      jac=lambda q: self.jac(np.r_[p, q])[:, self.n:],
                      method='hybr', tol=1e-15)
        return sol.x

    def reduced_merit(self, p):
        return self.merit(np.r_[p, self.solve_q(p)])

    def reduced_optimum(self):
        """``(z*, lambda*)`` from unconstrained maximization of the reduced merit."""
        def neg(p):
            z = np.r_[p, self.solve_q(p)]
            J = self.jac(z)
            Jq, Jp = J[:, self.n:], J[:, :self.n]
            dq = -np.linalg.solve(Jq, Jp)
            gr = self.grad(z)
            return -self.merit(z), -(gr[:self.n] + dq.T @ gr[self.n:])
        res = so.minimize(neg, np.zeros(self.n), jac=True, method='BFGS',
                          options={'gtol': 1e-12, 'maxiter': 2000})
        p = res.x
        z = np.r_[p, self.solve_q(p)]
        Jq = self.jac(z)[:, self.n:]
        lam = -np.linalg.solve(Jq.T, self.grad(z)[self.n:])
        return z, lam


def fd_hessian(f, x, h=1e-3):
    """Central second differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.empty((n, n))
    E = np.eye(n) * h
    f0 = f(x)
    for i in range(n):
        H[i, i] = (f(x + E[i]) - 2 * f0 + f(x - E[i])) / h ** 2
        for j in range(i):
            H[i, j] = H[j, i] = (f(x + E[i] + E[j]) - f(x + E[i] - E[j])
                                 - f(x - E[i] + E[j]) + f(x - E[i] - E[j])) / (4 * h ** 2)
    return H


def elimination_sensitivity(J, n):
    """``grad w = [I; -Jq^-1 Jp]`` for the partition ``z = (p, q)``."""
    Jp, Jq = J[:, :n], J[:, n:]
    return np.vstack([np.eye(n), -np.linalg.solve(Jq, Jp)])


def trapezoid_propagators(A, B, h):
    """One-step maps of the trapezoidal rule for ``dx/dt = A x + B theta``."""
    I = np.eye(A.shape[0])
    L = I - 0.5 * h * A
    M = np.linalg.solve(L, I + 0.5 * h * A)
    N = np.linalg.solve(L, h * B)
    return M, N


def gls_design(A, B, h, steps, meas_nodes, observed):
    """Regressor of the observed state on ``(theta, x0)`` at measured nodes."""
    nx, nt = A.shape[0], B.shape[1]
    M, N = trapezoid_propagators(A, B, h)
    Phi, Gam = np.eye(nx), np.zeros((nx, nt))
    rows = {0: np.r_[Gam[observed], Phi[observed]]}
    for k in range(1, steps + 1):
        Phi = M @ Phi
        Gam = M @ Gam + N
        rows[k] = np.r_[Gam[observed], Phi[observed]]
    return np.array([rows[k] for k in meas_nodes])
