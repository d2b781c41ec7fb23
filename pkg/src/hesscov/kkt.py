"""Equality-constrained maximization: problem container, bordered Hessian and
a Newton-KKT solver.

The solver maximizes a merit ``l(z)`` subject to ``g(z) = 0`` by solving the
symmetric indefinite KKT system at each iterate and globalizing with a
backtracking line search on the exact penalty ``l(z) - rho * ||g(z)||_1``.
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
import functools
import json
import logging
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import DimensionError, NumericError, SingularMatrixError

logger = logging.getLogger(__name__)

Array = np.ndarray


@dataclasses.dataclass(frozen=True)
class ConstrainedProblem:
    """Merit and equality constraints with first and second derivatives.

    The decision vector ``z`` has ``n_independent + n_dependent`` entries;
    ``p_index`` and ``q_index`` select the independent and dependent blocks.
    There are exactly ``n_dependent`` constraints. Derivative callbacks may
    return dense arrays or scipy sparse matrices.
    """

    n_independent: int
    n_dependent: int
    merit: Callable[[Array], float]
    merit_gradient: Callable[[Array], Array]
    merit_hessian: Callable[[Array], Array]
    constraints: Callable[[Array], Array]
    constraint_jacobian: Callable[[Array], Array]
    constraint_hessian_contraction: Callable[[Array, Array], Array]
    p_index: Optional[Array] = None
    q_index: Optional[Array] = None
    positive_index: Array = dataclasses.field(
        default_factory=lambda: np.zeros(0, dtype=int))
    """Variables that must stay strictly positive (noise scales)."""
    labels: Optional[Sequence[str]] = None

    def __post_init__(self):
        nz = self.n_independent + self.n_dependent
        p = (np.arange(self.n_independent) if self.p_index is None
             else np.asarray(self.p_index, dtype=int))
        q = (np.arange(self.n_independent, nz) if self.q_index is None
             else np.asarray(self.q_index, dtype=int))
        if p.size != self.n_independent or q.size != self.n_dependent:
            raise DimensionError("partition sizes do not match n, m")
        if not np.array_equal(np.sort(np.r_[p, q]), np.arange(nz)):
            raise DimensionError("p_index and q_index must partition z")
        object.__setattr__(self, 'p_index', p)
        object.__setattr__(self, 'q_index', q)
        object.__setattr__(self, 'positive_index',
                           np.asarray(self.positive_index, dtype=int))
        if self.labels is not None and len(self.labels) != nz:
            raise DimensionError("labels must have one entry per variable")

    @property
    def n(self) -> int:
        return self.n_independent

    @property
    def m(self) -> int:
        return self.n_dependent

    @property
    def nz(self) -> int:
        return self.n_independent + self.n_dependent

    def check_point(self, z, lam=None):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.nz,):
            raise DimensionError(f"z must have shape ({self.nz},), got {z.shape}")
        if lam is None:
            return z
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.m,):
            raise DimensionError(
                f"lambda must have shape ({self.m},), got {lam.shape}")
        return z, lam


class SolverStatus(str, enum.Enum):
    CONVERGED = 'converged'
    MAX_ITER = 'max_iter'
    SINGULAR_KKT = 'singular_kkt'
    LINE_SEARCH_FAILURE = 'line_search_failure'


@dataclasses.dataclass
class SolverOptions:
    tol_kkt: float = 1e-8
    tol_feas: float = 1e-8
    max_iter: int = 200
    regularization_initial: float = 1e-8
    regularization_growth: float = 10.0
    regularization_max: float = 1e20
    max_halvings: int = 30
    armijo: float = 1e-4
    backend: str = 'auto'
    """'dense', 'sparse' or 'auto' (sparse when callbacks return sparse)."""

    @classmethod
    def from_mapping(cls, mapping) -> 'SolverOptions':
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in mapping.items():
            if key not in fields:
                raise ValueError(f"unknown solver option {key!r}")
            kind = type(fields[key].default)
            kwargs[key] = kind(value) if kind is not str else str(value)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, section='solver') -> 'SolverOptions':
        """Read options from a ``key = value`` config file.

        Keys may sit in a ``[solver]`` section or at top level.
        """
        parser = configparser.ConfigParser()
        with open(path) as f:
            text = f.read()
        if not text.lstrip().startswith('['):
            text = f'[{section}]\n' + text
        parser.read_string(text)
        if not parser.has_section(section):
            return cls()
        return cls.from_mapping(dict(parser.items(section)))


@dataclasses.dataclass
class KktSolution:
    z_star: Array
    lambda_star: Array
    merit_value: float
    kkt_residual: float
    constraint_violation: float
    iterations: int
    status: SolverStatus
    regularization: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status is SolverStatus.CONVERGED

    def to_dict(self) -> dict:
        return {
            'status': self.status.value,
            'iterations': int(self.iterations),
            'merit_value': float(self.merit_value),
            'kkt_residual': float(self.kkt_residual),
            'constraint_violation': float(self.constraint_violation),
            'regularization': float(self.regularization),
            'z_star': [float(v) for v in self.z_star],
            'lambda_star': [float(v) for v in self.lambda_star],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, 'w') as f:
                f.write(text + '\n')
        return text

    @classmethod
    def from_dict(cls, d) -> 'KktSolution':
        return cls(z_star=np.asarray(d['z_star'], float),
                   lambda_star=np.asarray(d['lambda_star'], float),
                   merit_value=d['merit_value'],
                   kkt_residual=d['kkt_residual'],
                   constraint_violation=d['constraint_violation'],
                   iterations=d['iterations'],
                   status=SolverStatus(d['status']),
                   regularization=d.get('regularization', 0.0))


@dataclasses.dataclass(frozen=True)
class BorderedHessian:
    """Hessian of the Lagrangian with respect to ``(z, lambda)``.

    Rows and columns are ordered as ``z`` (in the problem's native order)
    followed by the multipliers. ``p_index``/``q_index`` locate the
    independent and dependent variables inside the z block.
    """

    n: int
    m: int
    matrix: object
    p_index: Array
    q_index: Array

    @property
    def size(self) -> int:
        return self.n + 2 * self.m

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def toarray(self) -> Array:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    @functools.cached_property
    def factor(self) -> 'KKTFactor':
        """Shared factorization; read-only once built."""
        return KKTFactor(self.matrix)

    def z_block(self):
        nz = self.n + self.m
        return self.matrix[:nz, :nz]

    def border(self):
        nz = self.n + self.m
        return self.matrix[nz:, :nz]

    def dependent_jacobian(self):
        """The square block of the constraint Jacobian wrt the dependents."""
        return self.border()[:, self.q_index]


def _admissible(z, positive_index):
    return positive_index.size == 0 or bool(np.all(z[positive_index] > 0))


def _is_sparse_problem(problem, z):
    return sp.issparse(problem.constraint_jacobian(z))


def eval_lagrangian(problem: ConstrainedProblem, z, lam) -> float:
    """Return ``l(z) + g(z) @ lam``."""
    z, lam = problem.check_point(z, lam)
    return float(problem.merit(z) + problem.constraints(z) @ lam)


def lagrangian_gradient(problem, z, lam) -> Array:
    J = problem.constraint_jacobian(z)
    return np.asarray(problem.merit_gradient(z)).ravel() + J.T @ lam


def _hessian_z(problem, z, lam, sparse):
    W = problem.merit_hessian(z)
    C = problem.constraint_hessian_contraction(z, lam)
    if sparse:
        return sp.csc_matrix(W) + sp.csc_matrix(C)
    return _dense(W) + _dense(C)


def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def _kkt_matrix(W, J, sparse):
    if sparse:
        return sp.bmat([[W, J.T], [J, None]], format='csc')
    J = _dense(J)
    m = J.shape[0]
    return np.block([[W, J.T], [J, np.zeros((m, m))]])


def assemble_bordered_hessian(problem: ConstrainedProblem, z, lam,
                              sparse=None) -> BorderedHessian:
    """Assemble the bordered Hessian ``[[W, J.T], [J, 0]]`` at ``(z, lam)``.

    ``W`` is the merit Hessian plus the multiplier-weighted constraint
    Hessians and ``J`` the constraint Jacobian.
    """
    z, lam = problem.check_point(z, lam)
    if sparse is None:
        sparse = _is_sparse_problem(problem, z)
    W = _hessian_z(problem, z, lam, sparse)
    J = problem.constraint_jacobian(z)
    if sparse:
        J = sp.csc_matrix(J)
    else:
        J = _dense(J)
    H = _kkt_matrix(W, J, sparse)
    values = H.data if sparse else H
    if not np.all(np.isfinite(values)):
        raise NumericError("bordered Hessian has non-finite entries")
    return BorderedHessian(problem.n, problem.m, H,
                           problem.p_index, problem.q_index)


class KKTFactor:
    """Factorization of a symmetric (possibly indefinite) matrix.

    Dense matrices use the Bunch-Kaufman ``sytrf`` decomposition, which also
    yields the inertia. Sparse matrices use SuperLU; inertia is then not
    available.
    """

    def __init__(self, K):
        self.shape = K.shape
        self.sparse = sp.issparse(K)
        self.inertia = None
        if self.sparse:
            K = sp.csc_matrix(K)
            try:
                self._lu = spla.splu(K)
            except RuntimeError as e:
                raise SingularMatrixError(str(e)) from e
            diag = self._lu.U.diagonal()
            if np.any(diag == 0) or not np.all(np.isfinite(diag)):
                raise SingularMatrixError("exactly singular matrix")
            self._norm1 = spla.norm(K, 1)
        else:
            K = np.asarray(K, dtype=float)
            lu, ipiv, info = scipy.linalg.lapack.dsytrf(K, lower=1)
            if info < 0:
                raise ValueError(f"illegal argument to sytrf: {info}")
            self._lu, self._ipiv = lu, ipiv
            self.inertia = _sytrf_inertia(lu, ipiv)
            if info > 0 or self.inertia[2] > 0:
                raise SingularMatrixError("exactly singular matrix")
            self._norm1 = np.abs(K).sum(axis=0).max()

    def solve(self, b) -> Array:
        b = np.asarray(b, dtype=float)
        if self.sparse:
            return self._lu.solve(b)
        x, info = scipy.linalg.lapack.dsytrs(self._lu, self._ipiv, b, lower=1)
        if info != 0:
            raise SingularMatrixError("sytrs failed")
        return x

    def rcond(self) -> float:
        """Reciprocal 1-norm condition number estimate."""
        n = self.shape[0]
        inv = spla.LinearOperator(self.shape, matvec=self.solve,
                                  rmatvec=self.solve, dtype=float)
        if n <= 4:
            inv_norm = np.abs(self.solve(np.eye(n))).sum(axis=0).max()
        else:
            inv_norm = spla.onenormest(inv)
        return float(1.0 / (self._norm1 * inv_norm))


def _sytrf_inertia(lu, ipiv):
    """Count (positive, negative, zero) eigenvalues from a sytrf factor."""
    n = lu.shape[0]
    pos = neg = zero = 0
    k = 0
    while k < n:
        if ipiv[k] > 0:
            d = lu[k, k]
            if d > 0:
                pos += 1
            elif d < 0:
                neg += 1
            else:
                zero += 1
            k += 1
        else:
            block = np.array([[lu[k, k], lu[k + 1, k]],
                              [lu[k + 1, k], lu[k + 1, k + 1]]])
            ev = np.linalg.eigvalsh(block)
            pos += int(np.sum(ev > 0))
            neg += int(np.sum(ev < 0))
            zero += int(np.sum(ev == 0))
            k += 2
    return pos, neg, zero


class _ReducedCurvature:
    """Reduced Hessian ``Z' W Z`` on the null space of the constraint Jacobian.

    ``Z = [I; -inv(J_q) J_p]`` (in partition order) is built from a sparse LU
    of the dependent Jacobian. The KKT matrix with z block ``W - delta*I``
    has the inertia of a strict maximum iff ``Z'(W - delta*I)Z`` is negative
    definite, which avoids an inertia-revealing sparse factorization.
    """

    def __init__(self, W, J, p_index, q_index):
        J = sp.csc_matrix(J)
        Jq = J[:, q_index]
        Jp = J[:, p_index].toarray()
        lu = spla.splu(Jq)
        nz = J.shape[1]
        Z = np.zeros((nz, p_index.size))
        Z[p_index] = np.eye(p_index.size)
        Z[q_index] = -lu.solve(Jp)
        if not np.all(np.isfinite(Z)):
            raise SingularMatrixError("dependent Jacobian is singular")
        self.ZWZ = Z.T @ (W @ Z)
        self.ZZ = Z.T @ Z

    def negative_definite(self, delta) -> bool:
        M = self.ZWZ - delta * self.ZZ
        try:
            np.linalg.cholesky(-0.5 * (M + M.T))
        except np.linalg.LinAlgError:
            return False
        return True


def _shift_sequence(options, delta_prev):
    deltas = [] if delta_prev > 0 else [0.0]
    d = max(options.regularization_initial,
            delta_prev / options.regularization_growth)
    while d <= options.regularization_max:
        deltas.append(d)
        d *= options.regularization_growth
    return deltas


def _factor_regularized(W, J, problem, sparse, options, delta_prev):
    """Yield factorizations of the KKT matrix with z block ``W - delta*I``.

    Only shifts giving the inertia of a strict maximum (``n+m`` negative and
    ``m`` positive eigenvalues) are yielded. Dense matrices read the inertia
    off the Bunch-Kaufman factor; sparse ones check the reduced Hessian.
    """
    nz, m = problem.nz, problem.m
    curvature = None
    if sparse and problem.n > 0:
        try:
            curvature = _ReducedCurvature(W, J, problem.p_index, problem.q_index)
        except (RuntimeError, SingularMatrixError):
            curvature = None
    eye = sp.identity(nz, format='csc') if sparse else np.eye(nz)
    for delta in _shift_sequence(options, delta_prev):
        if curvature is not None and not curvature.negative_definite(delta):
            continue
        K = _kkt_matrix(W - delta * eye if delta else W, J, sparse)
        try:
            factor = KKTFactor(K)
        except SingularMatrixError:
            continue
        if factor.inertia is not None and factor.inertia[:2] != (m, nz):
            continue
        yield factor, delta, curvature is not None or not sparse


def solve_equality_constrained(problem: ConstrainedProblem, z0,
                               options: Optional[SolverOptions] = None,
                               lambda0=None) -> KktSolution:
    """Maximize ``problem.merit`` subject to ``problem.constraints(z) = 0``."""
    options = options or SolverOptions()
    z = problem.check_point(np.array(z0, dtype=float))
    if not np.all(np.isfinite(z)):
        raise NumericError("initial point is not finite")
    nz, m = problem.nz, problem.m
    lam = np.zeros(m) if lambda0 is None else np.asarray(lambda0, float).copy()
    if options.backend == 'auto':
        sparse = _is_sparse_problem(problem, z)
    else:
        sparse = options.backend == 'sparse'
    pos = problem.positive_index

    def penalty_merit(z, rho):
        return problem.merit(z) - rho * np.abs(problem.constraints(z)).sum()

    delta = 0.0
    status = SolverStatus.MAX_ITER
    it = 0
    for it in range(options.max_iter + 1):
        grad = np.asarray(problem.merit_gradient(z), dtype=float).ravel()
        g = np.asarray(problem.constraints(z), dtype=float)
        J = problem.constraint_jacobian(z)
        J = sp.csc_matrix(J) if sparse else _dense(J)
        kkt_res = np.abs(grad + J.T @ lam).max(initial=0.0)
        feas = np.abs(g).max(initial=0.0)
        if kkt_res <= options.tol_kkt and feas <= options.tol_feas:
            status = SolverStatus.CONVERGED
            break
        if it == options.max_iter:
            break

        W = _hessian_z(problem, z, lam, sparse)
        rhs = -np.r_[grad, g]
        step = None
        for factor, delta_try, verified in _factor_regularized(
                W, J, problem, sparse, options, delta):
            sol = factor.solve(rhs)
            if not np.all(np.isfinite(sol)):
                continue
            dz, lam_new = sol[:nz], sol[nz:]
            if not verified:
                # inertia unknown: demand ascent curvature along the step
                dd = dz @ dz
                if dd > 0 and dz @ (W @ dz) - delta_try * dd > -1e-12 * dd:
                    continue
            step = (factor, dz, lam_new, delta_try)
            break
        if step is None:
            status = SolverStatus.SINGULAR_KKT
            break
        factor, dz, lam_new, delta = step

        rho = 2 * np.abs(lam_new).max(initial=0.0)
        phi0 = penalty_merit(z, rho)
        slope = max(grad @ dz - rho * np.abs(g).sum(), 0.0)
        slack = 1e-13 * max(1.0, abs(phi0))
        alpha = 1.0
        z_next = None
        for _ in range(options.max_halvings + 1):
            z_try = z + alpha * dz
            if _admissible(z_try, pos):
                phi = penalty_merit(z_try, rho)
                if np.isfinite(phi) and phi >= phi0 + options.armijo * alpha * slope - slack:
                    z_next = z_try
                    break
                if alpha == 1.0:
                    # second-order correction against the Maratos effect
                    g_try = problem.constraints(z_try)
                    z_soc = z_try + factor.solve(np.r_[np.zeros(nz), -g_try])[:nz]
                    if _admissible(z_soc, pos):
                        phi = penalty_merit(z_soc, rho)
                        if np.isfinite(phi) and phi >= phi0 + options.armijo * slope - slack:
                            z_next = z_soc
                            break
            alpha *= 0.5
        if z_next is None:
            status = SolverStatus.LINE_SEARCH_FAILURE
            break
        z = z_next
        lam = lam + alpha * (lam_new - lam)
        if delta > 0:
            logger.debug("iteration %d: regularization %g", it, delta)

    grad = np.asarray(problem.merit_gradient(z), dtype=float).ravel()
    J = problem.constraint_jacobian(z)
    return KktSolution(
        z_star=z, lambda_star=lam, merit_value=float(problem.merit(z)),
        kkt_residual=float(np.abs(grad + J.T @ lam).max(initial=0.0)),
        constraint_violation=float(
            np.abs(problem.constraints(z)).max(initial=0.0)),
        iterations=it, status=status, regularization=delta)


@dataclasses.dataclass
class DerivativeReport:
    """Worst-case discrepancies between analytic and finite differences.

    Errors are ``|analytic - fd| / max(1, |fd|)``; ``worst`` holds the
    (row, col) of the worst entry for each quantity.
    """

    gradient: float
    jacobian: float
    merit_hessian: float
    constraint_hessian: float
    worst: dict

    def max_error(self) -> float:
        return max(self.gradient, self.jacobian, self.merit_hessian,
                   self.constraint_hessian)

    def passed(self, tol) -> bool:
        return self.max_error() <= tol

    def to_dict(self):
        return {'gradient': self.gradient, 'jacobian': self.jacobian,
                'merit_hessian': self.merit_hessian,
                'constraint_hessian': self.constraint_hessian,
                'worst': {k: [int(i) for i in v] for k, v in self.worst.items()}}


def _rel_error(a, b):
    err = np.abs(a - b) / np.maximum(1.0, np.abs(b))
    if err.size == 0:
        return 0.0, (0,)
    loc = np.unravel_index(np.argmax(err), err.shape)
    return float(err[loc]), loc


def check_derivatives(problem: ConstrainedProblem, z, lam, step=1e-6,
                      columns=None) -> DerivativeReport:
    """Compare derivative callbacks against central differences.

    ``columns`` restricts the differenced variables (default: all).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    z, lam = problem.check_point(z, lam)
    cols = np.arange(problem.nz) if columns is None else np.asarray(columns)

    grad = np.asarray(problem.merit_gradient(z), float).ravel()
    J = _dense(problem.constraint_jacobian(z))
    Hl = _dense(problem.merit_hessian(z))
    Hg = _dense(problem.constraint_hessian_contraction(z, lam))

    fd_grad = np.empty(cols.size)
    fd_jac = np.empty((problem.m, cols.size))
    fd_hl = np.empty((problem.nz, cols.size))
    fd_hg = np.empty((problem.nz, cols.size))
    for k, j in enumerate(cols):
        zp = z.copy()
        zm = z.copy()
        zp[j] += step
        zm[j] -= step
        fd_grad[k] = (problem.merit(zp) - problem.merit(zm)) / (2 * step)
        fd_jac[:, k] = (problem.constraints(zp) - problem.constraints(zm)) / (2 * step)
        fd_hl[:, k] = (np.asarray(problem.merit_gradient(zp)).ravel()
                       - np.asarray(problem.merit_gradient(zm)).ravel()) / (2 * step)
        fd_hg[:, k] = (problem.constraint_jacobian(zp).T @ lam
                       - problem.constraint_jacobian(zm).T @ lam) / (2 * step)

    e_g, l_g = _rel_error(grad[cols], fd_grad)
    e_j, l_j = _rel_error(J[:, cols], fd_jac)
    e_hl, l_hl = _rel_error(Hl[:, cols], fd_hl)
    e_hg, l_hg = _rel_error(Hg[:, cols], fd_hg)
    worst = {
        'gradient': (int(cols[l_g[0]]),),
        'jacobian': (int(l_j[0]), int(cols[l_j[1]])),
        'merit_hessian': (int(l_hl[0]), int(cols[l_hl[1]])),
        'constraint_hessian': (int(l_hg[0]), int(cols[l_hg[1]])),
    }
    return DerivativeReport(e_g, e_j, e_hl, e_hg, worst)
