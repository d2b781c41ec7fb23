"""Estimate uncertainty from the inverse bordered Hessian.

All public outputs are blocks of ``-inv(H_L)``: for a maximized log-density
these are the (positive semidefinite) covariance approximations. Only the
requested columns of the inverse are formed, each with one solve against a
factorization shared by all calls on the same :class:`BorderedHessian`.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import warnings
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import DefinitenessError, SingularMatrixError
from .kkt import BorderedHessian, KKTFactor


def factorize(H: BorderedHessian) -> KKTFactor:
    """Factorization of ``H_L``, computed once per Hessian object."""
    try:
        return H.factor
    except SingularMatrixError as e:
        raise SingularMatrixError(
            "bordered Hessian is singular: the dependent-variable Jacobian is "
            "not invertible or the optimum is not isolated") from e


def _as_indices(indices, size):
    idx = np.atleast_1d(np.asarray(indices, dtype=int))
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise IndexError(f"indices out of range [0, {size})")
    return idx


def inverse_columns(H: BorderedHessian, indices) -> np.ndarray:
    """Columns ``indices`` of ``inv(H_L)``, shape ``(size, len(indices))``."""
    idx = _as_indices(indices, H.size)
    factor = factorize(H)
    E = np.zeros((H.size, idx.size))
    E[idx, np.arange(idx.size)] = 1.0
    X = factor.solve(E)
    if X.ndim == 1:
        X = X[:, None]
    if not np.all(np.isfinite(X)):
        raise SingularMatrixError("non-finite entries in inverse columns")
    return X


def reduced_hessian_inverse(H: BorderedHessian) -> np.ndarray:
    """Inverse Hessian of the reduced (eliminated) merit at the optimum.

    This is the independent-variable block of ``inv(H_L)``; it is negative
    definite at a strict constrained maximum.
    """
    X = inverse_columns(H, H.p_index)
    block = X[H.p_index]
    return 0.5 * (block + block.T)


def reduced_covariance(H: BorderedHessian) -> np.ndarray:
    """Covariance of the independent variables, ``-reduced_hessian_inverse``."""
    return -reduced_hessian_inverse(H)


def full_covariance_block(H: BorderedHessian, indices,
                          square: bool = False) -> np.ndarray:
    """Columns of the leading ``(n+m)`` block of ``-inv(H_L)``.

    Returns shape ``(n+m, k)``, or ``(k, k)`` with ``square=True``. The block
    is the linearized covariance of all decision variables.
    """
    nz = H.n + H.m
    idx = _as_indices(indices, nz)
    cols = -inverse_columns(H, idx)[:nz]
    return cols[idx] if square else cols


def variances(H: BorderedHessian, indices) -> np.ndarray:
    idx = _as_indices(indices, H.n + H.m)
    cols = inverse_columns(H, idx)
    return -cols[idx, np.arange(idx.size)]


def standard_deviations(H: BorderedHessian, indices) -> np.ndarray:
    """Square roots of diagonal entries ``indices`` of ``-inv(H_L)``."""
    var = variances(H, indices)
    bad = var < 0
    if np.any(bad):
        where = np.atleast_1d(indices)[bad]
        raise DefinitenessError(
            f"negative variance at variables {list(map(int, where))}: "
            "the point is not a strict maximum in those directions")
    return np.sqrt(var)


def correlation_matrix(cov) -> np.ndarray:
    """Correlation coefficients of a covariance matrix."""
    cov = np.asarray(cov, dtype=float)
    d = np.diag(cov)
    if np.any(d <= 0):
        raise DefinitenessError("covariance diagonal must be positive")
    s = np.sqrt(d)
    rho = cov / np.outer(s, s)
    rho = np.clip(rho, -1.0, 1.0)
    np.fill_diagonal(rho, 1.0)
    return rho


def condition_estimates(H: BorderedHessian) -> dict:
    """Reciprocal condition estimates of ``H_L`` and of the dependent Jacobian."""
    Jq = H.dependent_jacobian()
    return {'rcond_hessian': factorize(H).rcond(),
            'rcond_dependent_jacobian': _rcond_general(Jq) if H.m else 1.0}


def _rcond_general(A) -> float:
    """Reciprocal 1-norm condition estimate of a general square matrix."""
    n = A.shape[0]
    if sp.issparse(A):
        A = sp.csc_matrix(A)
        try:
            lu = spla.splu(A)
        except RuntimeError:
            return 0.0
        solve, tsolve = lu.solve, (lambda b: lu.solve(b, trans='T'))
        norm1 = spla.norm(A, 1)
    else:
        A = np.asarray(A, dtype=float)
        with warnings.catch_warnings():
            # exact singularity is reported as rcond 0 below
            warnings.simplefilter('ignore', scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(A)
        if np.any(np.diag(lu[0]) == 0):
            return 0.0
        solve = functools.partial(scipy.linalg.lu_solve, lu)
        tsolve = functools.partial(scipy.linalg.lu_solve, lu, trans=1)
        norm1 = np.abs(A).sum(axis=0).max()
    if n <= 4:
        inv_norm = np.abs(solve(np.eye(n))).sum(axis=0).max()
    else:
        op = spla.LinearOperator((n, n), matvec=solve, rmatvec=tsolve, dtype=float)
        inv_norm = spla.onenormest(op)
    return float(1.0 / (norm1 * inv_norm))


@dataclasses.dataclass(frozen=True)
class CovarianceReport:
    """Uncertainty summary of a constrained estimate."""

    reduced_covariance: Optional[np.ndarray]
    std_devs: np.ndarray
    target_indices: np.ndarray
    target_labels: Sequence[str]
    estimates: np.ndarray
    full_covariance_columns: Optional[np.ndarray] = None
    correlations: Optional[np.ndarray] = None
    condition_diagnostics: dict = dataclasses.field(default_factory=dict)

    def to_dict(self) -> dict:
        def listify(a):
            return None if a is None else np.asarray(a).tolist()
        return {
            'targets': [
                {'name': name, 'index': int(i), 'estimate': float(e),
                 'std_dev': float(s)}
                for name, i, e, s in zip(self.target_labels, self.target_indices,
                                         self.estimates, self.std_devs)],
            'reduced_covariance': listify(self.reduced_covariance),
            'correlations': listify(self.correlations),
            'condition_diagnostics': {k: float(v) for k, v in
                                      self.condition_diagnostics.items()},
        }

    def to_json(self, path) -> None:
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=1)
            f.write('\n')

    def to_csv(self, path, correlation_path=None) -> None:
        """One row per target; optionally the pairwise correlations too."""
        with open(path, 'w', newline='') as f:
            w = csv.writer(f, lineterminator='\n')
            w.writerow(['name', 'estimate', 'std_dev'])
            for name, e, s in zip(self.target_labels, self.estimates, self.std_devs):
                w.writerow([name, fmt(e), fmt(s)])
        if correlation_path is not None and self.correlations is not None:
            with open(correlation_path, 'w', newline='') as f:
                w = csv.writer(f, lineterminator='\n')
                w.writerow(['name_i', 'name_j', 'correlation'])
                labels = self.target_labels
                for i in range(len(labels)):
                    for j in range(i + 1, len(labels)):
                        w.writerow([labels[i], labels[j],
                                    fmt(self.correlations[i, j])])


def fmt(x) -> str:
    """Round-trip float formatting used for all CSV output."""
    return format(float(x), '.17g')


def covariance_report(H: BorderedHessian, z, targets, labels=None,
                      with_reduced=True, with_correlations=True,
                      with_conditioning=True) -> CovarianceReport:
    """Build a :class:`CovarianceReport` for decision variables ``targets``."""
    idx = _as_indices(targets, H.n + H.m)
    cols = full_covariance_block(H, idx)
    block = cols[idx]
    block = 0.5 * (block + block.T)
    var = np.diag(block)
    if np.any(var < 0):
        raise DefinitenessError("negative variance among report targets")
    if labels is None:
        names = [f'z{i}' for i in idx]
    else:
        names = [labels[i] for i in idx]
    return CovarianceReport(
        reduced_covariance=reduced_covariance(H) if with_reduced else None,
        std_devs=np.sqrt(var),
        target_indices=idx,
        target_labels=names,
        estimates=np.asarray(z)[idx],
        full_covariance_columns=cols,
        correlations=correlation_matrix(block) if with_correlations and np.all(var > 0) else None,
        condition_diagnostics=condition_estimates(H) if with_conditioning else {},
    )
