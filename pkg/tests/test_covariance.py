import csv
import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from hesscov import covariance
from hesscov.exceptions import DefinitenessError, SingularMatrixError
from hesscov.kkt import (ConstrainedProblem, assemble_bordered_hessian,
                         solve_equality_constrained)

from helpers import SmoothProblem, elimination_sensitivity, fd_hessian, toy_problem


@pytest.fixture
def toy_H():
    return assemble_bordered_hessian(toy_problem(), [1.0, 1.0], [1.0])


def test_toy_inverse_column(toy_H):
    # H^-1 of [[-1,0,1],[0,-1,1],[1,1,0]] by hand: first column (-1/2, 1/2, 1/2)
    col = covariance.inverse_columns(toy_H, [0])[:, 0]
    np.testing.assert_allclose(col, [-0.5, 0.5, 0.5], atol=1e-15)


def test_toy_blocks(toy_H):
    np.testing.assert_allclose(covariance.reduced_hessian_inverse(toy_H), [[-0.5]],
                               atol=1e-15)
    np.testing.assert_allclose(covariance.reduced_covariance(toy_H), [[0.5]], atol=1e-15)
    np.testing.assert_allclose(
        covariance.full_covariance_block(toy_H, [0, 1], square=True),
        [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(covariance.standard_deviations(toy_H, [0]),
                               [np.sqrt(0.5)], atol=1e-15)


def test_toy_conditioning(toy_H):
    # eigenvalues of the toy H_L are -1 and (-1 +- 3)/2, so cond_2 = 2; the
    # 1-norm condition is ||H||_1 ||H^-1||_1 = 3 * 1
    d = covariance.condition_estimates(toy_H)
    assert d['rcond_hessian'] == pytest.approx(1 / 3)
    assert d['rcond_dependent_jacobian'] == pytest.approx(1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 6))
def test_reduced_block_matches_elimination(seed, n, m):
    P = SmoothProblem(np.random.default_rng(seed), n, m)
    z, lam = P.reduced_optimum()
    H = assemble_bordered_hessian(P.problem(), z, lam)
    ref = np.linalg.inv(fd_hessian(P.reduced_merit, z[:n]))
    blk = covariance.reduced_hessian_inverse(H)
    assert np.linalg.norm(blk - ref) <= 1e-4 * np.linalg.norm(ref)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 6))
def test_full_block_is_sensitivity_sandwich(seed, n, m):
    rng = np.random.default_rng(seed)
    P = SmoothProblem(rng, n, m)
    # the identity is algebraic, so it holds at any point with invertible Jq
    z, lam = rng.normal(size=n + m), rng.normal(size=m)
    H = assemble_bordered_hessian(P.problem(), z, lam)
    dw = elimination_sensitivity(P.jac(z), n)
    W = P.hess(z) + P.ghess(z, lam)
    red = dw.T @ W @ dw
    if np.linalg.cond(red) > 1e8:
        return
    R = -np.linalg.inv(red)
    full = covariance.full_covariance_block(H, np.arange(n + m), square=True)
    np.testing.assert_allclose(full, dw @ R @ dw.T, rtol=0,
                               atol=1e-8 * np.abs(full).max())


def test_sparse_and_dense_paths_agree():
    rng = np.random.default_rng(5)
    P = SmoothProblem(rng, 3, 5)
    z, lam = P.reduced_optimum()
    base = P.problem()
    sparse_prob = ConstrainedProblem(
        3, 5, base.merit, base.merit_gradient,
        lambda z: sp.csc_matrix(P.hess(z)), base.constraints,
        lambda z: sp.csc_matrix(P.jac(z)),
        lambda z, lam: sp.csc_matrix(P.ghess(z, lam)))
    Hd = assemble_bordered_hessian(base, z, lam)
    Hs = assemble_bordered_hessian(sparse_prob, z, lam)
    assert Hs.is_sparse and not Hd.is_sparse
    np.testing.assert_allclose(covariance.reduced_covariance(Hs),
                               covariance.reduced_covariance(Hd), rtol=1e-10)


def test_singular_dependent_jacobian():
    # constraint does not involve q at all: Jq = 0
    prob = ConstrainedProblem(
        1, 1, merit=lambda z: -0.5 * float(z @ z),
        merit_gradient=lambda z: -z, merit_hessian=lambda z: -np.eye(2),
        constraints=lambda z: np.array([z[0] - 1.0]),
        constraint_jacobian=lambda z: np.array([[1.0, 0.0]]),
        constraint_hessian_contraction=lambda z, lam: np.zeros((2, 2)))
    H = assemble_bordered_hessian(prob, [1.0, 0.0], [1.0])
    assert covariance.condition_estimates(H)['rcond_dependent_jacobian'] == 0.0
    # H itself is nonsingular here; a fully singular one must raise
    prob0 = ConstrainedProblem(
        1, 1, merit=lambda z: 0.0, merit_gradient=lambda z: np.zeros(2),
        merit_hessian=lambda z: np.zeros((2, 2)),
        constraints=lambda z: np.array([z[0]]),
        constraint_jacobian=lambda z: np.array([[1.0, 0.0]]),
        constraint_hessian_contraction=lambda z, lam: np.zeros((2, 2)))
    H0 = assemble_bordered_hessian(prob0, [0.0, 0.0], [0.0])
    with pytest.raises(SingularMatrixError):
        covariance.reduced_covariance(H0)


def test_negative_variance_raises():
    # merit convex in p: feasible point is a minimum, variance negative
    prob = ConstrainedProblem(
        1, 1, merit=lambda z: 0.5 * float(z @ z), merit_gradient=lambda z: z,
        merit_hessian=lambda z: np.eye(2),
        constraints=lambda z: np.array([z[0] + z[1] - 2]),
        constraint_jacobian=lambda z: np.array([[1.0, 1.0]]),
        constraint_hessian_contraction=lambda z, lam: np.zeros((2, 2)))
    H = assemble_bordered_hessian(prob, [1.0, 1.0], [-1.0])
    with pytest.raises(DefinitenessError):
        covariance.standard_deviations(H, [0])


def test_correlation_matrix_properties():
    rng = np.random.default_rng(0)
    G = rng.normal(size=(5, 5))
    rho = covariance.correlation_matrix(G @ G.T)
    assert np.all(np.abs(rho) <= 1) and np.all(np.diag(rho) == 1)
    with pytest.raises(DefinitenessError):
        covariance.correlation_matrix([[1.0, 0], [0, 0]])


def test_report_files(tmp_path):
    sol = solve_equality_constrained(toy_problem(), [0.0, 0.0])
    H = assemble_bordered_hessian(toy_problem(), sol.z_star, sol.lambda_star)
    rep = covariance.covariance_report(H, sol.z_star, [0, 1], ['p', 'q'])
    rep.to_csv(tmp_path / 'c.csv', tmp_path / 'r.csv')
    rows = list(csv.DictReader(open(tmp_path / 'c.csv')))
    assert [r['name'] for r in rows] == ['p', 'q']
    assert float(rows[0]['std_dev']) == np.sqrt(0.5)
    corr = list(csv.DictReader(open(tmp_path / 'r.csv')))
    assert any(float(r['correlation']) == pytest.approx(-1.0) for r in corr)
    rep.to_json(tmp_path / 'c.json')
    d = json.loads((tmp_path / 'c.json').read_text())
    assert [t['name'] for t in d['targets']] == ['p', 'q']


def test_fmt_roundtrip():
    for x in (0.1, 1 / 3, 2.0 ** -1074, 1e308, -7.25):
        assert float(covariance.fmt(x)) == x
