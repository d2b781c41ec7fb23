"""Acceptance criteria, one test each; every test also prints a summary line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the summary lines
are repeated at the end of the pytest report.
"""

import filecmp
import json
import pathlib
import time

import numpy as np
import pytest

from hesscov import covariance
from hesscov.cli import main as cli_main
from hesscov.estimators import JointMapEstimator, OutputErrorEstimator
from hesscov.experiments import MonteCarloConfig, band_for_estimator, run_monte_carlo
from hesscov.kkt import (assemble_bordered_hessian, check_derivatives,
                         solve_equality_constrained)
from hesscov.mcmc import ChainConfig, perturbed_mode, run_chain
from hesscov.mesh import CollocationMesh
from hesscov.models import (PURPOSE_CHAIN, PURPOSE_DATA, PURPOSE_INIT,
                            DuffingModel, LinearModel, VdpModel,
                            generate_duffing_data, generate_vdp_data, seed_sequence)
from hesscov.transcribe import (JointMapSpec, JointMapTranscription, OemSpec,
                                OemTranscription)

from helpers import (SmoothProblem, elimination_sensitivity, fd_hessian,
                     gls_design, toy_problem)

CONFIGS = pathlib.Path(__file__).resolve().parents[1] / 'configs'
DUFFING_TRUTH = {'a': 1.0, 'b': -1.0, 'd': 0.2, 'sigma_y': 0.1}


def rel_fro(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def random_problems(count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield SmoothProblem(rng, int(rng.integers(1, 5)), int(rng.integers(1, 7)))


def test_c01_reduced_block_equals_inverse_reduced_hessian(acceptance):
    start = time.perf_counter()
    errs = []
    for P in random_problems(20, seed=2024):
        z, lam = P.reduced_optimum()
        H = assemble_bordered_hessian(P.problem(), z, lam)
        ref = np.linalg.inv(fd_hessian(P.reduced_merit, z[:P.n]))
        errs.append(rel_fro(covariance.reduced_hessian_inverse(H), ref))
    elapsed = time.perf_counter() - start
    ok = max(errs) <= 1e-4 and elapsed < 10
    acceptance(1, "top-left block vs inverse FD reduced Hessian", ok,
               f"max rel Frobenius {max(errs):.2e} (tol 1e-4), {elapsed:.1f} s (< 10 s)")
    assert ok


def test_c02_full_block_equals_sensitivity_sandwich(acceptance):
    start = time.perf_counter()
    errs = []
    for P in random_problems(20, seed=7):
        z, lam = P.reduced_optimum()
        H = assemble_bordered_hessian(P.problem(), z, lam)
        dw = elimination_sensitivity(P.jac(z), P.n)
        W = P.hess(z) + P.ghess(z, lam)
        R = -np.linalg.inv(dw.T @ W @ dw)
        full = covariance.full_covariance_block(H, np.arange(P.n + P.m), square=True)
        errs.append(rel_fro(full, dw @ R @ dw.T))
    elapsed = time.perf_counter() - start
    ok = max(errs) <= 1e-8 and elapsed < 5
    acceptance(2, "leading block of -inv(H_L) vs grad w R grad w'", ok,
               f"max rel Frobenius {max(errs):.2e} (tol 1e-8), {elapsed:.1f} s (< 5 s)")
    assert ok


def test_c03_quadratic_toy(acceptance):
    prob = toy_problem()
    sol = solve_equality_constrained(prob, [0.0, 0.0])
    H = assemble_bordered_hessian(prob, sol.z_star, sol.lambda_star)
    # elimination q = 2 - p gives l(p) = -(p^2 + (2-p)^2)/2, l'' = -2
    errs = {
        'z*': np.abs(sol.z_star - [1, 1]).max(),
        'lambda*': abs(sol.lambda_star[0] - 1),
        'R': abs(covariance.reduced_covariance(H)[0, 0] - 0.5),
        'full': np.abs(covariance.full_covariance_block(H, [0, 1], square=True)
                       - [[0.5, -0.5], [-0.5, 0.5]]).max(),
    }
    ok = sol.converged and max(errs.values()) <= 1e-12
    acceptance(3, "quadratic toy exactness", ok,
               ', '.join(f"{k} err {v:.1e}" for k, v in errs.items()) + " (tol 1e-12)")
    assert ok


def test_c04_linear_gaussian_gls(acceptance):
    A = np.array([[0.0, 1.0], [-1.0, -0.3]])
    B = np.array([[0.0], [1.0]])
    h, sig = 0.05, 0.2
    mesh = CollocationMesh.uniform(0, 5, h, np.arange(0, 5 + 1e-9, 0.25))
    X = gls_design(A, B, h, mesh.intervals, mesh.measurement_index, observed=0)
    y = X @ [0.5, 1.0, 0.0] + sig * np.random.default_rng(0).normal(size=X.shape[0])
    tr = OemTranscription(OemSpec(LinearModel(A, B), y, mesh, sigma=sig))
    sol = solve_equality_constrained(tr.problem, np.zeros(tr.nz))
    H = assemble_bordered_hessian(tr.problem, sol.z_star, sol.lambda_star)
    err = rel_fro(covariance.reduced_covariance(H), sig ** 2 * np.linalg.inv(X.T @ X))
    ok = sol.converged and err <= 1e-8
    acceptance(4, "linear-Gaussian reduced covariance vs GLS", ok,
               f"rel Frobenius {err:.2e} (tol 1e-8)")
    assert ok


def test_c05_van_der_pol_calibration(acceptance):
    start = time.perf_counter()
    rep = run_monte_carlo(MonteCarloConfig(realization_count=500, master_seed=0))
    elapsed = time.perf_counter() - start
    gaps = rep.relative_gap()
    cov = rep.coverage
    ok = (rep.convergence_rate >= 0.95 and np.all(gaps <= 0.15)
          and np.all((cov >= 0.63) & (cov <= 0.73)))
    detail = '; '.join(f"{n} gap {g:.3f} cov {c:.3f}"
                       for n, g, c in zip(rep.targets, gaps, cov))
    acceptance(5, "Van der Pol 500-realization calibration", ok,
               f"{detail} (gap <= 0.15, cov in [0.63, 0.73]); "
               f"converged {rep.converged_count}/500; {elapsed:.0f} s")
    assert ok


def test_c06_state_band_median_realization(acceptance):
    fits = []
    for i in range(21):
        t, y, truth = generate_vdp_data(VdpModel(), seed_sequence(0, PURPOSE_DATA, i))
        est = OutputErrorEstimator().fit(t, y)
        assert est.converged_
        fits.append((est.params_['mu'], i, est, truth))
    fits.sort(key=lambda f: f[0])
    _, index, est, truth = fits[len(fits) // 2]
    band = band_for_estimator(est, 1, multiplier=2.0)
    cover = band.coverage(truth.sample(band.times).states[:, 1])
    ok = cover >= 0.90
    acceptance(6, "+-2 sigma band on x2, median-mu realization", ok,
               f"realization {index}: {cover:.3f} of {band.times.size} nodes covered (>= 0.90)")
    assert ok


@pytest.fixture(scope='module')
def duffing_fit():
    model = DuffingModel(T=20.0)
    t, y, _ = generate_duffing_data(model, seed_sequence(0, PURPOSE_DATA, 0))
    return JointMapEstimator().fit(t, y)


def test_c07_duffing_joint_map(acceptance, duffing_fit):
    est = duffing_fit
    names = list(DUFFING_TRUTH)
    sd = est.standard_deviations(names)
    z = np.abs(est.estimates(names) - np.array(list(DUFFING_TRUTH.values()))) / sd
    viol = est.solution_.constraint_violation
    ok = est.converged_ and viol <= 1e-8 and np.all(z <= 3)
    acceptance(7, "Duffing joint MAP, T = 20, seed 0", ok,
               f"{est.solution_.status.value}, |g|inf {viol:.1e} (<= 1e-8); "
               + ', '.join(f"{n} {v:.2f} sd" for n, v in zip(names, z)) + " (<= 3)")
    assert ok


def test_c08_mcmc_acceptance_and_normal_control(acceptance, duffing_fit):
    est = duffing_fit
    tr = est.transcription_
    R = est.reduced_covariance()
    mode = est.solution_.z_star[tr.problem.p_index]
    p0 = perturbed_mode(mode, R, seed_sequence(0, PURPOSE_INIT, 0))
    res = run_chain(ChainConfig(R, p0, chain_length=500,
                                seed=seed_sequence(0, PURPOSE_CHAIN, 0)), tr.spec)
    rate = res.overall_acceptance

    mean = np.array([1.0, -2.0, 0.5])
    C = np.array([[1.0, 0.6, 0.2], [0.6, 2.0, -0.3], [0.2, -0.3, 0.5]])
    inv = np.linalg.inv(C)
    ctl = run_chain(ChainConfig(C, mean, chain_length=100_000,
                                seed=seed_sequence(0, PURPOSE_CHAIN, 1), burn_in=0.0),
                    lambda p: -0.5 * (p - mean) @ inv @ (p - mean))
    err = rel_fro(np.cov(ctl.samples.T), C)
    ok = 0.15 <= rate <= 0.40 and err <= 0.15
    acceptance(8, "hybrid sampler acceptance and normal control", ok,
               f"Duffing overall acceptance {rate:.3f} (in [0.15, 0.40], "
               f"{res.samples.shape[0]} cycles); normal control covariance "
               f"rel Frobenius {err:.3f} at 1e5 samples (<= 0.15)")
    assert ok


def test_c09_derivative_hygiene(acceptance):
    rng = np.random.default_rng(99)
    t, y, _ = generate_vdp_data(VdpModel(), seed_sequence(0, PURPOSE_DATA, 0))
    mesh = CollocationMesh.uniform(0, 20, 0.02, t)
    oem = OemTranscription(OemSpec(VdpModel(), y, mesh))
    td, yd, _ = generate_duffing_data(DuffingModel(T=20.0), seed_sequence(0, PURPOSE_DATA, 0))
    jm = JointMapTranscription(JointMapSpec(DuffingModel(T=20.0), yd,
                                            CollocationMesh.uniform(0, 20, 0.1, td)))
    worst = {}
    for name, tr in (('output-error', oem), ('joint MAP', jm)):
        prob = tr.problem
        for _ in range(3):
            z = rng.normal(scale=0.7, size=prob.nz)
            z[prob.positive_index] = rng.uniform(0.3, 1.5, prob.positive_index.size)
            cols = np.sort(rng.choice(prob.nz, min(prob.nz, 300), replace=False))
            rep = check_derivatives(prob, z, rng.normal(size=prob.m), 1e-6, cols)
            worst[name] = max(worst.get(name, 0.0), rep.max_error())
    ok = max(worst.values()) <= 1e-5
    acceptance(9, "derivative check at random interior points", ok,
               ', '.join(f"{k} {v:.1e}" for k, v in worst.items()) + " (tol 1e-5)")
    assert ok


def _cli_runs(root):
    d = root
    runs = [
        ['generate', '--out-dir', str(d / 'gen')],
        ['fit', '--data', str(d / 'gen' / 'data.csv'), '--out-dir', str(d / 'fit'),
         '--band-component', '1'],
        ['montecarlo', '--realizations', '3', '--workers', '1', '--out-dir', str(d / 'mc')],
        ['mcmc', '--config', str(CONFIGS / 'mvn.ini'), '--out-dir', str(d / 'mvn'),
         '--chain-length', '500'],
        ['generate', '--config', str(CONFIGS / 'duffing_desk.ini'),
         '--out-dir', str(d / 'dgen')],
        ['mcmc', '--config', str(CONFIGS / 'duffing_desk.ini'),
         '--data', str(d / 'dgen' / 'data.csv'), '--out-dir', str(d / 'dmc'),
         '--chain-length', '20'],
        ['check-derivs', '--out-dir', str(d / 'deriv')],
    ]
    return [cli_main(r) for r in runs]


def _tree_identical(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    if mismatch or errors:
        return False
    return all(_tree_identical(a / s, b / s) for s in cmp.common_dirs)


def test_c10_cli_determinism(acceptance, tmp_path):
    codes_a = _cli_runs(tmp_path / 'a')
    codes_b = _cli_runs(tmp_path / 'b')
    files = sorted(p.relative_to(tmp_path / 'a')
                   for p in (tmp_path / 'a').rglob('*') if p.is_file())
    same = _tree_identical(tmp_path / 'a', tmp_path / 'b')
    ok = same and codes_a == codes_b and all(c == 0 for c in codes_a)
    acceptance(10, "byte-identical CLI artifacts across two runs", ok,
               f"{len(files)} files compared, identical={same}, exit codes {codes_a}")
    manifests = [json.loads((tmp_path / 'a' / f).read_text())
                 for f in files if f.name == 'manifest.json']
    assert all('timings_seconds' not in m for m in manifests)
    assert ok
