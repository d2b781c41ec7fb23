"""Repeated-realization study of Hessian-based standard deviations.

For each noise realization the Van der Pol output-error problem is solved
and the standard deviations of the report targets are read off the inverse
bordered Hessian. Aggregation compares the sample scatter of the estimates
with the mean predicted standard deviation, and counts how often the truth
lies within one predicted standard deviation.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import json
import logging
from typing import Optional, Sequence

import numpy as np

from . import covariance
from .covariance import fmt
from .estimators import OutputErrorEstimator, initial_guess_oem  # noqa: F401
from .exceptions import ConfigError, HesscovError
from .kkt import BorderedHessian, KktSolution
from .models import PURPOSE_DATA, VdpModel, generate_vdp_data, seed_sequence

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class MonteCarloConfig:
    realization_count: int = 500
    master_seed: int = 0
    mu: float = 2.0
    sigma: float = 0.1
    x0: Sequence[float] = (0.0, 1.0)
    horizon: float = 20.0
    measurement_spacing: float = 0.1
    mesh_spacing: float = 0.02
    sim_step: float = 0.01
    cutoff: float = 5.0
    report_targets: Sequence[str] = ('mu', 'sigma', 'x1_0', 'x2_0')
    workers: int = 1

    def __post_init__(self):
        if self.realization_count < 1:
            raise ConfigError("realization_count must be >= 1")
        self.x0 = tuple(float(v) for v in self.x0)
        self.report_targets = tuple(self.report_targets)

    def truth(self) -> dict:
        out = {'mu': self.mu, 'sigma': self.sigma}
        out.update({f'x{i + 1}_0': v for i, v in enumerate(self.x0)})
        return out


def run_realization(config: MonteCarloConfig, index: int) -> dict:
    """Generate, fit and extract uncertainties for one realization."""
    model = VdpModel(config.mu, config.sigma)
    seed = seed_sequence(config.master_seed, PURPOSE_DATA, index)
    t, y, _ = generate_vdp_data(model, seed, config.x0, config.horizon,
                                config.measurement_spacing, config.sim_step)
    est = OutputErrorEstimator(mesh_spacing=config.mesh_spacing,
                               cutoff=config.cutoff)
    record = {'index': index, 'status': None, 'estimates': None, 'std_devs': None}
    try:
        est.fit(t, y)
        record['status'] = est.solution_.status.value
        record['estimates'] = est.estimates(config.report_targets).tolist()
        if est.converged_:
            record['std_devs'] = est.standard_deviations(config.report_targets).tolist()
    except HesscovError as e:
        record['status'] = f'error: {e}'
    return record


@dataclasses.dataclass
class MonteCarloReport:
    targets: Sequence[str]
    truth: dict
    records: list
    sample_std: np.ndarray
    mean_sigma_hat: np.ndarray
    std_sigma_hat: np.ndarray
    coverage: np.ndarray
    mean_estimate: np.ndarray

    @property
    def converged_count(self) -> int:
        return sum(r['std_devs'] is not None for r in self.records)

    @property
    def convergence_rate(self) -> float:
        return self.converged_count / len(self.records)

    def relative_gap(self) -> np.ndarray:
        """``|sample std - mean predicted std| / sample std`` per target."""
        return np.abs(self.sample_std - self.mean_sigma_hat) / self.sample_std

    def rows(self):
        for i, name in enumerate(self.targets):
            yield (name, self.mean_estimate[i], self.sample_std[i],
                   self.mean_sigma_hat[i], self.std_sigma_hat[i], self.coverage[i])

    def to_csv(self, path):
        with open(path, 'w', newline='') as f:
            w = csv.writer(f, lineterminator='\n')
            w.writerow(['estimate', 'mean_estimate', 'sample_std', 'mean_sigma_hat',
                        'std_sigma_hat', 'coverage_1sigma'])
            for name, *vals in self.rows():
                w.writerow([name] + [fmt(v) for v in vals])

    def to_dict(self):
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in a]
        return {
            'targets': list(self.targets),
            'truth': self.truth,
            'realizations': len(self.records),
            'converged': self.converged_count,
            'convergence_rate': self.convergence_rate,
            'sample_std': clean(self.sample_std),
            'mean_sigma_hat': clean(self.mean_sigma_hat),
            'std_sigma_hat': clean(self.std_sigma_hat),
            'coverage_1sigma': clean(self.coverage),
            'mean_estimate': clean(self.mean_estimate),
            'records': self.records,
        }

    def to_json(self, path):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=1)
            f.write('\n')

    def estimates_csv(self, path):
        """Raw per-realization estimates, e.g. for histograms."""
        with open(path, 'w', newline='') as f:
            w = csv.writer(f, lineterminator='\n')
            w.writerow(['realization', 'status']
                       + [f'{t}_hat' for t in self.targets]
                       + [f'{t}_sigma_hat' for t in self.targets])
            for r in self.records:
                est = r['estimates'] or [np.nan] * len(self.targets)
                sd = r['std_devs'] or [np.nan] * len(self.targets)
                w.writerow([r['index'], r['status']] + [fmt(v) for v in est]
                           + [fmt(v) for v in sd])


def aggregate(records, targets, truth) -> MonteCarloReport:
    """Reduce per-realization records; non-converged runs are excluded.

    Statistics that need two or more converged realizations are NaN.
    """
    records = sorted(records, key=lambda r: r['index'])
    ok = [r for r in records if r['std_devs'] is not None]
    dropped = len(records) - len(ok)
    if dropped:
        logger.warning("excluded %d of %d realizations (not converged)",
                       dropped, len(records))
    k = len(targets)
    est = np.array([r['estimates'] for r in ok]).reshape(-1, k)
    sd = np.array([r['std_devs'] for r in ok]).reshape(-1, k)
    true = np.array([truth[t] for t in targets])
    nan = np.full(k, np.nan)
    many = len(ok) >= 2
    return MonteCarloReport(
        targets=tuple(targets), truth={t: truth[t] for t in targets},
        records=records,
        sample_std=est.std(axis=0, ddof=1) if many else nan,
        mean_sigma_hat=sd.mean(axis=0) if ok else nan,
        std_sigma_hat=sd.std(axis=0, ddof=1) if many else nan,
        coverage=(np.abs(est - true) <= sd).mean(axis=0) if ok else nan,
        mean_estimate=est.mean(axis=0) if ok else nan,
    )


def run_monte_carlo(config: MonteCarloConfig, indices=None) -> MonteCarloReport:
    """Run the realizations (optionally a subset) and aggregate them."""
    indices = range(config.realization_count) if indices is None else indices
    if config.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(config.workers) as pool:
            records = list(pool.map(run_realization, [config] * len(indices),
                                    indices, chunksize=8))
    else:
        records = [run_realization(config, i) for i in indices]
    return aggregate(records, config.report_targets, config.truth())


@dataclasses.dataclass
class StateBand:
    times: np.ndarray
    estimate: np.ndarray
    std: np.ndarray
    multiplier: float

    @property
    def lower(self):
        return self.estimate - self.multiplier * self.std

    @property
    def upper(self):
        return self.estimate + self.multiplier * self.std

    def coverage(self, truth) -> float:
        """Fraction of nodes where ``truth`` lies inside the band."""
        truth = np.asarray(truth, dtype=float)
        return float(np.mean((truth >= self.lower) & (truth <= self.upper)))

    def to_csv(self, path):
        with open(path, 'w', newline='') as f:
            w = csv.writer(f, lineterminator='\n')
            w.writerow(['time', 'lower', 'estimate', 'upper'])
            for row in zip(self.times, self.lower, self.estimate, self.upper):
                w.writerow([fmt(v) for v in row])


def state_band(transcription, solution: KktSolution, H: BorderedHessian,
               component: int, multiplier: float = 2.0) -> StateBand:
    """Pointwise ``estimate +- multiplier * std`` of one state component.

    The standard deviations are diagonal entries of the decision-variable
    block of ``-inv(H_L)``.
    """
    if not solution.converged:
        raise HesscovError("state bands need a converged solution")
    nodes = np.arange(transcription.nodes)
    idx = transcription.state_index(nodes, component)
    std = covariance.standard_deviations(H, idx)
    return StateBand(transcription.spec.mesh.node_times,
                     solution.z_star[idx], std, float(multiplier))


def band_for_estimator(est: OutputErrorEstimator, component: int,
                       multiplier: float = 2.0) -> Optional[StateBand]:
    return state_band(est.transcription_, est.solution_, est.hessian_,
                      component, multiplier)
