"""Hybrid Gibbs sampler tuned by the reduced covariance.

Every Gibbs cycle updates each independent coordinate in turn with a
Metropolis-within-Gibbs proposal ``p_i + coordinate_scale * N(0, R_ii)``;
after every ``gibbs_cycles_per_full_step`` cycles one joint random-walk
Metropolis step ``p + full_step_scale / sqrt(n) * N(0, R)`` follows.
Sampling happens in the independent-variable space, the dependents being
eliminated by forward solution of the constraints, so every sample is
feasible.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from typing import Callable, Optional, Union

import numpy as np

from .covariance import fmt
from .exceptions import ConfigError
from .models import make_rng
from .transcribe import JointMapSpec, JointMapTranscription


def log_target(p, spec: JointMapSpec) -> float:
    """Reduced joint MAP merit: dependents eliminated, then merit evaluated."""
    return JointMapTranscription(spec).reduced_merit(np.asarray(p, dtype=float))


def make_log_target(target) -> Callable[[np.ndarray], float]:
    """Callable log-density from a :class:`JointMapSpec` or a callable."""
    if isinstance(target, JointMapSpec):
        return JointMapTranscription(target).reduced_merit
    if callable(target):
        return target
    raise TypeError("target must be a JointMapSpec or a callable")


def metropolis_accept(log_cand, log_cur, rng) -> bool:
    """Accept with probability ``min(1, exp(log_cand - log_cur))``."""
    if log_cand == -np.inf or np.isnan(log_cand):
        return False
    diff = log_cand - log_cur
    if diff >= 0:
        return True
    return bool(rng.random() < np.exp(diff))


@dataclasses.dataclass
class ChainConfig:
    covariance: np.ndarray
    initial_point: np.ndarray
    chain_length: int = 1000
    gibbs_cycles_per_full_step: int = 15
    coordinate_scale: float = 3.2
    full_step_scale: float = 1.8
    seed: int = 0
    burn_in: float = 0.2
    thin: int = 1
    jitter: float = 0.0

    def __post_init__(self):
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        self.initial_point = np.atleast_1d(np.asarray(self.initial_point, dtype=float))
        n = self.initial_point.size
        if self.covariance.shape != (n, n):
            raise ConfigError("covariance shape does not match initial point")
        if not np.allclose(self.covariance, self.covariance.T, rtol=1e-10, atol=0):
            raise ConfigError("covariance must be symmetric")
        if self.coordinate_scale < 0 or self.full_step_scale < 0:
            raise ConfigError("proposal scales must be nonnegative")
        if self.chain_length < 1 or self.gibbs_cycles_per_full_step < 1 or self.thin < 1:
            raise ConfigError("chain length, cycle count and thinning must be >= 1")
        if not 0 <= self.burn_in < 1:
            raise ConfigError("burn_in must be a fraction in [0, 1)")
        R = 0.5 * (self.covariance + self.covariance.T) + self.jitter * np.eye(n)
        try:
            self.cholesky = np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise ConfigError("covariance is not positive definite") from None
        self.coordinate_std = np.sqrt(np.diag(R))

    @property
    def n(self):
        return self.initial_point.size


@dataclasses.dataclass
class ChainState:
    p: np.ndarray
    logp: float
    coord_accepts: np.ndarray
    coord_trials: np.ndarray
    full_accepts: int = 0
    full_trials: int = 0

    @classmethod
    def start(cls, p, logp):
        n = len(p)
        return cls(np.array(p, dtype=float), float(logp),
                   np.zeros(n, dtype=int), np.zeros(n, dtype=int))


def gibbs_cycle(state: ChainState, log_density, config: ChainConfig, rng) -> ChainState:
    """Update every coordinate once, in ascending order."""
    scale = config.coordinate_scale * config.coordinate_std
    eps = rng.standard_normal(state.p.size)
    for i in range(state.p.size):
        old = state.p[i]
        state.p[i] = old + scale[i] * eps[i]
        logc = log_density(state.p)
        state.coord_trials[i] += 1
        if metropolis_accept(logc, state.logp, rng):
            state.logp = logc
            state.coord_accepts[i] += 1
        else:
            state.p[i] = old
    return state


def full_rwm_step(state: ChainState, log_density, config: ChainConfig, rng) -> ChainState:
    """One joint random-walk Metropolis step with covariance ``R``."""
    step = config.full_step_scale / np.sqrt(state.p.size)
    cand = state.p + step * (config.cholesky @ rng.standard_normal(state.p.size))
    logc = log_density(cand)
    state.full_trials += 1
    if metropolis_accept(logc, state.logp, rng):
        state.p = cand
        state.logp = logc
        state.full_accepts += 1
    return state


@dataclasses.dataclass
class ChainResult:
    samples: np.ndarray
    log_target: np.ndarray
    coordinate_acceptance: np.ndarray
    full_step_acceptance: float
    overall_acceptance: float
    burn_in: int

    def posterior_samples(self):
        """Samples after discarding the burn-in."""
        return self.samples[self.burn_in:]

    def summary(self) -> dict:
        return {
            'samples': int(self.samples.shape[0]),
            'burn_in': int(self.burn_in),
            'overall_acceptance': float(self.overall_acceptance),
            'full_step_acceptance': float(self.full_step_acceptance),
            'coordinate_acceptance_mean': float(np.mean(self.coordinate_acceptance)),
            'coordinate_acceptance': [float(a) for a in self.coordinate_acceptance],
        }

    def to_csv(self, path, labels=None):
        n = self.samples.shape[1]
        labels = labels or [f'p{i}' for i in range(n)]
        with open(path, 'w', newline='') as f:
            w = csv.writer(f, lineterminator='\n')
            w.writerow(list(labels) + ['log_target'])
            for row, lt in zip(self.samples, self.log_target):
                w.writerow([fmt(v) for v in row] + [fmt(lt)])

    def summary_json(self, path):
        with open(path, 'w') as f:
            json.dump(self.summary(), f, indent=1)
            f.write('\n')


def perturbed_mode(mode, covariance, seed, scale=1.0):
    """Random starting point ``mode + scale * N(0, R)``."""
    L = np.linalg.cholesky(np.asarray(covariance, dtype=float))
    rng = make_rng(seed)
    return np.asarray(mode, dtype=float) + scale * (L @ rng.standard_normal(len(mode)))


def run_chain(config: ChainConfig, target: Union[JointMapSpec, Callable],
              progress: Optional[Callable[[int], None]] = None) -> ChainResult:
    """Run the hybrid sampler; one recorded sample per Gibbs cycle."""
    log_density = make_log_target(target)
    rng = make_rng(config.seed)
    logp0 = log_density(config.initial_point)
    if not np.isfinite(logp0):
        raise ConfigError("initial point has non-finite log target")
    state = ChainState.start(config.initial_point, logp0)
    total = config.chain_length * config.thin
    samples = np.empty((config.chain_length, config.n))
    logs = np.empty(config.chain_length)
    k = 0
    for cycle in range(1, total + 1):
        gibbs_cycle(state, log_density, config, rng)
        if cycle % config.gibbs_cycles_per_full_step == 0:
            full_rwm_step(state, log_density, config, rng)
        if cycle % config.thin == 0:
            samples[k] = state.p
            logs[k] = state.logp
            k += 1
        if progress is not None:
            progress(cycle)
    coord_rate = state.coord_accepts / np.maximum(state.coord_trials, 1)
    trials = state.coord_trials.sum() + state.full_trials
    accepts = state.coord_accepts.sum() + state.full_accepts
    return ChainResult(
        samples=samples, log_target=logs, coordinate_acceptance=coord_rate,
        full_step_acceptance=state.full_accepts / max(state.full_trials, 1),
        overall_acceptance=accepts / max(trials, 1),
        burn_in=int(config.burn_in * config.chain_length))
