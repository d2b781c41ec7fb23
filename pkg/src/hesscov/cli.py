"""Command-line entry point.

Subcommands: ``generate``, ``fit``, ``montecarlo``, ``mcmc`` and
``check-derivs``. Every run writes its artifacts plus ``manifest.json`` into
``--out-dir``; outputs are byte-for-byte reproducible for a fixed seed
(wall-clock timings are only recorded with ``--timings``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import __version__, covariance
from .config import (Config, build_spec, defaults, load_config, read_data_csv,
                     write_data_csv, write_json)
from .exceptions import ConfigError, HesscovError
from .experiments import MonteCarloConfig, run_monte_carlo, state_band
from .estimators import initial_guess_joint_map, initial_guess_oem
from .kkt import (assemble_bordered_hessian, check_derivatives,
                  solve_equality_constrained)
from .mcmc import ChainConfig, perturbed_mode, run_chain
from .models import (PURPOSE_CHAIN, PURPOSE_DATA, PURPOSE_INIT,
                     generate_duffing_data, generate_vdp_data, seed_sequence)
from .transcribe import JointMapTranscription, OemTranscription

logger = logging.getLogger('hesscov')

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class Run:
    """Collects artifacts and writes the run manifest."""

    def __init__(self, command, cfg: Config, out_dir, seed, timings=False):
        self.command = command
        self.cfg = cfg
        self.out_dir = out_dir
        self.seed = seed
        self.artifacts = []
        self.status = 'ok'
        self.extra = {}
        self.record_timings = timings
        self.timings = {}
        self._t0 = time.perf_counter()
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        self.artifacts.append(name)
        return os.path.join(self.out_dir, name)

    def lap(self, name):
        now = time.perf_counter()
        self.timings[name] = now - self._t0
        self._t0 = now

    def write_manifest(self):
        manifest = {
            'command': self.command,
            'version': __version__,
            'config': self.cfg.to_dict(),
            'seed': self.seed,
            'artifacts': sorted(self.artifacts),
            'status': self.status,
        }
        manifest.update(self.extra)
        if self.record_timings:
            manifest['timings_seconds'] = self.timings
        write_json(os.path.join(self.out_dir, 'manifest.json'), manifest)


def _load(args) -> Config:
    cfg = load_config(args.config) if args.config else defaults()
    if args.seed is not None:
        cfg.values['experiment']['seed'] = args.seed
    return cfg


def _data(args, cfg):
    path = args.data or cfg['data']['path']
    if not path:
        raise ConfigError("no data file: pass --data or set [data] path")
    return read_data_csv(path)


def cmd_generate(args) -> int:
    cfg = _load(args)
    run = Run('generate', cfg, args.out_dir, cfg.seed, args.timings)
    seed = seed_sequence(cfg.seed, PURPOSE_DATA, 0)
    if cfg.model == 'vdp':
        s = cfg['vdp']
        t, y, _ = generate_vdp_data(cfg.vdp_model(), seed, (s['x1_0'], s['x2_0']),
                                    s['horizon'], s['measurement_spacing'],
                                    s['sim_step'])
    elif cfg.model == 'duffing':
        t, y, _ = generate_duffing_data(cfg.duffing_model(), seed,
                                        cfg['duffing']['step'])
    else:
        raise ConfigError(f"cannot generate data for model {cfg.model!r}")
    run.lap('simulate')
    write_data_csv(run.path('data.csv'), t, y)
    write_json(run.path('truth.json'), {
        'model': cfg.model, 'parameters': cfg.truth(),
        'master_seed': cfg.seed, 'seed_spawn_key': list(seed.spawn_key),
        'rows': int(t.size)})
    run.write_manifest()
    return EXIT_OK


def _fit(cfg, t, y):
    spec = build_spec(cfg, t, y)
    if cfg.model == 'vdp':
        tr = OemTranscription(spec)
        z0 = initial_guess_oem(y, spec.mesh, cfg['vdp']['cutoff'])
        if spec.sigma is not None:
            z0 = np.delete(z0, 1)
    else:
        tr = JointMapTranscription(spec)
        theta, x, zpath = initial_guess_joint_map(
            y, spec.mesh, spec.model.gamma, cfg['duffing']['cutoff'])
        z0 = tr.initial_guess(theta, x, zpath)
    sol = solve_equality_constrained(tr.problem, z0, cfg.solver_options())
    H = assemble_bordered_hessian(tr.problem, sol.z_star, sol.lambda_star)
    return tr, sol, H


def _default_report(cfg, labels):
    if cfg.model == 'vdp':
        names = ('mu', 'sigma', 'x1_0', 'x2_0')
    else:
        names = ('a', 'b', 'd', 'sigma_y', 'z_0', 'x_0')
    return [n for n in names if n in labels]


def cmd_fit(args) -> int:
    cfg = _load(args)
    if cfg.model not in ('vdp', 'duffing'):
        raise ConfigError("fit supports models vdp and duffing")
    t, y = _data(args, cfg)
    run = Run('fit', cfg, args.out_dir, cfg.seed, args.timings)
    tr, sol, H = _fit(cfg, t, y)
    run.lap('solve')
    sol.to_json(run.path('solution.json'))
    run.extra['solver_status'] = sol.status.value
    if not sol.converged:
        run.status = 'solver_failed'
        run.write_manifest()
        logger.error("solver did not converge: %s", sol.status.value)
        return EXIT_FAILED
    labels = tr.problem.labels
    names = args.report or cfg['fit']['report'] or _default_report(cfg, labels)
    try:
        targets = [labels.index(n) for n in names]
    except ValueError as e:
        raise ConfigError(f"unknown report target: {e}") from None
    report = covariance.covariance_report(H, sol.z_star, targets, labels)
    report.to_csv(run.path('covariance.csv'), run.path('correlations.csv'))
    report.to_json(run.path('covariance.json'))
    comp = cfg['fit']['band_component']
    if args.band_component is not None:
        comp = args.band_component
    if comp >= 0 and cfg.model == 'vdp':
        band = state_band(tr, sol, H, comp, cfg['fit']['band_multiplier'])
        band.to_csv(run.path('band.csv'))
    run.lap('covariance')
    run.write_manifest()
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    cfg = _load(args)
    if cfg.model != 'vdp':
        raise ConfigError("montecarlo supports model vdp")
    s = cfg['vdp']
    mc = MonteCarloConfig(
        realization_count=args.realizations or cfg['montecarlo']['realizations'],
        master_seed=cfg.seed, mu=s['mu'], sigma=s['sigma'],
        x0=(s['x1_0'], s['x2_0']), horizon=s['horizon'],
        measurement_spacing=s['measurement_spacing'],
        mesh_spacing=s['mesh_spacing'], sim_step=s['sim_step'],
        cutoff=s['cutoff'], report_targets=cfg['montecarlo']['report'],
        workers=args.workers or os.cpu_count() or 1)
    run = Run('montecarlo', cfg, args.out_dir, cfg.seed, args.timings)
    report = run_monte_carlo(mc)
    run.lap('realizations')
    report.to_csv(run.path('montecarlo.csv'))
    report.to_json(run.path('montecarlo.json'))
    report.estimates_csv(run.path('estimates.csv'))
    run.extra['convergence_rate'] = report.convergence_rate
    run.write_manifest()
    return EXIT_OK if report.converged_count else EXIT_FAILED


def cmd_mcmc(args) -> int:
    cfg = _load(args)
    if cfg.model not in ('mvn', 'duffing'):
        raise ConfigError("mcmc supports models mvn and duffing")
    m = cfg['mcmc']
    run = Run('mcmc', cfg, args.out_dir, cfg.seed, args.timings)
    if cfg.model == 'mvn':
        mean = np.array(cfg['mvn']['mean'])
        R = np.array(cfg['mvn']['covariance'])
        if R.shape != (mean.size, mean.size) or not np.allclose(R, R.T):
            raise ConfigError("[mvn] covariance must be symmetric and match the mean")
        if np.any(np.linalg.eigvalsh(R) <= 0):
            raise ConfigError("[mvn] covariance must be positive definite")
        inv = np.linalg.inv(R)

        def target(p):
            r = p - mean
            return -0.5 * r @ inv @ r
        mode, labels = mean, [f'p{i}' for i in range(mean.size)]
    else:
        t, y = _data(args, cfg)
        tr, sol, H = _fit(cfg, t, y)
        run.extra['solver_status'] = sol.status.value
        if not sol.converged:
            run.status = 'solver_failed'
            run.write_manifest()
            return EXIT_FAILED
        R = covariance.reduced_covariance(H)
        mode = sol.z_star[tr.problem.p_index]
        labels = [tr.problem.labels[i] for i in tr.problem.p_index]
        target = tr.spec
    run.lap('mode')
    p0 = perturbed_mode(mode, R, seed_sequence(cfg.seed, PURPOSE_INIT, 0),
                        m['init_scale'])
    chain_cfg = ChainConfig(
        covariance=R, initial_point=p0,
        chain_length=args.chain_length or m['chain_length'],
        gibbs_cycles_per_full_step=m['cycles_per_full_step'],
        coordinate_scale=m['coordinate_scale'], full_step_scale=m['full_step_scale'],
        seed=seed_sequence(cfg.seed, PURPOSE_CHAIN, 0), burn_in=m['burn_in'],
        thin=m['thin'], jitter=m['jitter'])
    result = run_chain(chain_cfg, target)
    run.lap('chain')
    result.to_csv(run.path('chain.csv'), labels)
    result.summary_json(run.path('acceptance.json'))
    run.extra['overall_acceptance'] = result.overall_acceptance
    run.write_manifest()
    return EXIT_OK


def cmd_check_derivs(args) -> int:
    cfg = _load(args)
    if cfg.model not in ('vdp', 'duffing'):
        raise ConfigError("check-derivs supports models vdp and duffing")
    run = Run('check-derivs', cfg, args.out_dir, cfg.seed, args.timings)
    if args.data or cfg['data']['path']:
        t, y = _data(args, cfg)
    else:
        seed = seed_sequence(cfg.seed, PURPOSE_DATA, 0)
        if cfg.model == 'vdp':
            t, y, _ = generate_vdp_data(cfg.vdp_model(), seed)
        else:
            t, y, _ = generate_duffing_data(cfg.duffing_model(), seed)
    spec = build_spec(cfg, t, y)
    tr = (OemTranscription if cfg.model == 'vdp' else JointMapTranscription)(spec)
    rng = np.random.default_rng(seed_sequence(cfg.seed, PURPOSE_INIT, 1))
    prob = tr.problem
    z = rng.normal(scale=0.5, size=prob.nz)
    z[prob.positive_index] = rng.uniform(0.5, 1.5, prob.positive_index.size)
    lam = rng.normal(size=prob.m)
    cols = None
    if prob.nz > args.max_columns:
        cols = np.sort(rng.choice(prob.nz, args.max_columns, replace=False))
    rep = check_derivatives(prob, z, lam, args.step, cols)
    out = rep.to_dict()
    out['tolerance'] = args.tolerance
    out['passed'] = rep.passed(args.tolerance)
    write_json(run.path('derivatives.json'), out)
    run.status = 'ok' if out['passed'] else 'failed'
    run.write_manifest()
    return EXIT_OK if out['passed'] else EXIT_FAILED


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="experiment config file")
    common.add_argument('--data', help="CSV data file with columns time,y")
    common.add_argument('--out-dir', default='.', help="output directory")
    common.add_argument('--seed', type=int, help="master seed (overrides config)")
    common.add_argument('--workers', type=int, help="worker processes")
    common.add_argument('--timings', action='store_true',
                        help="record wall-clock timings in the manifest")

    parser = argparse.ArgumentParser(
        prog='hesscov', description=__doc__.splitlines()[0])
    parser.add_argument('--version', action='version', version=__version__)
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('generate', parents=[common], help="simulate a dataset") \
        .set_defaults(func=cmd_generate)
    p = sub.add_parser('fit', parents=[common], help="estimate and report uncertainty")
    p.add_argument('--report', type=lambda s: [v for v in s.split(',') if v],
                   help="comma-separated variables to report")
    p.add_argument('--band-component', type=int,
                   help="state component for the confidence band CSV")
    p.set_defaults(func=cmd_fit)
    p = sub.add_parser('montecarlo', parents=[common], help="repeated-realization study")
    p.add_argument('--realizations', type=int)
    p.set_defaults(func=cmd_montecarlo)
    p = sub.add_parser('mcmc', parents=[common], help="hybrid Gibbs sampler")
    p.add_argument('--chain-length', type=int)
    p.set_defaults(func=cmd_mcmc)
    p = sub.add_parser('check-derivs', parents=[common],
                       help="finite-difference derivative check")
    p.add_argument('--step', type=float, default=1e-6)
    p.add_argument('--tolerance', type=float, default=1e-5)
    p.add_argument('--max-columns', type=int, default=200)
    p.set_defaults(func=cmd_check_derivs)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get('HESSCOV_LOG', 'WARNING').upper(),
                        format='%(levelname)s %(name)s: %(message)s')
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"hesscov {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except HesscovError as e:
        print(f"hesscov {args.command}: failed: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == '__main__':
    sys.exit(main())
