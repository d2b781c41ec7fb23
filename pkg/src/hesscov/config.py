"""Experiment configuration files (``key = value`` with ``[sections]``).

Every recognized key has a type and a default; unknown sections or keys and
unparseable values raise :class:`ConfigError` naming the file location.
"""

from __future__ import annotations

import configparser
import csv
import json
import re

import numpy as np

from .exceptions import ConfigError
from .kkt import SolverOptions
from .mesh import CollocationMesh
from .models import DuffingModel, VdpModel
from .transcribe import JointMapSpec, OemSpec


def _floats(text):
    return tuple(float(v) for v in text.replace(';', ',').split(',') if v.strip())


def _names(text):
    return tuple(v.strip() for v in text.split(',') if v.strip())


def _matrix(text):
    rows = [r for r in text.split(';') if r.strip()]
    return [[float(v) for v in r.split(',')] for r in rows]


SCHEMA = {
    'experiment': {'model': (str, 'vdp'), 'seed': (int, 0)},
    'vdp': {'mu': (float, 2.0), 'sigma': (float, 0.1), 'x1_0': (float, 0.0),
            'x2_0': (float, 1.0), 'horizon': (float, 20.0),
            'measurement_spacing': (float, 0.1), 'sim_step': (float, 0.01),
            'mesh_spacing': (float, 0.02), 'cutoff': (float, 5.0)},
    'duffing': {'a': (float, 1.0), 'b': (float, -1.0), 'd': (float, 0.2),
                'gamma': (float, 0.3), 'sigma_d': (float, 0.1),
                'sigma_y': (float, 0.1), 'ts': (float, 0.1), 't': (float, 200.0),
                'x0': (float, 1.0), 'z0': (float, 1.0), 'step': (float, 0.005),
                'subdivision': (int, 1), 'cutoff': (float, 5.0)},
    'mvn': {'mean': (_floats, (0.0,)), 'covariance': (_matrix, [[1.0]])},
    'solver': {'tol_kkt': (float, 1e-8), 'tol_feas': (float, 1e-8),
               'max_iter': (int, 200), 'regularization_initial': (float, 1e-8)},
    'fit': {'report': (_names, ()), 'sigma': (float, 0.0),
            'band_component': (int, -1),
            'band_multiplier': (float, 2.0), 'correlations': (_names, ())},
    'montecarlo': {'realizations': (int, 500),
                   'report': (_names, ('mu', 'sigma', 'x1_0', 'x2_0'))},
    'mcmc': {'chain_length': (int, 1000), 'cycles_per_full_step': (int, 15),
             'coordinate_scale': (float, 3.2), 'full_step_scale': (float, 1.8),
             'burn_in': (float, 0.2), 'thin': (int, 1), 'jitter': (float, 0.0),
             'init_scale': (float, 1.0)},
    'data': {'path': (str, '')},
}

MODELS = ('vdp', 'duffing', 'mvn')


class Config:
    """Parsed configuration: ``cfg[section][key]`` with defaults filled in."""

    def __init__(self, values: dict, source: str = '<defaults>'):
        self.values = values
        self.source = source

    def __getitem__(self, section):
        return self.values[section]

    @property
    def model(self):
        return self.values['experiment']['model']

    @property
    def seed(self):
        return self.values['experiment']['seed']

    def to_dict(self):
        """JSON-friendly resolved configuration."""
        def plain(v):
            if isinstance(v, tuple):
                return list(v)
            return v
        return {s: {k: plain(v) for k, v in sec.items()}
                for s, sec in self.values.items()}

    def solver_options(self) -> SolverOptions:
        return SolverOptions.from_mapping(self.values['solver'])

    def vdp_model(self) -> VdpModel:
        s = self.values['vdp']
        return VdpModel(s['mu'], s['sigma'])

    def duffing_model(self) -> DuffingModel:
        s = self.values['duffing']
        return DuffingModel(a=s['a'], b=s['b'], d=s['d'], gamma=s['gamma'],
                            sigma_d=s['sigma_d'], sigma_y=s['sigma_y'],
                            ts=s['ts'], T=s['t'], x0=s['x0'], z0=s['z0'])

    def truth(self) -> dict:
        if self.model == 'vdp':
            s = self.values['vdp']
            return {'mu': s['mu'], 'sigma': s['sigma'], 'x1_0': s['x1_0'],
                    'x2_0': s['x2_0']}
        if self.model == 'duffing':
            s = self.values['duffing']
            return {k: s[k] for k in ('a', 'b', 'd', 'sigma_y', 'x0', 'z0')}
        return {}


def defaults() -> Config:
    return Config({s: {k: d for k, (_, d) in keys.items()}
                   for s, keys in SCHEMA.items()})


def _line_of(text, section, key):
    sec = None
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r'\s*\[([^\]]+)\]', line)
        if m:
            sec = m.group(1).strip().lower()
        elif sec == section and re.match(rf'\s*{re.escape(key)}\s*[=:]', line, re.I):
            return no
    return None


def load_config(path) -> Config:
    """Read and validate a configuration file."""
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    return parse_config(text, str(path))


def parse_config(text, source='<string>') -> Config:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    cfg = defaults()
    for section in parser.sections():
        sec = section.lower()
        if sec not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            line = _line_of(text, sec, key)
            where = f"{source}:{line}" if line else source
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
            kind = SCHEMA[sec][key][0]
            try:
                value = kind(raw.strip())
            except ValueError:
                raise ConfigError(
                    f"{where}: [{section}] {key} = {raw!r} is not a valid "
                    f"{getattr(kind, '__name__', 'value').lstrip('_')}") from None
            cfg.values[sec][key] = value
    if cfg.model not in MODELS:
        line = _line_of(text, 'experiment', 'model')
        raise ConfigError(f"{source}:{line}: model must be one of {MODELS}")
    cfg.source = source
    return cfg


def read_data_csv(path):
    """Read a ``time,y`` CSV file; errors name the offending line."""
    t, y = [], []
    try:
        f = open(path, newline='')
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    with f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ['time', 'y']:
            raise ConfigError(f"{path}:1: expected header 'time,y'")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ConfigError(f"{path}:{line}: expected 2 columns, got {len(row)}")
            try:
                t.append(float(row[0]))
                y.append(float(row[1]))
            except ValueError:
                raise ConfigError(f"{path}:{line}: cannot parse {row!r} as numbers") from None
    if not t:
        raise ConfigError(f"{path}: no data rows")
    return np.array(t), np.array(y)


def write_data_csv(path, t, y):
    from .covariance import fmt
    with open(path, 'w', newline='') as f:
        w = csv.writer(f, lineterminator='\n')
        w.writerow(['time', 'y'])
        for a, b in zip(t, y):
            w.writerow([fmt(a), fmt(b)])


def write_json(path, obj):
    with open(path, 'w') as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write('\n')


def build_spec(cfg: Config, t, y):
    """Estimation spec for the configured model and data."""
    if cfg.model == 'vdp':
        s = cfg['vdp']
        mesh = CollocationMesh.uniform(t[0], t[-1], s['mesh_spacing'], t)
        known = cfg['fit']['sigma']
        if known < 0:
            raise ConfigError("[fit] sigma must be positive, or 0 to estimate it")
        return OemSpec(cfg.vdp_model(), y, mesh, sigma=known or None)
    if cfg.model == 'duffing':
        s = cfg['duffing']
        ts = float(np.diff(t).mean())
        mesh = CollocationMesh.uniform(t[0], t[-1], ts, t).refine(s['subdivision'])
        return JointMapSpec(cfg.duffing_model(), y, mesh)
    raise ConfigError(f"model {cfg.model!r} has no estimation spec")
