"""Benchmark models, reference simulators and measurement generators.

ODE models expose vectorized dynamics ``f(t, x, theta)`` over a leading node
axis together with first and second derivatives, which is what the
collocation transcription consumes.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from .exceptions import BlowUpError
from .mesh import CollocationMesh, MeshTrajectory


def seed_sequence(master: int, *keys: int) -> np.random.SeedSequence:
    """Counter-based child seed: independent of the order it is requested in."""
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


PURPOSE_DATA = 0
PURPOSE_SDE = 1
PURPOSE_CHAIN = 2
PURPOSE_INIT = 3


def vdp_drift(x, mu):
    """Van der Pol vector field ``(x2, mu (1 - x1^2) x2 - x1)``."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x2, mu * (1 - x1 ** 2) * x2 - x1], axis=-1)


@dataclasses.dataclass
class VdpModel:
    """Van der Pol oscillator with noisy measurements of ``x1``."""

    mu: float = 2.0
    sigma: float = 0.1

    nx = 2
    param_labels = ('mu',)
    state_labels = ('x1', 'x2')

    @property
    def theta(self):
        return np.array([self.mu])

    def f(self, t, x, theta):
        return vdp_drift(x, theta[0])

    def df_dx(self, t, x, theta):
        mu = theta[0]
        x1, x2 = x[:, 0], x[:, 1]
        J = np.zeros(x.shape[:1] + (2, 2))
        J[:, 0, 1] = 1.0
        J[:, 1, 0] = -2 * mu * x1 * x2 - 1
        J[:, 1, 1] = mu * (1 - x1 ** 2)
        return J

    def df_dtheta(self, t, x, theta):
        x1, x2 = x[:, 0], x[:, 1]
        J = np.zeros(x.shape[:1] + (2, 1))
        J[:, 1, 0] = (1 - x1 ** 2) * x2
        return J

    def d2f(self, t, x, theta, w):
        """Second derivatives of ``sum_i w_i f_i`` at every node.

        Returns the (x, x), (x, theta) and (theta, theta) blocks.
        """
        mu = theta[0]
        x1, x2 = x[:, 0], x[:, 1]
        w2 = w[:, 1]
        k = x.shape[0]
        xx = np.zeros((k, 2, 2))
        xx[:, 0, 0] = -2 * mu * x2 * w2
        xx[:, 0, 1] = xx[:, 1, 0] = -2 * mu * x1 * w2
        xt = np.zeros((k, 2, 1))
        xt[:, 0, 0] = -2 * x1 * x2 * w2
        xt[:, 1, 0] = (1 - x1 ** 2) * w2
        return xx, xt, np.zeros((k, 1, 1))


@dataclasses.dataclass
class LinearModel:
    """Linear dynamics ``dx/dt = A x + B theta``."""

    A: np.ndarray
    B: Optional[np.ndarray] = None
    theta_true: Optional[np.ndarray] = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        nx = self.A.shape[0]
        self.B = (np.zeros((nx, 0)) if self.B is None
                  else np.asarray(self.B, dtype=float).reshape(nx, -1))
        self.theta_true = (np.zeros(self.B.shape[1]) if self.theta_true is None
                           else np.asarray(self.theta_true, dtype=float))

    @property
    def nx(self):
        return self.A.shape[0]

    @property
    def param_labels(self):
        return tuple(f'theta{i}' for i in range(self.B.shape[1]))

    @property
    def state_labels(self):
        return tuple(f'x{i + 1}' for i in range(self.nx))

    @property
    def theta(self):
        return self.theta_true

    def f(self, t, x, theta):
        return x @ self.A.T + self.B @ np.asarray(theta, dtype=float)

    def df_dx(self, t, x, theta):
        return np.broadcast_to(self.A, (x.shape[0],) + self.A.shape)

    def df_dtheta(self, t, x, theta):
        return np.broadcast_to(self.B, (x.shape[0],) + self.B.shape)

    def d2f(self, t, x, theta, w):
        k, nx, nt = x.shape[0], self.nx, self.B.shape[1]
        return np.zeros((k, nx, nx)), np.zeros((k, nx, nt)), np.zeros((k, nt, nt))


def duffing_drift(x, z, t, params):
    """Duffing drift: ``dx = -a z^3 - b z - d x + gamma cos t``, ``dz = x``.

    ``params`` is anything with ``a, b, d, gamma`` attributes.
    """
    dx = (-params.a * z ** 3 - params.b * z - params.d * x
          + params.gamma * np.cos(t))
    return dx, x


@dataclasses.dataclass
class DuffingModel:
    """Duffing oscillator driven by additive white noise on ``x``.

    Defaults reproduce the simulation setup of the joint MAP experiment.
    """

    a: float = 1.0
    b: float = -1.0
    d: float = 0.2
    gamma: float = 0.3
    sigma_d: float = 0.1
    sigma_y: float = 0.1
    ts: float = 0.1
    T: float = 200.0
    x0: float = 1.0
    z0: float = 1.0

    def __post_init__(self):
        for name in ('sigma_d', 'sigma_y', 'ts', 'T'):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    param_labels = ('a', 'b', 'd', 'sigma_y')

    @property
    def theta(self):
        return np.array([self.a, self.b, self.d, self.sigma_y])

    @property
    def diffusion(self):
        return np.array([self.sigma_d, 0.0])

    def sde_drift(self, t, y):
        dx, dz = duffing_drift(y[..., 0], y[..., 1], t, self)
        return np.stack([dx, dz], axis=-1)


@dataclasses.dataclass
class OrnsteinUhlenbeck:
    """``dX = -rate X dt + sigma dW``; closed-form moments for testing."""

    rate: float = 1.0
    sigma: float = 1.0

    @property
    def diffusion(self):
        return np.array([self.sigma])

    def sde_drift(self, t, y):
        return -self.rate * y

    def mean(self, t, x0):
        return np.exp(-self.rate * t) * x0

    def variance(self, t):
        return self.sigma ** 2 / (2 * self.rate) * (1 - np.exp(-2 * self.rate * t))


def simulate_ode(model, x0, mesh, theta=None, substeps=1) -> MeshTrajectory:
    """Classical RK4 integration reporting the state at every mesh node."""
    if isinstance(mesh, CollocationMesh):
        t = mesh.node_times
    else:
        t = np.asarray(mesh, dtype=float)
    theta = model.theta if theta is None else np.asarray(theta, dtype=float)

    def rhs(tk, xk):
        return model.f(tk, xk[None], theta)[0]

    x = np.empty((t.size, len(x0)))
    x[0] = x0
    with np.errstate(over='ignore', invalid='ignore'):
        _rk4_steps(rhs, t, x, substeps)
    return MeshTrajectory(t, x)


def _rk4_steps(rhs, t, x, substeps):
    for k in range(t.size - 1):
        h = (t[k + 1] - t[k]) / substeps
        xk = x[k]
        tk = t[k]
        for _ in range(substeps):
            k1 = rhs(tk, xk)
            k2 = rhs(tk + h / 2, xk + h / 2 * k1)
            k3 = rhs(tk + h / 2, xk + h / 2 * k2)
            k4 = rhs(tk + h, xk + h * k3)
            xk = xk + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            tk = tk + h
        if not np.all(np.isfinite(xk)):
            raise BlowUpError(f"non-finite state at t={t[k + 1]}")
        x[k + 1] = xk


def brownian_increments(rng, steps, step, paths=None):
    """Correlated ``(dW, dZ)`` with ``dZ = int (W_s - W_t) ds`` per step.

    ``Var dW = step``, ``Var dZ = step^3/3``, ``Cov = step^2/2``.
    """
    rng = make_rng(rng)
    shape = (steps,) if paths is None else (steps, paths)
    u1 = rng.standard_normal(shape)
    u2 = rng.standard_normal(shape)
    dW = np.sqrt(step) * u1
    dZ = 0.5 * step ** 1.5 * (u1 + u2 / np.sqrt(3))
    return dW, dZ


def coarsen_increments(dW, dZ, step, factor):
    """Aggregate fine increments into ``factor``-times coarser ones.

    Keeps the coarse ``dZ`` consistent with the same Brownian path.
    """
    steps = dW.shape[0] // factor
    fw = dW[:steps * factor].reshape((steps, factor) + dW.shape[1:])
    fz = dZ[:steps * factor].reshape((steps, factor) + dZ.shape[1:])
    # W at the start of each fine step, relative to the coarse step start
    w_rel = np.cumsum(fw, axis=1) - fw
    return fw.sum(axis=1), (fz + w_rel * step).sum(axis=1)


def sde_paths(model, y0, step, dW, dZ, t0=0.0) -> np.ndarray:
    """Explicit strong order-1.5 scheme for additive noise.

    ``dW``/``dZ`` have shape ``(steps,)`` or ``(steps, paths)``; the noise
    enters through the constant vector ``model.diffusion``. Returns states of
    shape ``(steps + 1, [paths,] d)``.
    """
    b = model.diffusion
    y = np.array(np.broadcast_to(y0, dW.shape[1:] + b.shape), dtype=float)
    out = np.empty((dW.shape[0] + 1,) + y.shape)
    out[0] = y
    sq = np.sqrt(step)
    for k in range(dW.shape[0]):
        t = t0 + k * step
        a = model.sde_drift(t, y)
        w = dW[k][..., None]
        z = dZ[k][..., None]
        sup_p = y + a * step + b * sq
        sup_m = y + a * step - b * sq
        a_p = model.sde_drift(t + step, sup_p)
        a_m = model.sde_drift(t + step, sup_m)
        y = (y + b * w + (a_p - a_m) * z / (2 * sq)
             + 0.25 * (a_p + 2 * a + a_m) * step)
        if not np.all(np.isfinite(y)):
            raise BlowUpError(f"non-finite state at t={t + step}")
        out[k + 1] = y
    return out


def simulate_sde(model, x0, step, rng_seed, horizon=None) -> MeshTrajectory:
    """Simulate one path on a uniform grid of spacing ``step``.

    ``x0`` is the initial state (``(x, z)`` for the Duffing model). The
    Brownian increments are stored in ``noise`` as columns ``(dW, dZ)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    horizon = model.T if horizon is None else horizon
    steps = int(round(horizon / step))
    dW, dZ = brownian_increments(rng_seed, steps, step)
    y = sde_paths(model, np.asarray(x0, dtype=float), step, dW, dZ)
    t = step * np.arange(steps + 1)
    return MeshTrajectory(t, y, noise=np.c_[dW, dZ])


def measure(traj: MeshTrajectory, component: int, noise_std: float,
            rng_seed, times=None) -> np.ndarray:
    """Noisy samples of one state component at ``times`` (default: all)."""
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    sampled = traj if times is None else traj.sample(times)
    truth = sampled.states[:, component]
    rng = make_rng(rng_seed)
    return truth + noise_std * rng.standard_normal(truth.shape)


def generate_vdp_data(model: VdpModel, seed, x0=(0.0, 1.0), horizon=20.0,
                      measurement_spacing=0.1, sim_step=0.01):
    """Simulate the oscillator and return ``(t_meas, y, truth)``.

    ``truth`` is the noise-free trajectory on the simulation grid.
    """
    sim_times = CollocationMesh.uniform(0.0, horizon, sim_step).node_times
    truth = simulate_ode(model, np.asarray(x0, dtype=float), sim_times)
    t_meas = CollocationMesh.uniform(0.0, horizon, measurement_spacing).node_times
    y = measure(truth, 0, model.sigma, seed, t_meas)
    return t_meas, y, truth


def generate_duffing_data(model: DuffingModel, seed, step=0.005):
    """Simulate the Duffing SDE and sample ``z`` every ``model.ts``.

    ``seed`` may be an int or a SeedSequence; separate child streams are
    used for the process noise and the measurement noise.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sde_seed, meas_seed = (
        np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (i,))
        for i in range(2))
    traj = simulate_sde(model, (model.x0, model.z0), step, sde_seed, model.T)
    t_meas = CollocationMesh.uniform(0.0, model.T, model.ts).node_times
    y = measure(traj, 1, model.sigma_y, meas_seed, t_meas)
    return t_meas, y, traj
