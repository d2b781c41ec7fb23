"""Trapezoidal collocation of continuous-time estimation problems.

Two transcriptions are provided: the output-error method (ODE model, noisy
measurements of one state) and the joint MAP estimation of the state path and
parameters of the Duffing SDE. Both produce a :class:`ConstrainedProblem` with
analytic sparse derivatives, ordered so that the independent variables come
first in the decision vector.
"""

from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import SpecError
from .kkt import ConstrainedProblem
from .mesh import CollocationMesh
from .models import DuffingModel


def trapezoidal_defect(x_k, x_k1, f_k, f_k1, h):
    """Collocation defect ``x_k1 - x_k - h/2 (f_k + f_k1)``."""
    x_k, x_k1 = np.asarray(x_k, dtype=float), np.asarray(x_k1, dtype=float)
    return x_k1 - x_k - 0.5 * h * (np.asarray(f_k) + np.asarray(f_k1))


def _coo(rows, cols, vals, shape):
    return sp.csc_matrix((np.concatenate(vals),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=shape)


@dataclasses.dataclass
class OemSpec:
    """Output-error estimation problem.

    ``sigma=None`` estimates the measurement noise scale together with the
    model parameters; a number fixes it.
    """

    model: object
    data: np.ndarray
    mesh: CollocationMesh
    observed: int = 0
    sigma: Optional[float] = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != self.mesh.measurement_index.shape:
            raise SpecError(
                f"{self.data.size} measurements but "
                f"{self.mesh.measurement_index.size} measurement instants")
        if not 0 <= self.observed < self.model.nx:
            raise SpecError("observed state component out of range")
        if self.sigma is not None and not self.sigma > 0:
            raise SpecError("known sigma must be positive")


class OemTranscription:
    """Output-error transcription; ``problem`` is the resulting NLP.

    Decision vector: model parameters, ``sigma`` (if estimated), then the
    states at every node (node-major). Independents are the parameters and
    the initial state.
    """

    def __init__(self, spec: OemSpec):
        self.spec = spec
        model = spec.model
        self.nx = model.nx
        self.ntheta = len(model.param_labels)
        self.estimate_sigma = spec.sigma is None
        self.sigma_index = self.ntheta if self.estimate_sigma else None
        self.nparam = self.ntheta + int(self.estimate_sigma)
        self.nodes = spec.mesh.size
        self.nz = self.nparam + self.nodes * self.nx
        self.ncons = spec.mesh.intervals * self.nx
        self.h = spec.mesh.steps
        self.t = spec.mesh.node_times
        self.meas_var = (self.nparam + spec.mesh.measurement_index * self.nx
                         + spec.observed)
        self._build_pattern()
        n = self.nparam + self.nx
        self.problem = ConstrainedProblem(
            n_independent=n, n_dependent=self.nz - n,
            merit=self.merit, merit_gradient=self.merit_gradient,
            merit_hessian=self.merit_hessian, constraints=self.constraints,
            constraint_jacobian=self.constraint_jacobian,
            constraint_hessian_contraction=self.constraint_hessian_contraction,
            positive_index=[] if not self.estimate_sigma else [self.sigma_index],
            labels=self.labels)

    @property
    def labels(self):
        names = list(self.spec.model.param_labels)
        if self.estimate_sigma:
            names.append('sigma')
        for k in range(self.nodes):
            names.extend(f'{s}_{k}' for s in self.spec.model.state_labels)
        return names

    def state_index(self, node, component):
        return self.nparam + np.asarray(node) * self.nx + component

    def pack(self, theta, states, sigma=None):
        z = np.empty(self.nz)
        z[:self.ntheta] = theta
        if self.estimate_sigma:
            z[self.sigma_index] = sigma
        z[self.nparam:] = np.asarray(states, dtype=float).ravel()
        return z

    def unpack(self, z):
        """Return ``(theta, sigma, states)``."""
        theta = z[:self.ntheta]
        sigma = z[self.sigma_index] if self.estimate_sigma else self.spec.sigma
        return theta, sigma, z[self.nparam:].reshape(self.nodes, self.nx)

    def _build_pattern(self):
        nx, K = self.nx, self.spec.mesh.intervals
        eye_r, eye_c = np.meshgrid(np.arange(nx), np.arange(nx), indexing='ij')
        k = np.arange(K)[:, None, None]
        self._jr = (k * nx + eye_r).ravel()
        self._jc0 = (self.nparam + k * nx + eye_c).ravel()
        self._jc1 = self._jc0 + nx
        th = np.arange(self.ntheta)
        self._jtr = np.repeat((k[:, :, 0] * nx + np.arange(nx)).ravel(), self.ntheta)
        self._jtc = np.tile(th, K * nx)
        j = np.arange(self.nodes)[:, None, None]
        self._hxr = (self.nparam + j * nx + eye_r).ravel()
        self._hxc = (self.nparam + j * nx + eye_c).ravel()
        xr = self.nparam + j[:, :, 0] * nx + np.arange(nx)
        self._htr = np.repeat(xr.ravel(), self.ntheta)
        self._htc = np.tile(th, self.nodes * nx)
        self._hthr, self._hthc = (a.ravel() for a in np.meshgrid(th, th, indexing='ij'))

    def constraints(self, z):
        theta, _, x = self.unpack(z)
        f = self.spec.model.f(self.t, x, theta)
        return trapezoidal_defect(x[:-1], x[1:], f[:-1], f[1:], self.h[:, None]).ravel()

    def constraint_jacobian(self, z):
        theta, _, x = self.unpack(z)
        model, nx = self.spec.model, self.nx
        fx = model.df_dx(self.t, x, theta)
        hh = 0.5 * self.h[:, None, None]
        eye = np.eye(nx)
        d0 = -eye - hh * fx[:-1]
        d1 = eye - hh * fx[1:]
        rows = [self._jr, self._jr]
        cols = [self._jc0, self._jc1]
        vals = [d0.ravel(), d1.ravel()]
        if self.ntheta:
            ft = model.df_dtheta(self.t, x, theta)
            dt = -hh * (ft[:-1] + ft[1:])
            rows.append(self._jtr)
            cols.append(self._jtc)
            vals.append(dt.ravel())
        return _coo(rows, cols, vals, (self.ncons, self.nz))

    def constraint_hessian_contraction(self, z, lam):
        theta, _, x = self.unpack(z)
        lam = np.asarray(lam).reshape(-1, self.nx)
        hl = 0.5 * self.h[:, None] * lam
        w = np.zeros((self.nodes, self.nx))
        w[:-1] -= hl
        w[1:] -= hl
        xx, xt, tt = self.spec.model.d2f(self.t, x, theta, w)
        rows = [self._hxr, self._htr, self._htc, self._hthr]
        cols = [self._hxc, self._htc, self._htr, self._hthc]
        vals = [xx.ravel(), xt.ravel(), xt.ravel(), tt.sum(axis=0).ravel()]
        return _coo(rows, cols, vals, (self.nz, self.nz))

    def _residuals(self, z):
        _, sigma, _ = self.unpack(z)
        return self.spec.data - z[self.meas_var], sigma

    def merit(self, z):
        r, sigma = self._residuals(z)
        val = -0.5 * np.sum(r ** 2) / sigma ** 2
        if self.estimate_sigma:
            val -= r.size * np.log(sigma)
        return float(val)

    def merit_gradient(self, z):
        r, sigma = self._residuals(z)
        g = np.zeros(self.nz)
        g[self.meas_var] = r / sigma ** 2
        if self.estimate_sigma:
            g[self.sigma_index] = np.sum(r ** 2) / sigma ** 3 - r.size / sigma
        return g

    def merit_hessian(self, z):
        r, sigma = self._residuals(z)
        mv = self.meas_var
        rows, cols, vals = [mv], [mv], [np.full(mv.size, -1 / sigma ** 2)]
        if self.estimate_sigma:
            s = np.full(mv.size, self.sigma_index)
            cross = -2 * r / sigma ** 3
            rows += [mv, s, [self.sigma_index]]
            cols += [s, mv, [self.sigma_index]]
            vals += [cross, cross,
                     [r.size / sigma ** 2 - 3 * np.sum(r ** 2) / sigma ** 4]]
        return _coo(rows, cols, vals, (self.nz, self.nz))


def transcribe_oem(spec: OemSpec) -> ConstrainedProblem:
    """Output-error estimation as an equality-constrained maximization."""
    return OemTranscription(spec).problem


@dataclasses.dataclass
class JointMapSpec:
    """Joint MAP estimation of the Duffing state path and parameters.

    ``model`` supplies the known forcing amplitude and diffusion coefficient;
    its remaining fields are only used as the default initial guess.
    """

    model: DuffingModel
    data: np.ndarray
    mesh: CollocationMesh
    unknown_labels: Sequence[str] = ('a', 'b', 'd', 'sigma_y')

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != self.mesh.measurement_index.shape:
            raise SpecError(
                f"{self.data.size} measurements but "
                f"{self.mesh.measurement_index.size} measurement instants")
        if tuple(self.unknown_labels) != ('a', 'b', 'd', 'sigma_y'):
            raise SpecError("unknown parameters must be (a, b, d, sigma_y)")


class JointMapTranscription:
    """Joint MAP transcription with piecewise-constant process noise.

    Decision vector: ``(a, b, d, sigma_y, z_0, x_0..x_K, z_1..z_K,
    eta_0..eta_{K-1})``; the first ``K + 6`` entries are independent.
    Constraint rows alternate the ``z`` and ``x`` defects of each interval.
    """

    NTHETA = 4
    SIGMA = 3

    def __init__(self, spec: JointMapSpec):
        self.spec = spec
        mesh = spec.mesh
        K = self.K = mesh.intervals
        self.h = mesh.steps
        self.t = mesh.node_times
        self.T = mesh.horizon
        self.gamma = spec.model.gamma
        self.sigma_d = spec.model.sigma_d
        self.z_index = np.r_[4, 6 + K + np.arange(K)]
        self.x_index = 5 + np.arange(K + 1)
        self.eta_index = 6 + 2 * K + np.arange(K)
        self.nz = 3 * K + 6
        self.n = K + 6
        self.meas_var = self.z_index[mesh.measurement_index]
        self.problem = ConstrainedProblem(
            n_independent=self.n, n_dependent=2 * K,
            merit=self.merit, merit_gradient=self.merit_gradient,
            merit_hessian=self.merit_hessian, constraints=self.constraints,
            constraint_jacobian=self.constraint_jacobian,
            constraint_hessian_contraction=self.constraint_hessian_contraction,
            positive_index=[self.SIGMA], labels=self.labels)

    @property
    def labels(self):
        K = self.K
        return (['a', 'b', 'd', 'sigma_y', 'z_0']
                + [f'x_{k}' for k in range(K + 1)]
                + [f'z_{k}' for k in range(1, K + 1)]
                + [f'eta_{k}' for k in range(K)])

    def unpack(self, z):
        """Return ``(theta, x, z_path, eta)``."""
        return (z[:4], z[self.x_index], z[self.z_index], z[self.eta_index])

    def pack(self, theta, x, zpath, eta):
        out = np.empty(self.nz)
        out[:4] = theta
        out[self.x_index] = x
        out[self.z_index] = zpath
        out[self.eta_index] = eta
        return out

    def _drift(self, theta, x, zp):
        a, b, d = theta[:3]
        return -a * zp ** 3 - b * zp - d * x + self.gamma * np.cos(self.t)

    def constraints(self, z):
        theta, x, zp, eta = self.unpack(z)
        F = self._drift(theta, x, zp)
        g = np.empty(2 * self.K)
        g[0::2] = trapezoidal_defect(zp[:-1], zp[1:], x[:-1], x[1:], self.h)
        g[1::2] = (trapezoidal_defect(x[:-1], x[1:], F[:-1], F[1:], self.h)
                   - self.h * self.sigma_d * eta)
        return g

    def constraint_jacobian(self, z):
        theta, x, zp, eta = self.unpack(z)
        a, b, d = theta[:3]
        K, h = self.K, self.h
        hh = 0.5 * h
        rz = 2 * np.arange(K)
        rx = rz + 1
        zi, xi = self.z_index, self.x_index
        Fz = -3 * a * zp ** 2 - b
        Ftheta = np.stack([-zp ** 3, -zp, -x], axis=1)
        dth = -hh[:, None] * (Ftheta[:-1] + Ftheta[1:])
        rows = [rz, rz, rz, rz,
                rx, rx, rx, rx, rx,
                np.repeat(rx, 3)]
        cols = [zi[1:], zi[:-1], xi[:-1], xi[1:],
                xi[1:], xi[:-1], zi[:-1], zi[1:], self.eta_index,
                np.tile(np.arange(3), K)]
        vals = [np.ones(K), -np.ones(K), -hh, -hh,
                1 + hh * d, -1 + hh * d, -hh * Fz[:-1], -hh * Fz[1:],
                -h * self.sigma_d,
                dth.ravel()]
        return _coo(rows, cols, vals, (2 * K, self.nz))

    def constraint_hessian_contraction(self, z, lam):
        theta, x, zp, eta = self.unpack(z)
        a = theta[0]
        lx = np.asarray(lam)[1::2]
        w = np.zeros(self.K + 1)
        w[:-1] -= 0.5 * self.h * lx
        w[1:] -= 0.5 * self.h * lx
        zi, xi = self.z_index, self.x_index
        n = self.K + 1
        ia, ib, idd = (np.full(n, i) for i in range(3))
        rows = [ia, zi, ib, zi, idd, xi, zi]
        cols = [zi, ia, zi, ib, xi, idd, zi]
        vals = [-3 * zp ** 2 * w, -3 * zp ** 2 * w, -w, -w, -w, -w,
                -6 * a * zp * w]
        return _coo(rows, cols, vals, (self.nz, self.nz))

    def merit(self, z):
        sigma = z[self.SIGMA]
        r = self.spec.data - z[self.meas_var]
        eta = z[self.eta_index]
        return float(-0.5 * np.sum(r ** 2) / sigma ** 2 - r.size * np.log(sigma)
                     - 0.5 * np.sum(self.h * eta ** 2) + 0.5 * self.T * z[2])

    def merit_gradient(self, z):
        sigma = z[self.SIGMA]
        r = self.spec.data - z[self.meas_var]
        g = np.zeros(self.nz)
        np.add.at(g, self.meas_var, r / sigma ** 2)
        g[self.SIGMA] = np.sum(r ** 2) / sigma ** 3 - r.size / sigma
        g[self.eta_index] = -self.h * z[self.eta_index]
        g[2] = 0.5 * self.T
        return g

    def merit_hessian(self, z):
        sigma = z[self.SIGMA]
        r = self.spec.data - z[self.meas_var]
        mv = self.meas_var
        s = np.full(mv.size, self.SIGMA)
        cross = -2 * r / sigma ** 3
        rows = [mv, mv, s, [self.SIGMA], self.eta_index]
        cols = [mv, s, mv, [self.SIGMA], self.eta_index]
        vals = [np.full(mv.size, -1 / sigma ** 2), cross, cross,
                [r.size / sigma ** 2 - 3 * np.sum(r ** 2) / sigma ** 4],
                -self.h]
        return _coo(rows, cols, vals, (self.nz, self.nz))

    def eliminate(self, p):
        """Solve the constraints forward for the dependents given ``p``.

        ``p = (a, b, d, sigma_y, z_0, x_0..x_K)``; returns the full decision
        vector.
        """
        p = np.asarray(p, dtype=float)
        theta, z0, x = p[:4], p[4], p[5:]
        zp = np.empty(self.K + 1)
        zp[0] = z0
        zp[1:] = z0 + np.cumsum(0.5 * self.h * (x[:-1] + x[1:]))
        F = self._drift(theta, x, zp)
        eta = (x[1:] - x[:-1] - 0.5 * self.h * (F[:-1] + F[1:])) / (self.h * self.sigma_d)
        return self.pack(theta, x, zp, eta)

    def reduced_merit(self, p) -> float:
        """Merit with the dependents eliminated; ``-inf`` when undefined."""
        if not p[self.SIGMA] > 0:
            return -np.inf
        with np.errstate(all='ignore'):
            val = self.merit(self.eliminate(p))
        return val if np.isfinite(val) else -np.inf

    def initial_guess(self, theta=None, x=None, zpath=None):
        """Feasible starting point from a state-path guess.

        Default path: ``z`` interpolated from the data, ``x`` its finite
        difference derivative; the dependents follow by elimination.
        """
        mesh = self.spec.mesh
        if zpath is None:
            zpath = np.interp(self.t, mesh.measurement_times, self.spec.data)
        if x is None:
            x = np.gradient(zpath, self.t)
        if theta is None:
            m = self.spec.model
            theta = np.array([m.a, m.b, m.d, m.sigma_y])
        return self.eliminate(np.r_[theta, zpath[0], x])


def transcribe_joint_map(spec: JointMapSpec) -> ConstrainedProblem:
    """Joint MAP state-path/parameter estimation as a constrained problem."""
    return JointMapTranscription(spec).problem
