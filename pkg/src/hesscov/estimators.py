"""Estimator front ends: transcribe, solve, then read uncertainties off the
inverse bordered Hessian.

Both estimators follow the scikit-learn conventions (constructor stores
hyperparameters only, ``fit`` returns ``self``, fitted state ends in ``_``)
so they work with ``get_params``/``set_params``/``clone``.
"""

from __future__ import annotations

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator

from . import covariance
from ._validation import (check_fitted, check_positive, check_time_series,
                          check_uniform_spacing)
from .kkt import SolverOptions, assemble_bordered_hessian, solve_equality_constrained
from .mesh import CollocationMesh
from .models import DuffingModel, VdpModel
from .transcribe import (JointMapSpec, JointMapTranscription, OemSpec,
                         OemTranscription)


def lowpass(y, dt, cutoff):
    """Zero-phase second-order Butterworth filter, cutoff in rad per time."""
    wn = cutoff * dt / np.pi
    if wn >= 1:
        return np.array(y, dtype=float)
    b, a = signal.butter(2, wn)
    return signal.filtfilt(b, a, y, padlen=min(3 * max(len(a), len(b)), len(y) - 1))


def initial_guess_oem(data, mesh: CollocationMesh, cutoff=5.0):
    """Van der Pol starting point ``(mu, sigma, x_0, ..., x_K)``.

    ``x1`` is the low-pass filtered data interpolated onto the mesh, ``x2``
    its central-difference derivative, ``mu`` the least-squares fit of the
    ``x2`` equation and ``sigma`` the spread of the filter residual.
    """
    data = np.asarray(data, dtype=float)
    if data.size < 3:
        raise ValueError("need at least 3 measurements")
    tm = mesh.measurement_times
    t = mesh.node_times
    smooth = lowpass(data, check_uniform_spacing(tm), cutoff)
    x1 = np.interp(t, tm, smooth)
    x2 = np.gradient(x1, t)
    x2dot = np.gradient(x2, t)
    regressor = (1 - x1 ** 2) * x2
    rr = regressor @ regressor
    mu = (regressor @ (x2dot + x1)) / rr if rr > 0 else 1.0
    sigma = np.std(data - x1[mesh.measurement_index])
    if not sigma > 0:
        sigma = 1e-3 * max(1.0, np.abs(data).max())
    return np.r_[mu, sigma, np.c_[x1, x2].ravel()]


def initial_guess_joint_map(data, mesh: CollocationMesh, gamma, cutoff=5.0):
    """Duffing starting point from smoothed data and a linear regression.

    ``z`` is the filtered data, ``x`` its derivative; ``(a, b, d)`` solve the
    ``x`` equation in least squares. Returns ``(theta, x, z)`` on the mesh.
    """
    tm = mesh.measurement_times
    t = mesh.node_times
    smooth = lowpass(data, check_uniform_spacing(tm), cutoff)
    zpath = np.interp(t, tm, smooth)
    x = np.gradient(zpath, t)
    xdot = np.gradient(x, t)
    A = np.c_[-zpath ** 3, -zpath, -x]
    coef, *_ = np.linalg.lstsq(A, xdot - gamma * np.cos(t), rcond=None)
    sigma_y = np.std(data - zpath[mesh.measurement_index])
    return np.r_[coef, max(sigma_y, 1e-3)], x, zpath


class _CollocationEstimator(BaseEstimator):

    def _solver_options(self):
        return SolverOptions(tol_kkt=self.tol_kkt, tol_feas=self.tol_feas,
                             max_iter=self.max_iter)

    def _finish_fit(self, transcription, z0):
        self.transcription_ = transcription
        self.problem_ = transcription.problem
        self.solution_ = solve_equality_constrained(
            self.problem_, z0, self._solver_options())
        self.converged_ = self.solution_.converged
        self.hessian_ = assemble_bordered_hessian(
            self.problem_, self.solution_.z_star, self.solution_.lambda_star)
        return self

    @property
    def labels_(self):
        check_fitted(self)
        return list(self.problem_.labels)

    def index_of(self, name):
        return self.labels_.index(name)

    def estimates(self, names):
        check_fitted(self)
        return np.array([self.solution_.z_star[self.index_of(n)] for n in names])

    def standard_deviations(self, names):
        check_fitted(self)
        return covariance.standard_deviations(
            self.hessian_, [self.index_of(n) for n in names])

    def covariance_report(self, names, **kwargs):
        check_fitted(self)
        return covariance.covariance_report(
            self.hessian_, self.solution_.z_star,
            [self.index_of(n) for n in names], self.labels_, **kwargs)

    def reduced_covariance(self):
        check_fitted(self)
        return covariance.reduced_covariance(self.hessian_)


class OutputErrorEstimator(_CollocationEstimator):
    """Collocation output-error maximum likelihood estimator.

    Parameters
    ----------
    model : object, default None
        ODE model (see :mod:`hesscov.models`); ``None`` means Van der Pol.
    mesh_spacing : float
        Collocation step; the sample times must fall on the mesh.
    sigma : float or None
        Known measurement noise scale, or None to estimate it.
    observed : int
        Index of the measured state component.
    cutoff : float
        Low-pass cutoff (rad per time unit) of the Van der Pol initial guess.
    """

    def __init__(self, model=None, mesh_spacing=0.02, sigma=None, observed=0,
                 cutoff=5.0, tol_kkt=1e-8, tol_feas=1e-8, max_iter=200):
        self.model = model
        self.mesh_spacing = mesh_spacing
        self.sigma = sigma
        self.observed = observed
        self.cutoff = cutoff
        self.tol_kkt = tol_kkt
        self.tol_feas = tol_feas
        self.max_iter = max_iter

    def _model(self):
        return VdpModel() if self.model is None else self.model

    def fit(self, t, y, z0=None):
        """Estimate from samples ``y`` at times ``t``.

        ``z0`` overrides the initial guess; it is required for models other
        than Van der Pol.
        """
        t, y = check_time_series(t, y)
        spacing = check_positive('mesh_spacing', self.mesh_spacing)
        check_positive('sigma', self.sigma, allow_none=True)
        mesh = CollocationMesh.uniform(t[0], t[-1], spacing, t)
        model = self._model()
        spec = OemSpec(model, y, mesh, self.observed, self.sigma)
        tr = OemTranscription(spec)
        if z0 is None:
            if not isinstance(model, VdpModel):
                raise ValueError("z0 is required for non-Van der Pol models")
            guess = initial_guess_oem(y, mesh, self.cutoff)
            z0 = guess if self.sigma is None else np.r_[guess[0], guess[2:]]
        self.mesh_ = mesh
        return self._finish_fit(tr, z0)

    @property
    def params_(self):
        check_fitted(self)
        theta, sigma, _ = self.transcription_.unpack(self.solution_.z_star)
        out = dict(zip(self._model().param_labels, theta))
        out['sigma'] = sigma
        return out

    @property
    def states_(self):
        check_fitted(self)
        return self.transcription_.unpack(self.solution_.z_star)[2]

    def predict(self, t=None):
        """Estimated observed-state path at times ``t`` (default: mesh nodes)."""
        check_fitted(self)
        path = self.states_[:, self.observed]
        if t is None:
            return path
        return np.interp(np.asarray(t, dtype=float), self.mesh_.node_times, path)

    def state_std(self, component):
        """Standard deviation of one state component at every mesh node."""
        check_fitted(self)
        idx = self.transcription_.state_index(np.arange(self.mesh_.size), component)
        return covariance.standard_deviations(self.hessian_, idx)


class JointMapEstimator(_CollocationEstimator):
    """Joint MAP state-path and parameter estimator for the Duffing SDE.

    ``gamma`` and ``sigma_d`` are the known forcing amplitude and diffusion
    coefficient; ``subdivision`` splits every sampling interval into that
    many collocation intervals.
    """

    def __init__(self, gamma=0.3, sigma_d=0.1, subdivision=1, cutoff=5.0,
                 tol_kkt=1e-8, tol_feas=1e-8, max_iter=200):
        self.gamma = gamma
        self.sigma_d = sigma_d
        self.subdivision = subdivision
        self.cutoff = cutoff
        self.tol_kkt = tol_kkt
        self.tol_feas = tol_feas
        self.max_iter = max_iter

    def fit(self, t, y, z0=None):
        t, y = check_time_series(t, y)
        ts = check_uniform_spacing(t)
        check_positive('sigma_d', self.sigma_d)
        mesh = CollocationMesh.uniform(t[0], t[-1], ts, t).refine(int(self.subdivision))
        model = DuffingModel(gamma=self.gamma, sigma_d=self.sigma_d, ts=ts,
                             T=max(float(t[-1] - t[0]), ts))
        tr = JointMapTranscription(JointMapSpec(model, y, mesh))
        if z0 is None:
            theta, x, zpath = initial_guess_joint_map(y, mesh, self.gamma, self.cutoff)
            z0 = tr.initial_guess(theta, x, zpath)
        self.mesh_ = mesh
        return self._finish_fit(tr, z0)

    @property
    def params_(self):
        check_fitted(self)
        return dict(zip(('a', 'b', 'd', 'sigma_y'), self.solution_.z_star[:4]))

    def predict(self, t=None):
        """Estimated ``z`` path at times ``t`` (default: mesh nodes)."""
        check_fitted(self)
        path = self.transcription_.unpack(self.solution_.z_star)[2]
        if t is None:
            return path
        return np.interp(np.asarray(t, dtype=float), self.mesh_.node_times, path)
