"""Time grids and trajectories shared by the simulators and transcriptions."""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from .exceptions import SpecError


@dataclasses.dataclass(frozen=True)
class CollocationMesh:
    """Collocation nodes plus the node index of every measurement instant."""

    node_times: np.ndarray
    measurement_index: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.node_times, dtype=float)
        idx = np.asarray(self.measurement_index, dtype=int)
        if t.ndim != 1 or t.size < 2:
            raise SpecError("mesh needs at least two nodes")
        if np.any(np.diff(t) <= 0):
            raise SpecError("mesh nodes must be strictly increasing")
        if idx.size and (idx.min() < 0 or idx.max() >= t.size):
            raise SpecError("measurement index outside the mesh")
        if np.any(np.diff(idx) <= 0):
            raise SpecError("measurement instants must be strictly increasing")
        object.__setattr__(self, 'node_times', t)
        object.__setattr__(self, 'measurement_index', idx)

    @classmethod
    def from_times(cls, node_times, measurement_times, rtol=1e-9):
        """Map measurement instants onto nodes; each must coincide with one."""
        t = np.asarray(node_times, dtype=float)
        tm = np.asarray(measurement_times, dtype=float)
        tol = rtol * max(1.0, float(np.abs(t).max()))
        pos = np.clip(np.searchsorted(t, tm), 1, t.size - 1)
        nearest = np.where(np.abs(t[pos - 1] - tm) <= np.abs(t[pos] - tm),
                           pos - 1, pos)
        off = np.abs(t[nearest] - tm) > tol
        if np.any(off):
            bad = tm[off][0]
            raise SpecError(f"measurement instant {bad!r} is not a mesh node")
        return cls(t, nearest)

    @classmethod
    def uniform(cls, t0, tf, spacing, measurement_times=None):
        """Uniform mesh on ``[t0, tf]``; all nodes measured by default."""
        count = int(round((tf - t0) / spacing))
        if count < 1 or not np.isclose(t0 + count * spacing, tf, rtol=1e-9, atol=1e-12):
            raise SpecError(f"horizon [{t0}, {tf}] is not a multiple of {spacing}")
        t = t0 + spacing * np.arange(count + 1)
        t[-1] = tf
        if measurement_times is None:
            return cls(t, np.arange(t.size))
        return cls.from_times(t, measurement_times)

    def refine(self, factor: int) -> 'CollocationMesh':
        """Split every interval into ``factor`` equal subintervals."""
        if factor < 1:
            raise SpecError("refinement factor must be >= 1")
        t = self.node_times
        frac = np.arange(factor) / factor
        fine = (t[:-1, None] + np.diff(t)[:, None] * frac).ravel()
        fine = np.r_[fine, t[-1]]
        return CollocationMesh(fine, self.measurement_index * factor)

    @property
    def size(self) -> int:
        return self.node_times.size

    @property
    def intervals(self) -> int:
        return self.node_times.size - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.node_times)

    @property
    def measurement_times(self) -> np.ndarray:
        return self.node_times[self.measurement_index]

    @property
    def horizon(self) -> float:
        return float(self.node_times[-1] - self.node_times[0])


@dataclasses.dataclass
class MeshTrajectory:
    """States (and optionally noise increments / outputs) on a time grid."""

    times: np.ndarray
    states: np.ndarray
    noise: Optional[np.ndarray] = None
    outputs: Optional[np.ndarray] = None

    def sample(self, times, rtol=1e-9) -> 'MeshTrajectory':
        """Restrict the trajectory to grid instants ``times``."""
        idx = CollocationMesh.from_times(self.times, times, rtol).measurement_index
        return MeshTrajectory(self.times[idx], self.states[idx])
