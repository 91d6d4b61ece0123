"""Point sampling of carrier-phase fields.

Every flow provider exposes ``sample(points, t) -> FlowSample`` and
``vorticity(points, t)``; droplets only ever see this interface.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .properties import fraction_from_rh, relative_humidity


@dataclass
class FlowSample:
    velocity: np.ndarray     # (n, 3) m/s
    temperature: np.ndarray  # (n,) K
    rh: np.ndarray           # (n,) fraction
    solid: np.ndarray        # (n,) bool

    def __len__(self) -> int:
        return len(self.temperature)


def _weights(origin, spacing, shape, points):
    shape = np.asarray(shape)
    idx = (points - np.asarray(origin)) / np.asarray(spacing)
    i0 = np.clip(np.floor(idx).astype(np.int64), 0, np.maximum(shape - 2, 0))
    fr = np.clip(idx - i0, 0.0, 1.0)
    fr = np.where(shape > 1, fr, 0.0)
    i1 = np.minimum(i0 + 1, shape - 1)
    return i0, i1, fr


def trilinear(field: np.ndarray, origin, spacing, points: np.ndarray) -> np.ndarray:
    """Interpolate a lattice field at ``points``; clamps outside the lattice.

    ``field`` has shape (Nx, Ny, Nz) or (Nx, Ny, Nz, C); node (i, j, k) sits at
    ``origin + (i, j, k) * spacing``.
    """
    pts = np.atleast_2d(points)
    i0, i1, fr = _weights(origin, spacing, field.shape[:3], pts)
    gx, gy = 1.0 - fr[:, 0], 1.0 - fr[:, 1]
    gz = 1.0 - fr[:, 2]
    out = 0.0
    for ix, wx in ((i0[:, 0], gx), (i1[:, 0], fr[:, 0])):
        for iy, wy in ((i0[:, 1], gy), (i1[:, 1], fr[:, 1])):
            wxy = wx * wy
            for iz, wz in ((i0[:, 2], gz), (i1[:, 2], fr[:, 2])):
                w = wxy * wz
                v = field[ix, iy, iz]
                out = out + (w[:, None] * v if v.ndim == 2 else w * v)
    return out


class UniformFlow:
    """Spatially uniform carrier state, mostly for tests and isolated droplets."""

    def __init__(self, velocity=(0.0, 0.0, 0.0), temperature=303.15, rh=0.3,
                 vorticity=(0.0, 0.0, 0.0), pressure=101325.0):
        self.u = np.asarray(velocity, dtype=float)
        self.T = float(temperature)
        self.rh_value = float(rh)
        self.omega = np.asarray(vorticity, dtype=float)
        self.pressure = pressure

    def sample(self, points, t: float = 0.0) -> FlowSample:
        n = len(np.atleast_2d(points))
        return FlowSample(np.tile(self.u, (n, 1)), np.full(n, self.T),
                          np.full(n, self.rh_value), np.zeros(n, dtype=bool))

    def vorticity(self, points, t: float = 0.0) -> np.ndarray:
        return np.tile(self.omega, (len(np.atleast_2d(points)), 1))


def sample_with_vorticity(provider, points, t: float = 0.0):
    """Sample state and vorticity together, sharing work where the provider allows."""
    fn = getattr(provider, "sample_with_vorticity", None)
    if fn is not None:
        return fn(points, t)
    return provider.sample(points, t), provider.vorticity(points, t)


class LatticeFlow:
    """Fields stored on lattices and interpolated trilinearly.

    Velocity components may live on their own (staggered) lattices.
    """

    def __init__(self, components, temperature, vapor, solid_mask, cell_origin, spacing,
                 vorticity=None, pressure: float = 101325.0, room=None):
        # components: list of three (array, origin) pairs
        self.components = components
        self.temperature = temperature
        self.vapor = vapor
        self.solid_mask = solid_mask
        self.cell_origin = np.asarray(cell_origin, dtype=float)
        self.spacing = np.asarray(spacing, dtype=float)
        self.omega = vorticity
        self.pressure = pressure
        self.room = np.asarray(room, dtype=float) if room is not None else None
        self._stack = None
        self._last_omega = None

    def _solid(self, pts):
        if self.solid_mask is None:
            return np.zeros(len(pts), dtype=bool)
        idx = np.floor((pts - (self.cell_origin - 0.5 * self.spacing)) / self.spacing).astype(np.int64)
        idx = np.clip(idx, 0, np.array(self.solid_mask.shape) - 1)
        return self.solid_mask[idx[:, 0], idx[:, 1], idx[:, 2]]

    def _collocated(self) -> bool:
        return all(np.array_equal(o, self.cell_origin) for _, o in self.components)

    def sample(self, points, t: float = 0.0) -> FlowSample:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self._stack is None and self._collocated():
            cols = [a for a, _ in self.components] + [self.temperature, self.vapor]
            if self.omega is not None:
                cols += [self.omega[..., i] for i in range(3)]
            self._stack = np.ascontiguousarray(np.stack(cols, axis=-1))
        if self._stack is not None:
            allf = trilinear(self._stack, self.cell_origin, self.spacing, pts)
            vel, T, Y = allf[:, :3].copy(), allf[:, 3], allf[:, 4]
            self._last_omega = allf[:, 5:8] if self.omega is not None else None
        else:
            vel = np.stack([trilinear(a, o, self.spacing, pts) for a, o in self.components], axis=1)
            T = trilinear(self.temperature, self.cell_origin, self.spacing, pts)
            Y = trilinear(self.vapor, self.cell_origin, self.spacing, pts)
        rh = relative_humidity(T, Y, self.pressure)
        solid = self._solid(pts)
        vel[solid] = 0.0
        return FlowSample(vel, T, rh, solid)

    def sample_with_vorticity(self, points, t: float = 0.0):
        s = self.sample(points, t)
        if self._stack is not None and self._last_omega is not None:
            return s, self._last_omega
        return s, self.vorticity(points, t)

    def vorticity(self, points, t: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.omega is None:
            return np.zeros((len(pts), 3))
        return trilinear(self.omega, self.cell_origin, self.spacing, pts)


def sample(provider, p, t: float = 0.0):
    """Single-point convenience: (velocity, temperature, relative humidity, solid)."""
    s = provider.sample(np.asarray(p, dtype=float)[None, :], t)
    return tuple(s.velocity[0]), float(s.temperature[0]), float(s.rh[0]), bool(s.solid[0])


def ambient_vapor_fraction(ambient) -> float:
    return float(fraction_from_rh(ambient.temperature, ambient.relative_humidity, ambient.pressure))


def curl_on_lattice(u, v, w, spacing) -> np.ndarray:
    """Vorticity of node-collocated velocity components via central differences."""
    dx, dy, dz = spacing

    def d(a, axis, h):
        if a.shape[axis] < 2:
            return np.zeros_like(a)
        return np.gradient(a, h, axis=axis)

    wx = d(w, 1, dy) - d(v, 2, dz)
    wy = d(u, 2, dz) - d(w, 0, dx)
    wz = d(v, 0, dx) - d(u, 1, dy)
    return np.stack([wx, wy, wz], axis=-1)
