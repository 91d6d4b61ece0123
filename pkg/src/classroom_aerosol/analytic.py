"""Closed-form quiescent-room flow: body plumes, opening drafts and mouth jets.

Each occupant drives one axisymmetric convection cell described by the Stokes
stream function

    psi(r, z) = A r^2 exp(-r^2/R^2) s(zeta),   s = sin^2(pi zeta / H)

with zeta the height above the lowest point of the body and H the cell
height. Velocities u_r = -(1/r) dpsi/dz and u_z = (1/r) dpsi/dr give a
divergence-free rising core of radius R with return flow around it; the
centreline peak speed 2A scales as c sqrt(g dT/T h). Openings add an outward
draft that decays with distance, and every mouth adds a round jet while
exhaling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .breathing import Breathing
from .properties import G, fraction_from_rh, relative_humidity, vapor_fraction, saturation_pressure
from .scene import solid_index
from .sampling import FlowSample, LatticeFlow, curl_on_lattice

# jets are truncated beyond this distance from the mouth (m) and beyond three
# local half-widths from their axis, where the Gaussian profile is below 1e-4
JET_REACH = 2.0


@dataclass(frozen=True)
class PlumeCell:
    x: float
    y: float
    z0: float
    height: float
    radius: float
    amplitude: float      # A, centreline peak speed is 2A
    excess: float         # peak temperature excess, K


@dataclass(frozen=True)
class Draft:
    lo: np.ndarray
    hi: np.ndarray
    normal: np.ndarray    # outward
    speed: float
    decay: float


@dataclass(frozen=True)
class Jet:
    origin: np.ndarray
    normal: np.ndarray
    area: float
    temperature: float
    vapor: float


def _shape(zeta, H):
    ph = np.pi * np.clip(zeta, 0.0, H) / H
    return np.sin(ph) ** 2, (np.pi / H) * np.sin(2.0 * ph), 2.0 * (np.pi / H) ** 2 * np.cos(2.0 * ph)


class AnalyticFlow:
    """Closed-form sampler; see the module docstring for the model."""

    def __init__(self, scene, ambient, params, breathing: Breathing):
        self.scene = scene
        self.ambient = ambient
        self.params = params
        self.breathing = breathing
        self.pressure = ambient.pressure
        self.Y_amb = float(fraction_from_rh(ambient.temperature, ambient.relative_humidity, ambient.pressure))
        self.p_vapor = ambient.relative_humidity * saturation_pressure(ambient.temperature)
        ceiling = scene.room.extents[2]
        T_amb = ambient.temperature

        cells = []
        for occ in scene.occupants:
            dT = max(occ.body_temperature - T_amb, 0.0)
            lo = np.min([b.lo for b in occ.body_blocks], axis=0)
            hi = np.max([b.hi for b in occ.body_blocks], axis=0)
            head = occ.body_blocks[-1]
            xc, yc = 0.5 * (head.lo[0] + head.hi[0]), 0.5 * (head.lo[1] + head.hi[1])
            H = min(hi[2] - lo[2] + params.plume_height, ceiling - lo[2])
            U = params.plume_coefficient * np.sqrt(G * dT / T_amb * params.plume_height)
            cells.append(PlumeCell(xc, yc, lo[2], H, params.cell_radius, 0.5 * U,
                                   params.temperature_excess_fraction * dT))
        self.cells = tuple(cells)

        dts = [max(o.body_temperature - T_amb, 0.0) for o in scene.occupants]
        dT_mean = float(np.mean(dts)) if dts else 0.0
        drafts = []
        for op in scene.room.openings:
            r = op.rect
            lo, hi = np.zeros(3), np.zeros(3)
            lo[r.axis] = hi[r.axis] = r.at
            a, b = r.tangent_axes
            lo[a], hi[a], lo[b], hi[b] = r.lo[0], r.hi[0], r.lo[1], r.hi[1]
            n = np.zeros(3)
            n[r.axis] = -1.0 if r.at == 0.0 else 1.0
            speed = params.draft_coefficient * np.sqrt(G * dT_mean / T_amb * (r.hi[1] - r.lo[1]))
            drafts.append(Draft(lo, hi, n, float(speed), params.draft_decay_length))
        self.drafts = tuple(drafts)

        jets = []
        if params.jet:
            for occ in scene.occupants:
                if occ.mouth is None:
                    continue
                Tb = occ.body_temperature
                jets.append(Jet(np.asarray(occ.mouth_center), np.asarray(occ.normal_vector),
                                occ.mouth.area, Tb,
                                float(vapor_fraction(saturation_pressure(Tb), ambient.pressure))))
        self.jets = tuple(jets)
        self._solids = solid_index(scene)

    # ---- components
    def _in_solid(self, p):
        return self._solids.is_solid(p)

    def plume(self, p):
        """Velocity, vorticity and temperature excess of all convection cells."""
        vel = np.zeros_like(p)
        omega = np.zeros_like(p)
        dT = np.zeros(len(p))
        for c in self.cells:
            if c.amplitude == 0.0 and c.excess == 0.0:
                continue
            X, Y = p[:, 0] - c.x, p[:, 1] - c.y
            r2 = X * X + Y * Y
            near = r2 < (4.0 * c.radius) ** 2
            zeta = p[:, 2] - c.z0
            near &= (zeta > 0.0) & (zeta < c.height)
            if not near.any():
                continue
            X, Y, r2, zeta = X[near], Y[near], r2[near], zeta[near]
            rho = r2 / c.radius ** 2
            e = np.exp(-rho)
            s, ds, dds = _shape(zeta, c.height)
            A = c.amplitude
            ur_over_r = -A * e * ds
            uz = 2.0 * A * (1.0 - rho) * e * s
            vel[near, 0] += ur_over_r * X
            vel[near, 1] += ur_over_r * Y
            vel[near, 2] += uz
            # azimuthal vorticity divided by r
            wt_over_r = -A * e * dds - 4.0 * A * s * e * (rho - 2.0) / c.radius ** 2
            omega[near, 0] += -wt_over_r * Y
            omega[near, 1] += wt_over_r * X
            dT[near] += c.excess * e * s
        return vel, omega, dT

    def draft(self, p):
        vel = np.zeros_like(p)
        for d in self.drafts:
            if d.speed == 0.0:
                continue
            nearest = np.clip(p, d.lo, d.hi)
            dist = np.linalg.norm(p - nearest, axis=1)
            target = nearest + d.normal * d.decay
            vec = target - p
            vec /= np.linalg.norm(vec, axis=1)[:, None]
            vel += (d.speed * np.exp(-dist / d.decay))[:, None] * vec
        return vel

    def jet(self, p, t):
        """Velocity, vorticity, temperature and vapour mixing weights of the mouth jets."""
        vel = np.zeros_like(p)
        omega = np.zeros_like(p)
        mix_T = np.zeros(len(p))
        mix_Y = np.zeros(len(p))
        if not self.jets:
            return vel, omega, mix_T, mix_Y
        q = self.breathing.flow(t)
        if q <= 0.0:
            return vel, omega, mix_T, mix_Y
        for j in self.jets:
            U0 = q / j.area
            d_eq = np.sqrt(4.0 * j.area / np.pi)
            core = 6.0 * d_eq
            rel = p - j.origin
            s = rel @ j.normal
            r2 = np.einsum("ij,ij->i", rel, rel) - s * s
            b = 0.5 * d_eq + 0.11 * np.maximum(s, 0.0)
            reach = np.nonzero((s > -core) & (s < JET_REACH) & (r2 < 9.0 * b * b))[0]
            if not len(reach):
                continue
            s, r2, b = s[reach], r2[reach], b[reach]
            perp = rel[reach] - s[:, None] * j.normal
            sp = np.maximum(s, 0.0)
            back = np.exp(-(np.minimum(s, 0.0) / (0.5 * d_eq)) ** 2)
            shape = core / (core + sp) * np.exp(-r2 / b ** 2) * back
            f = U0 * shape
            vel[reach] += f[:, None] * j.normal
            omega[reach] += (-2.0 * f / b ** 2)[:, None] * np.cross(perp, j.normal)
            mix_T[reach] += shape * (j.temperature - self.ambient.temperature)
            mix_Y[reach] += shape * (j.vapor - self.Y_amb)
        return vel, omega, mix_T, mix_Y

    # ---- sampler interface
    def sample(self, points, t: float = 0.0) -> FlowSample:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        v_p, _, dT = self.plume(p)
        v_j, _, jT, jY = self.jet(p, t)
        vel = v_p + self.draft(p) + v_j
        T = self.ambient.temperature + dT + jT
        Yv = self.Y_amb + jY
        rh = relative_humidity(T, Yv, self.pressure)
        solid = self._in_solid(p)
        vel[solid] = 0.0
        return FlowSample(vel, T, rh, solid)

    def vorticity(self, points, t: float = 0.0, h: float = 1e-4) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        _, om_p, _ = self.plume(p)
        _, om_j, _, _ = self.jet(p, t)
        om_d = np.zeros_like(p)
        if any(d.speed for d in self.drafts):
            grads = []
            for ax in range(3):
                e = np.zeros(3)
                e[ax] = h
                grads.append((self.draft(p + e) - self.draft(p - e)) / (2.0 * h))
            # grads[ax][:, comp] = d u_comp / d x_ax
            om_d[:, 0] = grads[1][:, 2] - grads[2][:, 1]
            om_d[:, 1] = grads[2][:, 0] - grads[0][:, 2]
            om_d[:, 2] = grads[0][:, 1] - grads[1][:, 0]
        return om_p + om_j + om_d

    def tabulate(self, spacing: float = 0.05) -> "TabulatedAnalyticFlow":
        return TabulatedAnalyticFlow(self, spacing)


class TabulatedAnalyticFlow:
    """Steady plume and draft fields cached on a node lattice; jets stay exact.

    Interpolating the cached lattice is far cheaper than evaluating every
    convection cell for tens of thousands of droplets each substep.
    """

    def __init__(self, exact: AnalyticFlow, spacing: float = 0.05):
        self.exact = exact
        ext = np.asarray(exact.scene.room.extents, dtype=float)
        n = np.maximum(np.round(ext / spacing).astype(int), 1) + 1
        h = ext / (n - 1)
        axes = [np.linspace(0.0, ext[i], n[i]) for i in range(3)]
        X, Y, Z = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
        vel = np.zeros_like(pts)
        dT = np.zeros(len(pts))
        for start in range(0, len(pts), 200_000):
            sl = slice(start, start + 200_000)
            v_p, _, d = exact.plume(pts[sl])
            vel[sl] = v_p + exact.draft(pts[sl])
            dT[sl] = d
        vel = vel.reshape(tuple(n) + (3,))
        omega = curl_on_lattice(vel[..., 0], vel[..., 1], vel[..., 2], h)
        T = exact.ambient.temperature + dT.reshape(tuple(n))
        Yv = np.full(tuple(n), exact.Y_amb)
        comps = [(np.ascontiguousarray(vel[..., i]), np.zeros(3)) for i in range(3)]
        self.lattice = LatticeFlow(comps, T, Yv, None, np.zeros(3), h, omega, exact.pressure)
        self.spacing = h

    def sample(self, points, t: float = 0.0) -> FlowSample:
        return self.sample_with_vorticity(points, t)[0]

    def vorticity(self, points, t: float = 0.0) -> np.ndarray:
        return self.sample_with_vorticity(points, t)[1]

    def sample_with_vorticity(self, points, t: float = 0.0):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        s, om = self.lattice.sample_with_vorticity(p, t)
        v_j, om_j, jT, jY = self.exact.jet(p, t)
        s.velocity += v_j
        if self.exact.jets:
            s.temperature = s.temperature + jT
            s.rh = relative_humidity(s.temperature, self.exact.Y_amb + jY, self.exact.pressure)
        s.solid = self.exact._in_solid(p)
        s.velocity[s.solid] = 0.0
        return s, om + om_j


def make_analytic_field(scene, ambient, params, breathing: Breathing) -> AnalyticFlow:
    return AnalyticFlow(scene, ambient, params, breathing)
