"""Coarse laminar Boussinesq finite-volume solver on a staggered (MAC) grid.

Velocity components live on cell faces, pressure, temperature and vapour mass
fraction at cell centres. One step is: SSP-RK2 for momentum (limited upwind
advection, eddy-viscosity diffusion, Boussinesq buoyancy) and for the scalars
(flux-form MUSCL advection with frozen, divergence-free face velocities), then
a pressure projection solved with algebraic multigrid preconditioned CG.

Boundaries: no-slip walls and solids, zero-gauge pressure outlets on openings,
body-temperature Dirichlet on occupant surfaces, and a volume source in the air
cell in front of every mouth that follows the breathing signal.
"""
from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import pyamg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .breathing import Breathing
from .properties import G, fraction_from_rh, saturation_pressure, vapor_fraction
from .sampling import LatticeFlow, curl_on_lattice


class CFLError(RuntimeError):
    pass


class ProjectionError(RuntimeError):
    pass


class ResourceLimitError(RuntimeError):
    pass


@dataclass
class Mouth:
    cell: tuple[int, int, int]
    occupant: int
    temperature: float
    vapor: float


class Grid:
    """Uniform staggered grid over the room with a cell mask from the scene."""

    def __init__(self, scene, shape, max_cells: int | None = None):
        self.shape = tuple(int(n) for n in shape)
        if min(self.shape) < 1:
            raise ValueError("grid needs at least one cell per axis")
        if max_cells is not None and np.prod(self.shape) > max_cells:
            raise ResourceLimitError(f"grid {self.shape} exceeds {max_cells} cells")
        self.scene = scene
        self.extents = np.asarray(scene.room.extents, dtype=float)
        self.h = self.extents / np.asarray(self.shape)
        nx, ny, nz = self.shape
        centers = [(np.arange(n) + 0.5) * h for n, h in zip(self.shape, self.h)]
        X, Y, Z = np.meshgrid(*centers, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
        self.centers = pts.reshape(self.shape + (3,))

        self.solid = np.zeros(self.shape, dtype=bool)
        self.body_T = np.full(self.shape, np.nan)
        for occ in scene.occupants:
            inside = np.zeros(len(pts), dtype=bool)
            for b in occ.body_blocks:
                inside |= np.all((pts >= b.lo) & (pts <= b.hi), axis=1)
            inside = inside.reshape(self.shape)
            self.solid |= inside
            self.body_T[inside] = occ.body_temperature
        for label, owner, b in scene.solid_boxes():
            if owner is None:
                self.solid |= np.all((pts >= b.lo) & (pts <= b.hi), axis=1).reshape(self.shape)
        self.air = ~self.solid

        # outlet masks on the six boundary planes
        self.outlet = {w: np.zeros(self._plane_shape(w), dtype=bool) for w in ("x-", "x+", "y-", "y+", "z-", "z+")}
        for op in scene.room.openings:
            r = op.rect
            wall = ("xyz"[r.axis]) + ("-" if r.at == 0.0 else "+")
            a, b = r.tangent_axes
            ca = (np.arange(self.shape[a]) + 0.5) * self.h[a]
            cb = (np.arange(self.shape[b]) + 0.5) * self.h[b]
            A, B = np.meshgrid(ca, cb, indexing="ij")
            self.outlet[wall] |= (A >= r.lo[0]) & (A <= r.hi[0]) & (B >= r.lo[1]) & (B <= r.hi[1])
        for wall, m in self.outlet.items():
            m &= self._boundary_cells(wall, self.air)

        self.mouths = []
        for occ in scene.occupants:
            if occ.mouth is None:
                continue
            c = np.asarray(occ.mouth_center)
            n = np.asarray(occ.normal_vector)
            step = 0.5 * float(np.abs(n) @ self.h)
            for k in range(1, 6):
                q = c + n * step * (2 * k - 1)
                ijk = tuple(np.clip((q / self.h).astype(int), 0, np.asarray(self.shape) - 1))
                if self.air[ijk]:
                    break
            else:
                continue
            Tb = occ.body_temperature
            self.mouths.append(Mouth(ijk, occ.id, Tb, 0.0))

        self.face_active = self._face_masks()
        self.D, self.Gm = self._operators()

    # ---- geometry helpers
    def _plane_shape(self, wall):
        axis = "xyz".index(wall[0])
        return tuple(n for i, n in enumerate(self.shape) if i != axis)

    def _boundary_cells(self, wall, arr):
        axis = "xyz".index(wall[0])
        idx = 0 if wall[1] == "-" else self.shape[axis] - 1
        return np.take(arr, idx, axis=axis)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def has_outlet(self) -> bool:
        return any(m.any() for m in self.outlet.values())

    def face_shape(self, axis: int):
        s = list(self.shape)
        s[axis] += 1
        return tuple(s)

    def _face_masks(self):
        masks = []
        for axis in range(3):
            m = np.zeros(self.face_shape(axis), dtype=bool)
            sl_lo = [slice(None)] * 3
            sl_hi = [slice(None)] * 3
            sl_lo[axis] = slice(0, -1)
            sl_hi[axis] = slice(1, None)
            inner = [slice(None)] * 3
            inner[axis] = slice(1, -1)
            m[tuple(inner)] = self.air[tuple(sl_lo)] & self.air[tuple(sl_hi)]
            first = [slice(None)] * 3
            first[axis] = 0
            last = [slice(None)] * 3
            last[axis] = -1
            m[tuple(first)] = self.outlet["xyz"[axis] + "-"]
            m[tuple(last)] = self.outlet["xyz"[axis] + "+"]
            masks.append(m)
        return masks

    def _operators(self):
        """Divergence D (cells x faces) and gradient G (faces x cells)."""
        nx, ny, nz = self.shape
        cid = np.arange(nx * ny * nz).reshape(self.shape)
        D_blocks, G_blocks = [], []
        for axis in range(3):
            fshape = self.face_shape(axis)
            nf = int(np.prod(fshape))
            fid = np.arange(nf).reshape(fshape)
            h = self.h[axis]
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            # div: cell c gets +u(hi face)/h - u(lo face)/h
            rows = np.concatenate([cid.ravel(), cid.ravel()])
            cols = np.concatenate([fid[tuple(hi)].ravel(), fid[tuple(lo)].ravel()])
            vals = np.concatenate([np.full(cid.size, 1.0 / h), np.full(cid.size, -1.0 / h)])
            D_blocks.append(sp.csr_matrix((vals, (rows, cols)), shape=(cid.size, nf)))

            act = self.face_active[axis]
            r, c, v = [], [], []
            inner = [slice(None)] * 3
            inner[axis] = slice(1, -1)
            fi = fid[tuple(inner)][act[tuple(inner)]]
            cl = cid[tuple(lo)][act[tuple(inner)]]
            ch = cid[tuple(hi)][act[tuple(inner)]]
            r += [fi, fi]
            c += [ch, cl]
            v += [np.full(fi.size, 1.0 / h), np.full(fi.size, -1.0 / h)]
            for end, sign in ((0, 2.0), (-1, -2.0)):
                sl = [slice(None)] * 3
                sl[axis] = end
                m = act[tuple(sl)]
                r.append(fid[tuple(sl)][m])
                c.append(cid[tuple(sl)][m])
                v.append(np.full(int(m.sum()), sign / h))
            G_blocks.append(sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                                          shape=(nf, cid.size)))
        return sp.hstack(D_blocks).tocsr(), sp.vstack(G_blocks).tocsr()


@dataclass
class FlowState:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    p: np.ndarray
    T: np.ndarray
    Y: np.ndarray
    t: float = 0.0
    steps: int = 0
    last_divergence: float = 0.0
    stats: dict = field(default_factory=dict)

    def copy(self) -> "FlowState":
        return FlowState(self.u.copy(), self.v.copy(), self.w.copy(), self.p.copy(),
                         self.T.copy(), self.Y.copy(), self.t, self.steps, self.last_divergence,
                         dict(self.stats))

    def faces(self):
        return self.u, self.v, self.w

    def face_vector(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.v.ravel(), self.w.ravel()])


# ------------------------------------------------------------------ kernels

def _minmod(a, b):
    return np.where(a * b > 0.0, np.where(np.abs(a) < np.abs(b), a, b), 0.0)


def _shift(a, k, axis):
    """a[i + k] along axis with edge replication."""
    n = a.shape[axis]
    idx = np.clip(np.arange(n) + k, 0, n - 1)
    return np.take(a, idx, axis=axis)


def _upwind_derivative(q, vel, h, axis):
    """Limited second-order upwind approximation of vel * dq/dx along ``axis``."""
    qm2, qm1, qp1, qp2 = (_shift(q, k, axis) for k in (-2, -1, 1, 2))
    d_mm, d_m, d_p, d_pp = qm1 - qm2, q - qm1, qp1 - q, qp2 - qp1
    # velocity > 0: reconstruct from the left
    f_plus_L = q + 0.5 * _minmod(d_m, d_p)
    f_minus_L = qm1 + 0.5 * _minmod(d_mm, d_m)
    # velocity < 0: reconstruct from the right
    f_plus_R = qp1 - 0.5 * _minmod(d_p, d_pp)
    f_minus_R = q - 0.5 * _minmod(d_m, d_p)
    dq = np.where(vel > 0.0, f_plus_L - f_minus_L, f_plus_R - f_minus_R) / h
    return vel * dq


def _avg_to(arr, axis_from, target_shape):
    """Average a face field onto another staggered lattice (4-point average)."""
    out = arr
    for ax in range(3):
        n_src, n_dst = out.shape[ax], target_shape[ax]
        if n_src == n_dst:
            continue
        if n_src == n_dst + 1:
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[ax] = slice(0, -1)
            hi[ax] = slice(1, None)
            out = 0.5 * (out[tuple(lo)] + out[tuple(hi)])
        elif n_src + 1 == n_dst:
            pad = [(0, 0)] * 3
            pad[ax] = (1, 1)
            e = np.pad(out, pad, mode="edge")
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[ax] = slice(0, -1)
            hi[ax] = slice(1, None)
            out = 0.5 * (e[tuple(lo)] + e[tuple(hi)])
        else:
            raise ValueError("incompatible lattices")
    return out


def _laplacian_faces(q, h, axis_normal, nu, noslip=True):
    """nu * Laplacian of a face-normal component with wall ghosts."""
    out = np.zeros_like(q)
    for ax in range(3):
        pad = [(0, 0)] * 3
        pad[ax] = (1, 1)
        e = np.pad(q, pad, mode="edge")
        if ax != axis_normal and noslip:
            # tangential walls: ghost = -interior so the wall value is zero
            first = [slice(None)] * 3
            first[ax] = 0
            second = [slice(None)] * 3
            second[ax] = 1
            e[tuple(first)] = -e[tuple(second)]
            last = [slice(None)] * 3
            last[ax] = -1
            prev = [slice(None)] * 3
            prev[ax] = -2
            e[tuple(last)] = -e[tuple(prev)]
        c = [slice(1, -1) if a == ax else slice(None) for a in range(3)]
        lo = [slice(0, -2) if a == ax else slice(None) for a in range(3)]
        hi = [slice(2, None) if a == ax else slice(None) for a in range(3)]
        out += (e[tuple(hi)] - 2.0 * e[tuple(c)] + e[tuple(lo)]) / h[ax] ** 2
    return nu * out


class BoussinesqSolver:
    """Owns the grid, operators and multigrid hierarchy for one scene."""

    def __init__(self, scene, ambient, numerics, breathing: Breathing | None = None, grid_shape=None):
        self.scene = scene
        self.ambient = ambient
        self.numerics = numerics
        self.breathing = breathing
        self.grid = Grid(scene, grid_shape or numerics.grid, numerics.max_cells)
        self.T_ref = ambient.temperature
        self.Y_amb = float(fraction_from_rh(ambient.temperature, ambient.relative_humidity, ambient.pressure))
        for m in self.grid.mouths:
            m.vapor = float(vapor_fraction(saturation_pressure(m.temperature), ambient.pressure))
        self._build_poisson()

    # ---- setup
    def initial_state(self) -> FlowState:
        g = self.grid
        T = np.full(g.shape, self.T_ref)
        T[g.solid & ~np.isnan(g.body_T)] = g.body_T[g.solid & ~np.isnan(g.body_T)]
        return FlowState(np.zeros(g.face_shape(0)), np.zeros(g.face_shape(1)), np.zeros(g.face_shape(2)),
                         np.zeros(g.shape), T, np.full(g.shape, self.Y_amb))

    def _build_poisson(self):
        g = self.grid
        A = (g.D @ g.Gm).tocsr()
        air = np.nonzero(g.air.ravel())[0]
        self.air_idx = air
        M = (-A[air][:, air]).tocsr()
        M.eliminate_zeros()
        self.M = M
        # air regions without an outlet need a compatible right-hand side
        ncomp, labels = connected_components(M, directed=False)
        diag = M.diagonal()
        offsum = np.asarray(abs(M).sum(axis=1)).ravel() - np.abs(diag)
        grounded = diag - offsum > 1e-12 * np.maximum(diag, 1.0)
        has_outlet = np.zeros(ncomp, dtype=bool)
        np.logical_or.at(has_outlet, labels, grounded)
        self.components = labels
        self.floating = ~has_outlet
        # pin one cell of every closed region; the remaining system is SPD and
        # the dropped equation holds because the right-hand side is compatible
        pinned = np.zeros(len(air), dtype=bool)
        for comp in np.nonzero(self.floating)[0]:
            pinned[np.argmax(labels == comp)] = True
        self.free = np.nonzero(~pinned)[0]
        Mf = M[self.free][:, self.free].tocsr()
        self.M_free = Mf
        if Mf.shape[0]:
            self.ml = pyamg.smoothed_aggregation_solver(Mf, symmetry="symmetric", max_coarse=50)
        else:
            self.ml = None

    # ---- sources
    def mouth_flow(self, t: float) -> float:
        return 0.0 if self.breathing is None else self.breathing.flow(t)

    def divergence_source(self, t: float) -> np.ndarray:
        s = np.zeros(self.grid.shape)
        q = self.mouth_flow(t)
        for m in self.grid.mouths:
            s[m.cell] += q / self.grid.cell_volume
        return s

    # ---- tendencies
    def _momentum_tendency(self, u, v, w, T):
        g = self.grid
        h = g.h
        nu = self.numerics.eddy_viscosity
        comps = (u, v, w)
        out = []
        for axis, q in enumerate(comps):
            tend = np.zeros_like(q)
            for ax in range(3):
                vel = q if ax == axis else _avg_to(comps[ax], ax, q.shape)
                tend -= _upwind_derivative(q, vel, h[ax], ax)
            tend += _laplacian_faces(q, h, axis, nu)
            if axis == 2:
                Tf = _avg_to(np.where(g.air, T, self.T_ref), -1, q.shape)
                tend += G * (Tf - self.T_ref) / self.T_ref
            tend[~g.face_active[axis]] = 0.0
            out.append(tend)
        return out

    def _scalar_tendency(self, q, u, v, w, ambient_value, body=None, mouth_value=None, t=0.0):
        g = self.grid
        h = g.h
        kappa = self.numerics.eddy_diffusivity
        qa = np.where(g.air, q, 0.0)
        tend = np.zeros_like(q)
        for axis, vel in enumerate((u, v, w)):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            air_l, air_r = g.air[tuple(lo)], g.air[tuple(hi)]
            both = air_l & air_r
            qL, qR = qa[tuple(lo)], qa[tuple(hi)]
            d = np.where(both, qR - qL, 0.0)
            # limited slopes per cell from neighbouring face differences
            pad = [(0, 0)] * 3
            pad[axis] = (1, 1)
            dpad = np.pad(d, pad)
            dl = [slice(None)] * 3
            dr = [slice(None)] * 3
            dl[axis] = slice(0, -1)
            dr[axis] = slice(1, None)
            slope = _minmod(dpad[tuple(dl)], dpad[tuple(dr)])
            face_L = qa[tuple(lo)] + 0.5 * slope[tuple(lo)]
            face_R = qa[tuple(hi)] - 0.5 * slope[tuple(hi)]
            inner = [slice(None)] * 3
            inner[axis] = slice(1, -1)
            vin = vel[tuple(inner)]
            flux = np.zeros(vel.shape)
            flux[tuple(inner)] = np.where(vin > 0.0, vin * face_L, vin * face_R)
            # diffusion between air cells, Dirichlet body temperature at occupants
            dflux = np.zeros(vel.shape)
            dflux[tuple(inner)] = kappa * d / h[axis]
            if body is not None:
                bl, br = body[tuple(lo)], body[tuple(hi)]
                occ_left = ~np.isnan(bl) & air_r
                occ_right = ~np.isnan(br) & air_l
                dd = np.zeros(d.shape)
                dd[occ_left] = (qa[tuple(hi)][occ_left] - bl[occ_left])
                dd[occ_right] = (br[occ_right] - qa[tuple(lo)][occ_right])
                dflux[tuple(inner)] += 2.0 * kappa * dd / h[axis]
            for end, side in ((0, "-"), (-1, "+")):
                sl = [slice(None)] * 3
                sl[axis] = end
                m = g.outlet["xyz"[axis] + side]
                vb = vel[tuple(sl)]
                qb = np.take(qa, 0 if end == 0 else -1, axis=axis)
                outward = vb < 0.0 if end == 0 else vb > 0.0
                fb = np.where(outward, vb * qb, vb * ambient_value)
                plane = flux[tuple(sl)]
                plane[m] = fb[m]
            hsl_lo = [slice(None)] * 3
            hsl_hi = [slice(None)] * 3
            hsl_lo[axis] = slice(0, -1)
            hsl_hi[axis] = slice(1, None)
            tend -= (flux[tuple(hsl_hi)] - flux[tuple(hsl_lo)]) / h[axis]
            tend += (dflux[tuple(hsl_hi)] - dflux[tuple(hsl_lo)]) / h[axis]
        if mouth_value is not None:
            qflow = self.mouth_flow(t)
            V = g.cell_volume
            for mth in g.mouths:
                # exhale adds fluid at the source value; inhale removes local fluid
                carried = mouth_value(mth) if qflow > 0.0 else q[mth.cell]
                tend[mth.cell] += qflow * carried / V
        tend[~g.air] = 0.0
        return tend

    # ---- projection
    def project(self, state: FlowState, t: float, dt: float) -> None:
        g = self.grid
        ustar = state.face_vector()
        s = self.divergence_source(t).ravel()
        rhs_full = (g.D @ ustar - s) / dt
        b = -rhs_full[self.air_idx]
        if self.floating.any():
            for comp in np.nonzero(self.floating)[0]:
                m = self.components == comp
                b[m] -= b[m].mean()
        x0 = state.p.ravel()[self.air_idx][self.free]
        bf = b[self.free]
        tol = self.numerics.poisson_rtol
        div_tol = self.numerics.div_tol
        p_air = np.zeros_like(b)
        if self.ml is not None and np.any(bf != 0.0):
            for attempt in range(3):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", UserWarning)
                    x = self.ml.solve(bf, x0=x0, tol=tol, accel="cg", maxiter=self.numerics.poisson_maxiter)
                p_air[self.free] = x
                p = np.zeros(g.shape[0] * g.shape[1] * g.shape[2])
                p[self.air_idx] = p_air
                unew = ustar - dt * (g.Gm @ p)
                div = (g.D @ unew - s)[self.air_idx]
                if np.max(np.abs(div)) <= div_tol:
                    break
                x0 = x
                tol *= 1e-2
            else:
                raise ProjectionError(f"projection did not reach divergence {div_tol:g} "
                                      f"(max {np.max(np.abs(div)):.3g})")
        p = np.zeros(g.shape[0] * g.shape[1] * g.shape[2])
        p[self.air_idx] = p_air
        unew = ustar - dt * (g.Gm @ p)
        nu_, nv_ = state.u.size, state.v.size
        state.u = unew[:nu_].reshape(state.u.shape)
        state.v = unew[nu_:nu_ + nv_].reshape(state.v.shape)
        state.w = unew[nu_ + nv_:].reshape(state.w.shape)
        for axis, arr in enumerate((state.u, state.v, state.w)):
            arr[~g.face_active[axis]] = 0.0
        state.p = p.reshape(g.shape)
        div = (g.D @ state.face_vector() - s)[self.air_idx]
        state.last_divergence = float(np.max(np.abs(div))) if div.size else 0.0

    def divergence(self, state: FlowState, t: float | None = None) -> np.ndarray:
        """Discrete divergence minus mouth sources, per air cell."""
        s = self.divergence_source(state.t if t is None else t).ravel()
        return (self.grid.D @ state.face_vector() - s)[self.air_idx]

    def cfl(self, state: FlowState, dt: float) -> float:
        h = self.grid.h
        return max(float(np.max(np.abs(a))) * dt / h[i] if a.size else 0.0
                   for i, a in enumerate(state.faces()))

    # ---- step
    def step(self, state: FlowState, dt: float) -> FlowState:
        if dt <= 0:
            raise ValueError("dt must be positive")
        c = self.cfl(state, dt)
        if c > self.numerics.cfl_max:
            raise CFLError(f"CFL {c:.3f} exceeds {self.numerics.cfl_max}")
        g = self.grid
        t = state.t
        new = state.copy()
        u0, v0, w0 = state.u, state.v, state.w
        body = g.body_T

        def scalars(T, Y, tt):
            kT = self._scalar_tendency(T, u0, v0, w0, self.T_ref, body=body,
                                       mouth_value=lambda m: m.temperature, t=tt)
            kY = self._scalar_tendency(Y, u0, v0, w0, self.Y_amb, mouth_value=lambda m: m.vapor, t=tt)
            return kT, kY

        k1 = self._momentum_tendency(u0, v0, w0, state.T)
        kT1, kY1 = scalars(state.T, state.Y, t)
        u1 = [a + dt * k for a, k in zip((u0, v0, w0), k1)]
        T1 = state.T + dt * kT1
        Y1 = state.Y + dt * kY1
        k2 = self._momentum_tendency(*u1, T1)
        kT2, kY2 = scalars(T1, Y1, t + dt)
        new.u, new.v, new.w = (0.5 * (a + b + dt * k) for a, b, k in zip((u0, v0, w0), u1, k2))
        new.T = 0.5 * (state.T + T1 + dt * kT2)
        new.Y = np.clip(0.5 * (state.Y + Y1 + dt * kY2), 0.0, 1.0)
        solid_body = g.solid & ~np.isnan(body)
        new.T[solid_body] = body[solid_body]
        self.project(new, t + dt, dt)
        new.t = t + dt
        new.steps = state.steps + 1
        return new

    # ---- sampling and export
    def sampler(self, state: FlowState) -> LatticeFlow:
        g = self.grid
        h = g.h
        comps = [(state.u, np.array([0.0, h[1] / 2, h[2] / 2])),
                 (state.v, np.array([h[0] / 2, 0.0, h[2] / 2])),
                 (state.w, np.array([h[0] / 2, h[1] / 2, 0.0]))]
        uc, vc, wc = cell_velocity(state)
        omega = curl_on_lattice(uc, vc, wc, h)
        return LatticeFlow(comps, state.T, state.Y, g.solid, h / 2, h, omega,
                           self.ambient.pressure, g.extents)


def cell_velocity(state: FlowState):
    return (0.5 * (state.u[1:] + state.u[:-1]),
            0.5 * (state.v[:, 1:] + state.v[:, :-1]),
            0.5 * (state.w[:, :, 1:] + state.w[:, :, :-1]))


def solver_step(state: FlowState, solver: BoussinesqSolver, dt: float) -> FlowState:
    return solver.step(state, dt)


# ------------------------------------------------------------------ export

FIELD_MAGIC = b"CAFIELD1"
FIELD_NAMES = ("u", "v", "w", "p", "T", "Y")


def export_fields(path, state: FlowState, grid: Grid, extra: dict | None = None) -> None:
    """Columnar binary snapshot plus a JSON sidecar.

    Layout: 8-byte magic, three little-endian int32 cell counts, three float64
    spacings, int32 field count, then each cell-centred field as float64 in
    C order (x slowest).
    """
    uc, vc, wc = cell_velocity(state)
    fields = dict(zip(FIELD_NAMES, (uc, vc, wc, state.p, state.T, state.Y)))
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<3i", *grid.shape))
        fh.write(struct.pack("<3d", *grid.h))
        fh.write(struct.pack("<i", len(fields)))
        for name in FIELD_NAMES:
            fh.write(np.ascontiguousarray(fields[name], dtype="<f8").tobytes())
    sidecar = {"fields": list(FIELD_NAMES), "shape": list(grid.shape), "spacing": list(map(float, grid.h)),
               "order": "C (x slowest, z fastest)", "dtype": "float64 little-endian",
               "location": "cell centres", "time": state.t, **(extra or {})}
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2)


def read_fields(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(8) != FIELD_MAGIC:
            raise ValueError("not a field snapshot")
        shape = struct.unpack("<3i", fh.read(12))
        spacing = struct.unpack("<3d", fh.read(24))
        (n,) = struct.unpack("<i", fh.read(4))
        size = int(np.prod(shape))
        out = {"shape": shape, "spacing": spacing}
        for name in FIELD_NAMES[:n]:
            out[name] = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
    return out
