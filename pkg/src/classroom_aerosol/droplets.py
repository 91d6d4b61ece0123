"""Lagrangian salt-solution droplets: injection, transport, evaporation, surface events.

Droplets are stored as a structure of arrays (:class:`DropletArrays`) so a
whole population advances with vectorised kernels. The per-droplet functions
:func:`inject`, :func:`step_droplet`, :func:`evaporate` and
:func:`resolve_surface_event` wrap those kernels for single droplets.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import rng
from .breathing import Breathing
from .properties import (
    G, air_conductivity, air_density, latent_heat, saturation_pressure, sutherland_viscosity,
    vapor_diffusivity, vapor_fraction, CP_AIR,
)
from .scene import solid_index

SUSPENDED, CAPTURED, ESCAPED, SETTLED = 0, 1, 2, 3
STATUS_NAMES = {SUSPENDED: "suspended", CAPTURED: "captured", ESCAPED: "escaped", SETTLED: "settled"}

UID_SOURCE_SHIFT = 48
UID_BIN_SHIFT = 40


class NumericalFault(FloatingPointError):
    """Non-finite force or state for a droplet."""

    def __init__(self, uids, what="forces"):
        self.uids = [int(u) for u in np.atleast_1d(uids)]
        super().__init__(f"non-finite {what} for droplet(s) {self.uids[:5]}")


# ------------------------------------------------------------------ model


@dataclass(frozen=True)
class DropletModel:
    """Physical constants and switches used by the droplet kernels."""

    water_density: float = 995.65
    salt_density: float = 2165.0
    water_molar_mass: float = 0.018015
    salt_molar_mass: float = 0.05844
    vant_hoff: float = 2.0
    salt_mass_fraction: float = 0.01
    efflorescence_mass_fraction: float | None = None
    water_cp: float = 4181.0
    salt_cp: float = 864.0
    pressure: float = 101325.0
    lift: bool = True
    gravity: bool = True
    evaporation: bool = True
    isothermal: bool = False
    condensation: bool = False
    dispersion: float = 0.0
    fixed_sherwood: float | None = None
    max_displacement: float = 0.02
    max_substeps: int = 256
    seed: int = 0

    @classmethod
    def from_config(cls, cfg, **kw) -> "DropletModel":
        d = cfg.droplet
        return cls(water_density=d.water_density, salt_density=d.salt_density,
                   water_molar_mass=d.water_molar_mass, salt_molar_mass=d.salt_molar_mass,
                   vant_hoff=d.vant_hoff, salt_mass_fraction=d.salt_mass_fraction,
                   efflorescence_mass_fraction=d.efflorescence_mass_fraction,
                   water_cp=d.water_cp, salt_cp=d.salt_cp, pressure=cfg.ambient.pressure,
                   lift=d.lift, condensation=d.condensation, dispersion=d.dispersion_diffusivity,
                   seed=cfg.seed, **kw)

    def mixture_density(self, m_w, m_s):
        m = m_w + m_s
        ws = np.divide(m_s, m, out=np.zeros_like(np.asarray(m, dtype=float)), where=m > 0)
        return 1.0 / (ws / self.salt_density + (1.0 - ws) / self.water_density)

    def diameter(self, m_w, m_s):
        m = np.asarray(m_w + m_s, dtype=float)
        return np.cbrt(6.0 * m / (np.pi * self.mixture_density(m_w, m_s)))

    def initial_masses(self, d0):
        """Water and salt mass of a fresh droplet of diameter ``d0``."""
        ws = self.salt_mass_fraction
        rho = 1.0 / (ws / self.salt_density + (1.0 - ws) / self.water_density)
        m = rho * np.pi / 6.0 * np.asarray(d0, dtype=float) ** 3
        return (1.0 - ws) * m, ws * m

    def water_activity(self, m_w, m_s):
        n_w = m_w / self.water_molar_mass
        n_s = self.vant_hoff * m_s / self.salt_molar_mass
        tot = n_w + n_s
        return np.divide(n_w, tot, out=np.zeros_like(np.asarray(tot, dtype=float)), where=tot > 0)

    def equilibrium_water(self, m_s, activity):
        """Water mass at which the Raoult activity equals ``activity``."""
        a = np.clip(activity, 0.0, 1.0 - 1e-12)
        n_s = self.vant_hoff * m_s / self.salt_molar_mass
        m_eq = a * n_s / (1.0 - a) * self.water_molar_mass
        if self.efflorescence_mass_fraction is not None:
            w = self.efflorescence_mass_fraction
            m_eq = np.maximum(m_eq, m_s * (1.0 - w) / w)
        return m_eq


# ------------------------------------------------------------------ storage

_FIELDS = {
    "uid": np.uint64, "source": np.int64, "bin": np.int64, "pos": np.float64, "vel": np.float64,
    "d": np.float64, "d0": np.float64, "T": np.float64, "m_w": np.float64, "m_s": np.float64,
    "status": np.int8, "surface": np.int64, "birth": np.float64, "at_eq": bool, "end_time": np.float64,
}


@dataclass
class DropletArrays:
    uid: np.ndarray
    source: np.ndarray
    bin: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    d: np.ndarray
    d0: np.ndarray
    T: np.ndarray
    m_w: np.ndarray
    m_s: np.ndarray
    status: np.ndarray
    surface: np.ndarray
    birth: np.ndarray
    at_eq: np.ndarray
    end_time: np.ndarray

    @classmethod
    def empty(cls) -> "DropletArrays":
        kw = {k: np.zeros((0, 3) if k in ("pos", "vel") else 0, dtype=t) for k, t in _FIELDS.items()}
        return cls(**kw)

    def __len__(self) -> int:
        return len(self.uid)

    def extend(self, other: "DropletArrays") -> None:
        for k in _FIELDS:
            setattr(self, k, np.concatenate([getattr(self, k), getattr(other, k)]))

    def subset(self, idx) -> "DropletArrays":
        return DropletArrays(**{k: getattr(self, k)[idx].copy() for k in _FIELDS})

    def copy(self) -> "DropletArrays":
        return self.subset(slice(None))

    def status_counts(self) -> dict:
        counts = np.bincount(self.status.astype(np.int64), minlength=4)
        return {STATUS_NAMES[i]: int(counts[i]) for i in range(4)}

    def to_jsonl(self, fh, t: float) -> None:
        for i in range(len(self)):
            fh.write(json.dumps({
                "t": t, "id": int(self.uid[i]), "source": int(self.source[i]),
                "position": [float(x) for x in self.pos[i]], "diameter": float(self.d[i]),
                "initial_diameter": float(self.d0[i]), "status": STATUS_NAMES[int(self.status[i])],
                "surface": int(self.surface[i]), "water_mass": float(self.m_w[i]),
                "salt_mass": float(self.m_s[i]), "temperature": float(self.T[i]),
            }) + "\n")


@dataclass
class Droplet:
    """One droplet; mirrors a row of :class:`DropletArrays`."""

    id: int
    source_occupant: int
    position: tuple
    velocity: tuple
    diameter: float
    initial_diameter: float
    temperature: float
    water_mass: float
    salt_mass: float
    status: str = "suspended"
    surface: int = -1
    birth_time: float = 0.0
    bin: int = 0

    def to_arrays(self) -> DropletArrays:
        code = {v: k for k, v in STATUS_NAMES.items()}[self.status]
        return DropletArrays(
            uid=np.array([self.id], dtype=np.uint64), source=np.array([self.source_occupant]),
            bin=np.array([self.bin]), pos=np.array([self.position], dtype=float),
            vel=np.array([self.velocity], dtype=float), d=np.array([self.diameter]),
            d0=np.array([self.initial_diameter]), T=np.array([self.temperature]),
            m_w=np.array([self.water_mass]), m_s=np.array([self.salt_mass]),
            status=np.array([code], dtype=np.int8), surface=np.array([self.surface]),
            birth=np.array([self.birth_time]), at_eq=np.array([False]),
            end_time=np.array([self.birth_time]))

    @classmethod
    def from_arrays(cls, a: DropletArrays, i: int = 0) -> "Droplet":
        return cls(int(a.uid[i]), int(a.source[i]), tuple(a.pos[i]), tuple(a.vel[i]), float(a.d[i]),
                   float(a.d0[i]), float(a.T[i]), float(a.m_w[i]), float(a.m_s[i]),
                   STATUS_NAMES[int(a.status[i])], int(a.surface[i]), float(a.birth[i]), int(a.bin[i]))

    @classmethod
    def fresh(cls, diameter: float, model: DropletModel, position=(0.0, 0.0, 0.0), velocity=(0.0, 0.0, 0.0),
              temperature: float = 303.15, salt: bool = True, uid: int = 0, source: int = 0) -> "Droplet":
        m_w, m_s = model.initial_masses(diameter)
        if not salt:
            m_w, m_s = float(model.water_density * np.pi / 6.0 * diameter ** 3), 0.0
        return cls(uid, source, tuple(position), tuple(velocity), float(diameter), float(diameter),
                   float(temperature), float(m_w), float(m_s))


# ------------------------------------------------------------------ injection


@dataclass(frozen=True)
class SizeBin:
    lo: float
    hi: float
    rate: float


@dataclass(frozen=True)
class InjectionSpec:
    """Emission bins for one source; ``keep`` thins each bin to a fraction."""

    bins: tuple[SizeBin, ...]
    keep: tuple[Fraction, ...] = ()
    activity: str = "breathing"

    def kept_fraction(self, b: int) -> Fraction:
        return self.keep[b] if self.keep else Fraction(1)


def _fraction(x: float) -> Fraction:
    return Fraction(x).limit_denominator(10**6)


def injection_spec(cfg, occupant, teacher: bool = False) -> InjectionSpec:
    """Breathing bins (with cloth-mask thinning if enabled) plus teacher speaking bins."""
    bins = [SizeBin(b.diameter[0], b.diameter[1], b.rate) for b in cfg.injection.breathing]
    keep = [Fraction(1)] * len(bins)
    if cfg.intervention == "cloth_mask":
        rates = cfg.interventions.cloth_mask_rates
        if len(rates) != len(bins):
            raise ValueError("cloth_mask_rates must match the breathing bins")
        keep = [min(Fraction(1), _fraction(m) / _fraction(b.rate)) if b.rate > 0 else Fraction(0)
                for m, b in zip(rates, bins)]
    activity = "breathing"
    if teacher and cfg.injection.teacher_speaks and cfg.injection.speaking:
        activity = "speaking"
        for sb in cfg.injection.speaking:
            bins.append(SizeBin(sb.diameter[0], sb.diameter[1], sb.rate))
            keep.append(keep[-1] if cfg.intervention == "cloth_mask" else Fraction(1))
    return InjectionSpec(tuple(bins), tuple(keep), activity)


def emitted_count(rate: float, breathing: Breathing, t: float) -> int:
    """Unfiltered droplets a bin has emitted between time 0 and ``t``."""
    if t <= 0.0 or rate <= 0.0:
        return 0
    w = breathing.cumulative_weight(t) - breathing.cumulative_weight(0.0)
    return int(math.floor(rate * w + 1e-9))


def kept_indices(k0: int, k1: int, keep: Fraction) -> np.ndarray:
    """Indices in [k0, k1) that survive deterministic thinning to ``keep``."""
    k = np.arange(k0, k1, dtype=np.int64)
    if keep >= 1:
        return k
    num, den = keep.numerator, keep.denominator
    return k[((k + 1) * num) // den > (k * num) // den]


def inject(t: float, dt: float, source, spec: InjectionSpec, breathing: Breathing,
           model: DropletModel, source_index: int | None = None) -> DropletArrays:
    """Droplets born in [t, t + dt) from ``source`` (an Occupant).

    Counts follow the cumulative exhale weight so that every full breathing
    cycle emits exactly rate x period droplets per bin; diameters are uniform
    within each bin and drawn from the counter-based generator.
    """
    out = DropletArrays.empty()
    if dt <= 0.0:
        return out
    sid = source.id if source_index is None else source_index
    normal = np.asarray(source.normal_vector)
    origin = np.asarray(source.mouth_center) + 1e-3 * normal
    w0 = breathing.cumulative_weight(0.0)
    parts = []
    for b, sb in enumerate(spec.bins):
        k0 = emitted_count(sb.rate, breathing, t)
        k1 = emitted_count(sb.rate, breathing, t + dt)
        ks = kept_indices(k0, k1, spec.kept_fraction(b))
        if len(ks) == 0:
            continue
        uid = (np.uint64(source.id) << np.uint64(UID_SOURCE_SHIFT)) | (np.uint64(b) << np.uint64(UID_BIN_SHIFT)) \
            | ks.astype(np.uint64)
        birth = np.array([breathing.time_of_weight(w0 + (k + 1) / sb.rate - 1e-12) for k in ks])
        birth = np.clip(birth, t, t + dt)
        u = rng.uniform(model.seed, rng.TAG_DIAMETER, uid)
        d0 = sb.lo + (sb.hi - sb.lo) * u if sb.hi > sb.lo else np.full(len(ks), sb.lo)
        m_w, m_s = model.initial_masses(d0)
        speed = np.array([max(breathing.mouth_speed(tb, source.mouth.area), 0.0) for tb in birth])
        n = len(ks)
        parts.append(DropletArrays(
            uid=uid, source=np.full(n, sid, dtype=np.int64), bin=np.full(n, b, dtype=np.int64),
            pos=np.tile(origin, (n, 1)), vel=speed[:, None] * normal[None, :], d=d0.copy(), d0=d0,
            T=np.full(n, source.body_temperature), m_w=m_w, m_s=m_s,
            status=np.zeros(n, dtype=np.int8), surface=np.full(n, -1, dtype=np.int64),
            birth=birth, at_eq=np.zeros(n, dtype=bool), end_time=birth.copy()))
    for p in parts:
        out.extend(p)
    return out


# ------------------------------------------------------------------ kernels


def evaporation_rate(model: DropletModel, d, m_w, m_s, T_d, T_g, rh, rel_speed):
    """Mass loss rate [kg/s] (positive for evaporation) and the transfer numbers."""
    p = model.pressure
    rho_g = air_density(T_g, p)
    mu = sutherland_viscosity(T_g)
    Dv = vapor_diffusivity(T_g, p)
    a_w = np.where(m_s > 0, model.water_activity(m_w, m_s), 1.0)
    Ys = vapor_fraction(a_w * saturation_pressure(T_d), p)
    Yinf = vapor_fraction(rh * saturation_pressure(T_g), p)
    B = (Ys - Yinf) / (1.0 - Ys)
    Re = rho_g * rel_speed * d / mu
    Sc = mu / (rho_g * Dv)
    if model.fixed_sherwood is not None:
        Sh = np.full(np.shape(d), float(model.fixed_sherwood))
    else:
        Sh = 2.0 + 0.6 * np.sqrt(Re) * np.cbrt(Sc)
    mdot = np.pi * d * rho_g * Dv * Sh * np.log1p(B)
    return mdot, Re, rho_g, mu


def _droplet_temperature(model, d, mw, ms, Td, Tg, rh, rel_speed, h):
    """Backward-Euler droplet temperature with the evaporation rate taken implicitly.

    Solves T - Td - h (c (Tg - T) - mdot(T) L / (m cp)) = 0 by Newton iteration,
    which stays stable even when h is far longer than the thermal time.
    """
    m_tot = mw + ms
    cp = (mw * model.water_cp + ms * model.salt_cp) / np.maximum(m_tot, 1e-300)
    mcp = np.maximum(m_tot * cp, 1e-300)
    k = air_conductivity(Tg)
    mu = sutherland_viscosity(Tg)
    rho_g = air_density(Tg, model.pressure)
    Re = rho_g * rel_speed * d / mu
    Nu = 2.0 + 0.6 * np.sqrt(Re) * np.cbrt(mu * CP_AIR / k)
    coef = np.pi * d * k * Nu / mcp

    def resid(T):
        md, *_ = evaporation_rate(model, d, mw, ms, T, Tg, rh, rel_speed)
        if not model.condensation:
            md = np.maximum(md, 0.0)
        return T - Td - h * (coef * (Tg - T) - md * latent_heat(T) / mcp)

    T = np.array(Td, dtype=float)
    for _ in range(6):
        r = resid(T)
        dr = (resid(T + 1e-4) - r) / 1e-4
        step = r / np.where(np.abs(dr) > 1e-12, dr, 1.0)
        T = T - np.clip(step, -20.0, 20.0)
        if np.all(np.abs(step) < 1e-6):
            break
    return T


def evaporate_arrays(model: DropletModel, m_w, m_s, T_d, T_g, rh, rel_speed, h, at_eq=None):
    """Advance water mass and droplet temperature over ``h`` (per droplet).

    Each internal substep first updates the droplet temperature implicitly,
    then the mass. Pure water uses the exact d-squared update for a frozen
    transfer constant. Salt droplets relax exponentially toward the Raoult
    equilibrium mass and snap onto it once the remaining excess over the
    ambient equilibrium is negligible. Returns (m_w, T_d, at_eq, clamped).
    """
    m_w = np.array(m_w, dtype=float)
    m_s = np.asarray(m_s, dtype=float)
    T_d = np.array(T_d, dtype=float)
    T_g = np.broadcast_to(np.asarray(T_g, dtype=float), m_w.shape)
    rh = np.broadcast_to(np.asarray(rh, dtype=float), m_w.shape)
    rel_speed = np.broadcast_to(np.asarray(rel_speed, dtype=float), m_w.shape)
    remaining = np.broadcast_to(np.asarray(h, dtype=float), m_w.shape).copy()
    at_eq = np.zeros(m_w.shape, dtype=bool) if at_eq is None else np.array(at_eq, dtype=bool)
    clamped = np.zeros(m_w.shape, dtype=bool)
    if not model.evaporation:
        return m_w, T_d, at_eq, clamped
    tol = 1e-12 * max(float(np.max(remaining, initial=0.0)), 1.0)
    active = np.nonzero(remaining > 0.0)[0]
    # droplets already sitting on their ambient equilibrium stay there
    if len(active):
        i = active
        salty = m_s[i] > 0
        m_amb = model.equilibrium_water(m_s[i], rh[i])
        settled = salty & at_eq[i] & (m_w[i] <= m_amb * (1.0 + 1e-3))
        if settled.any():
            j = i[settled]
            m_w[j] = np.minimum(m_w[j], m_amb[settled]) if not model.condensation else m_amb[settled]
            if not model.isothermal:
                T_d[j] = T_g[j]
            remaining[j] = 0.0
        at_eq[i[~settled]] = False
        active = i[~settled]
    for _ in range(100_000):
        if len(active) == 0:
            break
        i = active
        mw, ms, Tg = m_w[i], m_s[i], T_g[i]
        d = model.diameter(mw, ms)
        h_sub = remaining[i].copy()
        if not model.isothermal:
            T_d[i] = _droplet_temperature(model, d, mw, ms, T_d[i], Tg, rh[i], rel_speed[i], h_sub)
        Td = T_d[i]
        mdot, *_ = evaporation_rate(model, d, mw, ms, Td, Tg, rh[i], rel_speed[i])
        if not model.condensation:
            mdot = np.maximum(mdot, 0.0)
        a = rh[i] * saturation_pressure(Tg) / saturation_pressure(Td)
        m_eq = np.where(ms > 0, model.equilibrium_water(ms, a), 0.0)
        if not model.condensation:
            m_eq = np.minimum(m_eq, mw)
        excess = mw - m_eq
        pure = ms <= 0.0
        new_mw = mw.copy()
        if pure.any():
            K = np.where(d > 0, 4.0 * mdot / (model.water_density * np.pi * np.maximum(d, 1e-30)), 0.0)
            d2 = d * d
            lim = np.where(K > 0, 0.2 * d2 / np.maximum(K, 1e-300), np.inf)
            hp = np.minimum(h_sub, lim)
            d2n = np.maximum(d2 - K * hp, 0.0)
            new_mw = np.where(pure, model.water_density * np.pi / 6.0 * d2n ** 1.5, new_mw)
            h_sub = np.where(pure, hp, h_sub)
        salt = ~pure
        done = np.zeros(len(i), dtype=bool)
        if salt.any():
            lam = np.where(excess > 0, mdot / np.maximum(excess, 1e-300), 0.0)
            # near equilibrium the relaxation is linear and one exact step suffices
            far = excess > 0.1 * np.maximum(m_eq, 1e-300)
            lim = np.where((lam > 0) & far, 1.0 / np.maximum(lam, 1e-300), np.inf)
            hs = np.minimum(h_sub, lim)
            relaxed = m_eq + excess * np.exp(-lam * hs)
            if model.condensation:
                relaxed = np.where(mdot < 0, mw - mdot * hs, relaxed)
            m_amb = model.equilibrium_water(ms, rh[i])
            done = salt & (np.abs(relaxed - m_amb) <= 1e-3 * np.maximum(m_amb, 1e-300))
            relaxed = np.where(done, m_amb if model.condensation else np.minimum(m_amb, relaxed), relaxed)
            new_mw = np.where(salt, relaxed, new_mw)
            h_sub = np.where(salt, hs, h_sub)
            at_eq[i] = done
        bad = new_mw < 0.0
        if bad.any():
            clamped[i[bad]] = True
            new_mw = np.where(bad, m_eq, new_mw)
        m_w[i] = new_mw
        remaining[i] -= h_sub
        if done.any():
            if not model.isothermal:
                T_d[i[done]] = Tg[done]
            remaining[i[done]] = 0.0
        remaining[i[pure & (new_mw <= 0.0)]] = 0.0
        active = i[remaining[i] > tol]
    return m_w, T_d, at_eq, clamped


def particle_acceleration(model: DropletModel, d, rho_p, m, rel, omega, T_g):
    """Drag relaxation time and the non-drag acceleration (gravity, buoyancy, lift)."""
    p = model.pressure
    rho_g = air_density(T_g, p)
    mu = sutherland_viscosity(T_g)
    speed = np.linalg.norm(rel, axis=1)
    Re = rho_g * speed * d / mu
    f = 1.0 + 0.15 * Re ** 0.687
    tau = rho_p * d * d / (18.0 * mu * f)
    acc = np.zeros_like(rel)
    if model.gravity:
        acc[:, 2] -= G * (1.0 - rho_g / rho_p)
    if model.lift:
        wmag = np.linalg.norm(omega, axis=1)
        ok = wmag > 0.0
        if ok.any():
            Re_s = rho_g * d * d * wmag / mu
            beta = 0.5 * Re_s / np.maximum(Re, 1e-300)
            e = np.exp(-Re / 10.0)
            f_low = e + 0.3314 * np.sqrt(beta) * (-np.expm1(-Re / 10.0))
            f_low = np.where(Re > 0, f_low, 1.0)
            f_high = 0.0524 * np.sqrt(beta * Re)
            f_mei = np.where(Re <= 40.0, f_low, f_high)
            coef = np.where(ok, 1.615 * d * d * np.sqrt(rho_g * mu / np.maximum(wmag, 1e-300)) * f_mei, 0.0)
            acc += (coef / m)[:, None] * np.cross(rel, omega)
    return tau, acc


def move_arrays(model: DropletModel, pos, vel, d, rho_p, m, u, omega, T_g, h, noise=None):
    """Exact update of velocity and position for forces frozen over ``h``.

    dv/dt = (u - v)/tau + a has the closed-form solution
    v(h) = v_inf + (v - v_inf) e^{-h/tau} with v_inf = u + tau a, which stays
    stable for sub-micron droplets whose tau is far below any sensible step.
    """
    rel = u - vel
    tau, acc = particle_acceleration(model, d, rho_p, m, rel, omega, T_g)
    v_inf = u + tau[:, None] * acc
    h = np.asarray(h, dtype=float)
    x = h / tau
    decay = np.exp(-x)
    frac = -np.expm1(-x)
    new_vel = v_inf + (vel - v_inf) * decay[:, None]
    new_pos = pos + v_inf * np.atleast_1d(h)[:, None] * np.ones((len(pos), 1)) \
        + (vel - v_inf) * (tau * frac)[:, None]
    if noise is not None and model.dispersion > 0.0:
        new_pos = new_pos + np.sqrt(2.0 * model.dispersion * h)[..., None] * noise
    return new_pos, new_vel, tau


# ------------------------------------------------------------------ surfaces


@dataclass
class SurfaceLedger:
    """Cumulative capture totals per capture surface."""

    volume: np.ndarray
    virions: np.ndarray
    count: np.ndarray

    @classmethod
    def for_scene(cls, scene) -> "SurfaceLedger":
        n = len(scene.surfaces)
        return cls(np.zeros(n), np.zeros(n), np.zeros(n, dtype=np.int64))

    def add(self, surface_ids, d0, viral_load: float) -> None:
        vol = np.pi / 6.0 * np.asarray(d0, dtype=float) ** 3
        np.add.at(self.volume, surface_ids, vol)
        np.add.at(self.virions, surface_ids, vol * viral_load)
        np.add.at(self.count, surface_ids, 1)

    def copy(self) -> "SurfaceLedger":
        return SurfaceLedger(self.volume.copy(), self.virions.copy(), self.count.copy())


class SurfaceGeometry:
    """Vectorised segment tests against walls, openings, panels and solids."""

    EVENT_NONE, EVENT_CAPTURE, EVENT_ESCAPE, EVENT_SETTLE = 0, CAPTURED, ESCAPED, SETTLED

    def __init__(self, scene):
        self.scene = scene
        self.ext = np.asarray(scene.room.extents, dtype=float)
        self.wall_id = {s.name: s.id for s in scene.surfaces if s.kind in ("wall", "floor", "ceiling")}
        self.openings = {}
        for op in scene.room.openings:
            self.openings.setdefault(op.wall, []).append(op.rect)
        self.rects = {0: [], 1: [], 2: []}
        from .scene import Rect
        for s in scene.surfaces:
            if isinstance(s.geometry, Rect) and s.kind not in ("wall", "floor", "ceiling"):
                self.rects[s.geometry.axis].append(s)
        self.rect_arrays = {}
        for axis, lst in self.rects.items():
            lst.sort(key=lambda s: s.geometry.at)
            self.rect_arrays[axis] = (
                np.array([s.geometry.at for s in lst]), np.array([s.geometry.lo for s in lst]).reshape(-1, 2),
                np.array([s.geometry.hi for s in lst]).reshape(-1, 2), np.array([s.id for s in lst], dtype=np.int64))
        self.solids = solid_index(scene)
        box_surface = {}
        for s in scene.surfaces:
            if not isinstance(s.geometry, Rect):
                box_surface[(tuple(s.geometry.lo), tuple(s.geometry.hi))] = s.id
        self.box_to_surface = np.array([box_surface.get((tuple(lo), tuple(hi)), -1)
                                        for lo, hi in zip(self.solids.lo, self.solids.hi)], dtype=np.int64)

    def events(self, p0, p1):
        """First event along each segment: (event code, surface id, fraction, hit point)."""
        n = len(p0)
        s_best = np.full(n, np.inf)
        code = np.zeros(n, dtype=np.int8)
        sid = np.full(n, -1, dtype=np.int64)
        if n == 0:
            return code, sid, s_best, p1.copy()
        dvec = p1 - p0
        # room boundary
        for axis in range(3):
            for side, bound in (("-", 0.0), ("+", self.ext[axis])):
                crossed = (p1[:, axis] < bound) if side == "-" else (p1[:, axis] > bound)
                if not crossed.any():
                    continue
                idx = np.nonzero(crossed)[0]
                den = dvec[idx, axis]
                s = np.where(den != 0, (bound - p0[idx, axis]) / np.where(den != 0, den, 1.0), 0.0)
                s = np.clip(s, 0.0, 1.0)
                better = s < s_best[idx]
                idx, s = idx[better], s[better]
                if not len(idx):
                    continue
                wall = "xyz"[axis] + side
                hit = p0[idx] + s[:, None] * dvec[idx]
                escaped = np.zeros(len(idx), dtype=bool)
                for r in self.openings.get(wall, []):
                    a, b = r.tangent_axes
                    escaped |= (hit[:, a] >= r.lo[0]) & (hit[:, a] <= r.hi[0]) \
                        & (hit[:, b] >= r.lo[1]) & (hit[:, b] <= r.hi[1])
                s_best[idx] = s
                if wall == "z-":
                    c = np.full(len(idx), SETTLED, dtype=np.int8)
                else:
                    c = np.full(len(idx), CAPTURED, dtype=np.int8)
                c[escaped] = ESCAPED
                code[idx] = c
                sid[idx] = np.where(escaped, -1, self.wall_id[wall])
        # thin panels
        for axis, (at, lo, hi, ids) in self.rect_arrays.items():
            if len(at) == 0:
                continue
            a0, a1 = p0[:, axis], p1[:, axis]
            lo_s = np.searchsorted(at, np.minimum(a0, a1), "left")
            hi_s = np.searchsorted(at, np.maximum(a0, a1), "right")
            cnt = hi_s - lo_s
            cand = np.nonzero(cnt > 0)[0]
            if not len(cand):
                continue
            rep = np.repeat(cand, cnt[cand])
            offs = np.arange(len(rep)) - np.repeat(np.cumsum(cnt[cand]) - cnt[cand], cnt[cand])
            k = lo_s[rep] + offs
            den = dvec[rep, axis]
            ok = den != 0
            rep, k, den = rep[ok], k[ok], den[ok]
            s = (at[k] - p0[rep, axis]) / den
            ta, tb = [x for x in range(3) if x != axis]
            ha = p0[rep, ta] + s * dvec[rep, ta]
            hb = p0[rep, tb] + s * dvec[rep, tb]
            inside = (s >= 0) & (s <= 1) & (ha >= lo[k, 0]) & (ha <= hi[k, 0]) & (hb >= lo[k, 1]) & (hb <= hi[k, 1])
            rep, k, s = rep[inside], k[inside], s[inside]
            if not len(rep):
                continue
            order = np.lexsort((s, rep))
            rep, k, s = rep[order], k[order], s[order]
            first = np.ones(len(rep), dtype=bool)
            first[1:] = rep[1:] != rep[:-1]
            rep, k, s = rep[first], k[first], s[first]
            better = s < s_best[rep]
            rep, k, s = rep[better], k[better], s[better]
            s_best[rep] = s
            code[rep] = CAPTURED
            sid[rep] = ids[k]
        # solid boxes: end point inside a body, desk or bench
        box = self.solids.locate(np.clip(p1, 0.0, self.ext))
        hitb = np.nonzero(box >= 0)[0]
        if len(hitb):
            lo, hi = self.solids.lo[box[hitb]], self.solids.hi[box[hitb]]
            q0, dv = p0[hitb], dvec[hitb]
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo - q0) / dv
                t2 = (hi - q0) / dv
            tmin = np.where(dv != 0, np.minimum(t1, t2), -np.inf)
            s = np.clip(np.max(tmin, axis=1), 0.0, 1.0)
            better = s < s_best[hitb]
            idx = hitb[better]
            s_best[idx] = s[better]
            surf = self.box_to_surface[box[idx]]
            code[idx] = CAPTURED
            sid[idx] = surf
        hit = p1.copy()
        ev = code != 0
        hit[ev] = p0[ev] + np.clip(s_best[ev], 0.0, 1.0)[:, None] * dvec[ev]
        return code, sid, s_best, hit


# ------------------------------------------------------------------ transport


@dataclass
class StepStats:
    substeps: int = 0
    max_substeps: int = 0
    clamped: int = 0


def _flow_at(flow, pts, t):
    from .sampling import sample_with_vorticity
    return sample_with_vorticity(flow, pts, t)


def advance(arr: DropletArrays, flow, t_end: float, model: DropletModel, geometry: SurfaceGeometry | None,
            step_index: int, surfaces: SurfaceLedger | None = None, viral_load: float = 0.0,
            on_substep=None, stats: StepStats | None = None) -> None:
    """Advance every suspended droplet from its own ``end_time`` to ``t_end``.

    ``on_substep(idx, p_mid, t_a, t_b)`` is called for droplets still suspended
    at the end of each substep, e.g. for dose accumulation.
    """
    stats = stats if stats is not None else StepStats()
    live = np.nonzero((arr.status == SUSPENDED) & (arr.end_time < t_end))[0]
    if not len(live):
        return
    H = t_end - arr.end_time[live]
    s0, _ = _flow_at(flow, arr.pos[live], float(np.min(arr.end_time[live])))
    bad = ~np.all(np.isfinite(s0.velocity), axis=1)
    if bad.any():
        raise NumericalFault(arr.uid[live][bad], "flow sample")
    speed = np.maximum(np.linalg.norm(arr.vel[live], axis=1), np.linalg.norm(s0.velocity, axis=1))
    if model.dispersion > 0:
        speed = speed + np.sqrt(2.0 * model.dispersion / np.maximum(H, 1e-12))
    nsub = np.clip(np.ceil(H * speed / model.max_displacement), 1, model.max_substeps).astype(np.int64)
    hsub = H / nsub
    stats.max_substeps = max(stats.max_substeps, int(nsub.max()))
    for j in range(int(nsub.max())):
        sel = (nsub > j) & (arr.status[live] == SUSPENDED)
        idx = live[sel]
        if not len(idx):
            break
        h = hsub[sel]
        t_a = arr.end_time[idx]
        stats.substeps += len(idx)
        # flow snapshot at the substep start (one time per call keeps it vectorised)
        samp, omega = _flow_at(flow, arr.pos[idx], float(np.median(t_a)))
        if not np.all(np.isfinite(samp.velocity)):
            raise NumericalFault(arr.uid[idx][~np.all(np.isfinite(samp.velocity), axis=1)], "flow sample")
        rel_speed = np.linalg.norm(samp.velocity - arr.vel[idx], axis=1)
        m_w, T_d, at_eq, clamped = evaporate_arrays(
            model, arr.m_w[idx], arr.m_s[idx], arr.T[idx], samp.temperature, samp.rh, rel_speed, h,
            arr.at_eq[idx])
        stats.clamped += int(clamped.sum())
        arr.m_w[idx], arr.T[idx], arr.at_eq[idx] = m_w, T_d, at_eq
        d = model.diameter(m_w, arr.m_s[idx])
        d = np.maximum(d, 1e-9)
        arr.d[idx] = d
        m = m_w + arr.m_s[idx]
        rho_p = model.mixture_density(m_w, arr.m_s[idx])
        noise = None
        if model.dispersion > 0:
            noise = np.stack([rng.normal(model.seed, rng.TAG_DISPERSION, arr.uid[idx], step_index, j, c)
                              for c in range(3)], axis=1)
        p0 = arr.pos[idx]
        p1, v1, _ = move_arrays(model, p0, arr.vel[idx], d, rho_p, np.maximum(m, 1e-300), samp.velocity,
                                omega, samp.temperature, h, noise)
        bad = ~(np.all(np.isfinite(p1), axis=1) & np.all(np.isfinite(v1), axis=1))
        if bad.any():
            raise NumericalFault(arr.uid[idx][bad])
        t_b = t_a + h
        if geometry is not None:
            code, sid, s, hit = geometry.events(p0, p1)
            ev = code != 0
            if ev.any():
                e_idx = idx[ev]
                arr.status[e_idx] = code[ev]
                arr.surface[e_idx] = sid[ev]
                p1[ev] = hit[ev]
                v1[ev] = 0.0
                if surfaces is not None:
                    has = sid[ev] >= 0
                    surfaces.add(sid[ev][has], arr.d0[e_idx][has], viral_load)
        else:
            ev = np.zeros(len(idx), dtype=bool)
        arr.pos[idx] = p1
        arr.vel[idx] = v1
        arr.end_time[idx] = np.where(nsub[sel] == j + 1, t_end, t_b)
        if on_substep is not None:
            keep = ~ev
            if keep.any():
                on_substep(idx[keep], 0.5 * (p0[keep] + p1[keep]), t_a[keep], arr.end_time[idx][keep])


# ------------------------------------------------------------------ single-droplet API


def step_droplet(d: Droplet, flow, dt: float, model: DropletModel, t: float = 0.0,
                 step_index: int = 0, geometry: SurfaceGeometry | None = None) -> Droplet:
    """Advance one suspended droplet by ``dt`` (evaporation, forces, events)."""
    if d.status != "suspended":
        raise ValueError("only suspended droplets can be stepped")
    a = d.to_arrays()
    a.end_time[:] = t
    advance(a, flow, t + dt, model, geometry, step_index)
    return Droplet.from_arrays(a)


def evaporate(d: Droplet, local, dt: float, model: DropletModel, rel_speed: float = 0.0) -> Droplet:
    """Mass and temperature change of one droplet under fixed (T, RH)."""
    if d.status != "suspended":
        raise ValueError("only suspended droplets evaporate")
    T_g, rh = local
    m_w, T_d, _, clamped = evaporate_arrays(model, np.array([d.water_mass]), np.array([d.salt_mass]),
                                            np.array([d.temperature]), T_g, rh, rel_speed, dt)
    new = replace(d, water_mass=float(m_w[0]), temperature=float(T_d[0]))
    return replace(new, diameter=float(model.diameter(m_w, np.array([d.salt_mass]))[0]))


def resolve_surface_event(d: Droplet, p_end, geometry: SurfaceGeometry, surfaces: SurfaceLedger | None = None,
                          viral_load: float = 0.0) -> Droplet:
    """Classify the segment from ``d.position`` to ``p_end`` and apply any event."""
    if d.status != "suspended":
        raise ValueError("only suspended droplets can hit surfaces")
    p0 = np.asarray([d.position], dtype=float)
    p1 = np.asarray([p_end], dtype=float)
    code, sid, _, hit = geometry.events(p0, p1)
    if code[0] == 0:
        return replace(d, position=tuple(p1[0]))
    if surfaces is not None and sid[0] >= 0:
        surfaces.add(sid[:1], [d.initial_diameter], viral_load)
    return replace(d, position=tuple(hit[0]), velocity=(0.0, 0.0, 0.0),
                   status=STATUS_NAMES[int(code[0])], surface=int(sid[0]))
