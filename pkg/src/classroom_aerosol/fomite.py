"""Fomite risk from virions captured on touchable surfaces (hand-to-mucosa transfer)."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .exposure import risk_from_dose

TOUCHABLE = ("furniture_top", "desk_shield")


@dataclass(frozen=True)
class SurfaceLoad:
    surface_id: int
    name: str
    kind: str
    material: str
    area: float
    virions: float
    C_s: float            # copies per m^2
    touchable: bool


def _lambda(params) -> float:
    return params.hand_decay + params.f_h * params.c_h + params.f_m * params.c_m


def mean_hand_load(params, C_s, t_o: float | None = None):
    """Time-averaged hand contamination over an interval ``t_o``.

    Hand load obeys dC/dt = f_h c_h C_s - lambda C from a clean start; this is
    its mean over [0, t_o].
    """
    t_o = params.interval if t_o is None else t_o
    lam = _lambda(params)
    if lam <= 0.0:
        raise ValueError("hand removal rate must be positive")
    if t_o <= 0.0:
        raise ValueError("interval must be positive")
    x = lam * t_o
    # t_o + (exp(-x) - 1)/lam, written to stay accurate when x is small
    bracket = t_o + math.expm1(-x) / lam
    if x < 1e-4:
        bracket = t_o * (x / 2.0 - x * x / 6.0 + x ** 3 / 24.0)
    return params.f_h * params.c_h * np.asarray(C_s, dtype=float) / (lam * t_o) * bracket


def mucous_dose(params, hand_load, t_o: float | None = None):
    """Virions delivered to mucous membranes over ``t_o``."""
    t_o = params.interval if t_o is None else t_o
    if np.any(np.asarray(hand_load) < 0) or t_o < 0:
        raise ValueError("hand load and interval must be non-negative")
    return params.f_m * params.c_m * params.contact_area * np.asarray(hand_load, dtype=float) * t_o


def fomite_risk(E_m, sigma):
    """Same dose-response kernel as inhaled exposure."""
    return risk_from_dose(E_m, sigma)


def surface_loading(scene, ledger, params, elapsed: float = 0.0) -> list[SurfaceLoad]:
    """Virion loading per desk, shield and screen surface.

    ``ledger`` holds captured virions per surface; material decay constants
    optionally thin the load by exp(-k elapsed).
    """
    decay = {"wood": params.wood_decay, "polycarbonate": params.polycarbonate_decay}
    out = []
    for s in scene.surfaces:
        if s.kind not in ("furniture_top", "desk_shield", "ceiling_screen"):
            continue
        area = s.touch_area
        if area <= 0.0:
            raise ValueError(f"surface {s.name} has zero area")
        v = float(ledger.virions[s.id]) * math.exp(-decay.get(s.material, 0.0) * elapsed)
        out.append(SurfaceLoad(s.id, s.name, s.kind, s.material, area, v, v / area, s.kind in TOUCHABLE))
    return out


def fomite_table(loads, params, sigma: float) -> list[dict]:
    rows = []
    for L in loads:
        hand = float(mean_hand_load(params, L.C_s))
        E = float(mucous_dose(params, hand))
        rows.append({"surface": L.name, "kind": L.kind, "material": L.material, "area": L.area,
                     "C_s": L.C_s, "hand_load": hand, "E_m": E, "risk": fomite_risk(E, sigma),
                     "touchable": L.touchable})
    return rows


def fomite_csv(rows, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["surface", "kind", "C_s", "E_m", "risk"])
    for r in rows:
        w.writerow([r["surface"], r["kind"], f"{r['C_s']:.9g}", f"{r['E_m']:.9g}", f"{r['risk']:.9g}"])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
