"""Inhaled dose per (source, receptor) pair and the exponential dose-response model."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .breathing import Breathing


class NotInfectedError(ValueError):
    """Total risk requested for an occupant that is not a source."""


def risk_from_dose(mu, sigma):
    """Infection probability 1 - exp(-sigma mu); ``expm1`` keeps small doses exact."""
    mu_a = np.asarray(mu, dtype=float)
    if np.any(mu_a < 0) or np.any(np.asarray(sigma, dtype=float) < 0):
        raise ValueError("dose and infectivity must be non-negative")
    r = -np.expm1(-np.asarray(sigma, dtype=float) * mu_a)
    return float(r) if np.ndim(r) == 0 else r


@dataclass
class ExposureLedger:
    """Expected inhaled virions ``mu[source, receptor]`` indexed by occupant position."""

    occupant_ids: tuple[int, ...]
    infected: tuple[int, ...]
    sigma: float
    mu: np.ndarray = None
    series: list = field(default_factory=list)   # (t, max receptor risk)

    def __post_init__(self):
        n = len(self.occupant_ids)
        if self.mu is None:
            self.mu = np.zeros((n, n))
        self._index = {oid: i for i, oid in enumerate(self.occupant_ids)}

    def index(self, occupant_id: int) -> int:
        return self._index[occupant_id]

    @property
    def risk(self) -> np.ndarray:
        r = risk_from_dose(self.mu, self.sigma)
        np.fill_diagonal(r, 0.0)
        return r

    def receptor_risk(self) -> np.ndarray:
        """Combined risk per receptor from all sources, taken as independent."""
        r = self.risk
        src = [self.index(i) for i in self.infected]
        return 1.0 - np.prod(1.0 - r[src, :], axis=0) if src else np.zeros(len(self.occupant_ids))

    def max_receptor_risk(self) -> float:
        """Largest combined risk among susceptible receptors."""
        rr = self.receptor_risk()
        sus = [i for i, oid in enumerate(self.occupant_ids) if oid not in self.infected]
        return float(rr[sus].max()) if sus else 0.0

    def record(self, t: float) -> None:
        self.series.append((float(t), self.max_receptor_risk()))

    def copy(self) -> "ExposureLedger":
        return ExposureLedger(self.occupant_ids, self.infected, self.sigma, self.mu.copy(), list(self.series))


@dataclass(frozen=True)
class BoxArrays:
    """Breathing boxes as arrays, aligned with the ledger's occupant order."""

    lo: np.ndarray
    hi: np.ndarray
    volume: np.ndarray

    @classmethod
    def from_scene(cls, scene, occupant_ids) -> "BoxArrays":
        lo, hi, vol = [], [], []
        for oid in occupant_ids:
            bb = scene.breathing_box_of(oid)
            lo.append(bb.box.lo)
            hi.append(bb.box.hi)
            vol.append(bb.volume)
        return cls(np.array(lo, dtype=float), np.array(hi, dtype=float), np.array(vol, dtype=float))


def inhale_overlap(breathing: Breathing, a, b) -> np.ndarray:
    """Vectorised length of inhalation time inside each [a, b]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    T, half = breathing.period, breathing.half

    def cum(t):
        x = t - breathing.phase
        k = np.floor(x / T)
        tau = x - k * T
        return k * half + np.clip(tau - half, 0.0, half)

    return np.maximum(cum(b) - cum(a), 0.0)


def accumulate_dose(ledger: ExposureLedger, boxes: BoxArrays, breathing: Breathing, params,
                    source_index, d0, points, t_a, t_b) -> None:
    """Add the dose of droplets at ``points`` over [t_a, t_b] to ``ledger``.

    A droplet inside receptor r's breathing box contributes
    (P overlap / V) (pi/6) d0^3 N, where overlap is the inhaled time in the
    interval. Sources never dose themselves.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) == 0:
        return
    overlap = inhale_overlap(breathing, t_a, t_b)
    live = overlap > 0.0
    if not live.any():
        return
    pts = points[live]
    src = np.asarray(source_index)[live]
    virions = np.pi / 6.0 * np.asarray(d0, dtype=float)[live] ** 3 * params.viral_load
    weight = overlap[live] * virions * params.pulmonary_rate
    zlo, zhi = boxes.lo[:, 2].min(), boxes.hi[:, 2].max()
    near = np.nonzero((pts[:, 2] >= zlo) & (pts[:, 2] <= zhi))[0]
    if not len(near):
        return
    p = pts[near]
    for r in range(len(boxes.lo)):
        inside = np.all((p >= boxes.lo[r]) & (p <= boxes.hi[r]), axis=1)
        if not inside.any():
            continue
        j = near[inside]
        s = src[j]
        keep = s != r
        if keep.any():
            np.add.at(ledger.mu[:, r], s[keep], weight[j][keep] / boxes.volume[r])


def dose_increment(d0: float, inhaled_time: float, params, box_volume: float | None = None) -> float:
    """Dose from one droplet resident in a breathing box for ``inhaled_time``."""
    V = params.box_volume if box_volume is None else box_volume
    return params.pulmonary_rate * inhaled_time / V * np.pi / 6.0 * d0 ** 3 * params.viral_load


def total_risk(ledger: ExposureLedger, source_id: int) -> float:
    """Sum of risks a source poses to every other occupant, teacher included."""
    if source_id not in ledger.infected:
        raise NotInfectedError(f"occupant {source_id} is not infected")
    i = ledger.index(source_id)
    row = ledger.risk[i]
    return float(row.sum() - row[i])


def r0_estimate(ledger: ExposureLedger, infected=None) -> float:
    """Expected secondary infections among susceptible occupants."""
    infected = tuple(ledger.infected if infected is None else infected)
    if not infected:
        raise ValueError("at least one infected occupant is required")
    r = ledger.risk
    src = [ledger.index(i) for i in infected]
    escape = np.prod(1.0 - r[src, :], axis=0)
    sus = [k for k, oid in enumerate(ledger.occupant_ids) if oid not in infected]
    return float(np.sum(1.0 - escape[sus]))


def risk_heatmap(ledger: ExposureLedger, path=None) -> str:
    """Sources x receptors risk matrix as CSV with an undefined diagonal."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source"] + [str(o) for o in ledger.occupant_ids])
    r = ledger.risk
    for i, oid in enumerate(ledger.occupant_ids):
        w.writerow([str(oid)] + ["undefined" if i == j else f"{r[i, j]:.9g}" for j in range(len(r))])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def read_heatmap(text: str):
    """Parse :func:`risk_heatmap` output into (ids, matrix with NaN diagonal)."""
    rows = list(csv.reader(io.StringIO(text)))
    ids = [int(x) for x in rows[0][1:]]
    m = np.array([[np.nan if c == "undefined" else float(c) for c in row[1:]] for row in rows[1:]])
    return ids, m


def summary(ledger: ExposureLedger) -> dict:
    rr = ledger.receptor_risk()
    return {
        "receptor_risk": {str(o): float(rr[i]) for i, o in enumerate(ledger.occupant_ids)
                          if o not in ledger.infected},
        "total_risk": {str(s): total_risk(ledger, s) for s in ledger.infected},
        "r0": r0_estimate(ledger) if ledger.infected else 0.0,
        "max_risk": ledger.max_receptor_risk(),
        "max_risk_series": [list(p) for p in ledger.series],
    }
