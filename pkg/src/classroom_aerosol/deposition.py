"""Expected regional deposition counts from droplets resident in breathing boxes."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class EfficiencyTable:
    """Deposition fraction versus diameter for the olfactory and bronchial/alveolar regions."""

    diameter_um: np.ndarray
    p_olf: np.ndarray
    p_ba: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diameter_um, dtype=float)
        if len(d) == 0 or np.any(np.diff(d) <= 0):
            raise ValueError("table diameters must be strictly increasing")
        for col in (self.p_olf, self.p_ba):
            c = np.asarray(col, dtype=float)
            if len(c) != len(d) or np.any(c < 0) or np.any(c > 1):
                raise ValueError("table fractions must lie in [0, 1]")

    @classmethod
    def from_rows(cls, rows) -> "EfficiencyTable":
        a = np.asarray(rows, dtype=float).reshape(-1, 3)
        return cls(a[:, 0], a[:, 1], a[:, 2])

    @classmethod
    def from_csv(cls, path=None) -> "EfficiencyTable":
        if path is None or not Path(path).exists():
            name = "deposition_efficiency.csv" if path is None else Path(path).name
            text = resources.files("classroom_aerosol").joinpath("data", name).read_text()
        else:
            text = Path(path).read_text()
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        rows = list(csv.DictReader(lines))
        return cls.from_rows([(float(r["diameter_um"]), float(r["p_olf"]), float(r["p_ba"])) for r in rows])

    def lookup(self, diameter_m):
        """Interpolated (P_olf, P_BA) at diameters given in metres; clamped at the ends."""
        d = np.asarray(diameter_m, dtype=float)
        if np.any(d <= 0):
            raise ValueError("diameter must be positive")
        um = d * 1e6
        return np.interp(um, self.diameter_um, self.p_olf), np.interp(um, self.diameter_um, self.p_ba)


def deposition_counts(histogram, table: EfficiencyTable) -> tuple[float, float]:
    """Expected (olfactory, bronchial/alveolar) counts for a diameter -> count histogram.

    ``histogram`` maps diameter in metres to a count, or is a pair of arrays.
    """
    if isinstance(histogram, dict):
        d = np.fromiter(histogram.keys(), dtype=float, count=len(histogram))
        n = np.fromiter(histogram.values(), dtype=float, count=len(histogram))
    else:
        d, n = (np.asarray(x, dtype=float) for x in histogram)
    if len(d) == 0:
        return 0.0, 0.0
    if np.any(n < 0):
        raise ValueError("counts must be non-negative")
    po, pb = table.lookup(d)
    return float(np.dot(po, n)), float(np.dot(pb, n))


def time_average(series) -> tuple[float, float]:
    s = np.asarray(list(series), dtype=float).reshape(-1, 2)
    if len(s) == 0:
        raise ValueError("at least one sample is required")
    return float(s[:, 0].mean()), float(s[:, 1].mean())


def box_histograms(positions, diameters, boxes, receptors) -> dict:
    """Diameters of droplets inside each receptor's breathing box, as (d, count) pairs."""
    out = {}
    pos = np.atleast_2d(positions)
    for r in receptors:
        inside = np.all((pos >= boxes.lo[r]) & (pos <= boxes.hi[r]), axis=1) if len(pos) else np.zeros(0, bool)
        d = np.asarray(diameters)[inside]
        out[r] = (d, np.ones(len(d)))
    return out


def deposition_report(samples: dict, occupant_ids, infected) -> list[dict]:
    """Time-averaged counts per susceptible receptor from per-sample (olf, ba) lists."""
    rows = []
    for i, oid in enumerate(occupant_ids):
        if oid in infected:
            continue
        ser = samples.get(i, [])
        olf, ba = time_average(ser) if ser else (0.0, 0.0)
        rows.append({"receptor": oid, "D_olf": olf, "D_BA": ba})
    return rows


def deposition_csv(rows, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["receptor", "D_olf", "D_BA"])
    for r in rows:
        w.writerow([r["receptor"], f"{r['D_olf']:.9g}", f"{r['D_BA']:.9g}"])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
