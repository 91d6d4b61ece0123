"""Sinusoidal breathing signal shared by the mouth boundary, injection and dose.

Within each cycle of period T the first half is exhalation and the second half
inhalation. The mouth flow is Q(t) = Q_peak sin(2 pi tau / T) with tau the time
since the cycle start, positive outward. Emission is weighted by
w(t) = pi max(sin, 0), which has unit mean over a cycle, so a source with rate
r emits r per second of cycle on average while emitting only during exhale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Breathing:
    period: float = 2.0
    phase: float = 0.0
    pulmonary_rate: float = 1e-4   # mean ventilation, m^3/s

    @property
    def half(self) -> float:
        return 0.5 * self.period

    @property
    def peak_flow(self) -> float:
        """Peak mouth flow; the exhaled volume per cycle is P * T."""
        return math.pi * self.pulmonary_rate

    def cycle_time(self, t):
        return np.mod(np.asarray(t, dtype=float) - self.phase, self.period)

    def is_exhaling(self, t) -> bool:
        return bool(self.cycle_time(t) < self.half)

    def flow(self, t) -> float:
        """Signed mouth volume flow [m^3/s]; positive while exhaling."""
        return float(self.peak_flow * math.sin(2.0 * math.pi * float(self.cycle_time(t)) / self.period))

    def mouth_speed(self, t, mouth_area: float) -> float:
        return self.flow(t) / mouth_area

    # ---- emission weight
    def emission_weight(self, t):
        s = np.sin(2.0 * np.pi * self.cycle_time(t) / self.period)
        return np.pi * np.maximum(s, 0.0)

    def cumulative_weight(self, t) -> float:
        """Integral of the emission weight from ``phase`` to ``t``."""
        T = self.period
        x = float(t) - self.phase
        k = math.floor(x / T)
        tau = x - k * T
        if tau < self.half:
            return k * T + 0.5 * T * (1.0 - math.cos(2.0 * math.pi * tau / T))
        return (k + 1) * T

    def time_of_weight(self, w: float) -> float:
        """Earliest time at which the cumulative weight reaches ``w``."""
        T = self.period
        k = math.floor(w / T)
        r = w - k * T
        if r == 0.0 and k > 0:
            # the weight is flat over inhalation; its earliest arrival is the end of exhale
            return self.phase + (k - 1) * T + self.half
        c =min(1.0, max(-1.0, 1.0 - 2.0 * r / T))
        return self.phase + k * T + T / (2.0 * math.pi) * math.acos(c)

    # ---- inhalation window
    def inhale_time_until(self, t) -> float:
        """Total inhalation time elapsed between ``phase`` and ``t``."""
        T = self.period
        x = float(t) - self.phase
        k = math.floor(x / T)
        tau = x - k * T
        return k * self.half + min(max(tau - self.half, 0.0), self.half)

    def inhale_overlap(self, a: float, b: float) -> float:
        """Length of inhalation time inside [a, b]."""
        if b <= a:
            return 0.0
        return max(0.0, self.inhale_time_until(b) - self.inhale_time_until(a))
