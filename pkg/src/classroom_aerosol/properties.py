"""Thermophysical properties of humid air and water used by the flow and droplet models.

Every function accepts scalars or numpy arrays (SI units, temperatures in K).
"""
from __future__ import annotations

import numpy as np

# Sutherland constants for air
MU_REF = 1.716e-5      # Pa s
T_REF = 273.15         # K
S_SUTH = 110.4         # K

R_AIR = 287.05         # J/(kg K)
EPS = 0.622            # M_w / M_air
G = 9.81               # m/s^2
CP_AIR = 1006.0        # J/(kg K)

# Antoine constants for water, p in mmHg, T in degC, valid 1 to 100 degC
ANTOINE_A = 8.07131
ANTOINE_B = 1730.63
ANTOINE_C = 233.426
MMHG = 133.322


def sutherland_viscosity(T):
    """Dynamic viscosity of air [Pa s]."""
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise ValueError("temperature must be positive")
    mu = MU_REF * (T / T_REF) ** 1.5 * (T_REF + S_SUTH) / (T + S_SUTH)
    return float(mu) if mu.ndim == 0 else mu


def saturation_pressure(T):
    """Saturation vapour pressure of water over a flat surface [Pa]."""
    tc = np.asarray(T, dtype=float) - 273.15
    p = MMHG * 10.0 ** (ANTOINE_A - ANTOINE_B / (ANTOINE_C + tc))
    return float(p) if p.ndim == 0 else p


def air_density(T, p=101325.0):
    return p / (R_AIR * np.asarray(T, dtype=float))


def vapor_diffusivity(T, p=101325.0):
    """Binary diffusion coefficient of water vapour in air [m^2/s]."""
    return 2.11e-5 * (np.asarray(T, dtype=float) / 273.15) ** 1.94 * (101325.0 / p)


def air_conductivity(T):
    """Thermal conductivity of air [W/(m K)]."""
    tc = np.asarray(T, dtype=float) - 273.15
    return 4.19e-3 * (5.69 + 0.017 * tc)


def latent_heat(T):
    """Latent heat of vaporisation of water [J/kg]."""
    return 2.501e6 - 2370.0 * (np.asarray(T, dtype=float) - 273.15)


def vapor_fraction(p_v, p=101325.0):
    """Vapour mass fraction for partial pressure ``p_v``."""
    p_v = np.asarray(p_v, dtype=float)
    return EPS * p_v / (p - (1.0 - EPS) * p_v)


def vapor_pressure_from_fraction(Y, p=101325.0):
    Y = np.asarray(Y, dtype=float)
    return Y * p / (EPS + (1.0 - EPS) * Y)


def relative_humidity(T, Y, p=101325.0):
    """RH from temperature and vapour mass fraction."""
    return vapor_pressure_from_fraction(Y, p) / saturation_pressure(T)


def fraction_from_rh(T, rh, p=101325.0):
    return vapor_fraction(np.asarray(rh) * saturation_pressure(T), p)
