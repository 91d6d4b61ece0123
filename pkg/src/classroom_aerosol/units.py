"""Parsing of unit-annotated quantities in scenario files.

Quantities are written as ``"<number> <unit>"`` or ``"(<n1>, <n2>, ...) <unit>"``.
Everything is converted to SI on load; the unit must belong to the dimension
the receiving field expects.
"""
from __future__ import annotations

import re

# unit -> (dimension, scale, offset); SI value = value * scale + offset
UNITS: dict[str, tuple[str, float, float]] = {
    "1": ("dimensionless", 1.0, 0.0),
    "%": ("dimensionless", 0.01, 0.0),
    "m": ("length", 1.0, 0.0),
    "cm": ("length", 1e-2, 0.0),
    "mm": ("length", 1e-3, 0.0),
    "um": ("length", 1e-6, 0.0),
    "s": ("time", 1.0, 0.0),
    "min": ("time", 60.0, 0.0),
    "h": ("time", 3600.0, 0.0),
    "K": ("temperature", 1.0, 0.0),
    "degC": ("temperature", 1.0, 273.15),
    "Pa": ("pressure", 1.0, 0.0),
    "kPa": ("pressure", 1e3, 0.0),
    "m/s": ("velocity", 1.0, 0.0),
    "m/s^2": ("acceleration", 1.0, 0.0),
    "m^2": ("area", 1.0, 0.0),
    "cm^2": ("area", 1e-4, 0.0),
    "m^3": ("volume", 1.0, 0.0),
    "L": ("volume", 1e-3, 0.0),
    "m^3/s": ("flow_rate", 1.0, 0.0),
    "L/min": ("flow_rate", 1e-3 / 60.0, 0.0),
    "1/s": ("rate", 1.0, 0.0),
    "1/min": ("rate", 1.0 / 60.0, 0.0),
    "1/h": ("rate", 1.0 / 3600.0, 0.0),
    "copies/m^3": ("number_concentration", 1.0, 0.0),
    "copies/mL": ("number_concentration", 1e6, 0.0),
    "1/copies": ("inverse_count", 1.0, 0.0),
    "kg/m^3": ("density", 1.0, 0.0),
    "Pa*s": ("viscosity", 1.0, 0.0),
    "m^2/s": ("diffusivity", 1.0, 0.0),
    "J/(kg*K)": ("specific_heat", 1.0, 0.0),
    "kg/mol": ("molar_mass", 1.0, 0.0),
}

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_SCALAR = re.compile(rf"^\s*({_NUM})\s*(\S+)?\s*$")
_VECTOR = re.compile(rf"^\s*\(([^)]*)\)\s*(\S+)?\s*$")


class UnitError(ValueError):
    pass


def _convert(values: list[float], unit: str | None, dimension: str, where: str) -> list[float]:
    if unit is None:
        if dimension != "dimensionless":
            raise UnitError(f"{where}: missing unit (expected a {dimension} unit)")
        unit = "1"
    if unit not in UNITS:
        raise UnitError(f"{where}: unknown unit {unit!r}")
    dim, scale, offset = UNITS[unit]
    if dim != dimension:
        raise UnitError(f"{where}: unit {unit!r} is {dim}, expected {dimension}")
    return [v * scale + offset for v in values]


def parse_quantity(raw, dimension: str, where: str = "value") -> float:
    """Parse a scalar quantity to SI."""
    if isinstance(raw, bool):
        raise UnitError(f"{where}: expected a quantity, got {raw!r}")
    if isinstance(raw, (int, float)):
        return _convert([float(raw)], None, dimension, where)[0]
    if isinstance(raw, dict):
        if set(raw) - {"value", "source"} or "value" not in raw:
            raise UnitError(f"{where}: annotated quantity needs 'value' and optional 'source'")
        return parse_quantity(raw["value"], dimension, where)
    m = _SCALAR.match(str(raw))
    if not m:
        raise UnitError(f"{where}: cannot parse quantity {raw!r}")
    return _convert([float(m.group(1))], m.group(2), dimension, where)[0]


def parse_vector(raw, dimension: str, where: str = "value") -> tuple[float, ...]:
    """Parse ``"(a, b, c) unit"`` (or a bare list for dimensionless) to SI."""
    if isinstance(raw, dict):
        if set(raw) - {"value", "source"} or "value" not in raw:
            raise UnitError(f"{where}: annotated quantity needs 'value' and optional 'source'")
        return parse_vector(raw["value"], dimension, where)
    if isinstance(raw, (list, tuple)):
        return tuple(parse_quantity(v, dimension, where) for v in raw)
    m = _VECTOR.match(str(raw))
    if not m:
        raise UnitError(f"{where}: cannot parse vector quantity {raw!r}")
    parts = [p for p in m.group(1).split(",") if p.strip()]
    try:
        nums = [float(p) for p in parts]
    except ValueError as exc:
        raise UnitError(f"{where}: bad number in {raw!r}") from exc
    return tuple(_convert(nums, m.group(2), dimension, where))
