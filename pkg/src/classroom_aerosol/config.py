"""Scenario configuration: unit-annotated YAML onto frozen dataclasses.

The packaged ``data/defaults.yaml`` is the single documented default scenario.
User files are deep-merged on top of it; lists replace wholesale and unknown
keys are rejected.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .units import UnitError, parse_quantity, parse_vector

INTERVENTIONS = ("none", "cloth_mask", "shields", "screens")
FLOW_PROVIDERS = ("analytic", "solver")


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


def q(dim: str, default: Any = dataclasses.MISSING, optional: bool = False):
    return field(default=default, metadata={"dim": dim, "optional": optional})


def vec(dim: str, n: int | None = None, default: Any = dataclasses.MISSING):
    return field(default=default, metadata={"vdim": dim, "n": n})


def block(cls):
    return field(default_factory=cls, metadata={"block": cls})


def items(cls):
    return field(default=(), metadata={"items": cls})


def choice(options: tuple[str, ...], default: Any = dataclasses.MISSING):
    return field(default=default, metadata={"choices": options})


@dataclass(frozen=True)
class AmbientConditions:
    temperature: float = q("temperature", 303.15)
    relative_humidity: float = q("dimensionless", 0.30)
    pressure: float = q("pressure", 101325.0)

    def __post_init__(self):
        if self.temperature <= 0 or self.pressure <= 0:
            raise ConfigError("ambient temperature and pressure must be positive")
        if not 0.0 <= self.relative_humidity <= 1.0:
            raise ConfigError("ambient relative_humidity must lie in [0, 1]")


@dataclass(frozen=True)
class OpeningConfig:
    kind: str = choice(("door", "window"))
    wall: str = choice(("x-", "x+", "y-", "y+"))
    span: tuple[float, float] = vec("length", 2)
    z: tuple[float, float] = vec("length", 2)


@dataclass(frozen=True)
class RoomConfig:
    extents: tuple[float, float, float] = vec("length", 3, (5.0, 5.0, 3.0))
    openings: tuple[OpeningConfig, ...] = items(OpeningConfig)


@dataclass(frozen=True)
class LayoutConfig:
    n_students: int = 24
    seat_x: tuple[float, ...] = vec("length", None, (0.6, 1.2, 1.8, 3.2, 3.8, 4.4))
    row_y: tuple[float, ...] = vec("length", None, (1.4, 2.25, 3.1, 3.95))
    split_x: float = q("length", 2.5)
    stagger: float = q("length", 0.2)
    stagger_side: str = choice(("left", "right"), "right")
    teacher_xy: tuple[float, float] = vec("length", 2, (2.5, 0.4))
    teacher_present: bool = True


@dataclass(frozen=True)
class FurnitureConfig:
    bench: tuple[float, float, float] = vec("length", 3, (0.4, 0.35, 0.85))
    seat_height: float = q("length", 0.35)
    backrest_thickness: float = q("length", 0.05)
    desk: tuple[float, float] = vec("length", 2, (0.5, 0.4))
    desk_height: float = q("length", 0.55)
    desk_to_bench: float = q("length", 0.02)


@dataclass(frozen=True)
class BodyConfig:
    torso: tuple[float, float] = vec("length", 2, (0.36, 0.25))
    torso_inset: float = q("length", 0.03)
    head: tuple[float, float, float] = vec("length", 3, (0.18, 0.20, 0.25))
    head_protrusion: float = q("length", 0.02)
    sitting_height: float = q("length", 1.0)
    mouth_below_crown: float = q("length", 0.15)
    mouth: tuple[float, float] = vec("length", 2, (0.040, 0.005))
    teacher_body: tuple[float, float] = vec("length", 2, (0.40, 0.25))
    teacher_height: float = q("length", 1.70)
    susceptible_temperature: float = q("temperature", 310.15)
    infected_temperature: float = q("temperature", 311.55)


@dataclass(frozen=True)
class ShieldConfig:
    height: float = q("length", 0.65)
    side_panels: bool = True
    material: str = choice(("wood", "polycarbonate", "other"), "polycarbonate")


@dataclass(frozen=True)
class ScreenPanel:
    plane: str = choice(("x", "y"))
    at: float = q("length")
    span: tuple[float, float] = vec("length", 2)
    z: tuple[float, float] = vec("length", 2)


@dataclass(frozen=True)
class InterventionConfig:
    shields: ShieldConfig = block(ShieldConfig)
    screens: tuple[ScreenPanel, ...] = items(ScreenPanel)
    screen_material: str = choice(("wood", "polycarbonate", "other"), "polycarbonate")
    screen_min_bottom: float = q("length", 1.4)
    cloth_mask_rates: tuple[float, ...] = vec("rate", None, (81.0, 42.0, 17.0, 1.0))


@dataclass(frozen=True)
class InjectionBin:
    diameter: tuple[float, float] = vec("length", 2)
    rate: float = q("rate")
    source: str = ""


@dataclass(frozen=True)
class InjectionConfig:
    breathing: tuple[InjectionBin, ...] = items(InjectionBin)
    speaking: tuple[InjectionBin, ...] = items(InjectionBin)
    teacher_speaks: bool = True


@dataclass(frozen=True)
class BreathSignal:
    period: float = q("time", 2.0)
    inhale_duration: float = q("time", 1.0)
    phase: float = q("time", 0.0)

    def __post_init__(self):
        if self.period <= 0 or self.inhale_duration <= 0:
            raise ConfigError("breathing period and inhale_duration must be positive")
        if abs(self.period - 2.0 * self.inhale_duration) > 1e-12 * self.period:
            raise ConfigError("sinusoidal breathing needs period = 2 x inhale_duration")


@dataclass(frozen=True)
class DropletPhysics:
    salt_mass_fraction: float = q("dimensionless", 0.01)
    water_density: float = q("density", 995.65)
    salt_density: float = q("density", 2165.0)
    water_molar_mass: float = q("molar_mass", 0.018015)
    salt_molar_mass: float = q("molar_mass", 0.05844)
    vant_hoff: float = q("dimensionless", 2.0)
    efflorescence_mass_fraction: float | None = q("dimensionless", None, optional=True)
    water_cp: float = q("specific_heat", 4181.0)
    salt_cp: float = q("specific_heat", 864.0)
    lift: bool = True
    dispersion_diffusivity: float = q("diffusivity", 5e-4)
    condensation: bool = False
    two_way_coupling: bool = False


@dataclass(frozen=True)
class AnalyticFlowParams:
    plume_coefficient: float = q("dimensionless", 0.4)
    plume_height: float = q("length", 2.0)
    cell_radius: float = q("length", 0.3)
    temperature_excess_fraction: float = q("dimensionless", 0.1)
    draft_coefficient: float = q("dimensionless", 0.2)
    draft_decay_length: float = q("length", 0.3)
    jet: bool = True


@dataclass(frozen=True)
class Numerics:
    grid: tuple[int, int, int] = (50, 50, 30)
    flow_dt: float = q("time", 0.1)
    droplet_dt_max: float = q("time", 0.1)
    cfl_max: float = q("dimensionless", 0.8)
    div_tol: float = q("rate", 1e-6)
    poisson_rtol: float = q("dimensionless", 1e-12)
    poisson_maxiter: int = 500
    eddy_viscosity: float = q("diffusivity", 2e-4)
    eddy_diffusivity: float = q("diffusivity", 2e-4)
    max_cells: int = 2_000_000


@dataclass(frozen=True)
class DoseParams:
    sigma: float = q("inverse_count", 0.01)
    viral_load: float = q("number_concentration", 7e12)
    pulmonary_rate: float = q("flow_rate", 1e-4)
    inhale_duration: float = q("time", 1.0)
    box_size: tuple[float, float, float] = vec("length", 3, (0.3, 0.4, 0.3))

    def __post_init__(self):
        if min(self.sigma, self.viral_load, self.pulmonary_rate, self.inhale_duration) <= 0:
            raise ConfigError("dose parameters must be strictly positive")

    @property
    def box_volume(self) -> float:
        a, b, c = self.box_size
        return a * b * c


@dataclass(frozen=True)
class FomiteParams:
    c_h: float = q("dimensionless", 0.2)
    c_m: float = q("dimensionless", 0.35)
    f_h: float = q("rate", 1.0 / 60.0)
    f_m: float = q("rate", 0.26 / 60.0)
    contact_area: float = q("area", 1e-3)
    hand_decay: float = q("rate", 0.92 / 3600.0)
    interval: float = q("time", 100.0)
    wood_decay: float = q("rate", 0.0)
    polycarbonate_decay: float = q("rate", 0.0)

    def __post_init__(self):
        if not (0.0 <= self.c_h <= 1.0 and 0.0 <= self.c_m <= 1.0):
            raise ConfigError("transfer efficiencies must lie in [0, 1]")
        if min(self.f_h, self.f_m, self.contact_area, self.hand_decay, self.interval) < 0:
            raise ConfigError("fomite rates, area and interval must be non-negative")


@dataclass(frozen=True)
class DepositionConfig:
    table: str = "deposition_efficiency.csv"


@dataclass(frozen=True)
class ClassTimeConfig:
    threshold: float = q("dimensionless", 0.5)
    fit_start: float = q("time", 0.0)


@dataclass(frozen=True)
class OutputConfig:
    snapshot_every: float = q("time", 10.0)
    droplet_snapshots: bool = True
    field_snapshots: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    intervention: str = choice(INTERVENTIONS, "none")
    infected: tuple[int, ...] = (4, 14, 15, 20)
    duration: float = q("time", 100.0)
    seed: int = 12345
    flow_provider: str = choice(FLOW_PROVIDERS, "analytic")
    ambient: AmbientConditions = block(AmbientConditions)
    room: RoomConfig = block(RoomConfig)
    layout: LayoutConfig = block(LayoutConfig)
    furniture: FurnitureConfig = block(FurnitureConfig)
    bodies: BodyConfig = block(BodyConfig)
    interventions: InterventionConfig = block(InterventionConfig)
    injection: InjectionConfig = block(InjectionConfig)
    breathing: BreathSignal = block(BreathSignal)
    droplet: DropletPhysics = block(DropletPhysics)
    analytic: AnalyticFlowParams = block(AnalyticFlowParams)
    numerics: Numerics = block(Numerics)
    dose: DoseParams = block(DoseParams)
    fomite: FomiteParams = block(FomiteParams)
    deposition: DepositionConfig = block(DepositionConfig)
    class_time: ClassTimeConfig = block(ClassTimeConfig)
    output: OutputConfig = block(OutputConfig)
    sources: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.duration < 0:
            raise ConfigError("duration must be non-negative")
        if self.intervention not in INTERVENTIONS:
            raise ConfigError(f"unknown intervention {self.intervention!r}")
        if self.flow_provider not in FLOW_PROVIDERS:
            raise ConfigError(f"unknown flow provider {self.flow_provider!r}")

    def with_updates(self, changes: dict | None = None, **kw) -> "ScenarioConfig":
        """Copy with fields replaced; keys may be dotted paths such as ``numerics.grid``."""
        cfg = self
        for key, value in {**(changes or {}), **kw}.items():
            head, _, rest = key.partition(".")
            if rest:
                block_obj = getattr(cfg, head)
                parts = rest.split(".")
                chain = [block_obj]
                for p in parts[:-1]:
                    chain.append(getattr(chain[-1], p))
                new = dataclasses.replace(chain[-1], **{parts[-1]: value})
                for obj, p in zip(reversed(chain[:-1]), reversed(parts[:-1])):
                    new = dataclasses.replace(obj, **{p: new})
                cfg = dataclasses.replace(cfg, **{head: new})
            else:
                cfg = dataclasses.replace(cfg, **{key: value})
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()


# ---------------------------------------------------------------- loading


def _coerce_plain(raw, default, where):
    if isinstance(default, bool):
        if not isinstance(raw, bool):
            raise ConfigError(f"{where}: expected true/false")
        return raw
    if isinstance(default, int):
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{where}: expected an integer")
        return raw
    if isinstance(default, tuple):
        if not isinstance(raw, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(raw)
    if isinstance(default, str):
        if not isinstance(raw, str):
            raise ConfigError(f"{where}: expected a string")
        return raw
    return raw


def _build(cls, data, where: str, sources: list):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    by_name = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(by_name) - {"sources"})
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, raw in data.items():
        if name == "sources":
            continue
        f = by_name[name]
        md = f.metadata
        path = f"{where}.{name}" if where else name
        if isinstance(raw, dict) and "source" in raw and ("dim" in md or "vdim" in md):
            sources.append((path, str(raw["source"])))
        try:
            if "dim" in md:
                if raw is None and md.get("optional"):
                    kwargs[name] = None
                else:
                    kwargs[name] = parse_quantity(raw, md["dim"], path)
            elif "vdim" in md:
                vals = parse_vector(raw, md["vdim"], path)
                if md.get("n") is not None and len(vals) != md["n"]:
                    raise ConfigError(f"{path}: expected {md['n']} components, got {len(vals)}")
                kwargs[name] = vals
            elif "block" in md:
                kwargs[name] = _build(md["block"], raw, path, sources)
            elif "items" in md:
                if not isinstance(raw, list):
                    raise ConfigError(f"{path}: expected a list")
                built = []
                for i, item in enumerate(raw):
                    if isinstance(item, dict) and isinstance(item.get("source"), str) and md["items"] is InjectionBin:
                        sources.append((f"{path}[{i}]", item["source"]))
                    built.append(_build(md["items"], item, f"{path}[{i}]", sources))
                kwargs[name] = tuple(built)
            elif "choices" in md:
                if raw not in md["choices"]:
                    raise ConfigError(f"{path}: {raw!r} not one of {md['choices']}")
                kwargs[name] = raw
            else:
                default = f.default if f.default is not dataclasses.MISSING else None
                kwargs[name] = _coerce_plain(raw, default, path)
        except UnitError as exc:
            raise ConfigError(str(exc)) from exc
    return cls(**kwargs)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and not (
            "value" in value and set(value) <= {"value", "source"}
        ):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def default_document() -> dict:
    text = resources.files("classroom_aerosol").joinpath("data/defaults.yaml").read_text()
    return yaml.safe_load(text)


def _flatten(doc: dict) -> dict:
    """Scenario files nest the top-level scalars under ``scenario:``."""
    doc = dict(doc)
    head = doc.pop("scenario", {}) or {}
    if not isinstance(head, dict):
        raise ConfigError("scenario: expected a mapping")
    clash = set(head) & set(doc)
    if clash:
        raise ConfigError(f"keys given twice: {sorted(clash)}")
    doc.update(head)
    return doc


def config_from_document(doc: dict, overrides: dict | None = None) -> ScenarioConfig:
    flat = _merge(_flatten(default_document()), _flatten(doc or {}))
    if overrides:
        flat = _merge(flat, _flatten(overrides))
    sources: list = []
    if "infected" in flat:
        flat["infected"] = list(flat["infected"])
    cfg = _build(ScenarioConfig, flat, "", sources)
    return dataclasses.replace(cfg, infected=tuple(int(i) for i in cfg.infected),
                               sources=tuple(sources))


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ScenarioConfig:
    """Load a scenario file (merged over the packaged defaults)."""
    doc = {}
    if path is not None:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_document(doc, overrides)


def default_config(**overrides) -> ScenarioConfig:
    """The packaged default scenario; keyword overrides apply to top-level fields."""
    cfg = config_from_document({})
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def mirror_config(cfg: ScenarioConfig) -> ScenarioConfig:
    """Reflect the layout across the x midplane of the room."""
    lx = cfg.room.extents[0]

    def flip_span(span):
        return (lx - span[1], lx - span[0])

    openings = []
    for o in cfg.room.openings:
        if o.wall in ("x-", "x+"):
            openings.append(dataclasses.replace(o, wall="x+" if o.wall == "x-" else "x-"))
        else:
            openings.append(dataclasses.replace(o, span=flip_span(o.span)))
    screens = []
    for s in cfg.interventions.screens:
        if s.plane == "x":
            screens.append(dataclasses.replace(s, at=lx - s.at))
        else:
            screens.append(dataclasses.replace(s, span=flip_span(s.span)))
    layout = dataclasses.replace(
        cfg.layout,
        seat_x=tuple(lx - x for x in cfg.layout.seat_x),
        split_x=lx - cfg.layout.split_x,
        stagger_side="left" if cfg.layout.stagger_side == "right" else "right",
        teacher_xy=(lx - cfg.layout.teacher_xy[0], cfg.layout.teacher_xy[1]),
    )
    return dataclasses.replace(
        cfg,
        layout=layout,
        room=dataclasses.replace(cfg.room, openings=tuple(openings)),
        interventions=dataclasses.replace(cfg.interventions, screens=tuple(screens)),
    )
