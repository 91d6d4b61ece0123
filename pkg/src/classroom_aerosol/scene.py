"""Classroom geometry: room, occupants, furniture, openings and capture surfaces.

All solids are axis-aligned boxes and all thin surfaces (walls, shields,
screens, openings) are axis-aligned rectangles. Coordinates: x across the
room, y from the front (teacher) to the back, z up.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, ScenarioConfig

AIR, SOLID, OPENING_EXTERIOR = "air", "solid", "opening-exterior"
REGION_CODES = {AIR: 0, SOLID: 1, OPENING_EXTERIOR: 2}

SURFACE_KINDS = (
    "wall", "floor", "ceiling", "furniture_top", "occupant", "desk_shield", "ceiling_screen",
)


class GeometryConflictError(ValueError):
    """Two solids overlap, or a solid leaves the room."""


class UnknownOccupantError(KeyError):
    pass


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise GeometryConflictError(f"degenerate box {self.lo} -> {self.hi}")

    @property
    def size(self) -> tuple[float, float, float]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def volume(self) -> float:
        a, b, c = self.size
        return a * b * c

    @property
    def center(self) -> tuple[float, float, float]:
        return tuple(0.5 * (l + h) for l, h in zip(self.lo, self.hi))

    def contains(self, p) -> bool:
        return all(l <= x <= h for l, x, h in zip(self.lo, p, self.hi))

    def overlaps(self, other: "Box") -> bool:
        """Interiors intersect (touching faces do not count)."""
        return all(a_lo < b_hi and b_lo < a_hi
                   for a_lo, a_hi, b_lo, b_hi in zip(self.lo, self.hi, other.lo, other.hi))

    def reflect_x(self, lx: float) -> "Box":
        return Box((lx - self.hi[0], self.lo[1], self.lo[2]), (lx - self.lo[0], self.hi[1], self.hi[2]))


def _tangent_axes(axis: int) -> tuple[int, int]:
    return tuple(a for a in range(3) if a != axis)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle lying in the plane ``x[axis] == at``.

    ``lo``/``hi`` give the bounds along the two remaining axes in increasing
    axis order.
    """

    axis: int
    at: float
    lo: tuple[float, float]
    hi: tuple[float, float]

    @property
    def area(self) -> float:
        return (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])

    @property
    def tangent_axes(self) -> tuple[int, int]:
        return _tangent_axes(self.axis)

    @property
    def center(self) -> tuple[float, float, float]:
        c = [0.0, 0.0, 0.0]
        c[self.axis] = self.at
        for k, a in enumerate(self.tangent_axes):
            c[a] = 0.5 * (self.lo[k] + self.hi[k])
        return tuple(c)

    def covers(self, p) -> bool:
        """Whether the projection of ``p`` onto the plane falls inside."""
        a, b = self.tangent_axes
        return self.lo[0] <= p[a] <= self.hi[0] and self.lo[1] <= p[b] <= self.hi[1]


@dataclass(frozen=True)
class Opening:
    kind: str
    wall: str
    rect: Rect
    boundary_role: str = "pressure-outlet"


@dataclass(frozen=True)
class Room:
    extents: tuple[float, float, float] = (5.0, 5.0, 3.0)
    openings: tuple[Opening, ...] = ()

    def __post_init__(self):
        if any(e <= 0 for e in self.extents):
            raise ConfigError("room extents must be positive")

    def wall_rect(self, wall: str) -> Rect:
        lx, ly, lz = self.extents
        axis = {"x": 0, "y": 1, "z": 2}[wall[0]]
        at = 0.0 if wall[1] == "-" else self.extents[axis]
        a, b = _tangent_axes(axis)
        return Rect(axis, at, (0.0, 0.0), (self.extents[a], self.extents[b]))


@dataclass(frozen=True)
class Occupant:
    id: int
    role: str
    body_blocks: tuple[Box, ...]
    body_temperature: float
    infected: bool = False
    mouth: Rect | None = None
    mouth_normal: int = 0  # +1/-1 along mouth.axis

    @property
    def mouth_center(self) -> tuple[float, float, float]:
        if self.mouth is None:
            raise ValueError(f"occupant {self.id} has no mouth")
        return self.mouth.center

    @property
    def normal_vector(self) -> tuple[float, float, float]:
        n = [0.0, 0.0, 0.0]
        n[self.mouth.axis] = float(self.mouth_normal)
        return tuple(n)


@dataclass(frozen=True)
class Bench:
    seat: Box
    backrest: Box

    @property
    def envelope(self) -> Box:
        lo = tuple(min(a, b) for a, b in zip(self.seat.lo, self.backrest.lo))
        hi = tuple(max(a, b) for a, b in zip(self.seat.hi, self.backrest.hi))
        return Box(lo, hi)


@dataclass(frozen=True)
class Furniture:
    benches: tuple[Bench, ...] = ()
    desks: tuple[Box, ...] = ()
    rows: int = 0

    def boxes(self) -> list[tuple[str, Box]]:
        out = [("desk", d) for d in self.desks]
        for b in self.benches:
            out += [("bench_seat", b.seat), ("bench_backrest", b.backrest)]
        return out


@dataclass(frozen=True)
class CaptureSurface:
    id: int
    kind: str
    name: str
    geometry: Rect | Box
    material: str = "other"
    touch_area: float = 0.0
    owner: int | None = None
    porous: bool = False


@dataclass(frozen=True)
class BreathingBox:
    owner: int
    box: Box
    dims: tuple[float, float, float]

    @property
    def volume(self) -> float:
        a, b, c = self.dims
        return a * b * c


@dataclass(frozen=True)
class Scene:
    room: Room
    occupants: tuple[Occupant, ...]
    furniture: Furniture = field(default_factory=Furniture)
    breathing_boxes: tuple[BreathingBox, ...] = ()
    surfaces: tuple[CaptureSurface, ...] = ()

    # ---- lookups
    def occupant(self, occupant_id: int) -> Occupant:
        for o in self.occupants:
            if o.id == occupant_id:
                return o
        raise UnknownOccupantError(occupant_id)

    def occupant_index(self, occupant_id: int) -> int:
        for i, o in enumerate(self.occupants):
            if o.id == occupant_id:
                return i
        raise UnknownOccupantError(occupant_id)

    @property
    def occupant_ids(self) -> list[int]:
        return [o.id for o in self.occupants]

    def breathing_box_of(self, occupant_id: int) -> BreathingBox:
        for b in self.breathing_boxes:
            if b.owner == occupant_id:
                return b
        raise UnknownOccupantError(occupant_id)

    def solid_boxes(self) -> list[tuple[str, int | None, Box]]:
        """(label, occupant id or None, box) for every solid."""
        out = [(label, None, b) for label, b in self.furniture.boxes()]
        for o in self.occupants:
            out += [("occupant", o.id, b) for b in o.body_blocks]
        return out

    def surfaces_of_kind(self, *kinds: str) -> list[CaptureSurface]:
        return [s for s in self.surfaces if s.kind in kinds]

    # ---- spatial queries
    def classify_points(self, points, strict: bool = False) -> np.ndarray:
        """Region code per point: 0 air, 1 solid, 2 opening-exterior."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        ext = np.asarray(self.room.extents)
        out = np.zeros(len(p), dtype=np.int8)
        outside = np.any((p < 0.0) | (p > ext), axis=1)
        if outside.any():
            through = np.zeros(len(p), dtype=bool)
            for op in self.room.openings:
                r = op.rect
                a, b = r.tangent_axes
                beyond = p[:, r.axis] < 0.0 if r.at == 0.0 else p[:, r.axis] > r.at
                through |= beyond & (p[:, a] >= r.lo[0]) & (p[:, a] <= r.hi[0]) \
                    & (p[:, b] >= r.lo[1]) & (p[:, b] <= r.hi[1])
            if strict and np.any(outside & ~through):
                raise ValueError("point outside the room and not beyond an opening")
            out[outside] = REGION_CODES[OPENING_EXTERIOR]
        inside = ~outside
        if inside.any():
            boxes = [b for _, _, b in self.solid_boxes()]
            if boxes:
                lo = np.array([b.lo for b in boxes])
                hi = np.array([b.hi for b in boxes])
                q = p[inside]
                hit = np.zeros(len(q), dtype=bool)
                for start in range(0, len(q), 4096):
                    chunk = q[start:start + 4096, None, :]
                    hit[start:start + 4096] = np.any(
                        np.all((chunk >= lo[None]) & (chunk <= hi[None]), axis=2), axis=1)
                codes = np.where(hit, REGION_CODES[SOLID], REGION_CODES[AIR]).astype(np.int8)
                out[inside] = codes
        return out

    def classify_point(self, p, strict: bool = False) -> str:
        code = int(self.classify_points([p], strict=strict)[0])
        return {v: k for k, v in REGION_CODES.items()}[code]

    # ---- serialisation
    def to_dict(self) -> dict:
        def box(b: Box):
            return {"lo": list(b.lo), "hi": list(b.hi)}

        def rect(r: Rect):
            return {"axis": r.axis, "at": r.at, "lo": list(r.lo), "hi": list(r.hi)}

        return {
            "room": {
                "extents": list(self.room.extents),
                "openings": [{"kind": o.kind, "wall": o.wall, "boundary_role": o.boundary_role,
                              "rect": rect(o.rect)} for o in self.room.openings],
            },
            "occupants": [{
                "id": o.id, "role": o.role, "infected": o.infected,
                "body_temperature": o.body_temperature,
                "body_blocks": [box(b) for b in o.body_blocks],
                "mouth": rect(o.mouth) if o.mouth else None,
                "mouth_normal": o.mouth_normal,
            } for o in self.occupants],
            "breathing_boxes": [{"owner": b.owner, "volume": b.volume, **box(b.box)}
                                for b in self.breathing_boxes],
            "surfaces": [{
                "id": s.id, "kind": s.kind, "name": s.name, "material": s.material,
                "touch_area": s.touch_area, "owner": s.owner,
                "geometry": rect(s.geometry) if isinstance(s.geometry, Rect) else box(s.geometry),
            } for s in self.surfaces],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


# ---------------------------------------------------------------- builder

_WALLS = (("x-", "wall"), ("x+", "wall"), ("y-", "wall"), ("y+", "wall"),
          ("z-", "floor"), ("z+", "ceiling"))


def _opening(room_ext, o) -> Opening:
    axis = {"x": 0, "y": 1}[o.wall[0]]
    at = 0.0 if o.wall[1] == "-" else room_ext[axis]
    a, b = _tangent_axes(axis)
    rect = Rect(axis, at, (o.span[0], o.z[0]), (o.span[1], o.z[1]))
    if not (0.0 <= rect.lo[0] < rect.hi[0] <= room_ext[a] and 0.0 <= rect.lo[1] < rect.hi[1] <= room_ext[b]):
        raise ConfigError(f"{o.kind} on wall {o.wall} does not lie on the room boundary")
    return Opening(o.kind, o.wall, rect)


def _student(cfg: ScenarioConfig, sid: int, xc: float, y0: float, infected: bool):
    fu, bo = cfg.furniture, cfg.bodies
    dw, dd = fu.desk
    bw, bd, bh = fu.bench
    desk = Box((xc - dw / 2, y0, 0.0), (xc + dw / 2, y0 + dd, fu.desk_height))
    by0 = y0 + dd + fu.desk_to_bench
    seat = Box((xc - bw / 2, by0, 0.0), (xc + bw / 2, by0 + bd, fu.seat_height))
    backrest = Box((xc - bw / 2, by0 + bd - fu.backrest_thickness, fu.seat_height),
                   (xc + bw / 2, by0 + bd, bh))
    crown = fu.seat_height + bo.sitting_height
    hw, hd, hh = bo.head
    shoulder = crown - hh
    tw, td = bo.torso
    ty0 = by0 + bo.torso_inset
    torso = Box((xc - tw / 2, ty0, fu.seat_height), (xc + tw / 2, ty0 + td, shoulder))
    hy0 = ty0 - bo.head_protrusion
    head = Box((xc - hw / 2, hy0, shoulder), (xc + hw / 2, hy0 + hd, crown))
    mz = crown - bo.mouth_below_crown
    mw, mh = bo.mouth
    mouth = Rect(1, hy0, (xc - mw / 2, mz - mh / 2), (xc + mw / 2, mz + mh / 2))
    temp = bo.infected_temperature if infected else bo.susceptible_temperature
    occ = Occupant(sid, "student", (torso, head), temp, infected, mouth, -1)
    return occ, desk, Bench(seat, backrest)


def _teacher(cfg: ScenarioConfig, tid: int, infected: bool) -> Occupant:
    bo = cfg.bodies
    xc, yb = cfg.layout.teacher_xy
    bw, bd = bo.teacher_body
    hw, hd, hh = bo.head
    shoulder = bo.teacher_height - hh
    body = Box((xc - bw / 2, yb, 0.0), (xc + bw / 2, yb + bd, shoulder))
    hy1 = yb + bd + bo.head_protrusion
    head = Box((xc - hw / 2, hy1 - hd, shoulder), (xc + hw / 2, hy1, bo.teacher_height))
    mz = bo.teacher_height - bo.mouth_below_crown
    mw, mh = bo.mouth
    mouth = Rect(1, hy1, (xc - mw / 2, mz - mh / 2), (xc + mw / 2, mz + mh / 2))
    temp = bo.infected_temperature if infected else bo.susceptible_temperature
    return Occupant(tid, "teacher", (body, head), temp, infected, mouth, +1)


def breathing_box_for(occ: Occupant, dims: tuple[float, float, float]) -> BreathingBox:
    """Box of ``dims`` (across, outward, vertical) in front of the mouth."""
    c = occ.mouth_center
    axis = occ.mouth.axis
    across = 0 if axis == 1 else 1
    lo, hi = [0.0] * 3, [0.0] * 3
    lo[across], hi[across] = c[across] - dims[0] / 2, c[across] + dims[0] / 2
    if occ.mouth_normal > 0:
        lo[axis], hi[axis] = c[axis], c[axis] + dims[1]
    else:
        lo[axis], hi[axis] = c[axis] - dims[1], c[axis]
    lo[2], hi[2] = c[2] - dims[2] / 2, c[2] + dims[2] / 2
    return BreathingBox(occ.id, Box(tuple(lo), tuple(hi)), tuple(dims))


def teacher_id(cfg: ScenarioConfig) -> int:
    return max(25, cfg.layout.n_students + 1)


def build_scene(cfg: ScenarioConfig) -> Scene:
    """Construct the classroom for a scenario; deterministic in ``cfg``."""
    ext = cfg.room.extents
    lay = cfg.layout
    n_seats = len(lay.seat_x) * len(lay.row_y)
    if lay.n_students < 0 or lay.n_students > n_seats:
        raise ConfigError(f"{lay.n_students} students but only {n_seats} seats")
    tid = teacher_id(cfg)
    valid_ids = set(range(1, lay.n_students + 1)) | ({tid} if lay.teacher_present else set())
    bad = set(cfg.infected) - valid_ids
    if bad:
        raise ConfigError(f"infected ids {sorted(bad)} are not occupants")

    room = Room(tuple(ext), tuple(_opening(ext, o) for o in cfg.room.openings))

    occupants, desks, benches = [], [], []
    per_row = len(lay.seat_x)
    for idx in range(lay.n_students):
        row, col = divmod(idx, per_row)
        xc = lay.seat_x[col]
        right = xc > lay.split_x
        staggered = right if lay.stagger_side == "right" else not right
        y0 = lay.row_y[row] + (lay.stagger if staggered else 0.0)
        occ, desk, bench = _student(cfg, idx + 1, xc, y0, (idx + 1) in cfg.infected)
        occupants.append(occ)
        desks.append(desk)
        benches.append(bench)
    if lay.teacher_present:
        occupants.append(_teacher(cfg, tid, tid in cfg.infected))
    furniture = Furniture(tuple(benches), tuple(desks), len(lay.row_y))

    boxes = [b for _, b in furniture.boxes()] + [b for o in occupants for b in o.body_blocks]
    for b in boxes:
        if any(l < 0.0 for l in b.lo) or any(h > e for h, e in zip(b.hi, ext)):
            raise GeometryConflictError(f"solid {b} leaves the room")
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if boxes[i].overlaps(boxes[j]):
                raise GeometryConflictError(f"solids overlap: {boxes[i]} and {boxes[j]}")

    bboxes = tuple(breathing_box_for(o, cfg.dose.box_size) for o in occupants)
    for bb in bboxes:
        if any(l < 0.0 for l in bb.box.lo) or any(h > e for h, e in zip(bb.box.hi, ext)):
            raise ConfigError(f"breathing box of occupant {bb.owner} leaves the room")

    surfaces: list[CaptureSurface] = []

    def add(kind, name, geom, material="other", touch=0.0, owner=None):
        surfaces.append(CaptureSurface(len(surfaces), kind, name, geom, material, touch, owner))

    for wall, kind in _WALLS:
        r = room.wall_rect(wall)
        add(kind, wall, r, touch=r.area)
    for i, (desk, bench) in enumerate(zip(desks, benches)):
        sid = i + 1
        add("furniture_top", f"desk-{sid}", desk, "wood", desk.size[0] * desk.size[1], sid)
        add("furniture_top", f"bench-seat-{sid}", bench.seat, "wood",
            bench.seat.size[0] * bench.seat.size[1], sid)
        add("furniture_top", f"bench-back-{sid}", bench.backrest, "wood",
            bench.backrest.size[0] * bench.backrest.size[2], sid)
    for o in occupants:
        for k, b in enumerate(o.body_blocks):
            add("occupant", f"body-{o.id}-{k}", b, owner=o.id)

    iv = cfg.interventions
    if cfg.intervention == "shields":
        h = iv.shields.height
        for i, desk in enumerate(desks):
            sid = i + 1
            (x0, y0, _), (x1, y1, top) = desk.lo, desk.hi
            panels = [Rect(1, y0, (x0, top), (x1, top + h))]
            if iv.shields.side_panels:
                panels += [Rect(0, x0, (y0, top), (y1, top + h)), Rect(0, x1, (y0, top), (y1, top + h))]
            for k, r in enumerate(panels):
                add("desk_shield", f"shield-{sid}-{k}", r, iv.shields.material, r.area, sid)
    if cfg.intervention == "screens":
        for k, s in enumerate(iv.screens):
            if s.z[0] <= iv.screen_min_bottom:
                raise ConfigError(f"screen {k} bottom edge {s.z[0]} m is not above head height")
            if abs(s.z[1] - ext[2]) > 1e-9:
                raise ConfigError(f"screen {k} must hang from the ceiling")
            axis = 0 if s.plane == "x" else 1
            r = Rect(axis, s.at, (s.span[0], s.z[0]), (s.span[1], s.z[1]))
            add("ceiling_screen", f"screen-{k}", r, iv.screen_material, r.area)

    return Scene(room, tuple(occupants), furniture, bboxes, tuple(surfaces))


def sealed_box_scene(extents, heated_blocks=(), temperature: float = 310.15) -> Scene:
    """A closed box containing heated blocks (no mouths); used for flow checks."""
    room = Room(tuple(extents), ())
    occs = tuple(Occupant(i + 1, "block", (b,), temperature) for i, b in enumerate(heated_blocks))
    surfaces = []
    for wall, kind in _WALLS:
        surfaces.append(CaptureSurface(len(surfaces), kind, wall, room.wall_rect(wall)))
    return Scene(room, occs, Furniture(), (), tuple(surfaces))


class SolidIndex:
    """Voxel acceleration for point-in-solid queries.

    Voxels lying entirely inside one solid box store its index; voxels cut by
    a box boundary are flagged and resolved with exact box tests.
    """

    MIXED = -2

    def __init__(self, scene: Scene, voxel: float = 0.02):
        self.labels = []
        self.owners = []
        boxes = []
        for label, owner, b in scene.solid_boxes():
            self.labels.append(label)
            self.owners.append(owner)
            boxes.append(b)
        self.lo = np.array([b.lo for b in boxes]).reshape(-1, 3)
        self.hi = np.array([b.hi for b in boxes]).reshape(-1, 3)
        ext = np.asarray(scene.room.extents, dtype=float)
        self.shape = np.maximum(np.ceil(ext / voxel).astype(int), 1)
        self.h = ext / self.shape
        vox = np.full(tuple(self.shape), -1, dtype=np.int16)
        for k in range(len(boxes)):
            a = np.floor(self.lo[k] / self.h).astype(int)
            b = np.minimum(np.ceil(self.hi[k] / self.h).astype(int), self.shape)
            region = vox[a[0]:b[0], a[1]:b[1], a[2]:b[2]]
            region[region != -1] = self.MIXED
            region[region == -1] = k
            # voxels not wholly inside the box are boundary voxels
            ia = np.ceil(self.lo[k] / self.h - 1e-9).astype(int)
            ib = np.floor(self.hi[k] / self.h + 1e-9).astype(int)
            sub = vox[a[0]:b[0], a[1]:b[1], a[2]:b[2]]
            inner = np.zeros(sub.shape, dtype=bool)
            inner[ia[0] - a[0]:ib[0] - a[0], ia[1] - a[1]:ib[1] - a[1], ia[2] - a[2]:ib[2] - a[2]] = True
            sub[(~inner) & (sub == k)] = self.MIXED
        self.vox = vox

    def locate(self, points) -> np.ndarray:
        """Index of the solid box containing each point (closed boxes), else -1."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(len(p), -1, dtype=np.int64)
        if len(self.lo) == 0 or len(p) == 0:
            return out
        idx = np.floor(p / self.h).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < self.shape), axis=1)
        # points exactly on the far room boundary still map to the last voxel
        on_far = np.all((p >= 0) & (p <= self.shape * self.h), axis=1) & ~inside
        idx = np.clip(idx, 0, self.shape - 1)
        valid = inside | on_far
        lab = np.where(valid, self.vox[idx[:, 0], idx[:, 1], idx[:, 2]], -1).astype(np.int64)
        out[lab >= 0] = lab[lab >= 0]
        mixed = np.nonzero(lab == self.MIXED)[0]
        if len(mixed):
            q = p[mixed]
            hit = np.all((q[:, None, :] >= self.lo[None]) & (q[:, None, :] <= self.hi[None]), axis=2)
            any_hit = hit.any(axis=1)
            first = np.argmax(hit, axis=1)
            out[mixed[any_hit]] = first[any_hit]
        return out

    def is_solid(self, points) -> np.ndarray:
        return self.locate(points) >= 0


def solid_index(scene: Scene) -> SolidIndex:
    """Shared, lazily built :class:`SolidIndex` for a scene."""
    idx = scene.__dict__.get("_solid_index")
    if idx is None:
        idx = SolidIndex(scene)
        object.__setattr__(scene, "_solid_index", idx)
    return idx
