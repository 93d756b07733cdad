"""Data-hall scene model: geometry, JSON format, validation, canonical hash.

All geometry is axis-aligned. Units: meters, watts, m^3/s, degC. Scenes are
immutable after construction and safe to share across threads.

JSON format (format_version 1), top-level keys:
    hall_dims        [lx, ly, lz]
    racks            [{id, lo, hi}]
    servers          [{id, rack_id, inlet_face, outlet_face, power_w, flow_m3s}]
    acus             [{id, supply_face, return_face, supply_temp_c, flow_m3s}]
    containment_walls [{lo, hi}]            axis-degenerate boxes (rectangles)
    hot_aisles       [{lo, hi}]             optional; contained-aisle boxes used
                                            for domain decomposition downstream
Faces are {lo, hi, normal}: a rectangle degenerate in exactly one axis plus a
unit outward normal along that axis (pointing into the fluid region the face
exchanges air with). Unknown keys are ignored with a warning.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .constants import SCENE_FORMAT_VERSION, server_flow_from_power
from .errors import ParseError, SchemaError

log = logging.getLogger(__name__)

Vec3 = tuple[float, float, float]

_AXES = {(1.0, 0.0, 0.0): 0, (-1.0, 0.0, 0.0): 0,
         (0.0, 1.0, 0.0): 1, (0.0, -1.0, 0.0): 1,
         (0.0, 0.0, 1.0): 2, (0.0, 0.0, -1.0): 2}


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; degenerate in one axis it doubles as a rectangle."""

    lo: Vec3
    hi: Vec3

    def degenerate_axis(self):
        """Index of the single zero-extent axis, or None."""
        flat = [a for a in range(3) if self.hi[a] == self.lo[a]]
        return flat[0] if len(flat) == 1 else None

    def extent(self, axis):
        return self.hi[axis] - self.lo[axis]

    def contains_point(self, p, tol=0.0):
        return all(self.lo[a] - tol <= p[a] <= self.hi[a] + tol for a in range(3))

    def overlaps_xy(self, other):
        return (self.lo[0] < other.hi[0] and other.lo[0] < self.hi[0]
                and self.lo[1] < other.hi[1] and other.lo[1] < self.hi[1])

    def center(self):
        return tuple((self.lo[a] + self.hi[a]) / 2.0 for a in range(3))


@dataclass(frozen=True)
class Face:
    """Rectangle plus unit outward normal along its degenerate axis."""

    rect: Box
    normal: Vec3

    @property
    def axis(self):
        return _AXES.get(self.normal)

    @property
    def plane(self):
        return self.rect.lo[self.axis]

    @property
    def area(self):
        a = self.axis
        return float(np.prod([self.rect.extent(i) for i in range(3) if i != a]))


@dataclass(frozen=True)
class Rack:
    id: str
    box: Box


@dataclass(frozen=True)
class Server:
    id: str
    rack_id: str
    inlet_face: Face
    outlet_face: Face
    power_w: float
    flow_m3s: float


@dataclass(frozen=True)
class Acu:
    id: str
    supply_face: Face
    return_face: Face
    supply_temp_c: float
    flow_m3s: float


@dataclass(frozen=True)
class Scene:
    hall_dims: Vec3
    racks: tuple[Rack, ...]
    servers: tuple[Server, ...]
    acus: tuple[Acu, ...]
    containment_walls: tuple[Box, ...] = ()
    hot_aisles: tuple[Box, ...] = ()
    name: str = ""

    def rack_by_id(self, rack_id):
        for r in self.racks:
            if r.id == rack_id:
                return r
        return None

    def point_in_rack(self, p):
        return any(r.box.contains_point(p) for r in self.racks)


@dataclass
class ValidationReport:
    errors: list[tuple[str, str, str]] = field(default_factory=list)
    warnings: list[tuple[str, str, str]] = field(default_factory=list)

    def add_error(self, code, message, entity=""):
        self.errors.append((code, message, entity))

    def add_warning(self, code, message, entity=""):
        self.warnings.append((code, message, entity))

    @property
    def ok(self):
        return not self.errors

    def codes(self):
        return {c for c, _, _ in self.errors}


# ---------------------------------------------------------------------------
# parsing

def _want(obj, key, kind, path):
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: expected object")
    if key not in obj:
        raise SchemaError(f"{path}.{key}: missing required field")
    val = obj[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise SchemaError(f"{path}.{key}: expected number, got {type(val).__name__}")
        return float(val)
    if kind is str:
        if not isinstance(val, str):
            raise SchemaError(f"{path}.{key}: expected string")
        return val
    if kind is list:
        if not isinstance(val, list):
            raise SchemaError(f"{path}.{key}: expected array")
        return val
    raise AssertionError(kind)


def _vec3(obj, key, path):
    raw = _want(obj, key, list, path)
    if len(raw) != 3 or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in raw):
        raise SchemaError(f"{path}.{key}: expected array of 3 numbers")
    return tuple(float(v) for v in raw)


def _parse_box(obj, path):
    return Box(lo=_vec3(obj, "lo", path), hi=_vec3(obj, "hi", path))


def _parse_face(obj, key, path):
    raw = obj.get(key)
    if raw is None:
        raise SchemaError(f"{path}.{key}: missing required field")
    sub = f"{path}.{key}"
    rect = _parse_box(raw, sub)
    normal = _vec3(raw, "normal", sub)
    if normal not in _AXES:
        raise SchemaError(f"{sub}.normal: must be a unit axis vector")
    return Face(rect=rect, normal=normal)


_KNOWN_KEYS = {
    "": {"format_version", "name", "hall_dims", "racks", "servers", "acus",
         "containment_walls", "hot_aisles"},
    "rack": {"id", "lo", "hi"},
    "server": {"id", "rack_id", "inlet_face", "outlet_face", "power_w", "flow_m3s"},
    "acu": {"id", "supply_face", "return_face", "supply_temp_c", "flow_m3s"},
}


def _warn_unknown(obj, known, path):
    for key in obj:
        if key not in known:
            log.warning("scene: ignoring unknown key %s.%s", path or "$", key)


def parse_scene(json_text):
    """Parse scene JSON into a Scene. Raises ParseError / SchemaError."""
    try:
        raw = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError("$: expected top-level object")
    version = raw.get("format_version")
    if version is not None and version != SCENE_FORMAT_VERSION:
        raise SchemaError(f"format_version: unsupported version {version}")
    _warn_unknown(raw, _KNOWN_KEYS[""], "")

    hall_dims = _vec3(raw, "hall_dims", "$")

    racks = []
    for i, obj in enumerate(_want(raw, "racks", list, "$")):
        path = f"racks[{i}]"
        _warn_unknown(obj, _KNOWN_KEYS["rack"], path)
        racks.append(Rack(id=_want(obj, "id", str, path), box=_parse_box(obj, path)))

    servers = []
    for i, obj in enumerate(_want(raw, "servers", list, "$")):
        path = f"servers[{i}]"
        _warn_unknown(obj, _KNOWN_KEYS["server"], path)
        servers.append(Server(
            id=_want(obj, "id", str, path),
            rack_id=_want(obj, "rack_id", str, path),
            inlet_face=_parse_face(obj, "inlet_face", path),
            outlet_face=_parse_face(obj, "outlet_face", path),
            power_w=_want(obj, "power_w", float, path),
            flow_m3s=_want(obj, "flow_m3s", float, path),
        ))

    acus = []
    for i, obj in enumerate(_want(raw, "acus", list, "$")):
        path = f"acus[{i}]"
        _warn_unknown(obj, _KNOWN_KEYS["acu"], path)
        acus.append(Acu(
            id=_want(obj, "id", str, path),
            supply_face=_parse_face(obj, "supply_face", path),
            return_face=_parse_face(obj, "return_face", path),
            supply_temp_c=_want(obj, "supply_temp_c", float, path),
            flow_m3s=_want(obj, "flow_m3s", float, path),
        ))

    walls = tuple(_parse_box(obj, f"containment_walls[{i}]")
                  for i, obj in enumerate(raw.get("containment_walls", [])))
    aisles = tuple(_parse_box(obj, f"hot_aisles[{i}]")
                   for i, obj in enumerate(raw.get("hot_aisles", [])))

    return Scene(
        hall_dims=hall_dims,
        racks=tuple(racks),
        servers=tuple(servers),
        acus=tuple(acus),
        containment_walls=walls,
        hot_aisles=aisles,
        name=raw.get("name", "") if isinstance(raw.get("name", ""), str) else "",
    )


# ---------------------------------------------------------------------------
# serialization and hashing

def _box_obj(box):
    return {"lo": list(box.lo), "hi": list(box.hi)}


def _face_obj(face):
    return {"lo": list(face.rect.lo), "hi": list(face.rect.hi),
            "normal": list(face.normal)}


def scene_to_obj(scene):
    obj = {
        "format_version": SCENE_FORMAT_VERSION,
        "hall_dims": list(scene.hall_dims),
        "racks": [{"id": r.id, **_box_obj(r.box)} for r in scene.racks],
        "servers": [{
            "id": s.id, "rack_id": s.rack_id,
            "inlet_face": _face_obj(s.inlet_face),
            "outlet_face": _face_obj(s.outlet_face),
            "power_w": s.power_w, "flow_m3s": s.flow_m3s,
        } for s in scene.servers],
        "acus": [{
            "id": a.id,
            "supply_face": _face_obj(a.supply_face),
            "return_face": _face_obj(a.return_face),
            "supply_temp_c": a.supply_temp_c, "flow_m3s": a.flow_m3s,
        } for a in scene.acus],
        "containment_walls": [_box_obj(b) for b in scene.containment_walls],
        "hot_aisles": [_box_obj(b) for b in scene.hot_aisles],
    }
    if scene.name:
        obj["name"] = scene.name
    return obj


def serialize_scene(scene):
    """Full-precision JSON; parse(serialize(scene)) == scene."""
    return json.dumps(scene_to_obj(scene), sort_keys=True, indent=2)


def _canon(value):
    if isinstance(value, float):
        return float(format(value, ".9g"))
    if isinstance(value, dict):
        return {k: _canon(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_canon(v) for v in value]
    return value


def scene_hash(scene):
    """sha256 of the canonical serialization (sorted keys, 9 significant
    digits), independent of input key order."""
    canonical = json.dumps(_canon(scene_to_obj(scene)), sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# validation

def _face_in_hall(face, hall, tol=1e-9):
    return (all(face.rect.lo[a] >= -tol for a in range(3))
            and all(face.rect.hi[a] <= hall[a] + tol for a in range(3)))


def _rect_on_rack_face(face, rack_box, tol=1e-6):
    axis = face.axis
    if axis is None:
        return False
    plane = face.plane
    on_lo = abs(plane - rack_box.lo[axis]) <= tol and face.normal[axis] < 0
    on_hi = abs(plane - rack_box.hi[axis]) <= tol and face.normal[axis] > 0
    return on_lo or on_hi


def validate_scene(scene):
    """Check every invariant; the report lists all violations, not just the
    first."""
    rep = ValidationReport()
    hall = scene.hall_dims

    if any(d <= 0 for d in hall):
        rep.add_error("E_GEOMETRY", f"hall_dims must be strictly positive, got {hall}")

    hall_box = Box((0.0, 0.0, 0.0), hall)
    racks = {r.id: r for r in scene.racks}

    for r in scene.racks:
        if any(r.box.hi[a] <= r.box.lo[a] for a in range(3)):
            rep.add_error("E_GEOMETRY", "rack box has non-positive extent", r.id)
        if not (hall_box.contains_point(r.box.lo, 1e-9) and hall_box.contains_point(r.box.hi, 1e-9)):
            rep.add_error("E_GEOMETRY", "rack outside hall box", r.id)

    rack_list = list(scene.racks)
    for i in range(len(rack_list)):
        for j in range(i + 1, len(rack_list)):
            if rack_list[i].box.overlaps_xy(rack_list[j].box):
                rep.add_error("E_OVERLAP",
                              f"rack footprints overlap: {rack_list[i].id} and {rack_list[j].id}",
                              rack_list[i].id)

    for s in scene.servers:
        if s.power_w < 0:
            rep.add_error("E_VALUE", f"power_w must be >= 0, got {s.power_w}", s.id)
        if s.flow_m3s <= 0:
            rep.add_error("E_VALUE", f"flow_m3s must be > 0, got {s.flow_m3s}", s.id)
        rack = racks.get(s.rack_id)
        if rack is None:
            rep.add_error("E_REF", f"server references unknown rack {s.rack_id!r}", s.id)
        for name, face in (("inlet", s.inlet_face), ("outlet", s.outlet_face)):
            if face.rect.degenerate_axis() is None or face.axis is None:
                rep.add_error("E_GEOMETRY", f"{name} face is not an axis-aligned rectangle", s.id)
                continue
            if face.rect.degenerate_axis() != face.axis:
                rep.add_error("E_GEOMETRY", f"{name} face normal not perpendicular to rectangle", s.id)
            if not _face_in_hall(face, hall):
                rep.add_error("E_GEOMETRY", f"{name} face outside hall box", s.id)
            if rack is not None and not _rect_on_rack_face(face, rack.box):
                rep.add_error("E_FACES", f"{name} face does not lie on a face of rack {s.rack_id}", s.id)
        if (s.inlet_face.axis is not None and s.inlet_face.axis == s.outlet_face.axis
                and s.inlet_face.normal == s.outlet_face.normal):
            rep.add_error("E_FACES", "inlet and outlet faces must be on opposite rack faces", s.id)

    for a in scene.acus:
        if a.flow_m3s <= 0:
            rep.add_error("E_VALUE", f"flow_m3s must be > 0, got {a.flow_m3s}", a.id)
        for name, face in (("supply", a.supply_face), ("return", a.return_face)):
            if face.rect.degenerate_axis() is None or face.axis is None:
                rep.add_error("E_GEOMETRY", f"{name} face is not an axis-aligned rectangle", a.id)
                continue
            if not _face_in_hall(face, hall):
                rep.add_error("E_GEOMETRY", f"{name} face outside hall box", a.id)
        sup, ret = a.supply_face.rect, a.return_face.rect
        same_plane = (a.supply_face.axis == a.return_face.axis
                      and abs(a.supply_face.plane - a.return_face.plane) < 1e-9)
        if same_plane:
            overlap = all(sup.lo[ax] < ret.hi[ax] and ret.lo[ax] < sup.hi[ax]
                          for ax in range(3) if ax != a.supply_face.axis)
            if overlap:
                rep.add_error("E_FACES", "supply and return faces overlap", a.id)

    for i, wall in enumerate(scene.containment_walls):
        if wall.degenerate_axis() is None:
            rep.add_error("E_GEOMETRY", "containment wall must be a rectangle "
                          "(degenerate in exactly one axis)", f"containment_walls[{i}]")

    return rep


# ---------------------------------------------------------------------------
# built-in demo hall

_RACK_W = 1.0   # along x
_RACK_D = 1.0   # along y
_RACK_H = 2.0
_SLOT_H = 0.25  # server slot height; 8 slots fill a rack
_ROW_X0 = 7.5
_RACKS_PER_ROW = 15

# (rack y-lo, cold-side normal)  cold side faces away from the contained aisle
_ROWS = (
    (4.0, -1.0),   # row 0: cold at y=4.0, hot at y=5.0
    (6.5, +1.0),   # row 1: hot at y=6.5, cold at y=7.5
    (12.5, -1.0),  # row 2: cold at y=12.5, hot at y=13.5
    (15.0, +1.0),  # row 3: hot at y=15.0, cold at y=16.0
)

_HOT_AISLES = (
    Box((7.5, 5.0, 0.0), (22.5, 6.5, 4.0)),
    Box((7.5, 13.5, 0.0), (22.5, 15.0, 4.0)),
)

# Per-rack server counts, 3-8 each, 340 total. Dense outer rows / sparse
# inner rows make each cold zone's nominal airflow demand match its two
# supply units (the middle zone feeds two rows, the outer zones one each).
_OUTER_ROW_COUNTS = (8, 7, 8, 7, 8, 7, 8, 7, 8, 7, 8, 7, 8, 7, 8)   # 113
_INNER_ROW_COUNTS = (4, 4, 3, 4, 4, 4, 4, 3, 4, 4, 4, 4, 3, 4, 4)   # 57


def _demo_server_counts():
    rows = (_OUTER_ROW_COUNTS, _INNER_ROW_COUNTS, _INNER_ROW_COUNTS, _OUTER_ROW_COUNTS)
    return [c for row in rows for c in row]


def builtin_demo_scene():
    """Desk-scale four-row hall: 30 x 20 x 4 m (600 m^2 floor), 60 racks,
    340 servers, 6 perimeter ACUs, two contained hot aisles."""
    racks = []
    servers = []
    counts = _demo_server_counts()
    default_power = 1000.0
    default_flow = server_flow_from_power(default_power)

    rack_idx = 0
    for row, (y0, cold_dir) in enumerate(_ROWS):
        for col in range(_RACKS_PER_ROW):
            x0 = _ROW_X0 + col * _RACK_W
            box = Box((x0, y0, 0.0), (x0 + _RACK_W, y0 + _RACK_D, _RACK_H))
            rack = Rack(id=f"R{rack_idx:02d}", box=box)
            racks.append(rack)

            cold_y = y0 if cold_dir < 0 else y0 + _RACK_D
            hot_y = y0 + _RACK_D if cold_dir < 0 else y0
            for slot in range(counts[rack_idx]):
                z0 = slot * _SLOT_H
                inlet = Face(
                    rect=Box((x0, cold_y, z0), (x0 + _RACK_W, cold_y, z0 + _SLOT_H)),
                    normal=(0.0, cold_dir, 0.0))
                outlet = Face(
                    rect=Box((x0, hot_y, z0), (x0 + _RACK_W, hot_y, z0 + _SLOT_H)),
                    normal=(0.0, -cold_dir, 0.0))
                servers.append(Server(
                    id=f"S{len(servers):03d}", rack_id=rack.id,
                    inlet_face=inlet, outlet_face=outlet,
                    power_w=default_power, flow_m3s=default_flow))
            rack_idx += 1

    # Perimeter units supply low on the west/east walls; returns are ducted
    # overhead and draw from the ceiling directly above the contained aisles,
    # three tiles per aisle.
    acus = []
    zones = ((1.0, 3.0), (9.0, 11.0), (17.0, 19.0))
    ret_tiles = ((7.5, 12.5), (12.5, 17.5), (17.5, 22.5))
    for side, (x, nx) in enumerate(((0.0, +1.0), (30.0, -1.0))):
        aisle = _HOT_AISLES[side]
        for zi, (ylo, yhi) in enumerate(zones):
            supply = Face(rect=Box((x, ylo, 0.5), (x, yhi, 1.5)), normal=(nx, 0.0, 0.0))
            rx0, rx1 = ret_tiles[zi]
            ret = Face(rect=Box((rx0, aisle.lo[1], 4.0), (rx1, aisle.hi[1], 4.0)),
                       normal=(0.0, 0.0, -1.0))
            acus.append(Acu(
                id=f"ACU{side * 3 + zi}", supply_face=supply, return_face=ret,
                supply_temp_c=21.0, flow_m3s=4.0))

    # Aisle side walls seal to the ceiling (ducted return above); end caps
    # stop at 3.5 m leaving a spill window so the aisle is never airtight
    # when server flow exceeds the return draw.
    walls = []
    for aisle in _HOT_AISLES:
        ylo, yhi = aisle.lo[1], aisle.hi[1]
        walls.append(Box((7.5, ylo, 0.0), (7.5, yhi, 3.5)))
        walls.append(Box((22.5, ylo, 0.0), (22.5, yhi, 3.5)))
        walls.append(Box((7.5, ylo, _RACK_H), (22.5, ylo, 4.0)))
        walls.append(Box((7.5, yhi, _RACK_H), (22.5, yhi, 4.0)))

    return Scene(
        hall_dims=(30.0, 20.0, 4.0),
        racks=tuple(racks),
        servers=tuple(servers),
        acus=tuple(acus),
        containment_walls=tuple(walls),
        hot_aisles=_HOT_AISLES,
        name="demo-hall-600m2",
    )
