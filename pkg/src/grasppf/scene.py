"""Ground-truth world model: table plane, posed primitive objects, timed events.

Scenes are immutable; `apply_event` returns a new scene and leaves the old one
valid (persistent updates).  The file format is UTF-8 JSON with poses given as
xyz translation plus roll-pitch-yaw angles (radians, meters); see `load_scene`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
from numpy.typing import NDArray

from .geom import Pose3, TriMesh, rot_x, rot_y, rot_z

MIN_DIMENSION = 1e-4
TABLE_SINK_TOL = 1e-6


class ParseError(ValueError):
    """Scene file does not parse; message carries field diagnostics."""


class InvariantError(ValueError):
    """Scene contents violate a declared invariant; message names it."""


class UnknownObjectError(KeyError):
    """Event references an object id not present in the scene."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned in the local frame: w along x, d along y, h along z."""

    w: float
    d: float
    h: float


@dataclass(frozen=True)
class Cylinder:
    """Axis along local z, centered at the local origin."""

    r: float
    h: float


@dataclass(frozen=True)
class Sphere:
    r: float


Shape = Union[Box, Cylinder, Sphere]


def _shape_dims(shape: Shape) -> tuple[float, ...]:
    if isinstance(shape, Box):
        return (shape.w, shape.d, shape.h)
    if isinstance(shape, Cylinder):
        return (shape.r, shape.h)
    if isinstance(shape, Sphere):
        return (shape.r,)
    raise TypeError(f"unknown shape {type(shape).__name__}")


@dataclass(frozen=True, eq=False)
class SceneObject:
    """One rigid primitive: shape + world pose + friction + unique id."""

    id: int
    shape: Shape
    pose: Pose3
    friction_mu: float
    # Original file rpy, kept so save/load round trips are byte stable.
    rpy: tuple[float, float, float] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if any(dim <= MIN_DIMENSION for dim in _shape_dims(self.shape)):
            raise InvariantError(
                f"object {self.id}: shape dimensions must exceed {MIN_DIMENSION} m"
            )
        if not 0.0 < self.friction_mu <= 2.0:
            raise InvariantError(f"object {self.id}: friction_mu must be in (0, 2]")

    def lowest_z(self) -> float:
        """World z of the shape's lowest point (support function along -z)."""
        r = self.pose.r
        z = float(self.pose.t[2])
        if isinstance(self.shape, Box):
            half = np.array([self.shape.w, self.shape.d, self.shape.h]) / 2.0
            return z - float(np.abs(r[2, :]) @ half)
        if isinstance(self.shape, Cylinder):
            axis_z = abs(float(r[2, 2]))
            radial = math.sqrt(max(0.0, 1.0 - axis_z * axis_z))
            return z - (self.shape.h / 2.0 * axis_z + self.shape.r * radial)
        return z - self.shape.r  # sphere


@dataclass(frozen=True, eq=False)
class Scene:
    """Immutable table-plus-objects world; plane z = table_height."""

    objects: tuple[SceneObject, ...]
    table_height: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise InvariantError("object ids must be unique within a scene")
        for obj in self.objects:
            if obj.lowest_z() < self.table_height - TABLE_SINK_TOL:
                raise InvariantError(
                    f"object {obj.id}: lowest point {obj.lowest_z():.6f} m sinks "
                    f"below table at {self.table_height:.6f} m"
                )

    def object_by_id(self, object_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise UnknownObjectError(object_id)


@dataclass(frozen=True)
class SceneEvent:
    """Timed perturbation: move the object to new_pose, or remove it (None)."""

    time_step: int
    object_id: int
    new_pose: Pose3 | None
    rpy: tuple[float, float, float] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.time_step < 0:
            raise InvariantError("event time_step must be >= 0")


def apply_event(scene: Scene, event: SceneEvent) -> Scene:
    """New scene with the event applied; the input scene is untouched."""
    scene.object_by_id(event.object_id)  # raises UnknownObjectError
    if event.new_pose is None:
        objects = tuple(o for o in scene.objects if o.id != event.object_id)
    else:
        objects = tuple(
            replace(o, pose=event.new_pose, rpy=event.rpy) if o.id == event.object_id else o
            for o in scene.objects
        )
    return Scene(objects, scene.table_height)


# ---------------------------------------------------------------------------
# Pose <-> xyz/rpy serialization
# ---------------------------------------------------------------------------


def rpy_to_matrix(roll: float, pitch: float, yaw: float) -> NDArray[np.float64]:
    """Extrinsic x-y-z convention: R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def matrix_to_rpy(r: NDArray[np.float64]) -> tuple[float, float, float]:
    pitch = math.asin(min(1.0, max(-1.0, -float(r[2, 0]))))
    if abs(math.cos(pitch)) < 1e-9:
        # Gimbal: fold everything into yaw.
        return (0.0, pitch, math.atan2(-float(r[0, 1]), float(r[1, 1])))
    roll = math.atan2(float(r[2, 1]), float(r[2, 2]))
    yaw = math.atan2(float(r[1, 0]), float(r[0, 0]))
    return (roll, pitch, yaw)


# ---------------------------------------------------------------------------
# Scene file I/O
# ---------------------------------------------------------------------------

_SHAPE_FIELDS = {"box": ("w", "d", "h"), "cylinder": ("r", "h"), "sphere": ("r",)}


def _parse_number(val, where: str) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ParseError(f"{where}: expected a number, got {val!r}")
    return float(val)


def _parse_pose(blob, where: str) -> tuple[Pose3, tuple[float, float, float]]:
    if not isinstance(blob, dict):
        raise ParseError(f"{where}: pose must be an object with xyz and rpy")
    for key in ("xyz", "rpy"):
        arr = blob.get(key)
        if not isinstance(arr, list) or len(arr) != 3:
            raise ParseError(f"{where}.{key}: expected a 3-element array")
    xyz = [_parse_number(v, f"{where}.xyz") for v in blob["xyz"]]
    rpy = tuple(_parse_number(v, f"{where}.rpy") for v in blob["rpy"])
    return Pose3(rpy_to_matrix(*rpy), np.array(xyz)), rpy


def _parse_shape(blob, where: str) -> Shape:
    if not isinstance(blob, dict) or "type" not in blob:
        raise ParseError(f"{where}: shape must be an object with a 'type' field")
    kind = blob["type"]
    fields = _SHAPE_FIELDS.get(kind)
    if fields is None:
        raise ParseError(f"{where}.type: unknown shape type {kind!r}")
    dims = []
    for name in fields:
        if name not in blob:
            raise ParseError(f"{where}: {kind} shape is missing field {name!r}")
        dims.append(_parse_number(blob[name], f"{where}.{name}"))
    return {"box": Box, "cylinder": Cylinder, "sphere": Sphere}[kind](*dims)


def _parse_document(text: str | bytes) -> dict:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError("top level must be a JSON object")
    return doc


def load_scene(text: str | bytes) -> Scene:
    """Parse a scene document (see module docstring for the format).

    Raises ParseError on malformed input and InvariantError when the content
    violates scene invariants (duplicate ids, sunk objects, bad friction).
    """
    doc = _parse_document(text)
    if "table_height" not in doc:
        raise ParseError("missing required field 'table_height'")
    table_height = _parse_number(doc["table_height"], "table_height")
    objects = []
    entries = doc.get("objects", [])
    if not isinstance(entries, list):
        raise ParseError("'objects' must be an array")
    for k, entry in enumerate(entries):
        where = f"objects[{k}]"
        if not isinstance(entry, dict):
            raise ParseError(f"{where}: expected an object")
        for req in ("id", "shape", "pose", "mu"):
            if req not in entry:
                raise ParseError(f"{where}: missing field {req!r}")
        if isinstance(entry["id"], bool) or not isinstance(entry["id"], int):
            raise ParseError(f"{where}.id: expected an integer")
        pose, rpy = _parse_pose(entry["pose"], f"{where}.pose")
        objects.append(
            SceneObject(
                id=entry["id"],
                shape=_parse_shape(entry["shape"], f"{where}.shape"),
                pose=pose,
                friction_mu=_parse_number(entry["mu"], f"{where}.mu"),
                rpy=rpy,
            )
        )
    return Scene(tuple(objects), table_height)


def load_events(text: str | bytes) -> tuple[SceneEvent, ...]:
    """Parse the 'events' array of a scene document (empty if absent)."""
    doc = _parse_document(text)
    entries = doc.get("events", [])
    if not isinstance(entries, list):
        raise ParseError("'events' must be an array")
    events = []
    for k, entry in enumerate(entries):
        where = f"events[{k}]"
        if not isinstance(entry, dict):
            raise ParseError(f"{where}: expected an object")
        for req in ("t", "id", "action"):
            if req not in entry:
                raise ParseError(f"{where}: missing field {req!r}")
        if isinstance(entry["t"], bool) or not isinstance(entry["t"], int) or entry["t"] < 0:
            raise ParseError(f"{where}.t: expected an integer >= 0")
        action = entry["action"]
        if action == "move":
            if "pose" not in entry:
                raise ParseError(f"{where}: move action requires a pose")
            pose, rpy = _parse_pose(entry["pose"], f"{where}.pose")
            events.append(SceneEvent(entry["t"], entry["id"], pose, rpy))
        elif action == "remove":
            events.append(SceneEvent(entry["t"], entry["id"], None))
        else:
            raise ParseError(f"{where}.action: expected 'move' or 'remove', got {action!r}")
    return tuple(events)


def _pose_blob(pose: Pose3, rpy: tuple[float, float, float] | None) -> dict:
    if rpy is None:
        rpy = matrix_to_rpy(pose.r)
    return {"xyz": [float(v) for v in pose.t], "rpy": [float(v) for v in rpy]}


def _shape_blob(shape: Shape) -> dict:
    kind = {Box: "box", Cylinder: "cylinder", Sphere: "sphere"}[type(shape)]
    blob = {"type": kind}
    for name, value in zip(_SHAPE_FIELDS[kind], _shape_dims(shape)):
        blob[name] = float(value)
    return blob


def save_scene(scene: Scene, events: tuple[SceneEvent, ...] = ()) -> str:
    """Canonical JSON text; a second save-load round trip is byte-stable."""
    doc = {
        "table_height": float(scene.table_height),
        "objects": [
            {
                "id": int(o.id),
                "shape": _shape_blob(o.shape),
                "pose": _pose_blob(o.pose, o.rpy),
                "mu": float(o.friction_mu),
            }
            for o in scene.objects
        ],
        "events": [
            (
                {"t": int(e.time_step), "id": int(e.object_id), "action": "remove"}
                if e.new_pose is None
                else {
                    "t": int(e.time_step),
                    "id": int(e.object_id),
                    "action": "move",
                    "pose": _pose_blob(e.new_pose, e.rpy),
                }
            )
            for e in events
        ],
    }
    return json.dumps(doc, indent=1) + "\n"


# ---------------------------------------------------------------------------
# Tessellation
# ---------------------------------------------------------------------------

MIN_RESOLUTION = 8

_BOX_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2],
        [4, 5, 6], [4, 6, 7],
        [0, 1, 5], [0, 5, 4],
        [2, 3, 7], [2, 7, 6],
        [1, 2, 6], [1, 6, 5],
        [0, 4, 7], [0, 7, 3],
    ],
    dtype=np.int32,
)


def _box_mesh(w: float, d: float, h: float) -> TriMesh:
    hw, hd, hh = w / 2.0, d / 2.0, h / 2.0
    verts = np.array(
        [
            [-hw, -hd, -hh], [hw, -hd, -hh], [hw, hd, -hh], [-hw, hd, -hh],
            [-hw, -hd, hh], [hw, -hd, hh], [hw, hd, hh], [-hw, hd, hh],
        ]
    )
    return TriMesh(verts, _BOX_FACES)


def _sphere_mesh(radius: float, resolution: int) -> TriMesh:
    n_lon = resolution
    n_lat = max(2, resolution // 2)
    verts = [np.array([0.0, 0.0, radius])]
    for i in range(1, n_lat):
        theta = math.pi * i / n_lat
        st, ct = math.sin(theta), math.cos(theta)
        for j in range(n_lon):
            phi = 2.0 * math.pi * j / n_lon
            verts.append(radius * np.array([st * math.cos(phi), st * math.sin(phi), ct]))
    verts.append(np.array([0.0, 0.0, -radius]))
    top, bottom = 0, len(verts) - 1

    def ring(i: int, j: int) -> int:
        return 1 + (i - 1) * n_lon + (j % n_lon)

    faces = []
    for j in range(n_lon):  # top cap fan
        faces.append([top, ring(1, j), ring(1, j + 1)])
    for i in range(1, n_lat - 1):  # latitude bands
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, e = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append([a, c, e])
            faces.append([a, e, b])
    for j in range(n_lon):  # bottom cap fan
        faces.append([bottom, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int32))


def _cylinder_mesh(radius: float, height: float, resolution: int) -> TriMesh:
    n = resolution
    hh = height / 2.0
    ring_t, ring_b = [], []
    for j in range(n):
        phi = 2.0 * math.pi * j / n
        x, y = radius * math.cos(phi), radius * math.sin(phi)
        ring_t.append([x, y, hh])
        ring_b.append([x, y, -hh])
    verts = np.array(ring_t + ring_b + [[0.0, 0.0, hh], [0.0, 0.0, -hh]])
    top_c, bot_c = 2 * n, 2 * n + 1
    faces = []
    for j in range(n):
        jn = (j + 1) % n
        t0, t1 = j, jn
        b0, b1 = n + j, n + jn
        faces.append([t0, b0, b1])  # side quad, outward winding
        faces.append([t0, b1, t1])
        faces.append([top_c, t0, t1])  # top cap fan (+z out)
        faces.append([bot_c, b1, b0])  # bottom cap fan (-z out)
    return TriMesh(verts, np.array(faces, dtype=np.int32))


def tessellate(obj: SceneObject, resolution: int = 32) -> TriMesh:
    """Watertight triangle mesh of the object's shape, in its local frame.

    resolution counts faces per full curve revolution; boxes ignore it and
    always yield exactly 12 triangles.
    """
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"resolution must be >= {MIN_RESOLUTION}")
    shape = obj.shape
    if isinstance(shape, Box):
        return _box_mesh(shape.w, shape.d, shape.h)
    if isinstance(shape, Cylinder):
        return _cylinder_mesh(shape.r, shape.h, resolution)
    if isinstance(shape, Sphere):
        return _sphere_mesh(shape.r, resolution)
    raise TypeError(f"unknown shape {type(shape).__name__}")
