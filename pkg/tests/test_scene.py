"""Scene model tests: parsing, invariants, events, and tessellation.

Mesh checks are oracle-based: surface area from the triangle cross products
and volume from the divergence theorem, both written out here rather than
taken from TriMesh so a bug in the mesh helpers cannot vouch for itself.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from grasppf.geom import Pose3, rot_x, rot_y, rot_z
from grasppf.scene import (
    Box,
    Cylinder,
    InvariantError,
    ParseError,
    Scene,
    SceneEvent,
    SceneObject,
    Sphere,
    UnknownObjectError,
    apply_event,
    load_events,
    load_scene,
    rpy_to_matrix,
    save_scene,
    tessellate,
)

SCENES = Path(__file__).resolve().parents[1] / "src" / "grasppf" / "scenes"


def make_obj(shape, xyz=(0.0, 0.0, 0.5), rpy=None, mu=0.8, oid=0):
    r = np.eye(3) if rpy is None else rpy_to_matrix(*rpy)
    return SceneObject(oid, shape, Pose3(r, np.asarray(xyz, float)), mu, rpy=rpy)


# ---------------------------------------------------------------------------
# mesh oracles


def oracle_area(mesh) -> float:
    v = mesh.vertices
    f = mesh.triangles
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return float(0.5 * np.linalg.norm(cross, axis=1).sum())


def oracle_volume(mesh) -> float:
    """Divergence theorem: V = sum det(a, b, c) / 6 over outward-wound faces."""
    v = mesh.vertices
    f = mesh.triangles
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def directed_edges(mesh):
    f = mesh.triangles
    return np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])


def assert_watertight(mesh):
    """Closed orientable surface: every directed edge has exactly one
    opposite-direction partner and no duplicates."""
    edges = directed_edges(mesh)
    keys = {(int(a), int(b)) for a, b in edges}
    assert len(keys) == len(edges), "duplicate directed edge"
    for a, b in keys:
        assert (b, a) in keys, f"unmatched edge {(a, b)}"


# ---------------------------------------------------------------------------
# tessellation


def test_box_mesh_exact():
    mesh = tessellate(make_obj(Box(0.024, 0.06, 0.04)))
    assert mesh.num_triangles == 12
    w, d, h = 0.024, 0.06, 0.04
    np.testing.assert_allclose(oracle_area(mesh), 2 * (w * d + w * h + d * h),
                               rtol=1e-12)
    np.testing.assert_allclose(oracle_volume(mesh), w * d * h, rtol=1e-12)
    assert_watertight(mesh)


def test_unit_sphere_area_within_one_percent_at_res_64():
    mesh = tessellate(make_obj(Sphere(1.0), xyz=(0, 0, 2.0)), resolution=64)
    area = oracle_area(mesh)
    exact = 4.0 * np.pi
    assert area < exact  # inscribed polyhedron
    assert abs(area - exact) / exact < 0.01
    assert_watertight(mesh)
    # every vertex sits on the sphere itself
    np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0,
                               atol=1e-9)


def test_sphere_area_within_two_percent_at_default_res():
    mesh = tessellate(make_obj(Sphere(0.03), xyz=(0, 0, 0.1)))
    exact = 4.0 * np.pi * 0.03**2
    assert abs(oracle_area(mesh) - exact) / exact < 0.02


def test_cylinder_volume_within_two_percent():
    mesh = tessellate(make_obj(Cylinder(0.03, 0.1)), resolution=32)
    exact = np.pi * 0.03**2 * 0.1
    vol = oracle_volume(mesh)
    assert vol < exact  # inscribed
    assert abs(vol - exact) / exact < 0.02
    assert_watertight(mesh)


def test_cylinder_area_within_two_percent():
    r, h = 0.04, 0.08
    mesh = tessellate(make_obj(Cylinder(r, h)), resolution=32)
    exact = 2 * np.pi * r * h + 2 * np.pi * r**2
    assert abs(oracle_area(mesh) - exact) / exact < 0.02


def test_tessellate_rejects_low_resolution():
    with pytest.raises(ValueError):
        tessellate(make_obj(Sphere(0.05), xyz=(0, 0, 0.1)), resolution=4)


def test_mesh_volume_grows_toward_analytic_with_resolution():
    obj = make_obj(Sphere(0.05), xyz=(0, 0, 0.2))
    vols = [oracle_volume(tessellate(obj, resolution=res))
            for res in (8, 16, 32, 64)]
    assert all(b > a for a, b in zip(vols, vols[1:]))
    assert vols[-1] < 4.0 / 3.0 * np.pi * 0.05**3


# ---------------------------------------------------------------------------
# construction invariants


def test_duplicate_ids_rejected():
    a = make_obj(Box(0.02, 0.02, 0.02), oid=1)
    b = make_obj(Sphere(0.01), xyz=(0.1, 0, 0.5), oid=1)
    with pytest.raises(InvariantError):
        Scene((a, b))


def test_sunk_object_rejected():
    # box centre 1 cm up but half-height 2 cm: bottom 1 cm below the table
    obj = make_obj(Box(0.02, 0.02, 0.04), xyz=(0, 0, 0.01))
    with pytest.raises(InvariantError):
        Scene((obj,))


def test_object_resting_exactly_on_table_is_fine():
    obj = make_obj(Box(0.02, 0.02, 0.04), xyz=(0, 0, 0.02))
    scene = Scene((obj,))
    assert scene.object_by_id(0) is obj


def test_friction_bounds():
    with pytest.raises(ValueError):
        make_obj(Box(0.02, 0.02, 0.02), mu=0.0)
    with pytest.raises(ValueError):
        make_obj(Box(0.02, 0.02, 0.02), mu=2.5)


def test_degenerate_dimensions_rejected():
    # shapes are plain records; the object constructor enforces sizes
    with pytest.raises(InvariantError):
        make_obj(Box(1e-5, 0.02, 0.02))
    with pytest.raises(InvariantError):
        make_obj(Sphere(0.0), xyz=(0, 0, 0.1))
    with pytest.raises(InvariantError):
        make_obj(Cylinder(0.02, -0.1), xyz=(0, 0, 0.1))


# lowest_z drives the sink check, so it gets its own analytic oracles


def test_lowest_z_rotated_box_matches_vertex_enumeration():
    rpy = (0.3, -0.5, 0.9)
    obj = make_obj(Box(0.03, 0.05, 0.08), xyz=(0.1, -0.2, 0.5), rpy=rpy)
    half = np.array([0.015, 0.025, 0.04])
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1)
                        for sz in (-1, 1)]) * half
    world = corners @ rpy_to_matrix(*rpy).T + np.array([0.1, -0.2, 0.5])
    np.testing.assert_allclose(obj.lowest_z(), world[:, 2].min(), atol=1e-12)


def test_lowest_z_sphere_and_upright_cylinder():
    s = make_obj(Sphere(0.04), xyz=(0, 0, 0.3))
    np.testing.assert_allclose(s.lowest_z(), 0.26, atol=1e-12)
    c = make_obj(Cylinder(0.02, 0.1), xyz=(0, 0, 0.3))
    np.testing.assert_allclose(c.lowest_z(), 0.25, atol=1e-12)


def test_lowest_z_sideways_cylinder_is_radius_below_centre():
    c = make_obj(Cylinder(0.02, 0.1), xyz=(0, 0, 0.3), rpy=(np.pi / 2, 0, 0))
    np.testing.assert_allclose(c.lowest_z(), 0.28, atol=1e-12)


def test_rpy_to_matrix_is_z_then_y_then_x():
    roll, pitch, yaw = 0.2, -0.4, 1.1
    expected = rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)
    np.testing.assert_allclose(rpy_to_matrix(roll, pitch, yaw), expected,
                               atol=1e-15)


# ---------------------------------------------------------------------------
# parsing and round trip


MINIMAL = """
{
  "table_height": 0.0,
  "objects": [
    {"id": 0, "shape": {"type": "box", "w": 0.02, "d": 0.03, "h": 0.04},
     "pose": {"xyz": [0.0, 0.0, 0.02], "rpy": [0.0, 0.0, 0.0]}, "mu": 0.8}
  ]
}
"""


def test_minimal_file_parses_to_one_object():
    scene = load_scene(MINIMAL)
    assert len(scene.objects) == 1
    assert isinstance(scene.objects[0].shape, Box)


def test_duplicate_ids_in_file_rejected():
    doc = json.loads(MINIMAL)
    doc["objects"].append(dict(doc["objects"][0]))
    with pytest.raises(InvariantError):
        load_scene(json.dumps(doc))


@pytest.mark.parametrize("mangle", [
    lambda d: d.update(objects=5),
    lambda d: d["objects"][0].pop("shape"),
    lambda d: d["objects"][0]["shape"].update(type="torus"),
    lambda d: d["objects"][0]["shape"].pop("h"),
])
def test_malformed_documents_raise_parse_error(mangle):
    doc = json.loads(MINIMAL)
    mangle(doc)
    with pytest.raises(ParseError):
        load_scene(json.dumps(doc))


def test_non_json_input_raises_parse_error():
    with pytest.raises(ParseError):
        load_scene("not a scene at all {{{")


def test_bundled_clutter_scene_has_12_objects_and_parses_fast():
    text = (SCENES / "bench_clutter_12.scene").read_bytes()
    load_scene(text)  # warm any caches before timing
    t0 = time.perf_counter()
    scene = load_scene(text)
    elapsed = time.perf_counter() - t0
    assert len(scene.objects) == 12
    assert elapsed < 0.010


def test_save_load_round_trip_is_byte_normalizing():
    scene = load_scene(MINIMAL)
    once = save_scene(scene)
    twice = save_scene(load_scene(once))
    assert once == twice


def test_save_load_preserves_events():
    text = (SCENES / "teleport_box.scene").read_bytes()
    scene = load_scene(text)
    events = load_events(text)
    assert len(events) == 1
    out = save_scene(scene, events=events)
    back = load_events(out)
    assert len(back) == 1
    assert back[0].time_step == events[0].time_step
    assert back[0].object_id == events[0].object_id
    np.testing.assert_allclose(back[0].new_pose.t, events[0].new_pose.t)
    np.testing.assert_allclose(back[0].new_pose.r, events[0].new_pose.r)
    assert save_scene(load_scene(out), events=back) == out


def test_all_bundled_scenes_parse():
    for path in sorted(SCENES.glob("*.scene")):
        load_scene(path.read_bytes())  # must not raise


# ---------------------------------------------------------------------------
# events


def make_two_object_scene():
    a = make_obj(Box(0.02, 0.02, 0.04), xyz=(0.0, 0.0, 0.02), oid=3)
    b = make_obj(Sphere(0.02), xyz=(0.1, 0.0, 0.02), oid=7)
    return Scene((a, b))


def test_move_event_changes_only_named_object():
    scene = make_two_object_scene()
    old_pose = scene.object_by_id(3).pose
    new_pose = Pose3(np.eye(3), np.array([0.05, 0.0, 0.02]))
    moved = apply_event(scene, SceneEvent(5, 3, new_pose))
    np.testing.assert_allclose(moved.object_by_id(3).pose.t,
                               [0.05, 0.0, 0.02])
    assert moved.object_by_id(7) is scene.object_by_id(7)
    # original untouched
    np.testing.assert_allclose(scene.object_by_id(3).pose.t, old_pose.t)


def test_remove_event_and_sole_object_removal():
    scene = make_two_object_scene()
    smaller = apply_event(scene, SceneEvent(0, 7, None))
    assert len(smaller.objects) == 1
    only = Scene((make_obj(Box(0.02, 0.02, 0.02), xyz=(0, 0, 0.01)),))
    empty = apply_event(only, SceneEvent(0, 0, None))
    assert len(empty.objects) == 0


def test_event_for_unknown_object_raises():
    scene = make_two_object_scene()
    with pytest.raises(UnknownObjectError):
        apply_event(scene, SceneEvent(0, 99, None))


def test_event_stream_replay_is_deterministic():
    base = make_two_object_scene()
    moves = [SceneEvent(t, 3, Pose3(np.eye(3), np.array([0.01 * t, 0.0, 0.02])))
             for t in range(1, 6)]

    def replay():
        s = base
        for e in moves:
            s = apply_event(s, e)
        return s

    assert save_scene(replay()) == save_scene(replay())


def test_negative_event_time_rejected():
    with pytest.raises(ValueError):
        SceneEvent(-1, 0, None)
