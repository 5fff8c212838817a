"""World compilation: scenes flattened to world-frame triangle arrays + BVH.

Compiled worlds are cached per Scene identity (scenes are immutable), so the
tessellation and BVH build run once per distinct scene regardless of how many
renders, map evaluations or particle batches consume it.
"""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from . import _kernels
from ._bvh import build_bvh
from .scene import Scene, tessellate

TABLE_CLIP_RADIUS = 2.0


class World(NamedTuple):
    v0: NDArray[np.float64]
    e1: NDArray[np.float64]
    e2: NDArray[np.float64]
    normal: NDArray[np.float64]
    obj_id: NDArray[np.int32]
    node_min: NDArray[np.float64]
    node_max: NDArray[np.float64]
    node_left: NDArray[np.int32]
    node_right: NDArray[np.int32]
    node_start: NDArray[np.int32]
    node_count: NDArray[np.int32]
    tri_order: NDArray[np.int32]
    table_height: float
    clip_radius: float

    @property
    def bvh_args(self):
        return (self.node_min, self.node_max, self.node_left, self.node_right,
                self.node_start, self.node_count, self.tri_order)


@lru_cache(maxsize=64)
def compile_world(scene: Scene, resolution: int = 32) -> World:
    v0_parts = []
    v1_parts = []
    v2_parts = []
    id_parts = []
    for obj in scene.objects:
        mesh = tessellate(obj, resolution)
        r = obj.pose.rotation
        t = obj.pose.translation
        vw = mesh.vertices @ r.T + t
        f = mesh.triangles
        v0_parts.append(vw[f[:, 0]])
        v1_parts.append(vw[f[:, 1]])
        v2_parts.append(vw[f[:, 2]])
        id_parts.append(np.full(len(f), obj.id, np.int32))
    if v0_parts:
        v0 = np.ascontiguousarray(np.concatenate(v0_parts))
        v1 = np.ascontiguousarray(np.concatenate(v1_parts))
        v2 = np.ascontiguousarray(np.concatenate(v2_parts))
        obj_id = np.concatenate(id_parts)
    else:
        v0 = np.zeros((0, 3), np.float64)
        v1 = v0
        v2 = v0
        obj_id = np.zeros(0, np.int32)
    e1 = np.ascontiguousarray(v1 - v0)
    e2 = np.ascontiguousarray(v2 - v0)
    n = np.cross(e1, e2)
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    normal = np.ascontiguousarray(n / norms)
    bvh = build_bvh(v0, v1, v2)
    return World(
        v0, e1, e2, normal, obj_id,
        bvh.node_min, bvh.node_max, bvh.node_left, bvh.node_right,
        bvh.node_start, bvh.node_count, bvh.tri_order,
        float(scene.table_height), TABLE_CLIP_RADIUS,
    )


def render_rays(world: World, origin: NDArray, dirs: NDArray):
    """Depth (ray parameter) and object id per ray; -1 miss, -2 table."""
    return _kernels._render(
        float(origin[0]), float(origin[1]), float(origin[2]),
        np.ascontiguousarray(dirs, np.float64),
        world.v0, world.e1, world.e2, world.obj_id, *world.bvh_args,
        world.table_height, world.clip_radius,
    )


def channels_points(world: World, pts: NDArray, rotation: NDArray, d: float,
                    grip: NDArray, cos_mu: NDArray, n_pad: int):
    """(level, cf_narrow, cf_wide) for surface points sharing one rotation."""
    return _kernels._channels_points(
        np.ascontiguousarray(pts, np.float64),
        np.ascontiguousarray(rotation, np.float64), float(d),
        world.v0, world.e1, world.e2, world.normal, world.obj_id,
        *world.bvh_args, world.table_height, world.clip_radius,
        grip, cos_mu, n_pad,
    )


def channels_grasps(world: World, p: NDArray, rot: NDArray, d: NDArray,
                    grip: NDArray, cos_mu: NDArray, n_pad: int):
    """(level, cf_narrow, cf_wide) for a batch with per-grasp rotations."""
    return _kernels._channels_grasps(
        np.ascontiguousarray(p, np.float64),
        np.ascontiguousarray(rot, np.float64),
        np.ascontiguousarray(d, np.float64),
        world.v0, world.e1, world.e2, world.normal, world.obj_id,
        *world.bvh_args, world.table_height, world.clip_radius,
        grip, cos_mu, n_pad,
    )


def closure_level_at(world: World, rotation: NDArray, origin: NDArray,
                     grip: NDArray, cos_mu: NDArray, n_pad: int,
                     width: float) -> int:
    """Force-closure level with the fingers closing from one given width."""
    return int(_kernels._closure_level(
        world.v0, world.e1, world.e2, world.normal, world.obj_id,
        *world.bvh_args, world.table_height, world.clip_radius,
        np.ascontiguousarray(rotation, np.float64),
        float(origin[0]), float(origin[1]), float(origin[2]),
        grip, cos_mu, n_pad, float(width),
    ))


def collision_free_at(world: World, rotation: NDArray, origin: NDArray,
                      grip: NDArray, width: float) -> bool:
    """Gripper boxes at one opening width vs table half-space and objects."""
    return bool(_kernels._collision_free_width(
        world.v0, world.e1, world.e2, *world.bvh_args,
        world.table_height,
        float(origin[0]), float(origin[1]), float(origin[2]),
        np.ascontiguousarray(rotation, np.float64), grip, float(width),
    ))


def cast_rays(world: World, origins: NDArray, dirs: NDArray, t_max: float):
    """Nearest-triangle (t, object id) per ray; misses get (1e30, -1)."""
    return _kernels._ray_batch(
        np.ascontiguousarray(origins, np.float64),
        np.ascontiguousarray(dirs, np.float64),
        world.v0, world.e1, world.e2, world.obj_id, *world.bvh_args,
        float(t_max),
    )
