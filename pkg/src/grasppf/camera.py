"""Pinhole depth camera: rendering, pixel(i,j) <-> world mappings, view rotation.

Conventions used throughout:
  - pixels are addressed (i, j) = (row, column); the ray for pixel (i, j)
    passes through the pixel center at image coordinates u = j, v = i
  - depth is z-depth (distance along the optical axis), not ray length;
    0 marks a miss
  - object_id: -1 background, -2 table, >= 0 scene object ids
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from . import _world
from .geom import Pose3
from .scene import Scene


class MissPixel(ValueError):
    """Raised when a pixel with no depth sample is dereferenced."""


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; exactly six numbers."""

    width: int = 128
    height: int = 128
    fx: float = 120.0
    fy: float = 120.0
    cx: float = 64.0
    cy: float = 64.0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError("focal lengths must be positive")
        if not (0.0 < self.cx < self.width):
            raise ValueError("cx must lie inside the image")
        if not (0.0 < self.cy < self.height):
            raise ValueError("cy must lie inside the image")


DEFAULT_INTRINSICS = Intrinsics()


def pixel_round(x: float) -> int:
    """Nearest pixel index with half-up rounding (platform independent)."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True, eq=False)
class Observation:
    """One depth + object-id frame with the pose it was taken from."""

    cam_pose: Pose3
    intrinsics: Intrinsics
    depth: NDArray[np.float64]
    object_id: NDArray[np.int32]
    time_step: int = 0

    def __post_init__(self) -> None:
        d = np.ascontiguousarray(np.asarray(self.depth, dtype=np.float64))
        o = np.ascontiguousarray(np.asarray(self.object_id, dtype=np.int32))
        shape = (self.intrinsics.height, self.intrinsics.width)
        if d.shape != shape or o.shape != shape:
            raise ValueError(
                f"image shape {d.shape}/{o.shape} does not match intrinsics {shape}"
            )
        if d.size and float(d.min()) < 0.0:
            raise ValueError("depth must be >= 0 everywhere")
        d.flags.writeable = False
        o.flags.writeable = False
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "object_id", o)


def render(
    scene: Scene,
    cam_pose: Pose3,
    intr: Intrinsics = DEFAULT_INTRINSICS,
    *,
    resolution: int = 32,
    noise_sigma: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    time_step: int = 0,
) -> Observation:
    """Ray-cast the scene through every pixel center.

    depth[i, j] is the z-depth to the nearest surface (objects or the table
    plane clipped at a 2 m horizontal radius from the world origin), or 0 on
    miss. Optional i.i.d. Gaussian depth noise is applied to hit pixels only.
    """
    world = _world.compile_world(scene, resolution)
    h, w = intr.height, intr.width
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dirs_cam = np.empty((h * w, 3), np.float64)
    dirs_cam[:, 0] = ((jj - intr.cx) / intr.fx).ravel()
    dirs_cam[:, 1] = ((ii - intr.cy) / intr.fy).ravel()
    dirs_cam[:, 2] = 1.0
    # camera-frame z component stays 1, so the ray parameter is the z-depth
    dirs_world = np.ascontiguousarray(dirs_cam @ cam_pose.rotation.T)
    origin = cam_pose.translation
    depth, oid = _world.render_rays(world, origin, dirs_world)
    depth = depth.reshape(h, w)
    oid = oid.reshape(h, w)
    if noise_sigma > 0.0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng")
        hit = oid != -1
        noisy = depth + rng.normal(0.0, noise_sigma, depth.shape)
        depth = np.where(hit, np.maximum(noisy, 1e-6), 0.0)
    return Observation(cam_pose, intr, depth, oid, time_step)


def back_project(obs: Observation, pixel: tuple[int, int]) -> NDArray[np.float64]:
    """World-frame surface point for a hit pixel (i, j)."""
    i, j = int(pixel[0]), int(pixel[1])
    intr = obs.intrinsics
    if not (0 <= i < intr.height and 0 <= j < intr.width):
        raise MissPixel(f"pixel ({i}, {j}) outside the image")
    z = float(obs.depth[i, j])
    if z <= 0.0:
        raise MissPixel(f"pixel ({i}, {j}) has no depth sample")
    cam = np.array(
        [(j - intr.cx) / intr.fx * z, (i - intr.cy) / intr.fy * z, z]
    )
    return obs.cam_pose.rotation @ cam + obs.cam_pose.translation


def back_project_pixels(
    obs: Observation, si: NDArray, sj: NDArray
) -> NDArray[np.float64]:
    """Vectorized back_project for index arrays; no validity checks."""
    intr = obs.intrinsics
    z = obs.depth[si, sj]
    cam = np.empty((len(z), 3), np.float64)
    cam[:, 0] = (sj - intr.cx) / intr.fx * z
    cam[:, 1] = (si - intr.cy) / intr.fy * z
    cam[:, 2] = z
    return cam @ obs.cam_pose.rotation.T + obs.cam_pose.translation


def project(
    obs: Observation, point_world: NDArray
) -> Optional[tuple[float, float, float]]:
    """Pinhole projection to (i, j, z_depth); None when at/behind the camera."""
    q = obs.cam_pose.rotation.T @ (np.asarray(point_world, np.float64)
                                   - obs.cam_pose.translation)
    z = float(q[2])
    if z <= 1e-6:
        return None
    intr = obs.intrinsics
    u = intr.fx * q[0] / z + intr.cx
    v = intr.fy * q[1] / z + intr.cy
    return (float(v), float(u), z)


@dataclass(frozen=True, eq=False)
class RotatedView:
    """Nearest-neighbor rotation of an observation about the principal point.

    pixel_map[i, j] holds the source (i, j) each rotated pixel was copied
    from, or (-1, -1) when the source fell outside the image. Because the
    lookup is nearest-neighbor, every valid rotated depth value exists
    verbatim in the source image.
    """

    source: Observation
    alpha: float
    depth_rot: NDArray[np.float64]
    object_id_rot: NDArray[np.int32]
    pixel_map: NDArray[np.int32]  # (H, W, 2)
    valid: NDArray[np.bool_] = field(repr=False)

    def source_pixel(self, i: int, j: int) -> Optional[tuple[int, int]]:
        if not self.valid[i, j]:
            return None
        return int(self.pixel_map[i, j, 0]), int(self.pixel_map[i, j, 1])

    def rotated_pixel(self, si: int, sj: int) -> Optional[tuple[int, int]]:
        """Inverse lookup: the rotated pixel that reads source (si, sj).

        Nearest-neighbor rounding is not exactly invertible, so the float
        inverse rotation is tried first and then its 3x3 neighborhood, in a
        fixed order; None when no rotated pixel maps back to (si, sj).
        """
        intr = self.source.intrinsics
        ca = math.cos(self.alpha)
        sa = math.sin(self.alpha)
        x = sj - intr.cx
        y = si - intr.cy
        # inverse of the +alpha source lookup
        rj = ca * x + sa * y + intr.cx
        ri = -sa * x + ca * y + intr.cy
        ci = pixel_round(ri)
        cj = pixel_round(rj)
        h, w = self.depth_rot.shape
        for di in (0, -1, 1):
            for dj in (0, -1, 1):
                i, j = ci + di, cj + dj
                if 0 <= i < h and 0 <= j < w and self.valid[i, j]:
                    if (self.pixel_map[i, j, 0] == si
                            and self.pixel_map[i, j, 1] == sj):
                        return (i, j)
        return None


def rotate_view(obs: Observation, alpha: float) -> RotatedView:
    """Rotate the image grid by +alpha about the principal point.

    depth_rot[i, j] = depth at round(Rot(+alpha) applied to (i, j)); the
    rotation acts on (u, v) = (j - cx, i - cy) plane coordinates.
    """
    intr = obs.intrinsics
    h, w = intr.height, intr.width
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    x = jj - intr.cx
    y = ii - intr.cy
    ca = math.cos(alpha)
    sa = math.sin(alpha)
    sx = ca * x - sa * y + intr.cx
    sy = sa * x + ca * y + intr.cy
    sj = np.floor(sx + 0.5).astype(np.int64)
    si = np.floor(sy + 0.5).astype(np.int64)
    valid = (si >= 0) & (si < h) & (sj >= 0) & (sj < w)
    si_c = np.where(valid, si, 0)
    sj_c = np.where(valid, sj, 0)
    depth_rot = np.where(valid, obs.depth[si_c, sj_c], 0.0)
    oid_rot = np.where(valid, obs.object_id[si_c, sj_c], np.int32(-1))
    pixel_map = np.stack(
        [np.where(valid, si, -1), np.where(valid, sj, -1)], axis=-1
    ).astype(np.int32)
    depth_rot.flags.writeable = False
    oid_rot = np.ascontiguousarray(oid_rot, dtype=np.int32)
    oid_rot.flags.writeable = False
    pixel_map.flags.writeable = False
    valid.flags.writeable = False
    return RotatedView(obs, float(alpha), depth_rot, oid_rot, pixel_map, valid)
