"""Analytic directional grasp quality: gripper model, collision masks,
3-level force closure, pixel-wise quality maps and per-grasp evaluation.

Gripper frame convention: the grasp pose's z axis is the approach axis and
points into the scene; fingertips sit at z = 0 with fingers spanning
z in [-finger_length, 0]; the closing axis is x, with inner pad faces at
x = +/- width/2. The palm sits behind the fingers along -z and its extent
does not depend on the opening width.

Quality levels grade force closure by required friction: level k holds when
both contact normals lie within angle atan(mu_k) of the closing line, with
mu = 0.8, 0.4, 0.2 for levels 1, 2, 3 (level 3 is the strictest grade).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional, Union

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import gaussian_filter

from . import _world
from .camera import Observation, back_project_pixels, pixel_round, project, rotate_view
from .geom import EulerZXY, Pose3, check_rotation, euler_zxy_compose
from .scene import Scene

MU_LEVELS = (0.8, 0.4, 0.2)
BLUR_TRUNCATE = 3.0


class FrameMismatch(ValueError):
    """Observation and scene snapshot disagree on the time step."""


@dataclass(frozen=True)
class GripperModel:
    """Simplified two-finger gripper: two finger boxes and a palm box."""

    width_bins: tuple[float, float] = (0.04, 0.08)
    finger_thickness: float = 0.01
    finger_depth: float = 0.02
    finger_length: float = 0.04
    palm_size: tuple[float, float, float] = (0.10, 0.03, 0.02)
    finger_stroke: float = 0.08
    depth_range: tuple[float, float] = (0.005, 0.035)
    pad_grid: int = 5

    def __post_init__(self) -> None:
        w0, w1 = self.width_bins
        if not (0.0 < w0 < w1):
            raise ValueError("width_bins must be strictly increasing and > 0")
        dims = (self.finger_thickness, self.finger_depth, self.finger_length,
                *self.palm_size, self.finger_stroke)
        if any(not (d > 0.0) for d in dims):
            raise ValueError("all gripper dimensions must be > 0")
        if not self.depth_range[0] < self.depth_range[1]:
            raise ValueError("depth_range must satisfy d_min < d_max")
        if self.pad_grid < 5:
            raise ValueError("pad_grid must be >= 5")


DEFAULT_GRIPPER = GripperModel()


@lru_cache(maxsize=16)
def _packed(gripper: GripperModel):
    grip = np.array(
        [
            gripper.finger_thickness,
            gripper.finger_depth,
            gripper.finger_length,
            gripper.palm_size[0],
            gripper.palm_size[1],
            gripper.palm_size[2],
            gripper.finger_stroke,
            gripper.width_bins[0],
            gripper.width_bins[1],
        ],
        np.float64,
    )
    cos_mu = np.array([1.0 / math.sqrt(1.0 + mu * mu) for mu in MU_LEVELS])
    grip.flags.writeable = False
    cos_mu.flags.writeable = False
    return grip, cos_mu


@dataclass(frozen=True, eq=False)
class GraspConfig:
    """Grasp state: surface point, rotation, approach depth, width bin."""

    p: NDArray[np.float64]
    r: NDArray[np.float64]
    d: float
    w_bin: int

    def __post_init__(self) -> None:
        p = np.array(self.p, dtype=np.float64)
        if p.shape != (3,) or not np.isfinite(p).all():
            raise ValueError("p must be a finite 3-vector")
        r = check_rotation(np.asarray(self.r, dtype=np.float64))
        if not math.isfinite(self.d):
            raise ValueError("d must be finite")
        if self.w_bin not in (0, 1):
            raise ValueError("w_bin must be 0 or 1")
        p.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "d", float(self.d))
        object.__setattr__(self, "w_bin", int(self.w_bin))


class QualityValue(NamedTuple):
    """Grasp quality per width bin, each in [0, 1]."""

    narrow: float
    wide: float


def grasp_pose(g: GraspConfig) -> Pose3:
    """Executed pose: the surface point pushed depth d along the approach z."""
    return Pose3(g.r, g.p + g.d * g.r[:, 2])


def grasp_rotation(cam_rotation: NDArray, e: EulerZXY) -> NDArray[np.float64]:
    """World-frame grasp rotation for Euler angles given in the camera frame.

    Shared by the map path and tests so both sides build bitwise-identical
    matrices."""
    return cam_rotation @ euler_zxy_compose(e)


def success_probability(q_v: float, q_mc: float, q_mo: float) -> float:
    """Chain-rule product of the three conditional success factors."""
    for name, val in (("q_v", q_v), ("q_mc", q_mc), ("q_mo", q_mo)):
        if not (0.0 <= val <= 1.0):
            raise ValueError(f"{name} must be in [0, 1], got {val}")
    return q_v * q_mc * q_mo


def combine_channels(
    q1: float, q2: float, q3: float, cf: tuple[float, float], mask: float
) -> QualityValue:
    """Per-bin quality from the 6 channel values at one pixel/grasp.

    This is the single arithmetic path shared by the pixel maps and
    evaluate_grasp, so the two agree exactly on identical channel inputs."""
    q_mean = (q1 + q2 + q3) / 3.0
    return QualityValue(
        success_probability(q_mean, cf[0], mask),
        success_probability(q_mean, cf[1], mask),
    )


@dataclass(frozen=True, eq=False)
class SceneOracle:
    """Ground-truth handle pairing a scene snapshot with gripper and step.

    time_step = None disables frame checking (ad-hoc queries); when set, map
    and grasp evaluation raise FrameMismatch on observations from any other
    step, which guards against scoring against a stale world after an event.
    """

    scene: Scene
    gripper: GripperModel = DEFAULT_GRIPPER
    time_step: Optional[int] = None
    resolution: int = 32

    @property
    def world(self) -> _world.World:
        return _world.compile_world(self.scene, self.resolution)

    def check_frame(self, obs: Observation) -> None:
        if self.time_step is not None and obs.time_step != self.time_step:
            raise FrameMismatch(
                f"observation is from step {obs.time_step}, oracle snapshot "
                f"is step {self.time_step}"
            )

    def with_scene(self, scene: Scene, time_step: Optional[int]) -> "SceneOracle":
        return SceneOracle(scene, self.gripper, time_step, self.resolution)


SceneLike = Union[Scene, SceneOracle]


def _resolve(scene: SceneLike, gripper: Optional[GripperModel],
             resolution: int) -> SceneOracle:
    if isinstance(scene, SceneOracle):
        if gripper is not None and gripper != scene.gripper:
            return SceneOracle(scene.scene, gripper, scene.time_step,
                               scene.resolution)
        return scene
    return SceneOracle(scene, gripper or DEFAULT_GRIPPER, None, resolution)


def collision_free(scene: SceneLike, pose: Pose3, w_bin: int,
                   gripper: Optional[GripperModel] = None,
                   *, resolution: int = 32) -> bool:
    """True iff fingers at width_bins[w_bin] plus palm clear objects and table."""
    oracle = _resolve(scene, gripper, resolution)
    grip, _ = _packed(oracle.gripper)
    width = oracle.gripper.width_bins[int(w_bin)]
    return _world.collision_free_at(
        oracle.world, pose.rotation, pose.translation, grip, width
    )


def force_closure_level(scene: SceneLike, pose: Pose3, w_bin: int,
                        gripper: Optional[GripperModel] = None,
                        *, resolution: int = 32) -> int:
    """Quality level in {0..3} closing the fingers from width_bins[w_bin]."""
    oracle = _resolve(scene, gripper, resolution)
    grip, cos_mu = _packed(oracle.gripper)
    width = oracle.gripper.width_bins[int(w_bin)]
    return _world.closure_level_at(
        oracle.world, pose.rotation, pose.translation, grip, cos_mu,
        oracle.gripper.pad_grid, width,
    )


@dataclass(frozen=True, eq=False)
class QualityMaps:
    """Pixel-wise 6-channel directional quality for one (alpha,beta,gamma,d).

    Channels live on the rotated pixel grid (the view rotated by -alpha).
    Invalid / miss pixels hold zeros in every channel.
    """

    q_level: NDArray[np.float64]  # (3, H, W), binary-valued
    object_mask: NDArray[np.float64]  # (H, W)
    collision_free: NDArray[np.float64]  # (2, H, W)
    alpha: float
    beta: float
    gamma: float
    d: float
    view: "object"  # RotatedView; kept for pixel recovery

    def __post_init__(self) -> None:
        for arr in (self.q_level, self.object_mask, self.collision_free):
            arr.flags.writeable = False


def directional_quality_maps(
    obs: Observation,
    scene: SceneLike,
    e: EulerZXY,
    d: float,
    gripper: Optional[GripperModel] = None,
    *,
    resolution: int = 32,
) -> QualityMaps:
    """Evaluate the 6 channels at every valid pixel of the -alpha rotated view.

    Every valid rotated pixel recovers its surface point through pixel_map +
    back-projection and is scored as the grasp
    (p, cam_rotation * Rz(alpha) * Rx(beta) * Ry(gamma), d, per-width rule).
    """
    oracle = _resolve(scene, gripper, resolution)
    oracle.check_frame(obs)
    grip, cos_mu = _packed(oracle.gripper)
    view = rotate_view(obs, -e.alpha)
    r_g = grasp_rotation(obs.cam_pose.rotation, e)
    h, w = view.depth_rot.shape
    valid = view.valid & (view.depth_rot > 0.0)
    q_level = np.zeros((3, h, w), np.float64)
    object_mask = np.zeros((h, w), np.float64)
    cf = np.zeros((2, h, w), np.float64)
    if valid.any():
        si = view.pixel_map[:, :, 0][valid]
        sj = view.pixel_map[:, :, 1][valid]
        pts = back_project_pixels(obs, si, sj)
        level, cf0, cf1 = _world.channels_points(
            oracle.world, pts, r_g, d, grip, cos_mu, oracle.gripper.pad_grid
        )
        for k in range(3):
            q_level[k][valid] = (level >= k + 1).astype(np.float64)
        object_mask[valid] = (view.object_id_rot[valid] >= 0).astype(np.float64)
        cf[0][valid] = cf0.astype(np.float64)
        cf[1][valid] = cf1.astype(np.float64)
    return QualityMaps(q_level, object_mask, cf, float(e.alpha), float(e.beta),
                       float(e.gamma), float(d), view)


def map_quality(maps: QualityMaps) -> NDArray[np.float64]:
    """Raw (unblurred) per-bin quality image, (2, H, W).

    Elementwise identical to combine_channels at every pixel."""
    q_mean = (maps.q_level[0] + maps.q_level[1] + maps.q_level[2]) / 3.0
    return np.stack(
        [q_mean * maps.collision_free[0] * maps.object_mask,
         q_mean * maps.collision_free[1] * maps.object_mask]
    )


def continuous_quality(maps: QualityMaps, blur_sigma_px: float) -> NDArray[np.float64]:
    """Per-bin continuous quality: channel product, then Gaussian blur.

    sigma = 0 is the identity; the blur kernel is truncated at 3 sigma and
    normalized, so a constant image maps to itself and an isolated pixel
    spreads mass summing to at most 1.
    """
    if blur_sigma_px < 0.0:
        raise ValueError("blur_sigma_px must be >= 0")
    raw = map_quality(maps)
    if blur_sigma_px == 0.0:
        return np.clip(raw, 0.0, 1.0)
    out = np.empty_like(raw)
    for w in range(2):
        out[w] = gaussian_filter(raw[w], blur_sigma_px, mode="reflect",
                                 truncate=BLUR_TRUNCATE)
    return np.clip(out, 0.0, 1.0)


def _on_object(obs: Observation, p: NDArray) -> float:
    """1.0 when p projects onto a pixel showing an object, else 0.0."""
    proj = project(obs, p)
    if proj is None:
        return 0.0
    i = pixel_round(proj[0])
    j = pixel_round(proj[1])
    if not (0 <= i < obs.intrinsics.height and 0 <= j < obs.intrinsics.width):
        return 0.0
    return 1.0 if obs.object_id[i, j] >= 0 else 0.0


def evaluate_grasp(
    scene: SceneLike,
    obs: Observation,
    g: GraspConfig,
    gripper: Optional[GripperModel] = None,
    *,
    resolution: int = 32,
) -> QualityValue:
    """Per-grasp quality, bypassing the pixel maps.

    Same channel arithmetic as the maps: force-closure level at the first
    collision-free bin, per-bin collision flags, and an on-object indicator
    read from the observation at the grasp point's pixel.
    """
    oracle = _resolve(scene, gripper, resolution)
    oracle.check_frame(obs)
    grip, cos_mu = _packed(oracle.gripper)
    level, cf0, cf1 = _world.channels_grasps(
        oracle.world,
        g.p[None, :],
        g.r[None, :, :],
        np.array([g.d]),
        grip,
        cos_mu,
        oracle.gripper.pad_grid,
    )
    lv = int(level[0])
    q1 = 1.0 if lv >= 1 else 0.0
    q2 = 1.0 if lv >= 2 else 0.0
    q3 = 1.0 if lv >= 3 else 0.0
    return combine_channels(
        q1, q2, q3, (float(cf0[0]), float(cf1[0])), _on_object(obs, g.p)
    )


def evaluate_grasp_batch(
    oracle: SceneOracle,
    obs: Observation,
    p: NDArray,
    r: NDArray,
    d: NDArray,
):
    """Vectorized evaluate_grasp over particle arrays.

    Returns (quality (M,2), level (M,), cf (M,2), on_object (M,)) with the
    identical elementwise arithmetic of combine_channels.
    """
    oracle.check_frame(obs)
    grip, cos_mu = _packed(oracle.gripper)
    level, cf0, cf1 = _world.channels_grasps(
        oracle.world, p, r, d, grip, cos_mu, oracle.gripper.pad_grid
    )
    m = len(level)
    intr = obs.intrinsics
    q = obs.cam_pose.rotation.T @ (np.asarray(p, np.float64)
                                   - obs.cam_pose.translation).T
    z = q[2]
    on_obj = np.zeros(m, np.float64)
    front = z > 1e-6
    if front.any():
        zf = z[front]
        i = np.floor(intr.fy * q[1, front] / zf + intr.cy + 0.5).astype(np.int64)
        j = np.floor(intr.fx * q[0, front] / zf + intr.cx + 0.5).astype(np.int64)
        inside = (i >= 0) & (i < intr.height) & (j >= 0) & (j < intr.width)
        ids = np.full(len(zf), -1, np.int64)
        ids[inside] = obs.object_id[i[inside], j[inside]]
        on_obj[front] = (ids >= 0).astype(np.float64)
    q1 = (level >= 1).astype(np.float64)
    q2 = (level >= 2).astype(np.float64)
    q3 = (level >= 3).astype(np.float64)
    q_mean = (q1 + q2 + q3) / 3.0
    quality = np.stack(
        [q_mean * cf0.astype(np.float64) * on_obj,
         q_mean * cf1.astype(np.float64) * on_obj], axis=1
    )
    cf = np.stack([cf0, cf1], axis=1).astype(np.float64)
    return quality, level.astype(np.int64), cf, on_obj
