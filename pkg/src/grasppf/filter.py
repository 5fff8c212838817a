"""Grasp particle filter: quality-map initialization, Gaussian transition with
fresh-candidate injection, line-of-sight surface projection, measurement
reweighting by reachability times scene quality, systematic resampling, and
hysteresis-based target selection.

All randomized operations take an explicit numpy Generator; given the same
inputs and generator state every operation is bit-reproducible. Noise is
drawn in one vectorized call per quantity (positions, rotations, depths, then
injection), so applying the pre-drawn noise per particle in parallel yields
results identical to the sequential loop.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from numpy.typing import NDArray

from .camera import Observation, back_project_pixels
from .geom import EulerZXY, so3_exp
from .gripper_quality import (
    GraspConfig,
    SceneOracle,
    continuous_quality,
    directional_quality_maps,
    evaluate_grasp_batch,
    grasp_rotation,
)
from .reach import ReachModel, reachable_arrays

TAU_FLOOR = 1e-3
DEGENERATE_TOTAL = 1e-12
MAX_POOL = 4096


class NoCandidates(RuntimeError):
    """No pixel clears the quality floor: nothing left to grasp."""


class DegenerateBelief(RuntimeError):
    """The belief carries no usable quality mass."""


@dataclass(frozen=True)
class FilterParams:
    m: int = 512
    sigma_p: float = 0.01
    sigma_rot: float = 0.1
    sigma_d: float = 0.005
    n_dirs: int = 16
    quality_threshold: float = 0.5
    fresh_fraction: float = 0.1
    alpha_bounds: tuple[float, float] = (-math.pi, math.pi)
    beta_bounds: tuple[float, float] = (-math.pi / 4, math.pi / 4)
    gamma_bounds: tuple[float, float] = (-math.pi / 4, math.pi / 4)
    # mirrors the default gripper's depth_range; override alongside a custom
    # gripper so transition clamps d to the same interval sampling uses
    d_bounds: tuple[float, float] = (0.005, 0.035)
    blur_sigma_px: float = 1.0
    yaw_only: bool = False  # force beta = gamma = 0 (top-down variant)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if min(self.sigma_p, self.sigma_rot, self.sigma_d) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not (0.0 < self.quality_threshold < 1.0):
            raise ValueError("quality_threshold must be in (0, 1)")
        if not (0.0 <= self.fresh_fraction < 1.0):
            raise ValueError("fresh_fraction must be in [0, 1)")
        if self.n_dirs < 1:
            raise ValueError("n_dirs must be >= 1")
        if self.blur_sigma_px < 0:
            raise ValueError("blur_sigma_px must be >= 0")
        for name in ("alpha_bounds", "beta_bounds", "gamma_bounds"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must satisfy lo < hi")
        if not self.d_bounds[0] < self.d_bounds[1]:
            raise ValueError("d_bounds must satisfy lo < hi")


class Particle(NamedTuple):
    g: GraspConfig
    weight: float
    quality: float


class CandidatePool(NamedTuple):
    """Init-time candidates kept for fresh-particle injection."""

    p: NDArray[np.float64]  # (K, 3)
    r: NDArray[np.float64]  # (K, 3, 3)
    d: NDArray[np.float64]  # (K,)
    w_bin: NDArray[np.int8]  # (K,)
    quality: NDArray[np.float64]  # (K,)


@dataclass(frozen=True, eq=False)
class Belief:
    """Particle approximation of the grasp posterior, stored as arrays.

    quality caches each particle's latest measurement (reachability times
    best-bin scene quality; at initialization, the blurred map value it was
    drawn from). The particles property materializes the particle view.
    """

    p: NDArray[np.float64]  # (M, 3)
    r: NDArray[np.float64]  # (M, 3, 3)
    d: NDArray[np.float64]  # (M,)
    w_bin: NDArray[np.int8]  # (M,)
    weights: NDArray[np.float64]  # (M,)
    quality: NDArray[np.float64]  # (M,)
    time_step: int = 0
    degenerate: bool = False
    pool: Optional[CandidatePool] = None

    def __post_init__(self) -> None:
        m = self.p.shape[0]
        shapes = (
            (self.p, (m, 3)), (self.r, (m, 3, 3)), (self.d, (m,)),
            (self.w_bin, (m,)), (self.weights, (m,)), (self.quality, (m,)),
        )
        for arr, want in shapes:
            if arr.shape != want:
                raise ValueError(f"belief array shape {arr.shape} != {want}")
            arr.flags.writeable = False
        if m and (not np.isfinite(self.weights).all()
                  or float(self.weights.min()) < 0.0):
            raise ValueError("weights must be finite and >= 0")

    @property
    def m(self) -> int:
        return int(self.p.shape[0])

    def config_at(self, i: int) -> GraspConfig:
        return GraspConfig(self.p[i].copy(), self.r[i].copy(),
                           float(self.d[i]), int(self.w_bin[i]))

    @property
    def particles(self) -> tuple[Particle, ...]:
        return tuple(
            Particle(self.config_at(i), float(self.weights[i]),
                     float(self.quality[i]))
            for i in range(self.m)
        )


def _euler_raw(r: NDArray) -> tuple[float, float, float]:
    # trace serialization only: raw formulas, no gimbal band check
    beta = math.asin(min(1.0, max(-1.0, float(r[2, 1]))))
    alpha = math.atan2(-r[0, 1], r[1, 1])
    gamma = math.atan2(-r[2, 0], r[2, 2])
    return alpha, beta, gamma


def belief_to_jsonl(b: Belief) -> str:
    """One JSON record per particle, for trace inspection."""
    lines = []
    for i in range(b.m):
        alpha, beta, gamma = _euler_raw(b.r[i])
        lines.append(json.dumps({
            "p": [float(x) for x in b.p[i]],
            "alpha": alpha,
            "beta": beta,
            "gamma": gamma,
            "d": float(b.d[i]),
            "bin": int(b.w_bin[i]),
            "weight": float(b.weights[i]),
            "quality": float(b.quality[i]),
        }))
    return "\n".join(lines) + "\n" if lines else ""


def initial_distribution(
    obs: Observation,
    oracle: SceneOracle,
    params: FilterParams,
    reach_model: ReachModel,
    rng: Optional[np.random.Generator] = None,
) -> Belief:
    """Seed the belief from directional quality maps.

    n_dirs (Euler, d) tuples are drawn uniformly within bounds; candidate
    pixels above the quality threshold (halving the threshold down to the
    floor when too few clear it) are sampled proportionally to their blurred
    map quality. Unreachable candidates are rejected outright.
    """
    if rng is None:
        rng = np.random.default_rng(params.seed)
    oracle.check_frame(obs)
    d_lo, d_hi = params.d_bounds
    need = max(params.m // 8, 1)

    rotations: list[NDArray] = []
    axes: list[NDArray] = []
    depths: list[float] = []
    parts_p: list[NDArray] = []
    parts_q: list[NDArray] = []
    parts_map: list[NDArray] = []
    parts_bin: list[NDArray] = []
    for k in range(params.n_dirs):
        alpha = float(rng.uniform(*params.alpha_bounds))
        if params.yaw_only:
            beta = 0.0
            gamma = 0.0
        else:
            beta = float(rng.uniform(*params.beta_bounds))
            gamma = float(rng.uniform(*params.gamma_bounds))
        d = float(rng.uniform(d_lo, d_hi))
        e = EulerZXY(alpha, beta, gamma)
        maps = directional_quality_maps(obs, oracle, e, d)
        cq = continuous_quality(maps, params.blur_sigma_px)
        view = maps.view
        valid = view.valid & (view.depth_rot > 0.0)
        if not valid.any():
            rotations.append(grasp_rotation(obs.cam_pose.rotation, e))
            axes.append(rotations[-1][:, 2])
            depths.append(d)
            continue
        si = view.pixel_map[:, :, 0][valid]
        sj = view.pixel_map[:, :, 1][valid]
        pts = back_project_pixels(obs, si, sj)
        r_g = grasp_rotation(obs.cam_pose.rotation, e)
        rotations.append(r_g)
        axes.append(r_g[:, 2])
        depths.append(d)
        for wb in (0, 1):
            qv = cq[wb][valid]
            keep = qv > 0.0
            if keep.any():
                parts_p.append(pts[keep])
                parts_q.append(qv[keep])
                parts_map.append(np.full(int(keep.sum()), k, np.int32))
                parts_bin.append(np.full(int(keep.sum()), wb, np.int8))

    if not parts_p:
        raise NoCandidates("no pixel carries positive grasp quality")
    cand_p = np.concatenate(parts_p)
    cand_q = np.concatenate(parts_q)
    cand_map = np.concatenate(parts_map)
    cand_bin = np.concatenate(parts_bin)

    rot_arr = np.stack(rotations)
    axis_arr = np.stack(axes)
    d_arr = np.array(depths)
    origins = cand_p + d_arr[cand_map, None] * axis_arr[cand_map]
    ok = reachable_arrays(reach_model, origins, axis_arr[cand_map]) > 0.0
    cand_p, cand_q = cand_p[ok], cand_q[ok]
    cand_map, cand_bin = cand_map[ok], cand_bin[ok]
    if len(cand_q) == 0:
        raise NoCandidates("no reachable candidate")

    tau = params.quality_threshold
    sel = cand_q > tau
    if int(sel.sum()) < params.m:
        while int(sel.sum()) < need and tau > TAU_FLOOR:
            tau = max(tau * 0.5, TAU_FLOOR)
            sel = cand_q > tau
    if not sel.any():
        raise NoCandidates(f"no candidate exceeds quality {TAU_FLOOR}")

    sel_idx = np.nonzero(sel)[0]
    q_sel = cand_q[sel_idx]
    probs = q_sel / q_sel.sum()
    draw = rng.choice(len(sel_idx), size=params.m, replace=True, p=probs)
    chosen = sel_idx[draw]

    pool_order = np.argsort(-q_sel, kind="stable")[:MAX_POOL]
    pool_idx = sel_idx[pool_order]
    pool = CandidatePool(
        np.ascontiguousarray(cand_p[pool_idx]),
        np.ascontiguousarray(rot_arr[cand_map[pool_idx]]),
        np.ascontiguousarray(d_arr[cand_map[pool_idx]]),
        np.ascontiguousarray(cand_bin[pool_idx]),
        np.ascontiguousarray(cand_q[pool_idx]),
    )
    m = params.m
    return Belief(
        p=np.ascontiguousarray(cand_p[chosen]),
        r=np.ascontiguousarray(rot_arr[cand_map[chosen]]),
        d=np.ascontiguousarray(d_arr[cand_map[chosen]]),
        w_bin=np.ascontiguousarray(cand_bin[chosen]),
        weights=np.full(m, 1.0 / m),
        quality=np.ascontiguousarray(cand_q[chosen]),
        time_step=obs.time_step,
        pool=pool,
    )


def _exp_batch(omega: NDArray) -> NDArray[np.float64]:
    return np.stack([so3_exp(w) for w in omega])


def transition(
    b: Belief, params: FilterParams, rng: np.random.Generator
) -> Belief:
    """Gaussian diffusion of every particle plus fresh-candidate injection.

    Noise draw order is fixed (positions, rotations, depths, injection) so a
    step is reproducible from the generator state alone. Weights are left
    untouched; injected particles inherit the slot's weight.
    """
    m = b.m
    pos_noise = rng.normal(0.0, params.sigma_p, (m, 3))
    rot_noise = rng.normal(0.0, params.sigma_rot, (m, 3))
    d_noise = rng.normal(0.0, params.sigma_d, m)

    p = b.p + pos_noise
    if params.sigma_rot > 0.0:
        if params.yaw_only:
            # keep the approach axis: perturb about the gripper z only
            ca = np.cos(rot_noise[:, 2])
            sa = np.sin(rot_noise[:, 2])
            z_rots = np.zeros((m, 3, 3))
            z_rots[:, 0, 0] = ca
            z_rots[:, 0, 1] = -sa
            z_rots[:, 1, 0] = sa
            z_rots[:, 1, 1] = ca
            z_rots[:, 2, 2] = 1.0
            r = b.r @ z_rots
        else:
            r = b.r @ _exp_batch(rot_noise)
    else:
        r = b.r.copy()
    d = np.clip(b.d + d_noise, params.d_bounds[0], params.d_bounds[1])
    w_bin = b.w_bin.copy()
    quality = b.quality.copy()

    n_inject = int(params.fresh_fraction * m)
    if n_inject > 0 and b.pool is not None and len(b.pool.quality) > 0:
        slots = np.argsort(b.weights, kind="stable")[:n_inject]
        pq = b.pool.quality
        idx = rng.choice(len(pq), size=n_inject, replace=True, p=pq / pq.sum())
        p[slots] = b.pool.p[idx]
        r[slots] = b.pool.r[idx]
        d[slots] = b.pool.d[idx]
        w_bin[slots] = b.pool.w_bin[idx]
        quality[slots] = pq[idx]

    return Belief(
        p=np.ascontiguousarray(p), r=np.ascontiguousarray(r),
        d=np.ascontiguousarray(d), w_bin=w_bin,
        weights=b.weights.copy(), quality=quality,
        time_step=b.time_step, degenerate=b.degenerate, pool=b.pool,
    )


def project_to_surface(b: Belief, obs: Observation) -> Belief:
    """Snap particle points to the observed surface along the camera ray.

    Particles projecting behind the camera, outside the image, or onto a miss
    pixel keep their position but drop to weight 0. Idempotent: a second
    application reads the same pixel and returns the same point.
    """
    intr = obs.intrinsics
    q = obs.cam_pose.rotation.T @ (b.p - obs.cam_pose.translation).T
    z = q[2]
    front = z > 1e-6
    zs = np.where(front, z, 1.0)
    i = np.floor(intr.fy * q[1] / zs + intr.cy + 0.5).astype(np.int64)
    j = np.floor(intr.fx * q[0] / zs + intr.cx + 0.5).astype(np.int64)
    inside = front & (i >= 0) & (i < intr.height) & (j >= 0) & (j < intr.width)
    i_c = np.where(inside, i, 0)
    j_c = np.where(inside, j, 0)
    hit = inside & (obs.depth[i_c, j_c] > 0.0)
    p = b.p.copy()
    if hit.any():
        p[hit] = back_project_pixels(obs, i[hit], j[hit])
    weights = np.where(hit, b.weights, 0.0)
    return Belief(
        p=np.ascontiguousarray(p), r=b.r.copy(), d=b.d.copy(),
        w_bin=b.w_bin.copy(), weights=weights, quality=b.quality.copy(),
        time_step=b.time_step, degenerate=b.degenerate, pool=b.pool,
    )


def evaluate(
    b: Belief,
    obs: Observation,
    oracle: SceneOracle,
    reach_model: ReachModel,
    params: FilterParams,
) -> Belief:
    """Measurement update: weight *= reachability * best-bin scene quality.

    Each particle's width bin snaps to the bin that scored best (narrow wins
    ties). Weights are renormalized; a vanishing total marks the belief
    degenerate instead of dividing by ~0.
    """
    quality2, _level, _cf, _on = evaluate_grasp_batch(oracle, obs, b.p, b.r, b.d)
    origins = b.p + b.d[:, None] * b.r[:, :, 2]
    qr = reachable_arrays(reach_model, origins, b.r[:, :, 2])
    qs = quality2.max(axis=1)
    # Ties between width bins break toward the wider opening: same exact-pose
    # quality, but the wide bin leaves far more pad-to-object clearance, so it
    # survives execution noise that the narrow bin does not.
    bins = np.where(quality2[:, 1] >= quality2[:, 0], 1, 0).astype(np.int8)
    meas = qr * qs
    new_w = b.weights * meas
    total = float(new_w.sum())
    degenerate = total < DEGENERATE_TOTAL
    weights = new_w if degenerate else new_w / total
    return Belief(
        p=b.p.copy(), r=b.r.copy(), d=b.d.copy(), w_bin=bins,
        weights=np.ascontiguousarray(weights),
        quality=np.ascontiguousarray(meas),
        time_step=b.time_step, degenerate=degenerate, pool=b.pool,
    )


def systematic_indices(
    weights: NDArray, m: int, offset: float
) -> NDArray[np.int64]:
    """Low-variance selector: m picks from one uniform offset in [0, 1/m)."""
    if not (0.0 <= offset < 1.0 / m):
        raise ValueError("offset must lie in [0, 1/m)")
    cum = np.cumsum(np.asarray(weights, np.float64))
    cum[-1] = 1.0  # absorb rounding so the last interval closes exactly
    positions = offset + np.arange(m) / m
    idx = np.searchsorted(cum, positions, side="right")
    return np.minimum(idx, len(cum) - 1).astype(np.int64)


def resample(
    b: Belief,
    params: FilterParams,
    rng: np.random.Generator,
    *,
    obs: Optional[Observation] = None,
    oracle: Optional[SceneOracle] = None,
    reach_model: Optional[ReachModel] = None,
) -> Belief:
    """Systematic resampling to uniform weights.

    Degenerate beliefs are re-seeded from the current observation instead
    (the optional keyword arguments supply it); re-seeding preserves the
    belief's time step.
    """
    if b.degenerate:
        if obs is None or oracle is None or reach_model is None:
            raise DegenerateBelief(
                "degenerate belief: provide obs/oracle/reach_model to re-seed"
            )
        fresh = initial_distribution(obs, oracle, params, reach_model, rng)
        return replace(fresh, time_step=b.time_step)
    m = b.m
    offset = float(rng.uniform(0.0, 1.0 / m))
    idx = systematic_indices(b.weights, m, offset)
    return Belief(
        p=np.ascontiguousarray(b.p[idx]),
        r=np.ascontiguousarray(b.r[idx]),
        d=np.ascontiguousarray(b.d[idx]),
        w_bin=np.ascontiguousarray(b.w_bin[idx]),
        weights=np.full(m, 1.0 / m),
        quality=np.ascontiguousarray(b.quality[idx]),
        time_step=b.time_step, degenerate=False, pool=b.pool,
    )


def step(
    b: Belief,
    obs: Observation,
    oracle: SceneOracle,
    reach_model: ReachModel,
    params: FilterParams,
    rng: np.random.Generator,
) -> Belief:
    """One filter iteration: transition, project, evaluate, resample."""
    b1 = transition(b, params, rng)
    b2 = project_to_surface(b1, obs)
    b3 = evaluate(b2, obs, oracle, reach_model, params)
    b4 = resample(b3, params, rng, obs=obs, oracle=oracle,
                  reach_model=reach_model)
    return replace(b4, time_step=b.time_step + 1)


# Tie-break ball for select_target: position / rotation (Frobenius) / depth
# radii matched to the transition noise scales.  Quality saturates at exact
# ties, so the winner is the particle with the most DISTINCT equally-good
# neighbors inside the ball: resampling duplicates carry no volume
# information, and an edge-of-validity grasp has a half-empty ball while a
# grasp with real margin is surrounded.
TIE_RADIUS_P = 0.01
TIE_RADIUS_R = 0.2
TIE_RADIUS_D = 0.005


def _densest_best(b: Belief) -> int:
    best_q = float(np.max(b.quality))
    ties = np.flatnonzero(b.quality >= best_q - 1e-12)
    if len(ties) == 1:
        return int(ties[0])
    feats = np.concatenate(
        [b.p[ties], b.r[ties].reshape(len(ties), 9), b.d[ties, None]], axis=1
    )
    uniq = np.unique(feats, axis=0)
    dp = np.sum((feats[:, None, :3] - uniq[None, :, :3]) ** 2, axis=2)
    dr = np.sum((feats[:, None, 3:12] - uniq[None, :, 3:12]) ** 2, axis=2)
    dd = np.abs(feats[:, None, 12] - uniq[None, :, 12])
    inside = (
        (dp <= TIE_RADIUS_P**2)
        & (dr <= 2.0 * TIE_RADIUS_R**2)  # |Ra-Rb|_F ~ sqrt(2)*angle for small angles
        & (dd <= TIE_RADIUS_D)
    )
    support = inside.sum(axis=1).astype(np.float64)
    # Sub-unit bonus so support stays the primary key: among equally
    # supported ties prefer the more vertical approach, which keeps the
    # largest clearance margins when the executed pose is perturbed.  The
    # tie set is quality-identical so the preference costs nothing.
    down = np.clip(-b.r[ties, 2, 2], 0.0, 1.0)
    score = support + 0.3 * down
    return int(ties[int(np.argmax(score))])


def select_target(
    b: Belief,
    previous: Optional[GraspConfig] = None,
    previous_quality: Optional[float] = None,
    delta: float = 0.05,
) -> GraspConfig:
    """Best-quality particle with hysteresis against target thrashing.

    Exact quality ties resolve to the particle with the most equally-good
    neighbors within TARGET_TIE_RADIUS; the previous target is kept unless
    the winner beats the previous target's current quality by more than
    delta.
    """
    if b.degenerate:
        raise DegenerateBelief("cannot select a target from a degenerate belief")
    best_q = float(np.max(b.quality))
    if best_q <= 0.0:
        raise DegenerateBelief("no positive-quality particle")
    candidate = b.config_at(_densest_best(b))
    if previous is None:
        return candidate
    prev_q = 0.0 if previous_quality is None else float(previous_quality)
    if best_q > prev_q + delta:
        return candidate
    return previous
