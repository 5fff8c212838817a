"""Analytic reachability gate: workspace shell, approach tilt, table clearance.

Stands in for a learned kinematic feasibility scorer with the same contract:
a hard {0,1} factor multiplied into the grasp measure, batch-scorable fast
enough that it never bounds the filter loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .geom import Pose3

# cosine comparisons get an epsilon so "tilted exactly max_tilt" passes
_TILT_EPS = 1e-12


def _default_base() -> NDArray[np.float64]:
    # a base beside the table keeps a centered tabletop inside the shell
    a = np.array([-0.45, 0.0, 0.0])
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ReachModel:
    """Binary reachability: shell around the base + tilt + clearance limits."""

    base_origin: NDArray[np.float64] = field(default_factory=_default_base)
    r_min: float = 0.25
    r_max: float = 0.85
    max_tilt: float = math.radians(60.0)
    min_clearance: float = 0.005
    table_height: float = 0.0

    def __post_init__(self) -> None:
        base = np.array(self.base_origin, dtype=np.float64)
        if base.shape != (3,) or not np.isfinite(base).all():
            raise ValueError("base_origin must be a finite 3-vector")
        if not (0.0 < self.r_min < self.r_max):
            raise ValueError("need 0 < r_min < r_max")
        if not (0.0 < self.max_tilt <= math.pi / 2):
            raise ValueError("max_tilt must be in (0, pi/2]")
        base.flags.writeable = False
        object.__setattr__(self, "base_origin", base)


def reachable_arrays(
    model: ReachModel, origins: NDArray, z_axes: NDArray
) -> NDArray[np.float64]:
    """Vectorized gate over grasp origins (M,3) and approach axes (M,3)."""
    origins = np.asarray(origins, np.float64).reshape(-1, 3)
    z_axes = np.asarray(z_axes, np.float64).reshape(-1, 3)
    rel = origins - model.base_origin
    dist = np.linalg.norm(rel, axis=1)
    ok = (dist >= model.r_min) & (dist <= model.r_max)
    # tilt of the approach axis from straight down: cos = axis . (0,0,-1)
    cos_tilt = -z_axes[:, 2]
    ok &= cos_tilt >= math.cos(model.max_tilt) - _TILT_EPS
    ok &= origins[:, 2] >= model.table_height + model.min_clearance
    return ok.astype(np.float64)


def reachable(model: ReachModel, pose: Pose3) -> int:
    """1 iff the grasp pose is inside the shell, upright enough, and clear."""
    return int(
        reachable_arrays(
            model, pose.translation[None, :], pose.rotation[:, 2][None, :]
        )[0]
    )


def reachable_batch(model: ReachModel, poses: list[Pose3]) -> list[int]:
    """Element-wise reachable over a list of poses."""
    if not poses:
        return []
    origins = np.stack([p.translation for p in poses])
    axes = np.stack([p.rotation[:, 2] for p in poses])
    return [int(v) for v in reachable_arrays(model, origins, axes)]


DEFAULT_REACH = ReachModel()
