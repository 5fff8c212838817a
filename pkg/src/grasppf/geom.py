"""Rigid-body math: rotations, poses, zxy Euler angles, meshes, ray casting.

Rotations are plain 3x3 numpy arrays (orthonormal, det +1).  Matrices were
chosen over quaternions so that frame compositions in the rest of the package
stay single-operator expressions; re-orthogonalization is explicit and only
applied when drift exceeds tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import NDArray

# Orthonormality drift beyond this is repaired (polar decomposition) or rejected.
ROTATION_TOL = 1e-9
# asin argument band around +-1 treated as gimbal lock (|beta| within 1e-3 of pi/2).
GIMBAL_BAND = 1e-3
# Ray hits closer than this are ignored (self-intersection guard).
RAY_MIN_T = 1e-6


class GimbalLockError(ValueError):
    """zxy Euler decomposition is degenerate: |beta| too close to pi/2."""


class NotARotationError(ValueError):
    """Matrix is not orthonormal with det +1 within tolerance."""


def _as_matrix(r: NDArray[np.float64]) -> NDArray[np.float64]:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise NotARotationError(f"expected 3x3 matrix, got shape {r.shape}")
    return r


def rotation_drift(r: NDArray[np.float64]) -> float:
    """Max-abs deviation of R^T R from the identity."""
    r = _as_matrix(r)
    return float(np.max(np.abs(r.T @ r - np.eye(3))))


def check_rotation(r: NDArray[np.float64]) -> NDArray[np.float64]:
    """Validate orthonormality and det +1; returns the matrix unchanged."""
    r = _as_matrix(r)
    if rotation_drift(r) > ROTATION_TOL or not np.isfinite(r).all():
        raise NotARotationError("matrix fails R^T R = I within 1e-9")
    if np.linalg.det(r) < 0.0:
        raise NotARotationError("matrix has negative determinant")
    return r


def normalize_rotation(r: NDArray[np.float64]) -> NDArray[np.float64]:
    """Nearest rotation matrix (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(_as_matrix(r))
    out = u @ vt
    if np.linalg.det(out) < 0.0:
        # Flip the axis of least significance to restore a proper rotation.
        u = u.copy()
        u[:, -1] = -u[:, -1]
        out = u @ vt
    return out


def rot_x(angle: float) -> NDArray[np.float64]:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> NDArray[np.float64]:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> NDArray[np.float64]:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class EulerZXY(NamedTuple):
    """zxy Euler triple: R = Rz(alpha) @ Rx(beta) @ Ry(gamma).

    alpha in [-pi, pi), beta in (-pi/2, pi/2), gamma in [-pi, pi).
    """

    alpha: float
    beta: float
    gamma: float


def euler_zxy_compose(e: EulerZXY | Sequence[float]) -> NDArray[np.float64]:
    """Rotation matrix for a zxy Euler triple."""
    alpha, beta, gamma = e
    return rot_z(alpha) @ rot_x(beta) @ rot_y(gamma)


def euler_zxy_decompose(r: NDArray[np.float64]) -> EulerZXY:
    """Unique zxy Euler triple of a rotation matrix.

    With R = Rz(a) Rx(b) Ry(g):
        R[2,1] = sin(b)
        R[0,1] = -sin(a) cos(b),  R[1,1] = cos(a) cos(b)
        R[2,0] = -cos(b) sin(g),  R[2,2] = cos(b) cos(g)

    Raises
    ------
    GimbalLockError
        When |beta| is within 1e-3 rad of pi/2 (alpha and gamma couple).
    """
    r = check_rotation(r)
    sb = min(1.0, max(-1.0, float(r[2, 1])))
    beta = math.asin(sb)
    if abs(beta) > math.pi / 2.0 - GIMBAL_BAND:
        raise GimbalLockError(f"|beta|={abs(beta):.6f} within 1e-3 of pi/2")
    alpha = math.atan2(-r[0, 1], r[1, 1])
    gamma = math.atan2(-r[2, 0], r[2, 2])
    # atan2 yields (-pi, pi]; fold +pi onto -pi for half-open ranges.
    if alpha >= math.pi:
        alpha -= 2.0 * math.pi
    if gamma >= math.pi:
        gamma -= 2.0 * math.pi
    return EulerZXY(alpha, beta, gamma)


def so3_exp(omega: NDArray[np.float64]) -> NDArray[np.float64]:
    """Matrix exponential of a rotation vector (Rodrigues)."""
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(omega))
    k = np.array(
        [
            [0.0, -omega[2], omega[1]],
            [omega[2], 0.0, -omega[0]],
            [-omega[1], omega[0], 0.0],
        ]
    )
    if theta < 1e-8:
        # Second-order Taylor keeps the result orthonormal to ~theta^3.
        return np.eye(3) + k + 0.5 * (k @ k)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r: NDArray[np.float64]) -> NDArray[np.float64]:
    """Principal rotation vector (angle in [0, pi]) of a rotation matrix.

    Inverts so3_exp on the open ball ||w|| < pi; larger rotation vectors map
    to the equivalent principal representative, which is what
    geodesic_distance needs.
    """
    r = _as_matrix(r)
    cos_theta = min(1.0, max(-1.0, (float(np.trace(r)) - 1.0) / 2.0))
    theta = math.acos(cos_theta)
    if theta < 1e-8:
        return np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    if theta > math.pi - 1e-6:
        # Near pi the off-diagonal form degenerates; use the symmetric part.
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diagonal(m), 0.0))
        # Fix signs from the largest component.
        i = int(np.argmax(axis))
        if axis[i] > 0.0:
            signs = np.array([m[i, 0], m[i, 1], m[i, 2]])
            axis = np.where(signs < 0.0, -axis, axis)
            axis[i] = abs(axis[i])
        return theta * axis / np.linalg.norm(axis)
    v = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return theta / (2.0 * math.sin(theta)) * v


def geodesic_distance(ra: NDArray[np.float64], rb: NDArray[np.float64]) -> float:
    """Angle of the relative rotation between two rotation matrices."""
    return float(np.linalg.norm(so3_log(_as_matrix(ra).T @ _as_matrix(rb))))


def perturb_rotation(
    r: NDArray[np.float64], sigma: float, rng: np.random.Generator
) -> NDArray[np.float64]:
    """Right-multiply r by exp(w^) with w ~ N(0, sigma^2 I_3) in the body frame.

    sigma = 0 consumes the same three stream draws and returns r exactly.
    """
    if sigma < 0.0:
        raise ValueError("sigma must be >= 0")
    omega = rng.normal(0.0, sigma, 3)
    if sigma == 0.0:
        return np.array(r, dtype=np.float64)
    return _as_matrix(r) @ so3_exp(omega)


@dataclass(frozen=True, eq=False)
class Pose3:
    """Rigid transform: x_world = r @ x_local + t."""

    r: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    t: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        r = check_rotation(self.r).copy()
        t = np.asarray(self.t, dtype=np.float64).reshape(3).copy()
        if not np.isfinite(t).all():
            raise ValueError("translation must be finite")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @property
    def rotation(self) -> NDArray[np.float64]:
        return self.r

    @property
    def translation(self) -> NDArray[np.float64]:
        return self.t

    def compose(self, other: "Pose3") -> "Pose3":
        return Pose3(self.r @ other.r, self.r @ other.t + self.t)

    def inverse(self) -> "Pose3":
        rt = self.r.T
        return Pose3(rt.copy(), -(rt @ self.t))

    def transform_point(self, p: NDArray[np.float64]) -> NDArray[np.float64]:
        p = np.asarray(p, dtype=np.float64)
        return p @ self.r.T + self.t

    def transform_direction(self, d: NDArray[np.float64]) -> NDArray[np.float64]:
        d = np.asarray(d, dtype=np.float64)
        return d @ self.r.T

    @staticmethod
    def identity() -> "Pose3":
        return Pose3(np.eye(3), np.zeros(3))


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Indexed triangle mesh. vertices (N,3) float64, triangles (M,3) int32."""

    vertices: NDArray[np.float64]
    triangles: NDArray[np.int32]

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int32))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must be (N, 3)")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError("triangles must be (M, 3)")
        if not np.isfinite(v).all():
            raise ValueError("vertices must be finite")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if f.size:
            e1 = v[f[:, 1]] - v[f[:, 0]]
            e2 = v[f[:, 2]] - v[f[:, 0]]
            areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
            if (areas <= 1e-12).any():
                raise ValueError(
                    f"degenerate triangle (area <= 1e-12) at face "
                    f"{int(np.argmax(areas <= 1e-12))}"
                )
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)

    @property
    def num_triangles(self) -> int:
        return int(len(self.triangles))

    def face_normals(self) -> NDArray[np.float64]:
        """Unit geometric normals per face (right-hand winding)."""
        v = self.vertices
        f = self.triangles
        e1 = v[f[:, 1]] - v[f[:, 0]]
        e2 = v[f[:, 2]] - v[f[:, 0]]
        n = np.cross(e1, e2)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        norm[norm == 0.0] = 1.0
        return n / norm

    def surface_area(self) -> float:
        v = self.vertices
        f = self.triangles
        e1 = v[f[:, 1]] - v[f[:, 0]]
        e2 = v[f[:, 2]] - v[f[:, 0]]
        return float(0.5 * np.linalg.norm(np.cross(e1, e2), axis=1).sum())

    def signed_volume(self) -> float:
        """Enclosed volume via the divergence theorem (watertight meshes)."""
        v = self.vertices
        f = self.triangles
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


class RayHit(NamedTuple):
    distance: float
    object_index: int
    face_index: int


def _ray_triangles(
    origin: NDArray[np.float64],
    direction: NDArray[np.float64],
    v0: NDArray[np.float64],
    e1: NDArray[np.float64],
    e2: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Moller-Trumbore against a triangle soup; returns t per face (inf = miss)."""
    pvec = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    t = np.full(len(v0), np.inf)
    ok = np.abs(det) > 1e-12
    if not ok.any():
        return t
    inv_det = np.zeros_like(det)
    inv_det[ok] = 1.0 / det[ok]
    tvec = origin - v0
    u = np.einsum("ij,ij->i", tvec, pvec) * inv_det
    ok &= (u >= -1e-12) & (u <= 1.0 + 1e-12)
    qvec = np.cross(tvec, e1)
    v = (qvec @ direction) * inv_det
    ok &= (v >= -1e-12) & (u + v <= 1.0 + 1e-12)
    tt = np.einsum("ij,ij->i", e2, qvec) * inv_det
    ok &= tt >= RAY_MIN_T
    t[ok] = tt[ok]
    return t


def ray_cast(
    mesh_set: Sequence[tuple[TriMesh, Pose3]],
    origin: NDArray[np.float64],
    direction: NDArray[np.float64],
) -> RayHit | None:
    """Nearest intersection of one ray with a set of posed meshes.

    distance is measured in units of ||direction|| along the ray and must
    exceed 1e-6.  Exact ties are broken by lowest (object_index, face_index),
    so results do not depend on mesh iteration order.  Returns None on miss.
    """
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    direction = np.asarray(direction, dtype=np.float64).reshape(3)
    best: RayHit | None = None
    for obj_idx, (mesh, pose) in enumerate(mesh_set):
        if mesh.num_triangles == 0:
            continue
        # Transform the ray into the mesh frame; rigid, so t is preserved.
        inv = pose.inverse()
        o_local = inv.transform_point(origin)
        d_local = inv.transform_direction(direction)
        v = mesh.vertices
        f = mesh.triangles
        v0 = v[f[:, 0]]
        t = _ray_triangles(o_local, d_local, v0, v[f[:, 1]] - v0, v[f[:, 2]] - v0)
        face = int(np.argmin(t))  # argmin takes the lowest index on ties
        t_hit = float(t[face])
        if not math.isfinite(t_hit):
            continue
        cand = RayHit(t_hit, obj_idx, face)
        if (
            best is None
            or cand.distance < best.distance
            or (
                cand.distance == best.distance
                and (cand.object_index, cand.face_index)
                < (best.object_index, best.face_index)
            )
        ):
            best = cand
    return best
