"""Single-threaded numba kernels for ray casting, overlap tests and grasp scoring.

Everything here operates on flat world arrays (triangles pre-transformed to the
world frame plus a flattened BVH) so the hot loops never touch Python objects.
All kernels are deterministic: no threading, no fastmath reassociation.

Gripper parameter packing (float64, length 9):
  [0] finger thickness along the closing axis
  [1] finger width across the closing axis
  [2] finger length along the approach axis
  [3] palm extent along closing axis
  [4] palm extent across closing axis
  [5] palm extent along approach axis
  [6] finger stroke (max travel per finger)
  [7] narrow width bin opening
  [8] wide width bin opening
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

RAY_MIN_T = 1e-6
_BIG = 1e30


# ---------------------------------------------------------------------------
# ray / triangle / BVH


@njit(cache=True)
def _ray_nearest(
    v0,
    e1,
    e2,
    nmin,
    nmax,
    nleft,
    nright,
    nstart,
    ncount,
    torder,
    ox,
    oy,
    oz,
    dx,
    dy,
    dz,
    t_max,
):
    """Nearest triangle hit in (RAY_MIN_T, t_max]; exact ties resolve to the
    lowest original triangle index. Returns (t, tri) with tri = -1 on miss."""
    best_t = t_max
    best_tri = -1
    stack = np.empty(128, np.int32)
    sp = 0
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        # slab test against [RAY_MIN_T, best_t]
        t0 = RAY_MIN_T
        t1 = best_t
        hit = True
        for axis in range(3):
            if axis == 0:
                o = ox
                d = dx
            elif axis == 1:
                o = oy
                d = dy
            else:
                o = oz
                d = dz
            lo = nmin[node, axis]
            hi = nmax[node, axis]
            if -1e-300 < d < 1e-300:
                if o < lo or o > hi:
                    hit = False
                    break
            else:
                inv = 1.0 / d
                ta = (lo - o) * inv
                tb = (hi - o) * inv
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                if tb < t1:
                    t1 = tb
                if t0 > t1:
                    hit = False
                    break
        if not hit:
            continue
        cnt = ncount[node]
        if cnt == 0 and nleft[node] >= 0:
            stack[sp] = nleft[node]
            sp += 1
            stack[sp] = nright[node]
            sp += 1
            continue
        start = nstart[node]
        for k in range(cnt):
            tri = torder[start + k]
            # Moller-Trumbore with precomputed edges
            e1x = e1[tri, 0]
            e1y = e1[tri, 1]
            e1z = e1[tri, 2]
            e2x = e2[tri, 0]
            e2y = e2[tri, 1]
            e2z = e2[tri, 2]
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            if -1e-12 < det < 1e-12:
                continue
            inv_det = 1.0 / det
            sx = ox - v0[tri, 0]
            sy = oy - v0[tri, 1]
            sz = oz - v0[tri, 2]
            u = (sx * px + sy * py + sz * pz) * inv_det
            if u < -1e-12 or u > 1.0 + 1e-12:
                continue
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv_det
            if v < -1e-12 or u + v > 1.0 + 1e-12:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv_det
            if t < RAY_MIN_T or t > best_t:
                continue
            if t < best_t or best_tri == -1 or tri < best_tri:
                best_t = t
                best_tri = tri
    if best_tri == -1:
        return _BIG, -1
    return best_t, best_tri


@njit(cache=True)
def _ray_table(ox, oy, oz, dx, dy, dz, table_h, clip_r, t_max):
    """Hit distance against the clipped table plane, or a big sentinel."""
    if -1e-300 < dz < 1e-300:
        return _BIG
    t = (table_h - oz) / dz
    if t < RAY_MIN_T or t > t_max:
        return _BIG
    hx = ox + t * dx
    hy = oy + t * dy
    if hx * hx + hy * hy > clip_r * clip_r:
        return _BIG
    return t


# ---------------------------------------------------------------------------
# box overlap (separating axis test)


@njit(cache=True)
def _tri_box_overlap(
    u0x, u0y, u0z, u1x, u1y, u1z, u2x, u2y, u2z, h0, h1, h2
):
    """Triangle vs axis-aligned box centred at origin. Vertices already in the
    box frame. Touching counts as overlap (strict separation required)."""
    # box axis tests
    mn = min(u0x, min(u1x, u2x))
    mx = max(u0x, max(u1x, u2x))
    if mn > h0 or mx < -h0:
        return False
    mn = min(u0y, min(u1y, u2y))
    mx = max(u0y, max(u1y, u2y))
    if mn > h1 or mx < -h1:
        return False
    mn = min(u0z, min(u1z, u2z))
    mx = max(u0z, max(u1z, u2z))
    if mn > h2 or mx < -h2:
        return False
    # edge cross-product axes
    for edge in range(3):
        if edge == 0:
            fx = u1x - u0x
            fy = u1y - u0y
            fz = u1z - u0z
        elif edge == 1:
            fx = u2x - u1x
            fy = u2y - u1y
            fz = u2z - u1z
        else:
            fx = u0x - u2x
            fy = u0y - u2y
            fz = u0z - u2z
        # axis = x_hat cross f = (0, -fz, fy)
        p0 = -fz * u0y + fy * u0z
        p1 = -fz * u1y + fy * u1z
        p2 = -fz * u2y + fy * u2z
        r = h1 * abs(fz) + h2 * abs(fy)
        if min(p0, min(p1, p2)) > r or max(p0, max(p1, p2)) < -r:
            return False
        # axis = y_hat cross f = (fz, 0, -fx)
        p0 = fz * u0x - fx * u0z
        p1 = fz * u1x - fx * u1z
        p2 = fz * u2x - fx * u2z
        r = h0 * abs(fz) + h2 * abs(fx)
        if min(p0, min(p1, p2)) > r or max(p0, max(p1, p2)) < -r:
            return False
        # axis = z_hat cross f = (-fy, fx, 0)
        p0 = -fy * u0x + fx * u0y
        p1 = -fy * u1x + fx * u1y
        p2 = -fy * u2x + fx * u2y
        r = h0 * abs(fy) + h1 * abs(fx)
        if min(p0, min(p1, p2)) > r or max(p0, max(p1, p2)) < -r:
            return False
    # triangle plane test
    nx = (u1y - u0y) * (u2z - u0z) - (u1z - u0z) * (u2y - u0y)
    ny = (u1z - u0z) * (u2x - u0x) - (u1x - u0x) * (u2z - u0z)
    nz = (u1x - u0x) * (u2y - u0y) - (u1y - u0y) * (u2x - u0x)
    dist = nx * u0x + ny * u0y + nz * u0z
    r = h0 * abs(nx) + h1 * abs(ny) + h2 * abs(nz)
    if abs(dist) > r:
        return False
    return True


@njit(cache=True)
def _obb_hits_world(
    v0,
    e1,
    e2,
    nmin,
    nmax,
    nleft,
    nright,
    nstart,
    ncount,
    torder,
    cx,
    cy,
    cz,
    h0,
    h1,
    h2,
    R,
):
    """True if the oriented box (centre c, half extents h, world axes = columns
    of R) intersects any world triangle."""
    # world AABB of the OBB for node culling
    ex = abs(R[0, 0]) * h0 + abs(R[0, 1]) * h1 + abs(R[0, 2]) * h2
    ey = abs(R[1, 0]) * h0 + abs(R[1, 1]) * h1 + abs(R[1, 2]) * h2
    ez = abs(R[2, 0]) * h0 + abs(R[2, 1]) * h1 + abs(R[2, 2]) * h2
    blo0 = cx - ex
    bhi0 = cx + ex
    blo1 = cy - ey
    bhi1 = cy + ey
    blo2 = cz - ez
    bhi2 = cz + ez
    stack = np.empty(128, np.int32)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if (
            nmin[node, 0] > bhi0
            or nmax[node, 0] < blo0
            or nmin[node, 1] > bhi1
            or nmax[node, 1] < blo1
            or nmin[node, 2] > bhi2
            or nmax[node, 2] < blo2
        ):
            continue
        cnt = ncount[node]
        if cnt == 0 and nleft[node] >= 0:
            stack[sp] = nleft[node]
            sp += 1
            stack[sp] = nright[node]
            sp += 1
            continue
        start = nstart[node]
        for k in range(cnt):
            tri = torder[start + k]
            # transform the three vertices into the box frame (R transposed)
            overlap = True
            wx = v0[tri, 0] - cx
            wy = v0[tri, 1] - cy
            wz = v0[tri, 2] - cz
            u0x = R[0, 0] * wx + R[1, 0] * wy + R[2, 0] * wz
            u0y = R[0, 1] * wx + R[1, 1] * wy + R[2, 1] * wz
            u0z = R[0, 2] * wx + R[1, 2] * wy + R[2, 2] * wz
            wx = wx + e1[tri, 0]
            wy = wy + e1[tri, 1]
            wz = wz + e1[tri, 2]
            u1x = R[0, 0] * wx + R[1, 0] * wy + R[2, 0] * wz
            u1y = R[0, 1] * wx + R[1, 1] * wy + R[2, 1] * wz
            u1z = R[0, 2] * wx + R[1, 2] * wy + R[2, 2] * wz
            wx = v0[tri, 0] + e2[tri, 0] - cx
            wy = v0[tri, 1] + e2[tri, 1] - cy
            wz = v0[tri, 2] + e2[tri, 2] - cz
            u2x = R[0, 0] * wx + R[1, 0] * wy + R[2, 0] * wz
            u2y = R[0, 1] * wx + R[1, 1] * wy + R[2, 1] * wz
            u2z = R[0, 2] * wx + R[1, 2] * wy + R[2, 2] * wz
            overlap = _tri_box_overlap(
                u0x, u0y, u0z, u1x, u1y, u1z, u2x, u2y, u2z, h0, h1, h2
            )
            if overlap:
                return True
    return False


# ---------------------------------------------------------------------------
# grasp channels


@njit(cache=True)
def _box_min_z(cz, h0, h1, h2, R):
    return cz - (abs(R[2, 0]) * h0 + abs(R[2, 1]) * h1 + abs(R[2, 2]) * h2)


@njit(cache=True)
def _gripper_box_free(
    v0,
    e1,
    e2,
    nmin,
    nmax,
    nleft,
    nright,
    nstart,
    ncount,
    torder,
    table_h,
    ox,
    oy,
    oz,
    R,
    gx,
    gy,
    gz,
    h0,
    h1,
    h2,
):
    """Collision test for one gripper box given in the gripper frame
    (centre g, half extents h). Returns True when free of table and objects."""
    cx = ox + R[0, 0] * gx + R[0, 1] * gy + R[0, 2] * gz
    cy = oy + R[1, 0] * gx + R[1, 1] * gy + R[1, 2] * gz
    cz = oz + R[2, 0] * gx + R[2, 1] * gy + R[2, 2] * gz
    if _box_min_z(cz, h0, h1, h2, R) < table_h:
        return False
    if _obb_hits_world(
        v0,
        e1,
        e2,
        nmin,
        nmax,
        nleft,
        nright,
        nstart,
        ncount,
        torder,
        cx,
        cy,
        cz,
        h0,
        h1,
        h2,
        R,
    ):
        return False
    return True


@njit(cache=True)
def _collision_free_width(
    v0,
    e1,
    e2,
    nmin,
    nmax,
    nleft,
    nright,
    nstart,
    ncount,
    torder,
    table_h,
    ox,
    oy,
    oz,
    R,
    grip,
    w,
):
    ft = grip[0]
    fw = grip[1]
    fl = grip[2]
    # fingers first: they sit deepest and reject fastest in clutter
    if not _gripper_box_free(
        v0, e1, e2, nmin, nmax, nleft, nright, nstart, ncount, torder,
        table_h, ox, oy, oz, R,
        0.5 * w + 0.5 * ft, 0.0, -0.5 * fl, 0.5 * ft, 0.5 * fw, 0.5 * fl,
    ):
        return False
    if not _gripper_box_free(
        v0, e1, e2, nmin, nmax, nleft, nright, nstart, ncount, torder,
        table_h, ox, oy, oz, R,
        -0.5 * w - 0.5 * ft, 0.0, -0.5 * fl, 0.5 * ft, 0.5 * fw, 0.5 * fl,
    ):
        return False
    if not _gripper_box_free(
        v0, e1, e2, nmin, nmax, nleft, nright, nstart, ncount, torder,
        table_h, ox, oy, oz, R,
        0.0, 0.0, -fl - 0.5 * grip[5], 0.5 * grip[3], 0.5 * grip[4],
        0.5 * grip[5],
    ):
        return False
    return True


@njit(cache=True)
def _pad_contact(
    v0,
    e1,
    e2,
    normal,
    obj_id,
    nmin,
    nmax,
    nleft,
    nright,
    nstart,
    ncount,
    torder,
    table_h,
    clip_r,
    ox,
    oy,
    oz,
    R,
    side,
    w,
    grip,
    n_pad,
):
    """Sweep one finger pad toward the closing line. side = +1 for the pad at
    +w/2 closing along -x, -1 for the pad at -w/2 closing along +x.

    Returns (travel, hit_obj, nxw, nyw, nzw): nearest contact over the pad's
    ray grid. hit_obj is -1 when nothing was reached, -2 for the table."""
    fw = grip[1]
    fl = grip[2]
    max_t = w if w < grip[6] else grip[6]
    dxw = -side * R[0, 0]
    dyw = -side * R[1, 0]
    dzw = -side * R[2, 0]
    best_t = _BIG
    best_obj = -1
    bnx = 0.0
    bny = 0.0
    bnz = 0.0
    px = side * 0.5 * w
    for j in range(n_pad):
        py = -0.5 * fw + (j + 0.5) * fw / n_pad
        for k in range(n_pad):
            pz = -fl + (k + 0.5) * fl / n_pad
            rx = ox + R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz
            ry = oy + R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz
            rz = oz + R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz
            t, tri = _ray_nearest(
                v0, e1, e2, nmin, nmax, nleft, nright, nstart, ncount,
                torder, rx, ry, rz, dxw, dyw, dzw, max_t,
            )
            tt = _ray_table(rx, ry, rz, dxw, dyw, dzw, table_h, clip_r, max_t)
            if tt < t:
                if tt < best_t:
                    best_t = tt
                    best_obj = -2
                    bnx = 0.0
                    bny = 0.0
                    bnz = 1.0
            elif tri >= 0:
                if t < best_t:
                    best_t = t
                    best_obj = obj_id[tri]
                    bnx = normal[tri, 0]
                    bny = normal[tri, 1]
                    bnz = normal[tri, 2]
    return best_t, best_obj, bnx, bny, bnz


@njit(cache=True)
def _closure_level(
    v0,
    e1,
    e2,
    normal,
    obj_id,
    nmin,
    nmax,
    nleft,
    nright,
    nstart,
    ncount,
    torder,
    table_h,
    clip_r,
    R,
    ox,
    oy,
    oz,
    grip,
    cos_mu,
    n_pad,
    w,
):
    """Force-closure level with the fingers closing from opening width w.

    0 when either pad reaches nothing within its stroke, the two contacts sit
    on different bodies or the table, the contacts cross, or the antipodal
    cone test fails even at the loosest friction grade."""
    tl, ol, lnx, lny, lnz = _pad_contact(
        v0, e1, e2, normal, obj_id, nmin, nmax, nleft, nright, nstart,
        ncount, torder, table_h, clip_r, ox, oy, oz, R, -1.0, w, grip, n_pad,
    )
    if ol == -1:
        return 0
    tr, orr, rnx, rny, rnz = _pad_contact(
        v0, e1, e2, normal, obj_id, nmin, nmax, nleft, nright, nstart,
        ncount, torder, table_h, clip_r, ox, oy, oz, R, 1.0, w, grip, n_pad,
    )
    if orr == -1:
        return 0
    if ol < 0 or orr < 0 or ol != orr:
        # table contact or two different bodies: not a grasp
        return 0
    if w - tl - tr < -1e-12:
        # contacts crossed: fingers would meet before reaching both faces
        return 0
    # cone checks against the closing line (gripper x axis in world frame)
    ax = R[0, 0]
    ay = R[1, 0]
    az = R[2, 0]
    a = -(lnx * ax + lny * ay + lnz * az)  # left contact normal vs -x
    b = rnx * ax + rny * ay + rnz * az  # right contact normal vs +x
    level = 0
    for k in range(3):
        if a >= cos_mu[k] and b >= cos_mu[k]:
            level = k + 1
        else:
            break
    return level


@njit(cache=True)
def _channels_one(
    v0,
    e1,
    e2,
    normal,
    obj_id,
    nmin,
    nmax,
    nleft,
    nright,
    nstart,
    ncount,
    torder,
    table_h,
    clip_r,
    R,
    ox,
    oy,
    oz,
    grip,
    cos_mu,
    n_pad,
):
    """Force closure level and per-width collision flags for one grasp pose.

    The level is evaluated at the narrowest collision-free width bin; if no
    bin is free the level is 0. Returns (level, cf_narrow, cf_wide)."""
    cf0 = _collision_free_width(
        v0, e1, e2, nmin, nmax, nleft, nright, nstart, ncount, torder,
        table_h, ox, oy, oz, R, grip, grip[7],
    )
    cf1 = _collision_free_width(
        v0, e1, e2, nmin, nmax, nleft, nright, nstart, ncount, torder,
        table_h, ox, oy, oz, R, grip, grip[8],
    )
    if cf0:
        w = grip[7]
    elif cf1:
        w = grip[8]
    else:
        return 0, cf0, cf1
    level = _closure_level(
        v0, e1, e2, normal, obj_id, nmin, nmax, nleft, nright, nstart,
        ncount, torder, table_h, clip_r, R, ox, oy, oz, grip, cos_mu,
        n_pad, w,
    )
    return level, cf0, cf1


# ---------------------------------------------------------------------------
# batch entry points


@njit(cache=True)
def _render(
    ox,
    oy,
    oz,
    dirs,
    v0,
    e1,
    e2,
    obj_id,
    nmin,
    nmax,
    nleft,
    nright,
    nstart,
    ncount,
    torder,
    table_h,
    clip_r,
):
    n = dirs.shape[0]
    depth = np.zeros(n, np.float64)
    oid = np.full(n, -1, np.int32)
    for i in range(n):
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        dz = dirs[i, 2]
        t, tri = _ray_nearest(
            v0, e1, e2, nmin, nmax, nleft, nright, nstart, ncount, torder,
            ox, oy, oz, dx, dy, dz, _BIG,
        )
        tt = _ray_table(ox, oy, oz, dx, dy, dz, table_h, clip_r, _BIG)
        if tri >= 0 and t <= tt:
            depth[i] = t
            oid[i] = obj_id[tri]
        elif tt < _BIG:
            depth[i] = tt
            oid[i] = -2
    return depth, oid


@njit(cache=True)
def _channels_points(
    pts,
    R,
    d,
    v0,
    e1,
    e2,
    normal,
    obj_id,
    nmin,
    nmax,
    nleft,
    nright,
    nstart,
    ncount,
    torder,
    table_h,
    clip_r,
    grip,
    cos_mu,
    n_pad,
):
    """Channels for many surface points sharing one rotation and depth."""
    n = pts.shape[0]
    level = np.zeros(n, np.int8)
    cf0 = np.zeros(n, np.uint8)
    cf1 = np.zeros(n, np.uint8)
    for i in range(n):
        ox = pts[i, 0] + d * R[0, 2]
        oy = pts[i, 1] + d * R[1, 2]
        oz = pts[i, 2] + d * R[2, 2]
        lv, c0, c1 = _channels_one(
            v0, e1, e2, normal, obj_id, nmin, nmax, nleft, nright, nstart,
            ncount, torder, table_h, clip_r, R, ox, oy, oz, grip, cos_mu,
            n_pad,
        )
        level[i] = lv
        cf0[i] = 1 if c0 else 0
        cf1[i] = 1 if c1 else 0
    return level, cf0, cf1


@njit(cache=True)
def _channels_grasps(
    p,
    rot,
    d,
    v0,
    e1,
    e2,
    normal,
    obj_id,
    nmin,
    nmax,
    nleft,
    nright,
    nstart,
    ncount,
    torder,
    table_h,
    clip_r,
    grip,
    cos_mu,
    n_pad,
):
    """Channels for a batch of grasps with per-grasp rotation and depth."""
    n = p.shape[0]
    level = np.zeros(n, np.int8)
    cf0 = np.zeros(n, np.uint8)
    cf1 = np.zeros(n, np.uint8)
    for i in range(n):
        R = rot[i]
        ox = p[i, 0] + d[i] * R[0, 2]
        oy = p[i, 1] + d[i] * R[1, 2]
        oz = p[i, 2] + d[i] * R[2, 2]
        lv, c0, c1 = _channels_one(
            v0, e1, e2, normal, obj_id, nmin, nmax, nleft, nright, nstart,
            ncount, torder, table_h, clip_r, R, ox, oy, oz, grip, cos_mu,
            n_pad,
        )
        level[i] = lv
        cf0[i] = 1 if c0 else 0
        cf1[i] = 1 if c1 else 0
    return level, cf0, cf1


@njit(cache=True)
def _ray_batch(
    origins,
    dirs,
    v0,
    e1,
    e2,
    obj_id,
    nmin,
    nmax,
    nleft,
    nright,
    nstart,
    ncount,
    torder,
    t_max,
):
    """Nearest-triangle hits for a bundle of rays; used for surface snapping.

    Returns (t, hit_obj) with t = t_max sentinel and hit_obj = -1 on miss."""
    n = origins.shape[0]
    ts = np.full(n, _BIG, np.float64)
    oid = np.full(n, -1, np.int32)
    for i in range(n):
        t, tri = _ray_nearest(
            v0, e1, e2, nmin, nmax, nleft, nright, nstart, ncount, torder,
            origins[i, 0], origins[i, 1], origins[i, 2],
            dirs[i, 0], dirs[i, 1], dirs[i, 2], t_max,
        )
        if tri >= 0:
            ts[i] = t
            oid[i] = obj_id[tri]
    return ts, oid
