"""Numeric kernels with numba-accelerated and pure-numpy implementations.

Every public kernel exists in two variants, ``*_numpy`` and (when numba is
importable) ``*_numba``. The module-level names without a suffix are bound to
one variant at import time: numba when available, unless the environment
variable ``SKELTRAJ_DISABLE_NUMBA`` is set to a truthy value, in which case
the numpy path is selected. ``benchmarks/bench_kernels.py`` compares the two.

Skeleton data is passed as packed arrays (see skeleton.SkeletonModel.packed)
so the kernels stay generic over the model file:

  node_parent[j]    parent rotation-node index, -1 for the inertial frame
  node_nrot[j]      number of elementary rotations in node j's sequence
  node_axis[j,s]    axis of slot s (0=x, 1=y, 2=z), -1 padding
  node_qidx[j,s]    pose-vector index of slot s's angle, -1 padding
  marker_base[m]    index of the marker this one chains from, -1 for the root
  marker_node[m]    rotation node whose frame carries marker m's offset
  marker_off[m,:]   fixed offset in meters, expressed in that node's frame

Nodes and markers are topologically ordered: parents precede children.
"""

from __future__ import annotations

import math
import os

import numpy as np

_env = os.environ.get("SKELTRAJ_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _env not in ("", "0", "false", "no")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED


# ---------------------------------------------------------------------------
# elementary rotations
# ---------------------------------------------------------------------------

def _axis_rotations(axis: int, ang: np.ndarray) -> np.ndarray:
    """Batched elementary rotation matrices about a coordinate axis."""
    n = ang.shape[0]
    c = np.cos(ang)
    s = np.sin(ang)
    out = np.zeros((n, 3, 3))
    if axis == 0:
        out[:, 0, 0] = 1.0
        out[:, 1, 1] = c
        out[:, 1, 2] = -s
        out[:, 2, 1] = s
        out[:, 2, 2] = c
    elif axis == 1:
        out[:, 1, 1] = 1.0
        out[:, 0, 0] = c
        out[:, 0, 2] = s
        out[:, 2, 0] = -s
        out[:, 2, 2] = c
    else:
        out[:, 2, 2] = 1.0
        out[:, 0, 0] = c
        out[:, 0, 1] = -s
        out[:, 1, 0] = s
        out[:, 1, 1] = c
    return out


def _axis_rotation_derivs(axis: int, ang: np.ndarray) -> np.ndarray:
    """Derivative of the elementary rotation w.r.t. its angle, batched."""
    n = ang.shape[0]
    c = np.cos(ang)
    s = np.sin(ang)
    out = np.zeros((n, 3, 3))
    if axis == 0:
        out[:, 1, 1] = -s
        out[:, 1, 2] = -c
        out[:, 2, 1] = c
        out[:, 2, 2] = -s
    elif axis == 1:
        out[:, 0, 0] = -s
        out[:, 0, 2] = c
        out[:, 2, 0] = -c
        out[:, 2, 2] = -s
    else:
        out[:, 0, 0] = -s
        out[:, 0, 1] = -c
        out[:, 1, 0] = c
        out[:, 1, 1] = -s
    return out


def _node_rotations_numpy(q, node_parent, node_nrot, node_axis, node_qidx):
    """World rotation of every node for every frame: (N, J, 3, 3)."""
    n, _ = q.shape
    nj = node_parent.shape[0]
    local = np.empty((n, nj, 3, 3))
    world = np.empty((n, nj, 3, 3))
    eye = np.broadcast_to(np.eye(3), (n, 3, 3))
    for j in range(nj):
        rl = eye
        for s in range(node_nrot[j]):
            rl = rl @ _axis_rotations(node_axis[j, s], q[:, node_qidx[j, s]])
        local[:, j] = rl
        p = node_parent[j]
        world[:, j] = rl if p < 0 else world[:, p] @ rl
    return world, local


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------

def fk_positions_numpy(q, node_parent, node_nrot, node_axis, node_qidx,
                       marker_base, marker_node, marker_off):
    """Marker positions for a batch of poses: (N, M, 3)."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    world, _ = _node_rotations_numpy(q, node_parent, node_nrot, node_axis, node_qidx)
    n = q.shape[0]
    m = marker_base.shape[0]
    pts = np.empty((n, m, 3))
    root = q[:, 0:3]
    for k in range(m):
        base = root if marker_base[k] < 0 else pts[:, marker_base[k]]
        pts[:, k] = base + np.einsum("nij,j->ni", world[:, marker_node[k]], marker_off[k])
    return pts


def fk_jacobian_numpy(q, node_parent, node_nrot, node_axis, node_qidx,
                      marker_base, marker_node, marker_off):
    """Jacobian of flattened marker positions w.r.t. the pose: (N, 3M, P)."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    n, npose = q.shape
    nj = node_parent.shape[0]
    m = marker_base.shape[0]
    world, local = _node_rotations_numpy(q, node_parent, node_nrot, node_axis, node_qidx)
    jac = np.zeros((n, m, 3, npose))
    jac[:, :, 0, 0] = 1.0
    jac[:, :, 1, 1] = 1.0
    jac[:, :, 2, 2] = 1.0

    for j in range(nj):
        for s in range(node_nrot[j]):
            qi = node_qidx[j, s]
            # local rotation with slot s replaced by its angle derivative
            drl = np.broadcast_to(np.eye(3), (n, 3, 3))
            for t in range(node_nrot[j]):
                ang = q[:, node_qidx[j, t]]
                if t == s:
                    drl = drl @ _axis_rotation_derivs(node_axis[j, t], ang)
                else:
                    drl = drl @ _axis_rotations(node_axis[j, t], ang)
            dworld = np.zeros((n, nj, 3, 3))
            p = node_parent[j]
            dworld[:, j] = drl if p < 0 else world[:, p] @ drl
            for k in range(j + 1, nj):
                pk = node_parent[k]
                if pk >= 0:
                    dworld[:, k] = dworld[:, pk] @ local[:, k]
            dpts = np.zeros((n, m, 3))
            for k in range(m):
                dbase = 0.0 if marker_base[k] < 0 else dpts[:, marker_base[k]]
                dpts[:, k] = dbase + np.einsum(
                    "nij,j->ni", dworld[:, marker_node[k]], marker_off[k])
            jac[:, :, :, qi] = dpts
    return jac.reshape(n, 3 * m, npose)


if HAVE_NUMBA:

    @njit(cache=True)
    def _rot_into(axis, ang, out):
        c = math.cos(ang)
        s = math.sin(ang)
        for i in range(3):
            for j in range(3):
                out[i, j] = 0.0
        if axis == 0:
            out[0, 0] = 1.0
            out[1, 1] = c
            out[1, 2] = -s
            out[2, 1] = s
            out[2, 2] = c
        elif axis == 1:
            out[1, 1] = 1.0
            out[0, 0] = c
            out[0, 2] = s
            out[2, 0] = -s
            out[2, 2] = c
        else:
            out[2, 2] = 1.0
            out[0, 0] = c
            out[0, 1] = -s
            out[1, 0] = s
            out[1, 1] = c

    @njit(cache=True)
    def _drot_into(axis, ang, out):
        c = math.cos(ang)
        s = math.sin(ang)
        for i in range(3):
            for j in range(3):
                out[i, j] = 0.0
        if axis == 0:
            out[1, 1] = -s
            out[1, 2] = -c
            out[2, 1] = c
            out[2, 2] = -s
        elif axis == 1:
            out[0, 0] = -s
            out[0, 2] = c
            out[2, 0] = -c
            out[2, 2] = -s
        else:
            out[0, 0] = -s
            out[0, 1] = -c
            out[1, 0] = c
            out[1, 1] = -s

    @njit(cache=True)
    def _mat3_mul(a, b, out):
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for k in range(3):
                    acc += a[i, k] * b[k, j]
                out[i, j] = acc

    @njit(cache=True)
    def _node_rotations_frame(qrow, node_parent, node_nrot, node_axis, node_qidx,
                              world, local):
        nj = node_parent.shape[0]
        tmp = np.empty((3, 3))
        rot = np.empty((3, 3))
        for j in range(nj):
            rl = np.eye(3)
            for s in range(node_nrot[j]):
                _rot_into(node_axis[j, s], qrow[node_qidx[j, s]], rot)
                _mat3_mul(rl, rot, tmp)
                rl[:, :] = tmp
            local[j] = rl
            p = node_parent[j]
            if p < 0:
                world[j] = rl
            else:
                _mat3_mul(world[p], rl, tmp)
                world[j] = tmp

    @njit(cache=True)
    def fk_positions_numba(q, node_parent, node_nrot, node_axis, node_qidx,
                           marker_base, marker_node, marker_off):
        n = q.shape[0]
        nj = node_parent.shape[0]
        m = marker_base.shape[0]
        pts = np.empty((n, m, 3))
        world = np.empty((nj, 3, 3))
        local = np.empty((nj, 3, 3))
        for f in range(n):
            _node_rotations_frame(q[f], node_parent, node_nrot, node_axis,
                                  node_qidx, world, local)
            for k in range(m):
                b = marker_base[k]
                r = world[marker_node[k]]
                for i in range(3):
                    base = q[f, i] if b < 0 else pts[f, b, i]
                    pts[f, k, i] = base + (r[i, 0] * marker_off[k, 0]
                                           + r[i, 1] * marker_off[k, 1]
                                           + r[i, 2] * marker_off[k, 2])
        return pts

    @njit(cache=True)
    def fk_jacobian_numba(q, node_parent, node_nrot, node_axis, node_qidx,
                          marker_base, marker_node, marker_off):
        n, npose = q.shape
        nj = node_parent.shape[0]
        m = marker_base.shape[0]
        jac = np.zeros((n, m, 3, npose))
        world = np.empty((nj, 3, 3))
        local = np.empty((nj, 3, 3))
        dworld = np.empty((nj, 3, 3))
        dpts = np.empty((m, 3))
        drl = np.empty((3, 3))
        rot = np.empty((3, 3))
        tmp = np.empty((3, 3))
        for f in range(n):
            _node_rotations_frame(q[f], node_parent, node_nrot, node_axis,
                                  node_qidx, world, local)
            for k in range(m):
                jac[f, k, 0, 0] = 1.0
                jac[f, k, 1, 1] = 1.0
                jac[f, k, 2, 2] = 1.0
            for j in range(nj):
                for s in range(node_nrot[j]):
                    qi = node_qidx[j, s]
                    drl[:, :] = np.eye(3)
                    for t in range(node_nrot[j]):
                        ang = q[f, node_qidx[j, t]]
                        if t == s:
                            _drot_into(node_axis[j, t], ang, rot)
                        else:
                            _rot_into(node_axis[j, t], ang, rot)
                        _mat3_mul(drl, rot, tmp)
                        drl[:, :] = tmp
                    for k in range(nj):
                        dworld[k, :, :] = 0.0
                    p = node_parent[j]
                    if p < 0:
                        dworld[j] = drl
                    else:
                        _mat3_mul(world[p], drl, tmp)
                        dworld[j] = tmp
                    for k in range(j + 1, nj):
                        pk = node_parent[k]
                        if pk >= 0:
                            _mat3_mul(dworld[pk], local[k], tmp)
                            dworld[k] = tmp
                    for k in range(m):
                        b = marker_base[k]
                        r = dworld[marker_node[k]]
                        for i in range(3):
                            dbase = 0.0 if b < 0 else dpts[b, i]
                            dpts[k, i] = dbase + (r[i, 0] * marker_off[k, 0]
                                                  + r[i, 1] * marker_off[k, 1]
                                                  + r[i, 2] * marker_off[k, 2])
                    for k in range(m):
                        for i in range(3):
                            jac[f, k, i, qi] = dpts[k, i]
        return jac.reshape(n, 3 * m, npose)


# ---------------------------------------------------------------------------
# fisheye projection
# ---------------------------------------------------------------------------

_R_EPS = 1e-9


def project_points_numpy(pts, fx, fy, cx, cy, k1, k2, k3, k4, rot, trans):
    """Equidistant-fisheye projection of world points.

    Returns (uv, valid) where valid is False for points at or behind the
    camera plane; their uv rows are NaN.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    pc = pts @ rot.T + trans
    z = pc[:, 2]
    valid = z > 0.0
    uv = np.full((pts.shape[0], 2), np.nan)
    if not np.any(valid):
        return uv, valid
    a = pc[valid, 0] / z[valid]
    b = pc[valid, 1] / z[valid]
    r = np.hypot(a, b)
    theta = np.arctan(r)
    th2 = theta * theta
    theta_d = theta * (1.0 + th2 * (k1 + th2 * (k2 + th2 * (k3 + th2 * k4))))
    scale = np.where(r < _R_EPS, 1.0, theta_d / np.where(r < _R_EPS, 1.0, r))
    uv[valid, 0] = fx * scale * a + cx
    uv[valid, 1] = fy * scale * b + cy
    return uv, valid


def project_jacobian_numpy(pts, fx, fy, cx, cy, k1, k2, k3, k4, rot, trans):
    """d(u,v)/d(world point) for each point: (N, 2, 3), with validity mask."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    pc = pts @ rot.T + trans
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    valid = z > 0.0
    jac = np.full((pts.shape[0], 2, 3), np.nan)
    if not np.any(valid):
        return jac, valid
    zi = np.where(valid, z, 1.0)
    a = x / zi
    b = y / zi
    r2 = a * a + b * b
    r = np.sqrt(r2)
    theta = np.arctan(r)
    th2 = theta * theta
    theta_d = theta * (1.0 + th2 * (k1 + th2 * (k2 + th2 * (k3 + th2 * k4))))
    dtheta_d = 1.0 + th2 * (3.0 * k1 + th2 * (5.0 * k2 + th2 * (7.0 * k3 + th2 * 9.0 * k4)))
    small = r < _R_EPS
    rs = np.where(small, 1.0, r)
    s = np.where(small, 1.0, theta_d / rs)
    # t = (ds/dr)/r stays finite as r -> 0
    t = np.where(small,
                 2.0 * (k1 - 1.0 / 3.0),
                 (dtheta_d / (1.0 + r2) - s) / np.where(small, 1.0, r2))
    dua = fx * (s + a * a * t)
    dub = fx * a * b * t
    dva = fy * a * b * t
    dvb = fy * (s + b * b * t)
    jc = np.empty((pts.shape[0], 2, 3))
    jc[:, 0, 0] = dua / zi
    jc[:, 0, 1] = dub / zi
    jc[:, 0, 2] = -(dua * a + dub * b) / zi
    jc[:, 1, 0] = dva / zi
    jc[:, 1, 1] = dvb / zi
    jc[:, 1, 2] = -(dva * a + dvb * b) / zi
    out = jc @ rot
    jac[valid] = out[valid]
    return jac, valid


if HAVE_NUMBA:

    @njit(cache=True)
    def project_points_numba(pts, fx, fy, cx, cy, k1, k2, k3, k4, rot, trans):
        n = pts.shape[0]
        uv = np.full((n, 2), np.nan)
        valid = np.zeros(n, dtype=np.bool_)
        for i in range(n):
            x = rot[0, 0] * pts[i, 0] + rot[0, 1] * pts[i, 1] + rot[0, 2] * pts[i, 2] + trans[0]
            y = rot[1, 0] * pts[i, 0] + rot[1, 1] * pts[i, 1] + rot[1, 2] * pts[i, 2] + trans[1]
            z = rot[2, 0] * pts[i, 0] + rot[2, 1] * pts[i, 1] + rot[2, 2] * pts[i, 2] + trans[2]
            if z <= 0.0:
                continue
            valid[i] = True
            a = x / z
            b = y / z
            r = math.hypot(a, b)
            theta = math.atan(r)
            th2 = theta * theta
            theta_d = theta * (1.0 + th2 * (k1 + th2 * (k2 + th2 * (k3 + th2 * k4))))
            scale = 1.0 if r < _R_EPS else theta_d / r
            uv[i, 0] = fx * scale * a + cx
            uv[i, 1] = fy * scale * b + cy
        return uv, valid

    @njit(cache=True)
    def project_jacobian_numba(pts, fx, fy, cx, cy, k1, k2, k3, k4, rot, trans):
        n = pts.shape[0]
        jac = np.full((n, 2, 3), np.nan)
        valid = np.zeros(n, dtype=np.bool_)
        for i in range(n):
            x = rot[0, 0] * pts[i, 0] + rot[0, 1] * pts[i, 1] + rot[0, 2] * pts[i, 2] + trans[0]
            y = rot[1, 0] * pts[i, 0] + rot[1, 1] * pts[i, 1] + rot[1, 2] * pts[i, 2] + trans[1]
            z = rot[2, 0] * pts[i, 0] + rot[2, 1] * pts[i, 1] + rot[2, 2] * pts[i, 2] + trans[2]
            if z <= 0.0:
                continue
            valid[i] = True
            a = x / z
            b = y / z
            r2 = a * a + b * b
            r = math.sqrt(r2)
            theta = math.atan(r)
            th2 = theta * theta
            theta_d = theta * (1.0 + th2 * (k1 + th2 * (k2 + th2 * (k3 + th2 * k4))))
            dtheta_d = 1.0 + th2 * (3.0 * k1 + th2 * (5.0 * k2 + th2 * (7.0 * k3 + th2 * 9.0 * k4)))
            if r < _R_EPS:
                s = 1.0
                t = 2.0 * (k1 - 1.0 / 3.0)
            else:
                s = theta_d / r
                t = (dtheta_d / (1.0 + r2) - s) / r2
            dua = fx * (s + a * a * t)
            dub = fx * a * b * t
            dva = fy * a * b * t
            dvb = fy * (s + b * b * t)
            j00 = dua / z
            j01 = dub / z
            j02 = -(dua * a + dub * b) / z
            j10 = dva / z
            j11 = dvb / z
            j12 = -(dva * a + dvb * b) / z
            for col in range(3):
                jac[i, 0, col] = j00 * rot[0, col] + j01 * rot[1, col] + j02 * rot[2, col]
                jac[i, 1, col] = j10 * rot[0, col] + j11 * rot[1, col] + j12 * rot[2, col]
        return jac, valid


# ---------------------------------------------------------------------------
# redescending robust cost
# ---------------------------------------------------------------------------

def redescending_numpy(e, a, b, c):
    """Piecewise redescending cost, its derivative, and the IRLS weight.

    Quadratic inside |e| < a, linear up to b, a smooth saturating segment on
    [b, c) whose slope falls from a to zero, and constant beyond c. Once
    continuously differentiable at a and b, |dcost| <= a everywhere, so a
    gross outlier exerts bounded pull and none at all past c. Returns
    (cost, dcost, weight) with weight = dcost/e (1 at e = 0).
    """
    e = np.asarray(e, dtype=np.float64)
    ae = np.abs(e)
    sgn = np.sign(e)
    cost = np.empty_like(ae)
    dcost = np.empty_like(ae)
    weight = np.empty_like(ae)

    sat = a * b - 0.5 * a * a + 0.5 * a * (c - b)

    m = ae < a
    cost[m] = 0.5 * ae[m] ** 2
    dcost[m] = e[m]
    weight[m] = 1.0

    m = (ae >= a) & (ae < b)
    cost[m] = a * ae[m] - 0.5 * a * a
    dcost[m] = a * sgn[m]
    weight[m] = a / ae[m]

    m = (ae >= b) & (ae < c)
    frac = (c - ae[m]) / (c - b)
    cost[m] = a * b - 0.5 * a * a + 0.5 * a * (c - b) * (1.0 - frac * frac)
    dcost[m] = a * frac * sgn[m]
    weight[m] = a * frac / ae[m]

    m = ae >= c
    cost[m] = sat
    dcost[m] = 0.0
    weight[m] = 0.0
    return cost, dcost, weight


if HAVE_NUMBA:

    @njit(cache=True)
    def redescending_numba(e, a, b, c):
        n = e.shape[0]
        cost = np.empty(n)
        dcost = np.empty(n)
        weight = np.empty(n)
        sat = a * b - 0.5 * a * a + 0.5 * a * (c - b)
        for i in range(n):
            ae = abs(e[i])
            sgn = 1.0 if e[i] >= 0.0 else -1.0
            if ae < a:
                cost[i] = 0.5 * ae * ae
                dcost[i] = e[i]
                weight[i] = 1.0
            elif ae < b:
                cost[i] = a * ae - 0.5 * a * a
                dcost[i] = a * sgn
                weight[i] = a / ae
            elif ae < c:
                frac = (c - ae) / (c - b)
                cost[i] = a * b - 0.5 * a * a + 0.5 * a * (c - b) * (1.0 - frac * frac)
                dcost[i] = a * frac * sgn
                weight[i] = a * frac / ae
            else:
                cost[i] = sat
                dcost[i] = 0.0
                weight[i] = 0.0
        return cost, dcost, weight


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    fk_positions = fk_positions_numba
    fk_jacobian = fk_jacobian_numba
    project_points = project_points_numba
    project_jacobian = project_jacobian_numba
    redescending = redescending_numba
else:
    fk_positions = fk_positions_numpy
    fk_jacobian = fk_jacobian_numpy
    project_points = project_points_numpy
    project_jacobian = project_jacobian_numpy
    redescending = redescending_numpy


def backend() -> str:
    """Name of the active kernel backend."""
    return "numba" if USE_NUMBA else "numpy"
