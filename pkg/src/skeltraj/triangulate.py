"""Per-frame 3D marker recovery: ray-midpoint initialization refined by
Levenberg-Marquardt on a Cauchy-robustified reprojection cost.

Frames and markers are treated independently; a marker seen by fewer than
two cameras above the likelihood threshold is flagged, never raised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._threads import single_threaded_blas
from .camera import CameraModel, CameraRig, project, project_jacobian, undistort_ray
from .trajectory import ObservationSet, TrajectoryEstimate

DEFAULT_LIKELIHOOD_THRESHOLD = 0.5
DEFAULT_CAUCHY_SIGMA = 5.0  # px

_STEP_TOL = 1e-10  # m
_MAX_ITER = 100
_LAMBDA0 = 1e-3


@dataclass(frozen=True)
class Observation:
    frame: int
    camera: int  # camera id
    marker: int  # marker index
    u: float
    v: float
    likelihood: float


@dataclass(frozen=True)
class PointEstimate:
    marker: int
    position: np.ndarray
    n_views: int
    residual: float  # robust cost at the solution


def cauchy_cost(e: np.ndarray, sigma: float) -> np.ndarray:
    """rho(e) = (sigma^2 / 2) log(1 + e^2) on normalized residuals e."""
    return 0.5 * sigma * sigma * np.log1p(np.square(e))


def _ray_midpoint(cam_a: CameraModel, uv_a, cam_b: CameraModel, uv_b) -> np.ndarray:
    ca, cb = cam_a.center, cam_b.center
    da = undistort_ray(cam_a, uv_a)
    db = undistort_ray(cam_b, uv_b)
    # closest points on the two rays: solve for the line parameters
    dab = da @ db
    lhs = np.array([[1.0, -dab], [dab, -(db @ db)]])
    rhs = np.array([(cb - ca) @ da, (cb - ca) @ db])
    try:
        ta, tb = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:  # parallel rays
        ta = tb = 1.0
    return 0.5 * (ca + ta * da + cb + tb * db)


def _robust_cost_only(point, cams, uvs, sigma):
    cost = 0.0
    n_front = 0
    for cam, uv_obs in zip(cams, uvs):
        uv, ok = project(cam, point)
        if not ok:
            continue
        n_front += 1
        r = uv - uv_obs
        cost += 0.5 * sigma * sigma * np.log1p((r @ r) / (sigma * sigma))
    return cost if n_front >= 2 else np.inf


def _robust_eval(point, cams, uvs, sigma):
    """Cost, gradient, and GN matrix of the Cauchy reprojection objective.

    Views the point falls behind are excluded; if fewer than two views
    remain, the cost is +inf so LM rejects the step.
    """
    cost = 0.0
    grad = np.zeros(3)
    hess = np.zeros((3, 3))
    n_front = 0
    for cam, uv_obs in zip(cams, uvs):
        uv, ok = project(cam, point)
        if not ok:
            continue
        n_front += 1
        r = uv - uv_obs
        e2 = (r @ r) / (sigma * sigma)
        cost += 0.5 * sigma * sigma * np.log1p(e2)
        w = 1.0 / (1.0 + e2)
        jac, _ = project_jacobian(cam, point)
        grad += w * jac.T @ r
        hess += w * jac.T @ jac
    if n_front < 2:
        return np.inf, grad, hess
    return cost, grad, hess


def triangulate_point(observations, rig: CameraRig,
                      threshold: float = DEFAULT_LIKELIHOOD_THRESHOLD,
                      sigma: float = DEFAULT_CAUCHY_SIGMA) -> PointEstimate | None:
    """Triangulate one marker in one frame. Returns None when fewer than two
    observations pass the likelihood threshold."""
    obs = [o for o in observations if o.likelihood >= threshold]
    if len(obs) < 2:
        return None
    frames = {o.frame for o in obs}
    markers = {o.marker for o in obs}
    if len(frames) != 1 or len(markers) != 1:
        raise ValueError("observations must share one frame and one marker")

    cam_by_id = {c.cam_id: c for c in rig.cameras}
    cams = [cam_by_id[o.camera] for o in obs]
    uvs = [np.array([o.u, o.v]) for o in obs]

    # seed from the ray-pair midpoint that scores best under the robust cost
    # over all views; trying every pair keeps a single bad ray from steering
    # the seed into a local minimum
    point = None
    cost = np.inf
    for ia in range(len(obs)):
        for ib in range(ia + 1, len(obs)):
            cand = _ray_midpoint(cams[ia], uvs[ia], cams[ib], uvs[ib])
            c_cost = _robust_cost_only(cand, cams, uvs, sigma)
            if c_cost < cost:
                point, cost = cand, c_cost
        if cost < 1e-12:  # clean data: the first consistent pair suffices
            break
    if point is None:
        # every candidate fell behind a camera: fall back to the rig centroid
        point = np.mean([c.center for c in cams], axis=0)
    cost, grad, hess = _robust_eval(point, cams, uvs, sigma)

    lam = _LAMBDA0
    for _ in range(_MAX_ITER):
        try:
            step = np.linalg.solve(hess + lam * np.eye(3), -grad)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        new_point = point + step
        new_cost, new_grad, new_hess = _robust_eval(new_point, cams, uvs, sigma)
        if new_cost < cost:
            point, cost, grad, hess = new_point, new_cost, new_grad, new_hess
            lam = max(lam / 10.0, 1e-12)
            if np.linalg.norm(step) < _STEP_TOL:
                break
        else:
            lam *= 10.0
            if lam > 1e12:
                break
    return PointEstimate(marker=obs[0].marker, position=point,
                         n_views=len(obs), residual=float(cost))


def triangulate_frame(obs_set: ObservationSet, frame: int, rig: CameraRig,
                      threshold: float = DEFAULT_LIKELIHOOD_THRESHOLD,
                      sigma: float = DEFAULT_CAUCHY_SIGMA) -> list[PointEstimate | None]:
    """All markers of one frame; None entries mark insufficient views."""
    out = []
    valid = obs_set.valid[frame]
    for mi in range(len(obs_set.marker_names)):
        obs = [Observation(frame, obs_set.cam_ids[ci], mi,
                           obs_set.uv[frame, ci, mi, 0], obs_set.uv[frame, ci, mi, 1],
                           obs_set.likelihood[frame, ci, mi])
               for ci in range(len(obs_set.cam_ids)) if valid[ci, mi]]
        out.append(triangulate_point(obs, rig, threshold, sigma))
    return out


def triangulate_trajectory(obs_set: ObservationSet, rig: CameraRig,
                           threshold: float = DEFAULT_LIKELIHOOD_THRESHOLD,
                           sigma: float = DEFAULT_CAUCHY_SIGMA) -> TrajectoryEstimate:
    """Independent per-frame triangulation of every marker."""
    with single_threaded_blas():
        return _triangulate_trajectory(obs_set, rig, threshold, sigma)


def _triangulate_trajectory(obs_set, rig, threshold, sigma) -> TrajectoryEstimate:
    n = obs_set.n_frames
    m = len(obs_set.marker_names)
    positions = np.full((n, m, 3), np.nan)
    valid = np.zeros((n, m), dtype=bool)
    residuals = np.full((n, m), np.nan)
    n_views = np.zeros((n, m), dtype=np.int64)
    for f in range(n):
        for mi, est in enumerate(triangulate_frame(obs_set, f, rig, threshold, sigma)):
            if est is not None:
                positions[f, mi] = est.position
                valid[f, mi] = True
                residuals[f, mi] = est.residual
                n_views[f, mi] = est.n_views
    return TrajectoryEstimate(
        method="TRI", frame_rate=rig.frame_rate,
        marker_names=obs_set.marker_names,
        marker_positions=positions, marker_valid=valid,
        diagnostics={"residuals": residuals.tolist(),
                     "n_views": n_views.tolist()})
