"""Full trajectory estimation: batch optimization over every frame at once.

The implicit-Euler dynamics

    x_k = x_{k-1} + dt * xdot_k
    xdot_k = xdot_{k-1} + dt * xddot_k
    xddot_k = xddot_{k-1} + w_k

and the kinematic/projection constraints are eliminated by substitution:
velocities and accelerations are backward differences of the pose sequence,
acceleration disturbances w are third differences, and measurement residuals
v are reprojection errors. What remains is a bound-constrained smooth
problem in the pose sequence alone, solved by damped Gauss-Newton with
projection onto the joint bounds. The returned trajectory therefore
satisfies the dynamics and kinematic equations by construction.

Measurement residuals pass through a redescending cost (quadratic, linear,
smoothly saturating, then flat), so gross outliers exert no pull at all;
disturbances are penalized quadratically after per-coordinate normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import kernels
from ._threads import single_threaded_blas
from .camera import CameraRig
from .skeleton import SkeletonModel, fk_jacobian, forward_kinematics
from .trajectory import ObservationSet, TrajectoryEstimate


@dataclass(frozen=True)
class RobustCostParams:
    a: float = 3.0
    b: float = 10.0
    c: float = 20.0
    sigma_meas: float = 5.0  # px

    def __post_init__(self):
        if not 0.0 < self.a < self.b < self.c:
            raise ValueError("thresholds must satisfy 0 < a < b < c")
        if self.sigma_meas <= 0:
            raise ValueError("sigma_meas must be positive")


@dataclass
class FteConfig:
    robust: RobustCostParams = field(default_factory=RobustCostParams)
    sigma_model_translation: float = 5.0   # m/s^2
    sigma_model_angle: float = 50.0        # rad/s^2
    likelihood_threshold: float = 0.5
    max_iter: int = 500
    pg_tol: float = 1e-6
    # long trajectories are solved in overlapping windows
    window_threshold: int = 500
    window_len: int = 200
    window_overlap: int = 20

    def sigma_model(self, n_pose: int) -> np.ndarray:
        s = np.full(n_pose, self.sigma_model_angle)
        s[:3] = self.sigma_model_translation
        return s


def robust_cost(e, params: RobustCostParams = RobustCostParams()):
    """Scalar (or array) redescending cost of a normalized residual."""
    arr = np.atleast_1d(np.asarray(e, dtype=np.float64))
    cost, _, _ = kernels.redescending(arr.ravel(), params.a, params.b, params.c)
    cost = cost.reshape(arr.shape)
    return float(cost[0]) if np.isscalar(e) or np.ndim(e) == 0 else cost


def robust_cost_derivative(e, params: RobustCostParams = RobustCostParams()):
    arr = np.atleast_1d(np.asarray(e, dtype=np.float64))
    _, dc, _ = kernels.redescending(arr.ravel(), params.a, params.b, params.c)
    dc = dc.reshape(arr.shape)
    return float(dc[0]) if np.isscalar(e) or np.ndim(e) == 0 else dc


@dataclass
class FteProblem:
    """Reduced trajectory problem: masked measurements plus the disturbance
    operator, everything expressed over the (N, P) pose sequence."""

    model: SkeletonModel
    rig: CameraRig
    y: np.ndarray            # (N, C, M, 2) observed pixels, NaN when absent
    mask: np.ndarray         # (N, C, M) channels that enter the cost
    dt: float
    params: RobustCostParams
    sigma_model: np.ndarray  # (P,)
    lower: np.ndarray
    upper: np.ndarray
    disturbance_op: sp.csr_matrix     # x -> stacked w rows, frames 3..N-1
    model_hessian: sp.csc_matrix      # 2 (DM)^T (DM), constant

    @property
    def n_frames(self) -> int:
        return self.y.shape[0]

    @property
    def n_pose(self) -> int:
        return self.lower.shape[0]


def build_problem(obs_set: ObservationSet, rig: CameraRig, model: SkeletonModel,
                  cfg: FteConfig) -> FteProblem:
    n = obs_set.n_frames
    if n < 2:
        raise ValueError("need at least 2 frames")
    p = model.n_pose
    dt = rig.dt
    mask = obs_set.valid & (obs_set.likelihood >= cfg.likelihood_threshold)
    m_op = _disturbance_operator(n, p, dt)
    sig = cfg.sigma_model(p)
    d = sp.diags(np.tile(1.0 / sig, max(n - 3, 0)))
    dm = d @ m_op
    return FteProblem(
        model=model, rig=rig, y=obs_set.uv, mask=mask, dt=dt,
        params=cfg.robust, sigma_model=sig,
        lower=model.lower_bounds(), upper=model.upper_bounds(),
        disturbance_op=m_op.tocsr(),
        model_hessian=(2.0 * (dm.T @ dm)).tocsc())


def _disturbance_operator(n: int, p: int, dt: float) -> sp.csr_matrix:
    """Maps the flattened pose sequence to the stacked binding acceleration
    disturbances: third differences of the pose, frames 3..N-1.

    The first-frame velocity and acceleration enter only the two leading
    disturbance rows of the full formulation, so the optimizer can always
    zero those rows for free; they are dropped here, which keeps this
    reduced problem exactly equivalent to the constrained one.
    """
    if n < 4:
        return sp.csr_matrix((0, n * p))
    rows, cols, vals = [], [], []
    inv = 1.0 / (dt * dt)
    r = 0
    for k in range(3, n):
        pattern = ((k, 1.0), (k - 1, -3.0), (k - 2, 3.0), (k - 3, -1.0))
        for j in range(p):
            for fr, coef in pattern:
                rows.append(r + j)
                cols.append(fr * p + j)
                vals.append(coef * inv)
        r += p
    return sp.csr_matrix((vals, (rows, cols)), shape=((n - 3) * p, n * p))


def _measurement_terms(prob: FteProblem, x: np.ndarray, with_jac: bool):
    """Residuals (and channel Jacobians) of the masked measurements at x.

    Channels whose marker sits behind a camera at x are dropped from the
    cost for this evaluation.
    """
    n, p = prob.n_frames, prob.n_pose
    m = prob.model.n_markers
    pts = forward_kinematics(prob.model, x)          # (N, M, 3)
    flat = np.ascontiguousarray(pts.reshape(-1, 3))
    c = prob.rig.n_cameras
    resid = np.zeros((n, c, m, 2))
    active = np.zeros((n, c, m), dtype=bool)
    jac = None
    if with_jac:
        jfk = fk_jacobian(prob.model, x).reshape(n, m, 3, p)
        jac = np.zeros((n, c, m, 2, p))
    for ci, cam in enumerate(prob.rig.cameras):
        k1, k2, k3, k4 = cam.dist
        args = (cam.fx, cam.fy, cam.cx, cam.cy, k1, k2, k3, k4,
                np.ascontiguousarray(cam.rotation),
                np.ascontiguousarray(cam.translation))
        uv, vis = kernels.project_points(flat, *args)
        uv = uv.reshape(n, m, 2)
        vis = vis.reshape(n, m)
        act = prob.mask[:, ci] & vis
        active[:, ci] = act
        resid[:, ci][act] = (prob.y[:, ci] - uv)[act]
        if with_jac:
            jp, _ = kernels.project_jacobian(flat, *args)
            jp = jp.reshape(n, m, 2, 3)
            jc = np.einsum("nmij,nmjk->nmik", jp, jfk)
            jac[:, ci][act] = jc[act]
    return pts, resid, active, jac


def objective(prob: FteProblem, x: np.ndarray) -> float:
    """Measurement cost plus normalized disturbance cost at a pose sequence."""
    x = np.asarray(x, dtype=np.float64).reshape(prob.n_frames, prob.n_pose)
    _, resid, active, _ = _measurement_terms(prob, x, with_jac=False)
    e = resid[active].ravel() / prob.params.sigma_meas
    cost_meas = float(np.sum(kernels.redescending(
        np.ascontiguousarray(e), prob.params.a, prob.params.b, prob.params.c)[0]))
    w = prob.disturbance_op @ x.ravel()
    wn = w.reshape(-1, prob.n_pose) / prob.sigma_model
    return cost_meas + float(np.sum(wn * wn))


def objective_gradient(prob: FteProblem, x: np.ndarray):
    """(cost, gradient, gauss_newton_blocks) at a pose sequence."""
    x = np.asarray(x, dtype=np.float64).reshape(prob.n_frames, prob.n_pose)
    n, p = prob.n_frames, prob.n_pose
    sigma = prob.params.sigma_meas
    _, resid, active, jac = _measurement_terms(prob, x, with_jac=True)

    e = resid / sigma
    cost_arr, dcost, weight = kernels.redescending(
        np.ascontiguousarray(e.ravel()), prob.params.a, prob.params.b, prob.params.c)
    act2 = np.repeat(active[..., None], 2, axis=-1).ravel()
    cost_meas = float(cost_arr[act2].sum())
    dcost = np.where(act2, dcost, 0.0).reshape(e.shape)
    weight = np.where(act2, weight, 0.0).reshape(e.shape)

    # v = y - h(x): d(cost)/dx = -C'(e)/sigma * J
    jflat = jac.reshape(n, -1, p)
    dflat = (dcost / sigma).reshape(n, -1)
    wflat = (weight / (sigma * sigma)).reshape(n, -1)
    grad_meas = -np.einsum("nq,nqk->nk", dflat, jflat)
    gn_blocks = np.einsum("nqk,nq,nql->nkl", jflat, wflat, jflat)

    xf = x.ravel()
    w = prob.disturbance_op @ xf
    wn = w.reshape(-1, p) / prob.sigma_model
    cost_model = float(np.sum(wn * wn))
    grad_model = prob.model_hessian @ xf

    cost = cost_meas + cost_model
    grad = grad_meas.ravel() + grad_model
    return cost, grad, gn_blocks


def build_objective(prob: FteProblem, x: np.ndarray):
    """(cost, gradient) of the reduced problem; gradient checked against
    finite differences in the test suite."""
    cost, grad, _ = objective_gradient(prob, x)
    return cost, grad


def projected_gradient_norm(prob: FteProblem, x: np.ndarray, grad: np.ndarray) -> float:
    x = x.reshape(prob.n_frames, prob.n_pose)
    g = grad.reshape(prob.n_frames, prob.n_pose).copy()
    at_lo = x <= prob.lower + 1e-12
    at_hi = x >= prob.upper - 1e-12
    g[at_lo & (g > 0)] = 0.0
    g[at_hi & (g < 0)] = 0.0
    return float(np.max(np.abs(g))) if g.size else 0.0


def _solve_window(prob: FteProblem, x0: np.ndarray, cfg: FteConfig):
    """Damped Gauss-Newton with projection onto the joint bounds."""
    n, p = prob.n_frames, prob.n_pose
    lo = np.tile(prob.lower, n)
    hi = np.tile(prob.upper, n)
    x = np.clip(np.asarray(x0, dtype=np.float64).ravel().copy(), lo, hi)

    cost, grad, blocks = objective_gradient(prob, x)
    lam = 1e-4
    n_iter = 0
    converged = False
    pg = projected_gradient_norm(prob, x, grad)
    trace = [cost]
    frames_idx = np.arange(n)
    for n_iter in range(1, cfg.max_iter + 1):
        if pg < cfg.pg_tol:
            converged = True
            break
        hbd = sp.bsr_matrix(
            (blocks, frames_idx, np.arange(n + 1)), shape=(n * p, n * p))
        accepted = False
        for _ in range(12):
            h = (hbd + prob.model_hessian
                 + sp.identity(n * p, format="csr") * lam).tocsc()
            try:
                step = splu(h).solve(-grad)
            except RuntimeError:
                lam *= 10.0
                continue
            alpha = 1.0
            for _ in range(20):
                cand = np.clip(x + alpha * step, lo, hi)
                c_cost = objective(prob, cand.reshape(n, p))
                if c_cost < cost:
                    x = cand
                    cost = c_cost
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                lam = max(lam / 10.0, 1e-10)
                break
            lam *= 10.0
            if lam > 1e10:
                break
        if not accepted:
            break
        cost, grad, blocks = objective_gradient(prob, x)
        trace.append(cost)
        pg = projected_gradient_norm(prob, x, grad)
    else:
        n_iter = cfg.max_iter
    if pg < cfg.pg_tol:
        converged = True
    return x.reshape(n, p), cost, pg, n_iter, converged, trace


def root_init_from_markers(model: SkeletonModel, positions: np.ndarray,
                           valid: np.ndarray) -> np.ndarray:
    """Per-frame root position and heading from marker estimates
    (triangulation output); every other coordinate starts at zero."""
    names = model.marker_names
    i_le, i_re = names.index("l_eye"), names.index("r_eye")
    i_nose, i_neck = names.index("nose"), names.index("neck_base")
    n = positions.shape[0]
    x = np.zeros((n, model.n_pose))
    yaw_idx = model.coordinate_index("psi_1")
    last_root = None
    last_yaw = 0.0
    for f in range(n):
        if valid[f, i_le] and valid[f, i_re]:
            root = 0.5 * (positions[f, i_le] + positions[f, i_re])
        elif valid[f, i_nose]:
            root = positions[f, i_nose]
        elif valid[f].any():
            root = np.nanmean(positions[f][valid[f]], axis=0)
        else:
            root = last_root
        if root is None:
            root = np.zeros(3)
        if valid[f, i_neck] and root is not None:
            fwd = root - positions[f, i_neck]
            if np.hypot(fwd[0], fwd[1]) > 1e-9:
                last_yaw = float(np.arctan2(fwd[1], fwd[0]))
        x[f, :3] = root
        x[f, yaw_idx] = last_yaw
        last_root = root
    return x


def solve_fte(obs_set: ObservationSet, rig: CameraRig, model: SkeletonModel,
              cfg: FteConfig | None = None,
              init: TrajectoryEstimate | None = None) -> TrajectoryEstimate:
    """Batch trajectory estimate over all frames.

    init supplies per-frame marker estimates (typically the triangulation
    output) used to seed the root position and heading; when omitted, the
    solver triangulates internally. Non-convergence returns the best iterate
    with a warning flag rather than raising.
    """
    cfg = cfg or FteConfig()
    if obs_set.n_frames < 2:
        raise ValueError("need at least 2 frames")
    if init is None:
        from .triangulate import triangulate_trajectory
        init = triangulate_trajectory(obs_set, rig,
                                      threshold=cfg.likelihood_threshold)
    if init.n_frames < obs_set.n_frames:
        raise ValueError("init must cover every observed frame")
    x0 = root_init_from_markers(model, init.marker_positions, init.marker_valid)

    with single_threaded_blas():
        n = obs_set.n_frames
        if n <= cfg.window_threshold:
            prob = build_problem(obs_set, rig, model, cfg)
            x, cost, pg, n_iter, converged, trace = _solve_window(prob, x0, cfg)
        else:
            x, cost, pg, n_iter, converged, trace = _solve_windowed(
                obs_set, rig, model, cfg, x0)

    return _package(x, obs_set, rig, model, cfg, cost, pg, n_iter, converged, trace)


def _solve_windowed(obs_set, rig, model, cfg, x0):
    """Overlapping windows blended linearly across the shared frames."""
    n = obs_set.n_frames
    step = cfg.window_len - cfg.window_overlap
    x = x0.copy()
    total_cost = 0.0
    worst_pg = 0.0
    total_iter = 0
    all_converged = True
    trace: list[float] = []
    start = 0
    prev_end = None
    while True:
        end = min(start + cfg.window_len, n)
        sub = ObservationSet(obs_set.cam_ids, obs_set.marker_names,
                             obs_set.uv[start:end], obs_set.likelihood[start:end])
        prob = build_problem(sub, rig, model, cfg)
        xw, cost, pg, n_iter, conv, tr = _solve_window(prob, x[start:end], cfg)
        trace.extend(tr)
        if prev_end is None:
            x[start:end] = xw
        else:
            overlap = prev_end - start
            ramp = np.linspace(0.0, 1.0, overlap + 2)[1:-1, None]
            x[start:start + overlap] = ((1.0 - ramp) * x[start:start + overlap]
                                        + ramp * xw[:overlap])
            x[start + overlap:end] = xw[overlap:]
        total_cost += cost
        worst_pg = max(worst_pg, pg)
        total_iter += n_iter
        all_converged &= conv
        if end >= n:
            break
        prev_end = end
        start += step
    return x, total_cost, worst_pg, total_iter, all_converged, trace


def _package(x, obs_set, rig, model, cfg, cost, pg, n_iter, converged, trace):
    n, p = x.shape
    dt = rig.dt
    vel = np.zeros_like(x)
    vel[1:] = np.diff(x, axis=0) / dt
    acc = np.zeros_like(x)
    acc[2:] = np.diff(vel[1:], axis=0) / dt
    # first-frame derivatives are free in the full formulation; pick the
    # values that zero the two leading disturbances
    acc[1] = acc[2] if n > 2 else 0.0
    acc[0] = acc[1]
    vel[0] = vel[1] - dt * acc[1] if n > 1 else 0.0

    # disturbances w_k = xddot_k - xddot_{k-1}; the first two vanish
    w = np.zeros((max(n - 1, 0), p))
    if n > 2:
        w[1:] = np.diff(acc[1:], axis=0)

    prob = build_problem(obs_set, rig, model, cfg)
    _, resid, active, _ = _measurement_terms(prob, x, with_jac=False)
    v_rms = np.zeros(n)
    for f in range(n):
        r = resid[f][active[f]]
        v_rms[f] = float(np.sqrt(np.mean(np.sum(r * r, axis=-1)))) if r.size else 0.0

    markers = forward_kinematics(model, x)
    return TrajectoryEstimate(
        method="FTE", frame_rate=rig.frame_rate,
        marker_names=model.marker_names,
        marker_positions=markers,
        marker_valid=np.ones(markers.shape[:2], dtype=bool),
        poses=x, velocities=vel, accelerations=acc,
        diagnostics={
            "converged": bool(converged),
            "warning": not bool(converged),
            "iterations": int(n_iter),
            "final_cost": float(cost),
            "projected_gradient_inf_norm": float(pg),
            "cost_trace": [float(v) for v in trace],
            "disturbance_norms": np.linalg.norm(w, axis=1).tolist(),
            "residual_rms_px": v_rms.tolist(),
        })
