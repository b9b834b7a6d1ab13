"""Extended Kalman Filter over the 72-dimensional kinematic state
[pose, pose rate, pose acceleration] with constant-acceleration dynamics,
a fisheye measurement model, and per-channel innovation gating.

The measurement vector stacks cameras, then markers, then (u, v); channels
without a detection are excluded from the stack, channels below the
likelihood threshold stay in with a heavily inflated variance, and channels
whose innovation exceeds gate_multiplier * sqrt(S_ii) are zeroed before the
state correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._threads import single_threaded_blas
from .camera import CameraRig, project, project_jacobian
from .skeleton import SkeletonModel, fk_jacobian, forward_kinematics
from .trajectory import ObservationSet, TrajectoryEstimate


@dataclass
class EkfConfig:
    dt: float
    jerk_sigma_translation: float = 200.0   # m/s^3
    jerk_sigma_angle: float = 500.0         # rad/s^3
    meas_sigma: float = 5.0                 # px
    low_likelihood_sigma: float = 2704.0    # px, width of the image
    likelihood_threshold: float = 0.5
    gate_multiplier: float = 3.0
    init_pose_sigma: float = 0.5            # m / rad
    init_rate_sigma: float = 5.0

    def __post_init__(self):
        if self.dt <= 0 or self.meas_sigma <= 0 or self.low_likelihood_sigma <= 0:
            raise ValueError("dt and measurement sigmas must be positive")
        if self.jerk_sigma_translation <= 0 or self.jerk_sigma_angle <= 0:
            raise ValueError("jerk sigmas must be positive")
        if self.gate_multiplier < 1.0:
            raise ValueError("gate_multiplier must be >= 1")

    def jerk_sigmas(self, n_pose: int) -> np.ndarray:
        s = np.full(n_pose, self.jerk_sigma_angle)
        s[:3] = self.jerk_sigma_translation
        return s


@dataclass
class EkfState:
    mean: np.ndarray  # (3P,) = [q, q_dot, q_ddot]
    cov: np.ndarray   # (3P, 3P)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        n = self.mean.shape[0]
        if self.cov.shape != (n, n):
            raise ValueError("covariance shape mismatch")
        if np.max(np.abs(self.cov - self.cov.T)) > 1e-9:
            raise ValueError("covariance must be symmetric")
        if np.any(np.diag(self.cov) < 0):
            raise ValueError("covariance diagonal must be nonnegative")

    @property
    def n_pose(self) -> int:
        return self.mean.shape[0] // 3

    @property
    def pose(self) -> np.ndarray:
        return self.mean[: self.n_pose]

    def copy(self) -> "EkfState":
        return EkfState(self.mean.copy(), self.cov.copy())


@dataclass
class UpdateDiagnostics:
    n_channels: int = 0
    n_low_likelihood: int = 0
    n_gated: int = 0
    skipped: bool = False


def initial_state(pose: np.ndarray, cfg: EkfConfig) -> EkfState:
    """State centered on a pose with zero rates and the configured prior."""
    pose = np.asarray(pose, dtype=np.float64)
    p = pose.shape[0]
    mean = np.zeros(3 * p)
    mean[:p] = pose
    diag = np.concatenate([
        np.full(p, cfg.init_pose_sigma ** 2),
        np.full(2 * p, cfg.init_rate_sigma ** 2),
    ])
    return EkfState(mean, np.diag(diag))


def _transition(p: int, dt: float) -> np.ndarray:
    f = np.eye(3 * p)
    f[:p, p:2 * p] = dt * np.eye(p)
    f[:p, 2 * p:] = 0.5 * dt * dt * np.eye(p)
    f[p:2 * p, 2 * p:] = dt * np.eye(p)
    return f


def _process_noise(sigmas: np.ndarray, dt: float) -> np.ndarray:
    """Discrete white-jerk covariance, per coordinate: G sigma^2 G^T with
    G = [dt^3/6, dt^2/2, dt]."""
    p = sigmas.shape[0]
    g = np.array([dt ** 3 / 6.0, dt ** 2 / 2.0, dt])
    block = np.outer(g, g)
    q = np.zeros((3 * p, 3 * p))
    for i in range(p):
        idx = np.array([i, p + i, 2 * p + i])
        q[np.ix_(idx, idx)] = block * sigmas[i] ** 2
    return q


def ekf_predict(state: EkfState, cfg: EkfConfig) -> EkfState:
    """Constant-acceleration propagation of mean and covariance."""
    p = state.n_pose
    f = _transition(p, cfg.dt)
    q = _process_noise(cfg.jerk_sigmas(p), cfg.dt)
    mean = f @ state.mean
    cov = f @ state.cov @ f.T + q
    cov = 0.5 * (cov + cov.T)
    return EkfState(mean, cov)


def _measurement(state_pose, model, rig, obs_set, frame):
    """Predicted measurement stack (cameras, then markers, then u/v) for the
    channels present in this frame, with rows of the measurement Jacobian.

    Returns (z_obs, z_hat, h_pose, lk, n_dropped) where h_pose is the
    Jacobian w.r.t. the pose block only; channels whose marker falls behind
    a camera at the current estimate are dropped and counted.
    """
    markers = forward_kinematics(model, state_pose)
    jac_fk = fk_jacobian(model, state_pose)  # (3M, P)
    m = markers.shape[0]
    valid_obs = obs_set.valid[frame]

    z_obs, z_hat, rows, lks = [], [], [], []
    n_dropped = 0
    for ci, cam in enumerate(rig.cameras):
        uv, vis = project(cam, markers)
        jp, _ = project_jacobian(cam, markers)
        for mi in range(m):
            if not valid_obs[ci, mi]:
                continue
            if not vis[mi]:
                n_dropped += 1
                continue
            z_obs.extend(obs_set.uv[frame, ci, mi])
            z_hat.extend(uv[mi])
            block = jp[mi] @ jac_fk[3 * mi:3 * mi + 3]  # (2, P)
            rows.append(block[0])
            rows.append(block[1])
            lks.extend([obs_set.likelihood[frame, ci, mi]] * 2)
    if not rows:
        return (np.zeros(0), np.zeros(0), np.zeros((0, markers.size // 3)),
                np.zeros(0), n_dropped)
    return (np.array(z_obs), np.array(z_hat), np.vstack(rows),
            np.array(lks), n_dropped)


def ekf_update(state: EkfState, obs_set: ObservationSet, frame: int,
               rig: CameraRig, model: SkeletonModel,
               cfg: EkfConfig) -> tuple[EkfState, UpdateDiagnostics]:
    """Measurement update with likelihood-based R inflation and innovation
    gating. A numerically singular innovation covariance skips the update
    and flags the frame."""
    diag = UpdateDiagnostics()
    p = state.n_pose
    z_obs, z_hat, h_pose, lks, _ = _measurement(state.pose, model, rig,
                                                obs_set, frame)
    nch = z_obs.shape[0]
    diag.n_channels = nch
    if nch == 0:
        return state.copy(), diag

    low = lks < cfg.likelihood_threshold
    diag.n_low_likelihood = int(low.sum())
    r_diag = np.where(low, cfg.low_likelihood_sigma ** 2, cfg.meas_sigma ** 2)

    cov_pose = state.cov[:, :p]  # (3P, P)
    ph_t = cov_pose @ h_pose.T   # (3P, nch)
    s = h_pose @ ph_t[:p] + np.diag(r_diag)
    try:
        factor = cho_factor(0.5 * (s + s.T))
    except (np.linalg.LinAlgError, ValueError):
        # non-positive-definite or non-finite innovation covariance
        diag.skipped = True
        return state.copy(), diag

    innovation = z_obs - z_hat
    gate = cfg.gate_multiplier * np.sqrt(np.diag(s))
    gated = np.abs(innovation) >= gate
    diag.n_gated = int(gated.sum())
    innovation = np.where(gated, 0.0, innovation)

    gain = cho_solve(factor, ph_t.T).T  # (3P, nch) = P H^T S^-1
    mean = state.mean + gain @ innovation
    ikh = np.eye(3 * p)
    ikh[:, :p] -= gain @ h_pose
    cov = ikh @ state.cov @ ikh.T + (gain * r_diag) @ gain.T
    cov = 0.5 * (cov + cov.T)
    return EkfState(mean, cov), diag


def run_ekf(obs_set: ObservationSet, rig: CameraRig, model: SkeletonModel,
            cfg: EkfConfig, init: EkfState) -> TrajectoryEstimate:
    """Alternating predict/update over all frames of an observation set."""
    with single_threaded_blas():
        return _run_ekf(obs_set, rig, model, cfg, init)


def _run_ekf(obs_set, rig, model, cfg, init) -> TrajectoryEstimate:
    n = obs_set.n_frames
    p = init.n_pose
    poses = np.zeros((n, p))
    rates = np.zeros((n, p))
    accels = np.zeros((n, p))
    gated = np.zeros(n, dtype=np.int64)
    low = np.zeros(n, dtype=np.int64)
    channels = np.zeros(n, dtype=np.int64)
    skipped = np.zeros(n, dtype=bool)

    state = init.copy()
    for f in range(n):
        if f > 0:
            state = ekf_predict(state, cfg)
        state, diag = ekf_update(state, obs_set, f, rig, model, cfg)
        poses[f] = state.mean[:p]
        rates[f] = state.mean[p:2 * p]
        accels[f] = state.mean[2 * p:]
        gated[f] = diag.n_gated
        low[f] = diag.n_low_likelihood
        channels[f] = diag.n_channels
        skipped[f] = diag.skipped

    markers = forward_kinematics(model, poses)
    return TrajectoryEstimate(
        method="EKF", frame_rate=rig.frame_rate,
        marker_names=model.marker_names,
        marker_positions=markers,
        marker_valid=np.ones(markers.shape[:2], dtype=bool),
        poses=poses, velocities=rates, accelerations=accels,
        diagnostics={"gated_channels": gated.tolist(),
                     "low_likelihood_channels": low.tolist(),
                     "channels": channels.tolist(),
                     "skipped_updates": skipped.tolist()})
