"""Synthetic ground truth: a parametric gallop over a camera rig, plus the
noise/outlier corruption model used to rank the estimators.

Corruption draws come from per-channel Philox streams keyed on
(seed, frame, camera, marker), so results do not depend on iteration order
and any subset of channels can be regenerated independently. Draw order
within a channel: noise u, noise v, outlier uniform, then (only when the
channel is selected as an outlier) outlier u, outlier v.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from numpy.random import Generator, Philox

from .camera import CameraRig, project, rig_from_dict
from .skeleton import SkeletonModel, forward_kinematics
from .trajectory import ObservationSet


@dataclass(frozen=True)
class GaitProfile:
    """Smooth periodic pose trajectory: root motion plus per-angle
    center/amplitude/phase sinusoids at the stride frequency."""

    speed: float = 7.0                     # m/s along +x
    start: tuple = (2.0, 3.0, 0.56)        # initial root position (m)
    stride_hz: float = 2.2
    bounce: float = 0.02                   # vertical root oscillation (m)
    # angle name -> (center, amplitude, phase)
    swings: dict = field(default_factory=dict)

    @staticmethod
    def gallop() -> "GaitProfile":
        # amplitudes sized so pose acceleration and jerk stay near the
        # estimators' default smoothness priors; the harness ranks
        # estimators, it does not try to be biomechanically exact
        lead = 0.45
        swings = {
            "theta_1": (0.0, 0.030, 0.0),
            "theta_2": (0.0, 0.025, 1.0),
            "theta_3": (0.0, 0.060, 0.0),
            "theta_4": (0.0, 0.060, np.pi),
            "psi_4": (0.0, 0.025, 0.5),
            "theta_5": (0.0, 0.100, 1.2),
            "psi_5": (0.0, 0.040, 0.3),
            "theta_6": (0.0, 0.110, 2.0),
            "psi_6": (0.0, 0.040, 1.1),
            "theta_7": (0.0, 0.100, 0.0),
            "theta_8": (-0.50, 0.085, 0.6),
            "theta_9": (0.0, 0.100, lead),
            "theta_10": (-0.50, 0.085, 0.6 + lead),
            "theta_11": (0.0, 0.090, np.pi),
            "theta_12": (0.50, 0.085, np.pi + 0.6),
            "theta_13": (0.0, 0.090, np.pi + lead),
            "theta_14": (0.50, 0.085, np.pi + 0.6 + lead),
        }
        return GaitProfile(swings=swings)

    @staticmethod
    def static(start=(2.0, 3.0, 0.56)) -> "GaitProfile":
        return GaitProfile(speed=0.0, start=start, bounce=0.0, swings={})


@dataclass(frozen=True)
class CorruptionParams:
    sigma_noise: float = 0.0      # px, added to every coordinate
    p_outlier: float = 0.0        # probability a 2D point also gets an outlier
    sigma_outlier: float = 0.0    # px
    seed: int = 0
    outlier_likelihood: float = 1.0  # reported likelihood of outlier points

    def __post_init__(self):
        if self.sigma_noise < 0 or self.sigma_outlier < 0:
            raise ValueError("noise sigmas must be nonnegative")
        if not 0.0 <= self.p_outlier <= 1.0:
            raise ValueError("p_outlier must lie in [0, 1]")


@dataclass
class SimRun:
    """Ground-truth trajectory with exact projections."""

    model: SkeletonModel
    rig: CameraRig
    poses: np.ndarray          # (N, P)
    markers: np.ndarray        # (N, M, 3)
    clean_obs: ObservationSet  # exact projections of in-view markers

    @property
    def n_frames(self) -> int:
        return self.poses.shape[0]


def generate_run(model: SkeletonModel, rig: CameraRig, n_frames: int,
                 profile: GaitProfile | None = None) -> SimRun:
    """Simulate a run and project it through every camera.

    Raises ValueError if the profile leaves the model's joint bounds at any
    frame. Channels where a marker is behind a camera or outside the image
    are left missing.
    """
    if n_frames < 2:
        raise ValueError("need at least 2 frames")
    profile = profile or GaitProfile.gallop()
    t = np.arange(n_frames) / rig.frame_rate
    omega = 2.0 * np.pi * profile.stride_hz

    poses = np.zeros((n_frames, model.n_pose))
    poses[:, 0] = profile.start[0] + profile.speed * t
    poses[:, 1] = profile.start[1]
    poses[:, 2] = profile.start[2] + profile.bounce * np.sin(omega * t)
    for name, (center, amp, phase) in profile.swings.items():
        poses[:, model.coordinate_index(name)] = center + amp * np.sin(omega * t + phase)

    lo, hi = model.lower_bounds(), model.upper_bounds()
    bad = (poses < lo) | (poses > hi)
    if np.any(bad):
        f, j = np.argwhere(bad)[0]
        raise ValueError(
            f"profile leaves bounds: {model.coordinates[j]} at frame {f} "
            f"is {poses[f, j]:.4f}")

    markers = forward_kinematics(model, poses)
    obs = ObservationSet.empty(n_frames, [c.cam_id for c in rig.cameras],
                               model.marker_names)
    flat = markers.reshape(-1, 3)
    for ci, cam in enumerate(rig.cameras):
        uv, valid = project(cam, flat)
        valid = valid & cam.in_image(np.nan_to_num(uv, nan=-1.0))
        uv = uv.reshape(n_frames, -1, 2)
        valid = valid.reshape(n_frames, -1)
        obs.uv[:, ci][valid] = uv[valid]
        obs.likelihood[:, ci][valid] = 1.0
    return SimRun(model=model, rig=rig, poses=poses, markers=markers, clean_obs=obs)


def _channel_stream(seed: int, frame: int, cam_index: int, marker: int) -> Generator:
    return Generator(Philox(key=seed, counter=[0, marker, cam_index, frame]))


def corrupt(run: SimRun, params: CorruptionParams) -> ObservationSet:
    """Apply Gaussian noise to every observed coordinate and, with
    probability p_outlier per 2D point, an additional Gaussian outlier to
    both coordinates. Deterministic given the seed."""
    clean = run.clean_obs
    out = ObservationSet(clean.cam_ids, clean.marker_names,
                         clean.uv.copy(), clean.likelihood.copy())
    valid = clean.valid
    for f, ci, mi in zip(*np.nonzero(valid)):
        gen = _channel_stream(params.seed, int(f), int(ci), int(mi))
        noise = gen.standard_normal(2) * params.sigma_noise
        out.uv[f, ci, mi] += noise
        if gen.uniform() < params.p_outlier:
            out.uv[f, ci, mi] += gen.standard_normal(2) * params.sigma_outlier
            out.likelihood[f, ci, mi] = params.outlier_likelihood
    return out


def synthetic_rig() -> CameraRig:
    """The shipped 6-camera fixture: two rows of three cameras flanking a
    straight track, GoPro-like fisheye intrinsics."""
    text = resources.files("skeltraj").joinpath("data/rig_synthetic.json").read_text()
    return rig_from_dict(json.loads(text))


def build_synthetic_rig() -> CameraRig:
    """Construct the fixture rig from its geometric description (the shipped
    JSON is generated from this)."""
    from .camera import CameraModel

    resolution = (2704, 1520)
    fx = fy = 1300.0
    cx, cy = 1352.0, 760.0
    dist = (0.04, 0.01, -0.002, 0.0005)
    layout = [
        (1, (0.0, -4.0, 1.2), (4.0, 3.0, 0.6)),
        (2, (6.0, -4.5, 1.2), (6.0, 3.0, 0.6)),
        (3, (12.0, -4.0, 1.2), (8.0, 3.0, 0.6)),
        (4, (12.0, 10.0, 1.2), (8.0, 3.0, 0.6)),
        (5, (6.0, 10.5, 1.2), (6.0, 3.0, 0.6)),
        (6, (0.0, 10.0, 1.2), (4.0, 3.0, 0.6)),
    ]
    cams = []
    for cam_id, center, target in layout:
        center = np.asarray(center, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - center
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.vstack([right, down, forward])
        # re-orthonormalize so the calibration file passes the 1e-9 check
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
        cams.append(CameraModel(
            cam_id=cam_id, resolution=resolution, fx=fx, fy=fy, cx=cx, cy=cy,
            dist=dist, rotation=rot, translation=-rot @ center))
    return CameraRig(cameras=tuple(cams), frame_rate=120.0)
