"""Fisheye camera model: equidistant projection, Jacobians, rig file I/O.

Projection maps an inertial point through the extrinsics into the camera
frame and applies the 4-coefficient equidistant distortion polynomial.
Points at or behind the image plane are reported through a validity flag,
never an exception, so batch projection of a trajectory cannot abort.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels

SCHEMA = "skeltraj/rig@1"
_ORTHO_TOL = 1e-9


class RigError(ValueError):
    """Raised for a malformed or invalid calibration file."""


@dataclass(frozen=True)
class CameraModel:
    cam_id: int
    resolution: tuple[int, int]  # (width, height) px
    fx: float
    fy: float
    cx: float
    cy: float
    dist: tuple[float, float, float, float]
    rotation: np.ndarray  # 3x3, inertial -> camera
    translation: np.ndarray  # 3, meters

    def __post_init__(self):
        w, h = self.resolution
        if self.fx <= 0 or self.fy <= 0:
            raise RigError(f"camera {self.cam_id}: focal lengths must be positive")
        if not (0 <= self.cx < w and 0 <= self.cy < h):
            raise RigError(f"camera {self.cam_id}: principal point outside the image")
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise RigError(f"camera {self.cam_id}: rotation must be 3x3")
        if np.max(np.abs(r @ r.T - np.eye(3))) > _ORTHO_TOL:
            raise RigError(f"camera {self.cam_id}: rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise RigError(f"camera {self.cam_id}: rotation determinant must be +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))
        self.rotation.setflags(write=False)
        self.translation.setflags(write=False)

    @property
    def center(self) -> np.ndarray:
        """Camera center in the inertial frame."""
        return -self.rotation.T @ self.translation

    def in_image(self, uv: np.ndarray) -> np.ndarray:
        uv = np.atleast_2d(uv)
        w, h = self.resolution
        return ((uv[:, 0] >= 0) & (uv[:, 0] < w)
                & (uv[:, 1] >= 0) & (uv[:, 1] < h))


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[CameraModel, ...]
    frame_rate: float

    def __post_init__(self):
        ids = [c.cam_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise RigError("camera ids must be unique")
        if not self.frame_rate > 0:
            raise RigError("frame_rate must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    @property
    def n_cameras(self) -> int:
        return len(self.cameras)


def _cam_args(cam: CameraModel):
    k1, k2, k3, k4 = cam.dist
    return (cam.fx, cam.fy, cam.cx, cam.cy, k1, k2, k3, k4,
            np.ascontiguousarray(cam.rotation), np.ascontiguousarray(cam.translation))


def project(cam: CameraModel, points: np.ndarray):
    """Project inertial points to pixels.

    Returns (uv, valid): uv is (2,) or (N, 2); valid is a bool or (N,) mask,
    False where the point is at or behind the camera (uv NaN there).
    """
    points = np.asarray(points, dtype=np.float64)
    single = points.ndim == 1
    pts = np.ascontiguousarray(np.atleast_2d(points))
    uv, valid = kernels.project_points(pts, *_cam_args(cam))
    if single:
        return uv[0], bool(valid[0])
    return uv, valid


def project_jacobian(cam: CameraModel, points: np.ndarray):
    """d(u,v)/d(point): (2, 3) or (N, 2, 3), with the same validity flag."""
    points = np.asarray(points, dtype=np.float64)
    single = points.ndim == 1
    pts = np.ascontiguousarray(np.atleast_2d(points))
    jac, valid = kernels.project_jacobian(pts, *_cam_args(cam))
    if single:
        return jac[0], bool(valid[0])
    return jac, valid


def undistort_ray(cam: CameraModel, uv: np.ndarray) -> np.ndarray:
    """Unit inertial-frame ray through a pixel (Newton inversion of the
    distortion polynomial, used only to seed triangulation)."""
    k1, k2, k3, k4 = cam.dist
    a_d = (uv[0] - cam.cx) / cam.fx
    b_d = (uv[1] - cam.cy) / cam.fy
    r_d = math.hypot(a_d, b_d)
    if r_d < 1e-12:
        ray = np.array([0.0, 0.0, 1.0])
    else:
        theta = r_d
        for _ in range(20):
            th2 = theta * theta
            f = theta * (1.0 + th2 * (k1 + th2 * (k2 + th2 * (k3 + th2 * k4)))) - r_d
            df = 1.0 + th2 * (3 * k1 + th2 * (5 * k2 + th2 * (7 * k3 + th2 * 9 * k4)))
            step = f / df
            theta -= step
            if abs(step) < 1e-12:
                break
        r = math.tan(theta)
        ray = np.array([a_d * r / r_d, b_d * r / r_d, 1.0])
    ray /= np.linalg.norm(ray)
    return cam.rotation.T @ ray


# ---------------------------------------------------------------------------
# calibration file I/O
# ---------------------------------------------------------------------------

def rig_to_dict(rig: CameraRig) -> dict:
    return {
        "schema": SCHEMA,
        "frame_rate": rig.frame_rate,
        "cameras": [
            {"id": c.cam_id, "resolution": list(c.resolution),
             "K": [c.fx, c.fy, c.cx, c.cy], "D": list(c.dist),
             "R": [float(v) for v in np.asarray(c.rotation).ravel()],
             "t": [float(v) for v in np.asarray(c.translation)]}
            for c in rig.cameras
        ],
    }


def rig_from_dict(doc: dict) -> CameraRig:
    allowed = {"schema", "cameras", "frame_rate"}
    unknown = set(doc) - allowed
    if unknown:
        raise RigError(f"unknown rig fields: {sorted(unknown)}")
    if doc.get("schema", SCHEMA) != SCHEMA:
        raise RigError(f"unsupported rig schema {doc.get('schema')!r}")
    if "cameras" not in doc or "frame_rate" not in doc:
        raise RigError("rig file needs 'cameras' and 'frame_rate'")
    cameras = []
    for entry in doc["cameras"]:
        extra = set(entry) - {"id", "resolution", "K", "D", "R", "t"}
        if extra:
            raise RigError(f"camera entry has unknown fields: {sorted(extra)}")
        missing = {"id", "resolution", "K", "D", "R", "t"} - set(entry)
        if missing:
            raise RigError(f"camera entry missing fields: {sorted(missing)}")
        if len(entry["K"]) != 4:
            raise RigError(f"camera {entry['id']}: K must be [fx, fy, cx, cy]")
        if len(entry["D"]) != 4:
            raise RigError(f"camera {entry['id']}: D must be [k1, k2, k3, k4]")
        if len(entry["R"]) != 9:
            raise RigError(f"camera {entry['id']}: R must be 9 row-major values")
        if len(entry["t"]) != 3:
            raise RigError(f"camera {entry['id']}: t must be 3 values")
        fx, fy, cx, cy = (float(v) for v in entry["K"])
        cameras.append(CameraModel(
            cam_id=int(entry["id"]),
            resolution=(int(entry["resolution"][0]), int(entry["resolution"][1])),
            fx=fx, fy=fy, cx=cx, cy=cy,
            dist=tuple(float(v) for v in entry["D"]),
            rotation=np.array(entry["R"], dtype=np.float64).reshape(3, 3),
            translation=np.array(entry["t"], dtype=np.float64),
        ))
    return CameraRig(cameras=tuple(cameras), frame_rate=float(doc["frame_rate"]))


def load_rig(path) -> CameraRig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise RigError(f"cannot parse {path}: {err}") from err
    return rig_from_dict(doc)


def save_rig(rig: CameraRig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rig_to_dict(rig), fh, indent=1)
        fh.write("\n")
