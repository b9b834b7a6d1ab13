"""Scoring: reprojection RMSE/SEM/NRMSE against 2D ground truth and
median/MAD summaries of 3D marker error against synthetic ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraRig, project
from .trajectory import ObservationSet, TrajectoryEstimate


@dataclass(frozen=True)
class ReprojectionScore:
    rmse: float
    sem: float
    n_points: int

    @property
    def empty(self) -> bool:
        return self.n_points == 0


def reprojection_errors(est: TrajectoryEstimate, gt2d: ObservationSet,
                        rig: CameraRig) -> np.ndarray:
    """Per-point pixel distances between reprojected estimates and 2D ground
    truth, over channels where both exist."""
    n = min(est.n_frames, gt2d.n_frames)
    errors = []
    for ci, cam in enumerate(rig.cameras):
        pts = est.marker_positions[:n].reshape(-1, 3)
        ok = np.all(np.isfinite(pts), axis=1)
        uv = np.full((pts.shape[0], 2), np.nan)
        if ok.any():
            uv_ok, vis = project(cam, pts[ok])
            uv[np.nonzero(ok)[0][vis]] = uv_ok[vis]
        uv = uv.reshape(n, -1, 2)
        both = np.all(np.isfinite(uv), axis=-1) & gt2d.valid[:n, ci]
        d = np.linalg.norm(uv - gt2d.uv[:n, ci], axis=-1)
        errors.append(d[both])
    return np.concatenate(errors) if errors else np.zeros(0)


def reprojection_rmse(est: TrajectoryEstimate, gt2d: ObservationSet,
                      rig: CameraRig) -> ReprojectionScore:
    """RMSE of per-point pixel errors; SEM is the standard error of the mean
    of the per-point Euclidean errors. n_points == 0 flags an empty overlap."""
    d = reprojection_errors(est, gt2d, rig)
    if d.size == 0:
        return ReprojectionScore(float("nan"), float("nan"), 0)
    rmse = float(np.sqrt(np.mean(d * d)))
    sem = float(np.std(d, ddof=0) / np.sqrt(d.size))
    return ReprojectionScore(rmse, sem, int(d.size))


def tight_bbox(points2d: np.ndarray) -> tuple[float, float]:
    """(height, width) of the tight axis-aligned box over 2D points."""
    pts = np.asarray(points2d, dtype=np.float64).reshape(-1, 2)
    pts = pts[np.all(np.isfinite(pts), axis=1)]
    if pts.shape[0] == 0:
        return (0.0, 0.0)
    w = float(pts[:, 0].max() - pts[:, 0].min())
    h = float(pts[:, 1].max() - pts[:, 1].min())
    return (h, w)


def nrmse(rmse: float, bbox: tuple[float, float]) -> float:
    """rmse / sqrt(height * width) of the subject bounding box."""
    h, w = bbox
    if h <= 0.0 or w <= 0.0:
        raise ValueError("bounding box must have positive area")
    return float(rmse / np.sqrt(h * w))


def mean_bbox_scale(gt2d: ObservationSet) -> float:
    """Mean sqrt(bbox area) of the ground-truth 2D points over all
    (frame, camera) views with a nondegenerate box; NaN when none exist."""
    scales = []
    for f in range(gt2d.n_frames):
        for ci in range(len(gt2d.cam_ids)):
            sel = gt2d.valid[f, ci]
            if sel.sum() < 2:
                continue
            h, w = tight_bbox(gt2d.uv[f, ci][sel])
            if h > 0 and w > 0:
                scales.append(np.sqrt(h * w))
    return float(np.mean(scales)) if scales else float("nan")


@dataclass(frozen=True)
class Error3dSummary:
    median: float
    mad: float  # median absolute deviation around the median
    n_points: int
    per_marker_median: dict = field(default_factory=dict)
    per_marker_mad: dict = field(default_factory=dict)


def marker_error_3d(est: TrajectoryEstimate, gt_markers: np.ndarray) -> Error3dSummary:
    """Median and MAD of per-point 3D marker error, with per-marker
    breakdowns; only markers the method reconstructed are scored."""
    n = min(est.n_frames, gt_markers.shape[0])
    err = np.linalg.norm(est.marker_positions[:n] - gt_markers[:n], axis=-1)
    valid = est.marker_valid[:n] & np.all(np.isfinite(gt_markers[:n]), axis=-1)
    flat = err[valid]
    if flat.size == 0:
        return Error3dSummary(float("nan"), float("nan"), 0)
    med = float(np.median(flat))
    mad = float(np.median(np.abs(flat - med)))
    pm_med, pm_mad = {}, {}
    for mi, name in enumerate(est.marker_names):
        sel = valid[:, mi]
        if sel.any():
            e = err[sel, mi]
            m = float(np.median(e))
            pm_med[name] = m
            pm_mad[name] = float(np.median(np.abs(e - m)))
    return Error3dSummary(med, mad, int(flat.size), pm_med, pm_mad)


def score_method(est: TrajectoryEstimate, gt2d: ObservationSet | None,
                 rig: CameraRig, gt_markers: np.ndarray | None) -> dict:
    """One method's score entry: reprojection statistics and, when 3D ground
    truth is available, the 3D error summary."""
    entry: dict = {"method": est.method}
    if gt2d is not None:
        rep = reprojection_rmse(est, gt2d, rig)
        entry["rmse_px"] = rep.rmse
        entry["sem_px"] = rep.sem
        entry["n_points_2d"] = rep.n_points
        scale = mean_bbox_scale(gt2d)
        entry["nrmse"] = (float(rep.rmse / scale)
                          if rep.n_points and np.isfinite(scale) and scale > 0
                          else float("nan"))
    if gt_markers is not None:
        s3 = marker_error_3d(est, gt_markers)
        entry["median_3d_m"] = s3.median
        entry["mad_3d_m"] = s3.mad
        entry["n_points_3d"] = s3.n_points
        entry["per_marker_median_3d_m"] = s3.per_marker_median
        entry["per_marker_mad_3d_m"] = s3.per_marker_mad
    return entry
