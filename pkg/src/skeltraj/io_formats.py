"""Versioned exchange files: keypoints, ground truth, trajectories, scene
documents, corrections, and score reports.

Everything is strict JSON (non-finite values become null) with a leading
"schema" field, written atomically (temp file + rename) and with sorted
keys so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .camera import CameraRig, project, rig_from_dict, rig_to_dict
from .skeleton import SkeletonModel, model_from_dict, model_to_dict
from .trajectory import ObservationSet, TrajectoryEstimate

KEYPOINTS_SCHEMA = "skeltraj/keypoints@1"
GROUND_TRUTH_SCHEMA = "skeltraj/ground_truth@1"
TRAJECTORY_SCHEMA = "skeltraj/trajectory@1"
SCENE_SCHEMA = "skeltraj/scene@1"
CORRECTIONS_SCHEMA = "skeltraj/corrections@1"
SCORE_SCHEMA = "skeltraj/score_report@1"


class FormatError(ValueError):
    """Raised when an exchange file fails schema validation."""


def _nullify(arr) -> list:
    """Nested lists with non-finite floats replaced by None (strict JSON)."""
    def conv(v):
        if isinstance(v, list):
            return [conv(x) for x in v]
        f = float(v)
        return f if np.isfinite(f) else None
    return conv(np.asarray(arr, dtype=np.float64).tolist())


def _denullify(data) -> np.ndarray:
    def conv(v):
        if isinstance(v, list):
            return [conv(x) for x in v]
        return np.nan if v is None else float(v)
    return np.asarray(conv(data), dtype=np.float64)


def write_json_atomic(doc: dict, path) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1, allow_nan=False)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load(path, schema: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise FormatError(f"cannot parse {path}: {err}") from err
    if doc.get("schema") != schema:
        raise FormatError(f"{path}: expected schema {schema!r}, "
                          f"found {doc.get('schema')!r}")
    return doc


# ---------------------------------------------------------------------------
# keypoints
# ---------------------------------------------------------------------------

def write_keypoints(obs: ObservationSet, path, rig_id: str = "",
                    frame_rate: float = 0.0) -> None:
    doc = {
        "schema": KEYPOINTS_SCHEMA,
        "rig_id": rig_id,
        "frame_rate": frame_rate,
        "n_frames": obs.n_frames,
        "cam_ids": list(obs.cam_ids),
        "markers": list(obs.marker_names),
        # rows: frame, camera id, marker index, u, v, likelihood
        "rows": obs.to_rows(),
    }
    write_json_atomic(doc, path)


def read_keypoints(path) -> tuple[ObservationSet, dict]:
    doc = _load(path, KEYPOINTS_SCHEMA)
    required = {"rig_id", "frame_rate", "n_frames", "cam_ids", "markers", "rows"}
    missing = required - set(doc)
    if missing:
        raise FormatError(f"{path}: missing fields {sorted(missing)}")
    obs = ObservationSet.from_rows(doc["rows"], doc["cam_ids"],
                                   tuple(doc["markers"]),
                                   n_frames=int(doc["n_frames"]))
    meta = {"rig_id": doc["rig_id"], "frame_rate": float(doc["frame_rate"])}
    return obs, meta


# ---------------------------------------------------------------------------
# ground truth (poses optional: corrected ground truth has only markers)
# ---------------------------------------------------------------------------

def write_ground_truth(path, marker_names, marker_positions,
                       frame_rate: float, poses=None, coordinates=None) -> None:
    doc = {
        "schema": GROUND_TRUTH_SCHEMA,
        "frame_rate": frame_rate,
        "markers": list(marker_names),
        "marker_positions": _nullify(marker_positions),
        "poses": None if poses is None else _nullify(poses),
        "coordinates": None if coordinates is None else list(coordinates),
    }
    write_json_atomic(doc, path)


def read_ground_truth(path) -> dict:
    doc = _load(path, GROUND_TRUTH_SCHEMA)
    out = {
        "frame_rate": float(doc["frame_rate"]),
        "markers": tuple(doc["markers"]),
        "marker_positions": _denullify(doc["marker_positions"]),
        "poses": None if doc.get("poses") is None else _denullify(doc["poses"]),
        "coordinates": (None if doc.get("coordinates") is None
                        else tuple(doc["coordinates"])),
    }
    return out


# ---------------------------------------------------------------------------
# trajectory estimates
# ---------------------------------------------------------------------------

def write_trajectory(est: TrajectoryEstimate, path) -> None:
    doc = {
        "schema": TRAJECTORY_SCHEMA,
        "method": est.method,
        "frame_rate": est.frame_rate,
        "markers": list(est.marker_names),
        "marker_positions": _nullify(est.marker_positions),
        "marker_valid": est.marker_valid.tolist(),
        "poses": None if est.poses is None else _nullify(est.poses),
        "velocities": None if est.velocities is None else _nullify(est.velocities),
        "accelerations": (None if est.accelerations is None
                          else _nullify(est.accelerations)),
        "diagnostics": est.diagnostics,
    }
    write_json_atomic(doc, path)


def read_trajectory(path) -> TrajectoryEstimate:
    doc = _load(path, TRAJECTORY_SCHEMA)
    opt = {k: None if doc.get(k) is None else _denullify(doc[k])
           for k in ("poses", "velocities", "accelerations")}
    return TrajectoryEstimate(
        method=doc["method"], frame_rate=float(doc["frame_rate"]),
        marker_names=tuple(doc["markers"]),
        marker_positions=_denullify(doc["marker_positions"]),
        marker_valid=np.asarray(doc["marker_valid"], dtype=bool),
        diagnostics=doc.get("diagnostics", {}),
        **opt)


# ---------------------------------------------------------------------------
# scene documents (self-contained viewer input)
# ---------------------------------------------------------------------------

def export_scene(est: TrajectoryEstimate, rig: CameraRig, model: SkeletonModel,
                 obs: ObservationSet, path) -> dict:
    """Write a self-contained scene: skeleton, rig, per-frame poses, marker
    clouds, the 2D observations, and per-channel reprojection residuals
    (observed minus reprojected). Returns the document."""
    n = est.n_frames
    c = rig.n_cameras
    m = len(est.marker_names)
    if obs.n_frames < n or tuple(obs.marker_names) != tuple(est.marker_names):
        raise FormatError("observations do not cover the estimate")

    reproj = np.full((n, c, m, 2), np.nan)
    flat = est.marker_positions.reshape(-1, 3)
    ok = np.all(np.isfinite(flat), axis=1)
    for ci, cam in enumerate(rig.cameras):
        uv = np.full((flat.shape[0], 2), np.nan)
        if ok.any():
            uv_ok, vis = project(cam, flat[ok])
            uv[np.nonzero(ok)[0][vis]] = uv_ok[vis]
        reproj[:, ci] = uv.reshape(n, m, 2)
    residuals = np.where(np.isfinite(reproj) & np.isfinite(obs.uv[:n]),
                         obs.uv[:n] - reproj, np.nan)

    frames = []
    for f in range(n):
        frames.append({
            "pose": None if est.poses is None else _nullify(est.poses[f]),
            "markers": _nullify(est.marker_positions[f]),
            "marker_valid": est.marker_valid[f].tolist(),
            "observations": _nullify(obs.uv[f]),
            "likelihoods": _nullify(obs.likelihood[f]),
            "residuals": _nullify(residuals[f]),
        })
    doc = {
        "schema": SCENE_SCHEMA,
        "method": est.method,
        "frame_rate": est.frame_rate,
        "marker_names": list(est.marker_names),
        "skeleton": model_to_dict(model),
        "rig": rig_to_dict(rig),
        "frames": frames,
        "diagnostics": est.diagnostics,
    }
    write_json_atomic(doc, path)
    return doc


def read_scene(path) -> dict:
    doc = _load(path, SCENE_SCHEMA)
    for key in ("method", "marker_names", "skeleton", "rig", "frames"):
        if key not in doc:
            raise FormatError(f"{path}: scene missing {key!r}")
    n_markers = len(doc["marker_names"])
    for i, fr in enumerate(doc["frames"]):
        if len(fr["markers"]) != n_markers:
            raise FormatError(f"{path}: frame {i} marker count mismatch")
    # validate the embedded sections against their own schemas
    model_from_dict(doc["skeleton"])
    rig_from_dict(doc["rig"])
    return doc


# ---------------------------------------------------------------------------
# corrections
# ---------------------------------------------------------------------------

def write_corrections(corrections: list[dict], path) -> None:
    rows = []
    for c in corrections:
        rows.append({
            "frame": int(c["frame"]),
            "marker": str(c["marker"]),
            "original": _nullify(c["original"]),
            "corrected": _nullify(c["corrected"]),
            "author": str(c.get("author", "")),
            "timestamp": str(c.get("timestamp", "")),
        })
    rows.sort(key=lambda r: (r["frame"], r["marker"]))
    write_json_atomic({"schema": CORRECTIONS_SCHEMA, "corrections": rows}, path)


def read_corrections(path) -> list[dict]:
    doc = _load(path, CORRECTIONS_SCHEMA)
    out = []
    for i, c in enumerate(doc.get("corrections", [])):
        for key in ("frame", "marker", "original", "corrected"):
            if key not in c:
                raise FormatError(f"{path}: correction {i} missing {key!r}")
        out.append({
            "frame": int(c["frame"]), "marker": str(c["marker"]),
            "original": _denullify(c["original"]),
            "corrected": _denullify(c["corrected"]),
            "author": str(c.get("author", "")),
            "timestamp": str(c.get("timestamp", "")),
        })
    return out


# ---------------------------------------------------------------------------
# score reports
# ---------------------------------------------------------------------------

_CSV_COLUMNS = ("dataset", "method", "sigma_n", "p_outlier", "sigma_outlier",
                "rmse_px", "sem_px", "nrmse", "median_3d_m", "mad_3d_m",
                "n_points_2d", "n_points_3d")


def write_score_report(report: dict, path) -> None:
    doc = dict(report)
    doc["schema"] = SCORE_SCHEMA
    write_json_atomic(doc, path)


def read_score_report(path) -> dict:
    return _load(path, SCORE_SCHEMA)


def write_score_csv(report: dict, path) -> None:
    """Flat comma-separated table of the report for plotting."""
    lines = [",".join(_CSV_COLUMNS)]
    for ds_name in sorted(report["datasets"]):
        ds = report["datasets"][ds_name]
        params = ds.get("params", {})
        for method in sorted(ds["methods"]):
            entry = ds["methods"][method]
            row = [ds_name, method,
                   repr(params.get("sigma_n", "")),
                   repr(params.get("p_outlier", "")),
                   repr(params.get("sigma_outlier", ""))]
            for col in _CSV_COLUMNS[5:]:
                v = entry.get(col)
                if v is None:
                    row.append("")
                elif isinstance(v, float):
                    row.append(repr(v))
                else:
                    row.append(str(v))
            lines.append(",".join(row))
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
