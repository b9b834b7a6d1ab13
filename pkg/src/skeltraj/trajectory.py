"""Shared containers: dense multi-view observation sets and per-method
trajectory estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ObservationSet:
    """Per frame x camera x marker 2D detections.

    uv is (N, C, M, 2) with NaN rows for channels that were never detected;
    likelihood is (N, C, M) with NaN in the same places. Camera axis follows
    cam_ids order, marker axis follows marker_names order.
    """

    cam_ids: tuple[int, ...]
    marker_names: tuple[str, ...]
    uv: np.ndarray
    likelihood: np.ndarray

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64)
        self.likelihood = np.asarray(self.likelihood, dtype=np.float64)
        n, c, m, two = self.uv.shape
        if two != 2 or c != len(self.cam_ids) or m != len(self.marker_names):
            raise ValueError("observation array shape mismatch")
        if self.likelihood.shape != (n, c, m):
            raise ValueError("likelihood shape mismatch")
        lk = self.likelihood[np.isfinite(self.likelihood)]
        if lk.size and (lk.min() < 0.0 or lk.max() > 1.0):
            raise ValueError("likelihoods must lie in [0, 1]")

    @property
    def n_frames(self) -> int:
        return self.uv.shape[0]

    @property
    def valid(self) -> np.ndarray:
        """(N, C, M) mask of channels that carry a detection."""
        return np.all(np.isfinite(self.uv), axis=-1)

    def cam_index(self, cam_id: int) -> int:
        return self.cam_ids.index(cam_id)

    def marker_index(self, name: str) -> int:
        return self.marker_names.index(name)

    @classmethod
    def empty(cls, n_frames: int, cam_ids, marker_names) -> "ObservationSet":
        c, m = len(cam_ids), len(marker_names)
        return cls(tuple(cam_ids), tuple(marker_names),
                   np.full((n_frames, c, m, 2), np.nan),
                   np.full((n_frames, c, m), np.nan))

    def to_rows(self) -> list[list]:
        """(frame, cam_id, marker_index, u, v, likelihood) rows, sorted."""
        rows = []
        valid = self.valid
        for f, ci, mi in zip(*np.nonzero(valid)):
            rows.append([int(f), int(self.cam_ids[ci]), int(mi),
                         float(self.uv[f, ci, mi, 0]), float(self.uv[f, ci, mi, 1]),
                         float(self.likelihood[f, ci, mi])])
        return rows

    @classmethod
    def from_rows(cls, rows, cam_ids, marker_names, n_frames=None) -> "ObservationSet":
        if n_frames is None:
            n_frames = 1 + max((int(r[0]) for r in rows), default=-1)
        out = cls.empty(n_frames, cam_ids, marker_names)
        cidx = {cid: i for i, cid in enumerate(out.cam_ids)}
        for frame, cam, marker, u, v, lk in rows:
            frame, marker = int(frame), int(marker)
            if frame < 0:
                raise ValueError("frame indices must be nonnegative")
            out.uv[frame, cidx[int(cam)], marker] = (float(u), float(v))
            out.likelihood[frame, cidx[int(cam)], marker] = float(lk)
        return out


@dataclass
class TrajectoryEstimate:
    """Reconstruction output of one method over a contiguous frame range.

    poses/velocities/accelerations are (N, P) or None for methods without a
    kinematic state (triangulation). marker_positions is (N, M, 3) with NaN
    where marker_valid is False.
    """

    method: str
    frame_rate: float
    marker_names: tuple[str, ...]
    marker_positions: np.ndarray
    marker_valid: np.ndarray
    poses: np.ndarray | None = None
    velocities: np.ndarray | None = None
    accelerations: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.marker_positions = np.asarray(self.marker_positions, dtype=np.float64)
        self.marker_valid = np.asarray(self.marker_valid, dtype=bool)
        n, m, three = self.marker_positions.shape
        if three != 3 or m != len(self.marker_names):
            raise ValueError("marker_positions shape mismatch")
        if self.marker_valid.shape != (n, m):
            raise ValueError("marker_valid shape mismatch")
        for name in ("poses", "velocities", "accelerations"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.float64)
                if arr.shape[0] != n:
                    raise ValueError(f"{name} frame count mismatch")
                setattr(self, name, arr)

    @property
    def n_frames(self) -> int:
        return self.marker_positions.shape[0]
