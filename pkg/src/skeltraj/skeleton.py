"""Articulated rigid-body skeleton: model file handling and forward kinematics.

A skeleton is a tree of rotation nodes plus a list of markers. Each node
carries an ordered Euler sequence (subset of yaw/pitch/roll about z/y/x);
each marker chains from the root point or from an earlier marker through a
fixed offset expressed in one node's frame. The pose vector holds the root
position (m) followed by the node angles (rad).

The default cheetah model ships as ``data/skeleton_default.json``; link
lengths and bounds are model data, not code constants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import NamedTuple

import numpy as np

from . import kernels

MARKER_NAMES = (
    "l_eye", "r_eye", "nose", "neck_base", "spine", "tail_base", "tail_mid",
    "tail_tip", "l_shoulder", "l_front_knee", "l_front_ankle", "r_shoulder",
    "r_front_knee", "r_front_ankle", "l_hip", "l_back_knee", "l_back_ankle",
    "r_hip", "r_back_knee", "r_back_ankle",
)

_AXES = {"x": 0, "y": 1, "z": 2}


class ModelError(ValueError):
    """Raised for a malformed or inconsistent skeleton model file."""


class PackedSkeleton(NamedTuple):
    """Array view of the model consumed by the numeric kernels."""

    node_parent: np.ndarray
    node_nrot: np.ndarray
    node_axis: np.ndarray
    node_qidx: np.ndarray
    marker_base: np.ndarray
    marker_node: np.ndarray
    marker_off: np.ndarray


@dataclass(frozen=True)
class RotationNode:
    name: str
    parent: str | None
    # ordered (axis, coordinate-name) pairs; the matrices compose left to right
    sequence: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class MarkerDef:
    name: str
    base: str | None  # marker chained from, None = the root point
    node: str
    offset: tuple[float, float, float]


@dataclass(frozen=True)
class SkeletonModel:
    """Immutable skeleton description plus packed kernel arrays."""

    coordinates: tuple[str, ...]
    nodes: tuple[RotationNode, ...]
    markers: tuple[MarkerDef, ...]
    bounds: dict[str, tuple[float, float]]
    packed: PackedSkeleton = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        _validate(self)
        object.__setattr__(self, "packed", _pack(self))

    @property
    def n_pose(self) -> int:
        return len(self.coordinates)

    @property
    def n_markers(self) -> int:
        return len(self.markers)

    @property
    def marker_names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.markers)

    def coordinate_index(self, name: str) -> int:
        return self.coordinates.index(name)

    def node_index(self, name: str) -> int:
        for i, n in enumerate(self.nodes):
            if n.name == name:
                return i
        raise KeyError(name)

    def lower_bounds(self) -> np.ndarray:
        lo = np.full(self.n_pose, -np.inf)
        for name, (mn, _) in self.bounds.items():
            lo[self.coordinate_index(name)] = mn
        return lo

    def upper_bounds(self) -> np.ndarray:
        hi = np.full(self.n_pose, np.inf)
        for name, (_, mx) in self.bounds.items():
            hi[self.coordinate_index(name)] = mx
        return hi

    def is_feasible(self, q: np.ndarray) -> bool:
        q = np.asarray(q, dtype=np.float64)
        if not np.all(np.isfinite(q)):
            return False
        return bool(np.all(q >= self.lower_bounds()) and np.all(q <= self.upper_bounds()))

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=np.float64),
                       self.lower_bounds(), self.upper_bounds())

    def link_pairs(self) -> list[tuple[str, str, float]]:
        """(marker, chained-from marker, link length) for rigid-link checks
        and for drawing the skeleton as segments."""
        out = []
        for m in self.markers:
            if m.base is not None:
                out.append((m.name, m.base, float(np.linalg.norm(m.offset))))
        return out


def _validate(model: SkeletonModel) -> None:
    if len(model.coordinates) != 24:
        raise ModelError(f"expected 24 pose coordinates, got {len(model.coordinates)}")
    if tuple(model.coordinates[:3]) != ("x", "y", "z"):
        raise ModelError("pose vector must start with x, y, z")
    if len(set(model.coordinates)) != len(model.coordinates):
        raise ModelError("duplicate coordinate names")
    if tuple(m.name for m in model.markers) != MARKER_NAMES:
        raise ModelError("markers must be the canonical 20 in canonical order")

    node_names = [n.name for n in model.nodes]
    if len(set(node_names)) != len(node_names):
        raise ModelError("duplicate node names")
    seen: set[str] = set()
    used_coords: set[str] = set()
    for n in model.nodes:
        if n.parent is not None and n.parent not in seen:
            raise ModelError(f"node {n.name}: parent {n.parent!r} must be declared first")
        if n.parent is None and n.name != node_names[0]:
            raise ModelError(f"node {n.name}: only the first node may be the root")
        if not 1 <= len(n.sequence) <= 3:
            raise ModelError(f"node {n.name}: rotation sequence must have 1..3 entries")
        for axis, coord in n.sequence:
            if axis not in _AXES:
                raise ModelError(f"node {n.name}: unknown axis {axis!r}")
            if coord not in model.coordinates or coord in ("x", "y", "z"):
                raise ModelError(f"node {n.name}: unknown angle coordinate {coord!r}")
            if coord in used_coords:
                raise ModelError(f"angle {coord!r} used by more than one node")
            used_coords.add(coord)
        seen.add(n.name)
    if used_coords != set(model.coordinates[3:]):
        raise ModelError("every angle coordinate must drive exactly one rotation slot")

    marker_seen: set[str] = set()
    for m in model.markers:
        if m.base is not None and m.base not in marker_seen:
            raise ModelError(f"marker {m.name}: base {m.base!r} must be declared first")
        if m.node not in node_names:
            raise ModelError(f"marker {m.name}: unknown node {m.node!r}")
        if len(m.offset) != 3 or not all(np.isfinite(m.offset)):
            raise ModelError(f"marker {m.name}: offset must be 3 finite numbers")
        marker_seen.add(m.name)

    for name, bound in model.bounds.items():
        if name not in model.coordinates:
            raise ModelError(f"bound on unknown coordinate {name!r}")
        if name in ("x", "y", "z"):
            raise ModelError("x, y, z are unbounded")
        mn, mx = bound
        if not (np.isfinite(mn) and np.isfinite(mx) and mn < mx):
            raise ModelError(f"bound on {name!r} must satisfy min < max")
    # three-rotation sequences must keep their middle angle clear of the
    # gimbal singularity under the default bounds
    for n in model.nodes:
        if len(n.sequence) == 3:
            coord = n.sequence[1][1]
            if coord not in model.bounds:
                raise ModelError(f"node {n.name}: middle angle {coord!r} needs bounds")
            mn, mx = model.bounds[coord]
            if mn <= -np.pi / 2 or mx >= np.pi / 2:
                raise ModelError(
                    f"node {n.name}: middle angle {coord!r} bounds must stay "
                    "strictly inside (-pi/2, pi/2)")


def _pack(model: SkeletonModel) -> PackedSkeleton:
    node_idx = {n.name: i for i, n in enumerate(model.nodes)}
    coord_idx = {c: i for i, c in enumerate(model.coordinates)}
    nj = len(model.nodes)
    parent = np.full(nj, -1, dtype=np.int64)
    nrot = np.zeros(nj, dtype=np.int64)
    axis = np.full((nj, 3), -1, dtype=np.int64)
    qidx = np.full((nj, 3), -1, dtype=np.int64)
    for i, n in enumerate(model.nodes):
        if n.parent is not None:
            parent[i] = node_idx[n.parent]
        nrot[i] = len(n.sequence)
        for s, (ax, coord) in enumerate(n.sequence):
            axis[i, s] = _AXES[ax]
            qidx[i, s] = coord_idx[coord]
    marker_idx = {m.name: i for i, m in enumerate(model.markers)}
    nm = len(model.markers)
    base = np.full(nm, -1, dtype=np.int64)
    mnode = np.zeros(nm, dtype=np.int64)
    off = np.zeros((nm, 3))
    for i, m in enumerate(model.markers):
        if m.base is not None:
            base[i] = marker_idx[m.base]
        mnode[i] = node_idx[m.node]
        off[i] = m.offset
    return PackedSkeleton(parent, nrot, axis, qidx, base, mnode, off)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def rotation_from_angles(model: SkeletonModel, node: str | int,
                         angles: np.ndarray) -> np.ndarray:
    """Local rotation matrix of one node from its per-slot angles (radians)."""
    idx = node if isinstance(node, int) else model.node_index(node)
    seq = model.nodes[idx].sequence
    angles = np.asarray(angles, dtype=np.float64).reshape(-1)
    if angles.shape[0] != len(seq):
        raise ValueError(f"node {model.nodes[idx].name} takes {len(seq)} angles")
    out = np.eye(3)
    for (ax, _), ang in zip(seq, angles):
        out = out @ kernels._axis_rotations(_AXES[ax], np.array([ang]))[0]
    return out


def forward_kinematics(model: SkeletonModel, q: np.ndarray) -> np.ndarray:
    """Marker positions for one pose (M, 3) or a batch (N, M, 3)."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q2 = np.ascontiguousarray(np.atleast_2d(q))
    if q2.shape[1] != model.n_pose:
        raise ValueError(f"pose must have {model.n_pose} entries")
    pts = kernels.fk_positions(q2, *model.packed)
    return pts[0] if single else pts


def fk_jacobian(model: SkeletonModel, q: np.ndarray) -> np.ndarray:
    """d(flattened markers)/d(pose): (3M, P) for one pose, (N, 3M, P) batched."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q2 = np.ascontiguousarray(np.atleast_2d(q))
    if q2.shape[1] != model.n_pose:
        raise ValueError(f"pose must have {model.n_pose} entries")
    jac = kernels.fk_jacobian(q2, *model.packed)
    return jac[0] if single else jac


# ---------------------------------------------------------------------------
# model file I/O
# ---------------------------------------------------------------------------

SCHEMA = "skeltraj/skeleton@1"


def model_to_dict(model: SkeletonModel) -> dict:
    return {
        "schema": SCHEMA,
        "coordinates": list(model.coordinates),
        "nodes": [
            {"name": n.name, "parent": n.parent,
             "sequence": [[ax, coord] for ax, coord in n.sequence]}
            for n in model.nodes
        ],
        "markers": [
            {"name": m.name, "base": m.base, "node": m.node,
             "offset": list(m.offset)}
            for m in model.markers
        ],
        "bounds": {k: list(v) for k, v in model.bounds.items()},
    }


def model_from_dict(doc: dict) -> SkeletonModel:
    allowed = {"schema", "coordinates", "nodes", "markers", "bounds"}
    unknown = set(doc) - allowed
    if unknown:
        raise ModelError(f"unknown skeleton fields: {sorted(unknown)}")
    if doc.get("schema", SCHEMA) != SCHEMA:
        raise ModelError(f"unsupported skeleton schema {doc.get('schema')!r}")
    try:
        nodes = tuple(
            RotationNode(n["name"], n["parent"],
                         tuple((ax, coord) for ax, coord in n["sequence"]))
            for n in doc["nodes"])
        markers = tuple(
            MarkerDef(m["name"], m["base"], m["node"],
                      tuple(float(v) for v in m["offset"]))
            for m in doc["markers"])
        bounds = {k: (float(v[0]), float(v[1])) for k, v in doc["bounds"].items()}
        coords = tuple(doc["coordinates"])
    except (KeyError, TypeError, IndexError) as err:
        raise ModelError(f"malformed skeleton document: {err}") from err
    return SkeletonModel(coords, nodes, markers, bounds)


def load_model(path) -> SkeletonModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def save_model(model: SkeletonModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def default_model() -> SkeletonModel:
    """The cheetah model shipped with the package."""
    text = resources.files("skeltraj").joinpath("data/skeleton_default.json").read_text()
    return model_from_dict(json.loads(text))
