"""Pipeline orchestration: configuration, stage DAG, artifact layout.

A run is driven by a YAML config. Stages execute in dependency order
(synth -> estimators -> score); every stage validates its inputs before any
stage runs, artifacts land under out_dir, and a manifest records what
completed. Fixed seeds make reruns byte-identical.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import io_formats, metrics
from .camera import CameraRig, load_rig
from .ekf import EkfConfig, initial_state, run_ekf
from .fte import FteConfig, RobustCostParams, root_init_from_markers, solve_fte
from .skeleton import SkeletonModel, default_model, load_model
from .synth import CorruptionParams, GaitProfile, SimRun, corrupt, generate_run, synthetic_rig
from .trajectory import ObservationSet, TrajectoryEstimate
from .triangulate import triangulate_trajectory

log = logging.getLogger("skeltraj")

CONFIG_SCHEMA = "skeltraj/config@1"
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE_FAILURE = 3

STAGE_ORDER = ("synth", "triangulate", "ekf", "fte", "score", "export-scene")
_ESTIMATORS = ("triangulate", "ekf", "fte")
_METHOD_NAMES = {"triangulate": "TRI", "ekf": "EKF", "fte": "FTE"}


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    seed: int = 0
    out_dir: str = "out"
    skeleton: str = "default"
    rig: str = "synthetic"
    stages: list = field(default_factory=lambda: list(STAGE_ORDER[:5]))
    synth: dict = field(default_factory=dict)
    keypoints: str | None = None
    ground_truth: str | None = None
    triangulate: dict = field(default_factory=dict)
    ekf: dict = field(default_factory=dict)
    fte: dict = field(default_factory=dict)
    score: dict = field(default_factory=dict)
    export_scene: dict = field(default_factory=dict)
    base_dir: str = "."


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if raw.get("schema", CONFIG_SCHEMA) != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema {raw.get('schema')!r}")
    raw.pop("schema", None)
    allowed = {f for f in PipelineConfig.__dataclass_fields__} - {"base_dir"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    cfg = PipelineConfig(**raw)
    cfg.base_dir = os.path.dirname(os.path.abspath(path))
    for stage in cfg.stages:
        if stage not in STAGE_ORDER:
            raise ConfigError(f"unknown stage {stage!r}")
    return cfg


def _resolve(cfg: PipelineConfig, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(cfg.base_dir, path)


def _load_skeleton(cfg: PipelineConfig) -> SkeletonModel:
    if cfg.skeleton == "default":
        return default_model()
    return load_model(_resolve(cfg, cfg.skeleton))


def _load_rig(cfg: PipelineConfig) -> CameraRig:
    if cfg.rig == "synthetic":
        return synthetic_rig()
    return load_rig(_resolve(cfg, cfg.rig))


def _profile(spec) -> GaitProfile:
    if spec in (None, "gallop"):
        return GaitProfile.gallop()
    if spec == "static":
        return GaitProfile.static()
    if isinstance(spec, dict):
        base = GaitProfile.gallop()
        swings = spec.get("swings", base.swings)
        swings = {k: tuple(v) for k, v in swings.items()}
        return GaitProfile(
            speed=float(spec.get("speed", base.speed)),
            start=tuple(spec.get("start", base.start)),
            stride_hz=float(spec.get("stride_hz", base.stride_hz)),
            bounce=float(spec.get("bounce", base.bounce)),
            swings=swings)
    raise ConfigError(f"unknown gait profile {spec!r}")


def _dataset_name(sigma_n: float, p_o: float) -> str:
    sn = f"{sigma_n:g}".replace(".", "_")
    po = f"{100.0 * p_o:g}".replace(".", "_")
    return f"sn{sn}_po{po}"


def dataset_grid(cfg: PipelineConfig) -> list[dict]:
    """Corruption settings for every synthetic dataset, named."""
    synth_cfg = cfg.synth
    grid = synth_cfg.get("grid", {})
    sigmas = grid.get("sigma_n", [0.0, 5.0, 10.0])
    p_outliers = grid.get("p_outlier", [0.0, 0.02, 0.05])
    sigma_o = float(grid.get("sigma_outlier", 100.0))
    out = []
    for sn in sigmas:
        for po in p_outliers:
            out.append({"name": _dataset_name(float(sn), float(po)),
                        "sigma_n": float(sn), "p_outlier": float(po),
                        "sigma_outlier": sigma_o})
    return out


@dataclass
class PipelineResult:
    exit_code: int
    artifacts: dict
    error: str | None = None


def _keypoints_path(out_dir: str, name: str) -> str:
    return os.path.join(out_dir, "synth", f"keypoints_{name}.json")


def _traj_path(out_dir: str, stage: str, name: str) -> str:
    return os.path.join(out_dir, stage, f"trajectory_{name}.json")


def _ekf_meas_sigma(cfg: PipelineConfig, sigma_n: float) -> float:
    v = cfg.ekf.get("meas_sigma", "auto")
    if v == "auto":
        # R carries the dataset's known detector noise, floored at 5 px
        return max(5.0, sigma_n)
    return float(v)


def _fte_meas_sigma(cfg: PipelineConfig, sigma_n: float) -> float:
    v = cfg.fte.get("sigma_meas", "auto")
    if v == "auto":
        return max(5.0, sigma_n)
    return float(v)


def _ekf_config(cfg: PipelineConfig, frame_rate: float, sigma_n: float) -> EkfConfig:
    e = cfg.ekf
    return EkfConfig(
        dt=1.0 / frame_rate,
        jerk_sigma_translation=float(e.get("jerk_sigma_translation", 200.0)),
        jerk_sigma_angle=float(e.get("jerk_sigma_angle", 500.0)),
        meas_sigma=_ekf_meas_sigma(cfg, sigma_n),
        low_likelihood_sigma=float(e.get("low_likelihood_sigma", 2704.0)),
        likelihood_threshold=float(e.get("likelihood_threshold", 0.5)),
        gate_multiplier=float(e.get("gate_multiplier", 3.0)),
        init_pose_sigma=float(e.get("init_pose_sigma", 0.5)),
        init_rate_sigma=float(e.get("init_rate_sigma", 5.0)))


def _fte_config(cfg: PipelineConfig, sigma_n: float) -> FteConfig:
    f = cfg.fte
    robust = RobustCostParams(
        a=float(f.get("a", 3.0)), b=float(f.get("b", 10.0)),
        c=float(f.get("c", 20.0)),
        sigma_meas=_fte_meas_sigma(cfg, sigma_n))
    return FteConfig(
        robust=robust,
        sigma_model_translation=float(f.get("sigma_model_translation", 5.0)),
        sigma_model_angle=float(f.get("sigma_model_angle", 50.0)),
        likelihood_threshold=float(f.get("likelihood_threshold", 0.5)),
        max_iter=int(f.get("max_iter", 500)),
        pg_tol=float(f.get("pg_tol", 1e-6)),
        window_threshold=int(f.get("window_threshold", 500)),
        window_len=int(f.get("window_len", 200)),
        window_overlap=int(f.get("window_overlap", 20)))


def preflight(cfg: PipelineConfig) -> list[str]:
    """Names every missing input before any stage runs."""
    problems = []
    if cfg.skeleton != "default" and not os.path.exists(_resolve(cfg, cfg.skeleton)):
        problems.append(f"skeleton file not found: {cfg.skeleton}")
    if cfg.rig != "synthetic" and not os.path.exists(_resolve(cfg, cfg.rig)):
        problems.append(f"calibration file not found: {cfg.rig}")
    needs_data = any(s in cfg.stages for s in _ESTIMATORS + ("score",))
    if "synth" not in cfg.stages and needs_data:
        if cfg.keypoints is None:
            problems.append("no synth stage and no keypoints file configured")
        elif not os.path.exists(_resolve(cfg, cfg.keypoints)):
            problems.append(f"keypoints file not found: {cfg.keypoints}")
    if cfg.ground_truth is not None and not os.path.exists(_resolve(cfg, cfg.ground_truth)):
        problems.append(f"ground truth file not found: {cfg.ground_truth}")
    return problems


def run_pipeline(config_path, seed: int | None = None,
                 out_dir: str | None = None,
                 stages: list[str] | None = None) -> PipelineResult:
    """Execute the configured stages in dependency order.

    Returns exit code 0 on success, 2 for validation problems found before
    any stage ran, 3 when a stage failed (partial artifacts are kept and the
    manifest marks the failure).
    """
    try:
        cfg = load_config(config_path)
    except (ConfigError, OSError, yaml.YAMLError) as err:
        log.error("config error: %s", err)
        return PipelineResult(EXIT_VALIDATION, {}, str(err))
    if seed is not None:
        cfg.seed = int(seed)
    if out_dir is not None:
        cfg.out_dir = out_dir
    if stages is not None:
        cfg.stages = list(stages)
    cfg.out_dir = _resolve(cfg, cfg.out_dir)

    problems = preflight(cfg)
    if problems:
        for p in problems:
            log.error("preflight: %s", p)
        return PipelineResult(EXIT_VALIDATION, {}, "; ".join(problems))

    ordered = [s for s in STAGE_ORDER if s in cfg.stages]
    manifest = {"config": os.path.abspath(os.fspath(config_path)),
                "seed": cfg.seed, "stages": {}, "complete": False}
    artifacts: dict = {}
    state = _RunState(cfg)
    for stage in ordered:
        log.info("stage %s ...", stage)
        try:
            produced = _STAGE_FUNCS[stage](state)
        except Exception as err:  # stage failure: keep partial artifacts
            log.error("stage %s failed: %s", stage, err)
            manifest["stages"][stage] = {"status": "failed", "error": str(err)}
            io_formats.write_json_atomic(
                manifest, os.path.join(cfg.out_dir, "manifest.json"))
            return PipelineResult(EXIT_STAGE_FAILURE, artifacts, str(err))
        manifest["stages"][stage] = {"status": "ok",
                                     "artifacts": sorted(produced)}
        artifacts[stage] = produced
        log.info("stage %s done", stage)
    manifest["complete"] = True
    io_formats.write_json_atomic(manifest, os.path.join(cfg.out_dir, "manifest.json"))
    return PipelineResult(EXIT_OK, artifacts)


class _RunState:
    """Carries loaded inputs and intermediate artifacts across stages."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.model = _load_skeleton(cfg)
        self.rig = _load_rig(cfg)
        self.run: SimRun | None = None
        self.datasets: list[dict] = []
        self.observations: dict[str, ObservationSet] = {}
        self.estimates: dict[tuple[str, str], TrajectoryEstimate] = {}
        self.gt2d: ObservationSet | None = None
        self.gt_markers: np.ndarray | None = None

    def ensure_datasets(self):
        """Load observation sets (and ground truth) when the synth stage did
        not run in this process."""
        if self.observations:
            return
        cfg = self.cfg
        if cfg.keypoints is not None:
            obs, _ = io_formats.read_keypoints(_resolve(cfg, cfg.keypoints))
            self.datasets = [{"name": "external", "sigma_n": float("nan"),
                              "p_outlier": float("nan"),
                              "sigma_outlier": float("nan")}]
            self.observations["external"] = obs
        else:
            self.datasets = dataset_grid(cfg)
            for ds in self.datasets:
                path = _keypoints_path(cfg.out_dir, ds["name"])
                if not os.path.exists(path):
                    raise FileNotFoundError(
                        f"dataset {ds['name']} not found; run the synth stage first")
                self.observations[ds["name"]], _ = io_formats.read_keypoints(path)
            clean = os.path.join(cfg.out_dir, "synth", "keypoints_clean.json")
            if os.path.exists(clean):
                self.gt2d, _ = io_formats.read_keypoints(clean)
        if cfg.ground_truth is not None:
            gt = io_formats.read_ground_truth(_resolve(cfg, cfg.ground_truth))
            self.gt_markers = gt["marker_positions"]
        else:
            gt_path = os.path.join(cfg.out_dir, "synth", "ground_truth.json")
            if os.path.exists(gt_path):
                gt = io_formats.read_ground_truth(gt_path)
                self.gt_markers = gt["marker_positions"]


def _stage_synth(state: _RunState) -> list[str]:
    cfg = state.cfg
    n_frames = int(cfg.synth.get("n_frames", 100))
    profile = _profile(cfg.synth.get("profile"))
    state.run = generate_run(state.model, state.rig, n_frames, profile)
    state.gt2d = state.run.clean_obs
    state.gt_markers = state.run.markers
    produced = []

    gt_path = os.path.join(cfg.out_dir, "synth", "ground_truth.json")
    io_formats.write_ground_truth(
        gt_path, state.model.marker_names, state.run.markers,
        state.rig.frame_rate, poses=state.run.poses,
        coordinates=state.model.coordinates)
    produced.append(gt_path)

    clean_path = os.path.join(cfg.out_dir, "synth", "keypoints_clean.json")
    io_formats.write_keypoints(state.run.clean_obs, clean_path,
                               rig_id=cfg.rig, frame_rate=state.rig.frame_rate)
    produced.append(clean_path)

    state.datasets = dataset_grid(cfg)
    for ds in state.datasets:
        params = CorruptionParams(
            sigma_noise=ds["sigma_n"], p_outlier=ds["p_outlier"],
            sigma_outlier=ds["sigma_outlier"], seed=cfg.seed)
        obs = corrupt(state.run, params)
        state.observations[ds["name"]] = obs
        path = _keypoints_path(cfg.out_dir, ds["name"])
        io_formats.write_keypoints(obs, path, rig_id=cfg.rig,
                                   frame_rate=state.rig.frame_rate)
        produced.append(path)
    return produced


def _estimate(state: _RunState, stage: str, ds: dict,
              obs: ObservationSet) -> TrajectoryEstimate:
    cfg = state.cfg
    sigma_n = ds["sigma_n"] if np.isfinite(ds["sigma_n"]) else 0.0
    if stage == "triangulate":
        return triangulate_trajectory(
            obs, state.rig,
            threshold=float(cfg.triangulate.get("likelihood_threshold", 0.5)),
            sigma=float(cfg.triangulate.get("cauchy_sigma", 5.0)))
    if stage == "ekf":
        ecfg = _ekf_config(cfg, state.rig.frame_rate, sigma_n)
        tri = state.estimates.get(("triangulate", ds["name"]))
        if tri is None:
            # only the first frame is needed to seed the state
            first = ObservationSet(obs.cam_ids, obs.marker_names,
                                   obs.uv[:1], obs.likelihood[:1])
            tri = triangulate_trajectory(first, state.rig)
        x0 = root_init_from_markers(state.model, tri.marker_positions[:1],
                                    tri.marker_valid[:1])[0]
        return run_ekf(obs, state.rig, state.model, ecfg,
                       initial_state(x0, ecfg))
    if stage == "fte":
        fcfg = _fte_config(cfg, sigma_n)
        init = state.estimates.get(("triangulate", ds["name"]))
        return solve_fte(obs, state.rig, state.model, fcfg, init=init)
    raise ValueError(stage)


def _make_estimator_stage(stage: str):
    def run_stage(state: _RunState) -> list[str]:
        state.ensure_datasets()
        produced = []
        for ds in state.datasets:
            obs = state.observations[ds["name"]]
            est = _estimate(state, stage, ds, obs)
            state.estimates[(stage, ds["name"])] = est
            path = _traj_path(state.cfg.out_dir, stage, ds["name"])
            io_formats.write_trajectory(est, path)
            produced.append(path)
        return produced
    return run_stage


def _stage_score(state: _RunState) -> list[str]:
    state.ensure_datasets()
    cfg = state.cfg
    report = {"seed": cfg.seed, "datasets": {}}
    for ds in state.datasets:
        entry = {"params": {k: v for k, v in ds.items() if k != "name"},
                 "methods": {}}
        for stage in _ESTIMATORS:
            est = state.estimates.get((stage, ds["name"]))
            if est is None:
                path = _traj_path(cfg.out_dir, stage, ds["name"])
                if not os.path.exists(path):
                    continue
                est = io_formats.read_trajectory(path)
            entry["methods"][est.method] = metrics.score_method(
                est, state.gt2d, state.rig, state.gt_markers)
        if entry["methods"]:
            report["datasets"][ds["name"]] = entry
    json_path = os.path.join(cfg.out_dir, "score", "score_report.json")
    io_formats.write_score_report(report, json_path)
    csv_path = os.path.join(cfg.out_dir, "score", "score_report.csv")
    io_formats.write_score_csv(report, csv_path)
    return [json_path, csv_path]


def _stage_export_scene(state: _RunState) -> list[str]:
    state.ensure_datasets()
    cfg = state.cfg
    spec = cfg.export_scene
    method = spec.get("method", "fte").lower()
    if method not in _ESTIMATORS and method not in ("tri",):
        raise ConfigError(f"export_scene.method must be one of {_ESTIMATORS}")
    stage = {"tri": "triangulate"}.get(method, method)
    ds_name = spec.get("dataset", state.datasets[0]["name"] if state.datasets else "external")
    est = state.estimates.get((stage, ds_name))
    if est is None:
        est = io_formats.read_trajectory(_traj_path(cfg.out_dir, stage, ds_name))
    obs = state.observations[ds_name]
    out = spec.get("out", os.path.join(cfg.out_dir, f"scene_{ds_name}_{stage}.json"))
    out = _resolve(cfg, out) if not os.path.isabs(out) else out
    io_formats.export_scene(est, state.rig, state.model, obs, out)
    return [out]


def apply_corrections(scene: dict, corrections: list[dict]) -> tuple[dict, dict]:
    """Apply marker corrections to a scene's marker clouds.

    Returns (ground_truth_payload, summary). Corrections referencing unknown
    frames or markers are rejected individually; the rest are applied. The
    summary reports the fraction of adjustments over 100 mm and per-marker
    adjustment statistics.
    """
    marker_names = list(scene["marker_names"])
    frames = scene["frames"]
    positions = np.array([[_none_to_nan(p) for p in fr["markers"]]
                          for fr in frames], dtype=np.float64)
    n = positions.shape[0]
    applied, rejected, magnitudes = [], [], []
    per_marker: dict[str, list[float]] = {}
    for i, corr in enumerate(corrections):
        reason = None
        if not 0 <= corr["frame"] < n:
            reason = f"frame {corr['frame']} out of range"
        elif corr["marker"] not in marker_names:
            reason = f"unknown marker {corr['marker']!r}"
        elif not np.all(np.isfinite(corr["corrected"])):
            reason = "corrected position is not finite"
        if reason:
            rejected.append({"index": i, "reason": reason})
            continue
        mi = marker_names.index(corr["marker"])
        old = positions[corr["frame"], mi].copy()
        new = np.asarray(corr["corrected"], dtype=np.float64)
        positions[corr["frame"], mi] = new
        mag = float(np.linalg.norm(new - old)) if np.all(np.isfinite(old)) else float("inf")
        magnitudes.append(mag)
        per_marker.setdefault(corr["marker"], []).append(mag)
        applied.append(i)

    large = [m for m in magnitudes if m > 0.1]
    summary = {
        "n_corrections": len(corrections),
        "n_applied": len(applied),
        "n_rejected": len(rejected),
        "rejected": rejected,
        "large_outlier_threshold_m": 0.1,
        "large_outlier_fraction": (len(large) / len(corrections)
                                   if corrections else 0.0),
        "per_marker": {
            name: {"count": len(mags),
                   "mean_m": float(np.mean(mags)),
                   "max_m": float(np.max(mags))}
            for name, mags in sorted(per_marker.items())
        },
    }
    payload = {
        "marker_names": marker_names,
        "marker_positions": positions,
        "frame_rate": float(scene.get("frame_rate", 0.0)),
    }
    return payload, summary


def _none_to_nan(p):
    if p is None:
        return [np.nan, np.nan, np.nan]
    return [np.nan if v is None else v for v in p]


_STAGE_FUNCS = {
    "synth": _stage_synth,
    "triangulate": _make_estimator_stage("triangulate"),
    "ekf": _make_estimator_stage("ekf"),
    "fte": _make_estimator_stage("fte"),
    "score": _stage_score,
    "export-scene": _stage_export_scene,
}
