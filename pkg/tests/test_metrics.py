import numpy as np
import pytest

from skeltraj.metrics import (Error3dSummary, marker_error_3d, mean_bbox_scale,
                              nrmse, reprojection_rmse, tight_bbox)
from skeltraj.skeleton import forward_kinematics
from skeltraj.trajectory import ObservationSet, TrajectoryEstimate


def make_estimate(markers, names, method="TRI"):
    markers = np.asarray(markers, dtype=np.float64)
    return TrajectoryEstimate(
        method=method, frame_rate=120.0, marker_names=tuple(names),
        marker_positions=markers,
        marker_valid=np.all(np.isfinite(markers), axis=-1))


def test_rmse_zero_for_perfect_estimate(model, rig, short_run):
    est = make_estimate(short_run.markers, model.marker_names)
    score = reprojection_rmse(est, short_run.clean_obs, rig)
    assert score.rmse == pytest.approx(0.0, abs=1e-9)
    assert score.sem == pytest.approx(0.0, abs=1e-9)
    assert score.n_points == int(short_run.clean_obs.valid.sum())


def test_rmse_constant_error(model, rig, short_run):
    # displace every ground-truth pixel by exactly 3 px
    obs = short_run.clean_obs
    shifted = ObservationSet(obs.cam_ids, obs.marker_names,
                             obs.uv + np.array([3.0, 0.0]), obs.likelihood)
    est = make_estimate(short_run.markers, model.marker_names)
    score = reprojection_rmse(est, shifted, rig)
    assert score.rmse == pytest.approx(3.0, abs=1e-9)
    assert score.sem == pytest.approx(0.0, abs=1e-9)


def test_rmse_mixed_errors(model, rig, short_run):
    # half the points displaced by 4 px, half exact: rmse = sqrt(8)
    obs = short_run.clean_obs
    uv = obs.uv.copy()
    flat = uv.reshape(-1, 2)
    valid_idx = np.nonzero(np.all(np.isfinite(flat), axis=1))[0]
    n = valid_idx.size
    assert n % 2 == 0
    flat[valid_idx[: n // 2], 0] += 4.0
    shifted = ObservationSet(obs.cam_ids, obs.marker_names,
                             uv, obs.likelihood)
    est = make_estimate(short_run.markers, short_run.model.marker_names)
    score = reprojection_rmse(est, shifted, rig)
    assert score.rmse == pytest.approx(np.sqrt(8.0), abs=1e-9)
    assert score.sem == pytest.approx(2.0 / np.sqrt(n), abs=1e-9)


def test_rmse_empty_overlap(model, rig, short_run):
    empty = ObservationSet.empty(short_run.n_frames,
                                 short_run.clean_obs.cam_ids,
                                 short_run.clean_obs.marker_names)
    est = make_estimate(short_run.markers, model.marker_names)
    score = reprojection_rmse(est, empty, rig)
    assert score.empty
    assert np.isnan(score.rmse)


def test_rmse_permutation_invariance(model, rig, short_run):
    obs = short_run.clean_obs
    rng = np.random.default_rng(0)
    noisy = ObservationSet(obs.cam_ids, obs.marker_names,
                           obs.uv + rng.normal(0, 2, obs.uv.shape),
                           obs.likelihood)
    est = make_estimate(short_run.markers, model.marker_names)
    a = reprojection_rmse(est, noisy, rig)
    perm = rng.permutation(short_run.n_frames)
    est_p = make_estimate(short_run.markers[perm], model.marker_names)
    noisy_p = ObservationSet(obs.cam_ids, obs.marker_names,
                             noisy.uv[perm], noisy.likelihood[perm])
    b = reprojection_rmse(est_p, noisy_p, rig)
    assert a.rmse == pytest.approx(b.rmse, rel=1e-12)


def test_nrmse_formula():
    assert nrmse(10.0, (100.0, 400.0)) == pytest.approx(0.05, abs=1e-15)
    assert nrmse(0.0, (10.0, 10.0)) == 0.0
    with pytest.raises(ValueError):
        nrmse(1.0, (0.0, 100.0))


def test_nrmse_scale_invariance():
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 100, (50, 2))
    h, w = tight_bbox(pts)
    rmse = 7.3
    lam = 3.7
    h2, w2 = tight_bbox(pts * lam)
    assert nrmse(rmse * lam, (h2, w2)) == pytest.approx(nrmse(rmse, (h, w)),
                                                        rel=1e-12)


def test_tight_bbox():
    pts = np.array([[0.0, 0.0], [10.0, 4.0], [3.0, 7.0]])
    assert tight_bbox(pts) == (7.0, 10.0)
    assert tight_bbox(np.full((3, 2), np.nan)) == (0.0, 0.0)


def test_mean_bbox_scale(short_run):
    scale = mean_bbox_scale(short_run.clean_obs)
    assert np.isfinite(scale) and scale > 0


def test_marker_error_3d_perfect(model, short_run):
    est = make_estimate(short_run.markers, model.marker_names)
    s = marker_error_3d(est, short_run.markers)
    assert s.median == 0.0 and s.mad == 0.0
    assert s.n_points == short_run.n_frames * 20


def test_marker_error_3d_constant_offset(model, short_run):
    shifted = short_run.markers + np.array([0.01, 0.0, 0.0])
    est = make_estimate(shifted, model.marker_names)
    s = marker_error_3d(est, short_run.markers)
    assert s.median == pytest.approx(0.01, abs=1e-12)
    assert s.mad == pytest.approx(0.0, abs=1e-12)
    assert all(v == pytest.approx(0.01, abs=1e-12)
               for v in s.per_marker_median.values())


def test_marker_error_3d_skips_invalid(model, short_run):
    markers = short_run.markers.copy()
    markers[0, 0] = np.nan
    est = make_estimate(markers, model.marker_names)
    s = marker_error_3d(est, short_run.markers)
    assert s.n_points == short_run.n_frames * 20 - 1


def test_metric_nonnegativity(model, rig, short_run):
    rng = np.random.default_rng(2)
    est = make_estimate(short_run.markers + rng.normal(0, 0.01,
                                                       short_run.markers.shape),
                        model.marker_names)
    score = reprojection_rmse(est, short_run.clean_obs, rig)
    s3 = marker_error_3d(est, short_run.markers)
    assert score.rmse > 0 and score.sem >= 0
    assert s3.median > 0 and s3.mad >= 0
