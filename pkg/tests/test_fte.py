import numpy as np
import pytest

from skeltraj import synth
from skeltraj.fte import (FteConfig, RobustCostParams, build_objective,
                          build_problem, objective, robust_cost,
                          robust_cost_derivative, solve_fte)
from skeltraj.synth import CorruptionParams, GaitProfile, corrupt, generate_run
from skeltraj.trajectory import ObservationSet

A, B, C = 3.0, 10.0, 20.0
PARAMS = RobustCostParams()


def test_robust_cost_params_validation():
    with pytest.raises(ValueError):
        RobustCostParams(a=5.0, b=4.0)
    with pytest.raises(ValueError):
        RobustCostParams(sigma_meas=0.0)


def test_robust_cost_values():
    assert robust_cost(0.0, PARAMS) == 0.0
    assert robust_cost(2.0, PARAMS) == pytest.approx(2.0, abs=1e-15)
    # linear branch: a|e| - a^2/2 at e = 5
    assert robust_cost(5.0, PARAMS) == pytest.approx(10.5, abs=1e-12)
    assert robust_cost(-5.0, PARAMS) == robust_cost(5.0, PARAMS)


def test_robust_cost_continuity_at_thresholds():
    for point in (A, B, C):
        below = robust_cost(point - 1e-13, PARAMS)
        at = robust_cost(point, PARAMS)
        assert abs(at - below) < 1e-12


def test_robust_cost_saturation_flat():
    # the constant branch carries the value of the smooth segment at c
    sat = A * B - 0.5 * A * A + 0.5 * A * (C - B)
    for e in (C, C + 5.0, 1e6):
        assert robust_cost(e, PARAMS) == pytest.approx(sat, abs=1e-12)
    assert robust_cost_derivative(C + 1e-9, PARAMS) == 0.0


def test_robust_cost_derivative_bounded_and_c1():
    grid = np.linspace(-2 * C, 2 * C, 400001)
    d = robust_cost_derivative(grid, PARAMS)
    assert np.max(np.abs(d)) <= A + 1e-12
    # once differentiable at a and b; slope falls to zero approaching c
    h = 1e-7
    for point in (A, B):
        left = (robust_cost(point, PARAMS) - robust_cost(point - h, PARAMS)) / h
        right = (robust_cost(point + h, PARAMS) - robust_cost(point, PARAMS)) / h
        assert abs(left - right) < 1e-5
    assert abs(robust_cost_derivative(C - 1e-9, PARAMS)) < 1e-6


def test_robust_cost_derivative_matches_fd():
    rng = np.random.default_rng(0)
    e = rng.uniform(-30, 30, 500)
    h = 1e-7
    fd = (robust_cost(e + h, PARAMS) - robust_cost(e - h, PARAMS)) / (2 * h)
    d = robust_cost_derivative(e, PARAMS)
    near_kink = np.min(np.abs(np.abs(e)[:, None] - np.array([A, B, C])), axis=1) < 1e-5
    assert np.allclose(d[~near_kink], fd[~near_kink], atol=1e-6)


@pytest.fixture(scope="module")
def linear_run(model, rig):
    """Constant-velocity run: zero disturbances at the true trajectory."""
    return generate_run(model, rig, 12, GaitProfile(speed=5.0, bounce=0.0,
                                                    swings={}))


def test_objective_zero_at_perfect_fit(model, rig, linear_run):
    prob = build_problem(linear_run.clean_obs, rig, model, FteConfig())
    # third differences of a linear ramp leave ~1e-12 float residue, squared
    assert objective(prob, linear_run.poses) < 1e-20


def test_objective_single_disturbance_normalization(model, rig, linear_run):
    cfg = FteConfig()
    # mask out every measurement so only the model term remains
    dead = ObservationSet(linear_run.clean_obs.cam_ids,
                          linear_run.clean_obs.marker_names,
                          linear_run.clean_obs.uv.copy(),
                          np.where(np.isfinite(linear_run.clean_obs.likelihood),
                                   0.0, np.nan))
    prob = build_problem(dead, rig, model, cfg)
    op = prob.disturbance_op
    target = np.zeros(op.shape[0])
    j = 5  # an angle column with sigma_model = 50
    target[j] = prob.sigma_model[j]
    x, *_ = np.linalg.lstsq(op.toarray(), target, rcond=None)
    assert objective(prob, x.reshape(prob.n_frames, prob.n_pose)) == pytest.approx(1.0, rel=1e-9)


def test_objective_single_linear_branch_residual(model, rig, linear_run):
    cfg = FteConfig()
    obs = ObservationSet(linear_run.clean_obs.cam_ids,
                         linear_run.clean_obs.marker_names,
                         linear_run.clean_obs.uv.copy(),
                         linear_run.clean_obs.likelihood.copy())
    obs.uv[4, 2, 9, 0] += 5.0 * cfg.robust.sigma_meas
    prob = build_problem(obs, rig, model, cfg)
    assert objective(prob, linear_run.poses) == pytest.approx(10.5, abs=1e-9)


def test_build_objective_gradient_matches_fd(model, rig):
    run = generate_run(model, rig, 7)
    obs = corrupt(run, CorruptionParams(sigma_noise=4.0, p_outlier=0.1,
                                        sigma_outlier=80.0, seed=5))
    prob = build_problem(obs, rig, model, FteConfig())
    rng = np.random.default_rng(1)
    x = run.poses + rng.normal(0.0, 0.02, run.poses.shape)
    cost, grad = build_objective(prob, x)
    h = 1e-6
    flat = x.ravel()
    for i in rng.choice(flat.size, 40, replace=False):
        xp = flat.copy()
        xp[i] += h
        xm = flat.copy()
        xm[i] -= h
        fd = (objective(prob, xp.reshape(x.shape))
              - objective(prob, xm.reshape(x.shape))) / (2 * h)
        assert abs(grad[i] - fd) / max(1.0, abs(fd)) < 1e-4


def test_solve_noiseless(model, rig):
    run = generate_run(model, rig, 50)
    est = solve_fte(run.clean_obs, rig, model, FteConfig())
    err = np.linalg.norm(est.marker_positions - run.markers, axis=-1)
    assert err.max() < 1e-3
    assert est.diagnostics["converged"]


def test_solution_satisfies_dynamics_and_kinematics(model, rig):
    from skeltraj.skeleton import forward_kinematics
    run = generate_run(model, rig, 30)
    obs = corrupt(run, CorruptionParams(sigma_noise=5.0, p_outlier=0.05,
                                        sigma_outlier=100.0, seed=2))
    est = solve_fte(obs, rig, model, FteConfig())
    x, v, a = est.poses, est.velocities, est.accelerations
    dt = rig.dt
    assert np.max(np.abs(x[1:] - x[:-1] - dt * v[1:])) < 1e-8
    assert np.max(np.abs(v[1:] - v[:-1] - dt * a[1:])) < 1e-8
    assert np.max(np.abs(est.marker_positions - forward_kinematics(model, x))) < 1e-8
    lo, hi = model.lower_bounds(), model.upper_bounds()
    assert np.all(x >= lo - 1e-12) and np.all(x <= hi + 1e-12)


def test_objective_monotonicity(model, rig):
    run = generate_run(model, rig, 25)
    obs = corrupt(run, CorruptionParams(sigma_noise=8.0, seed=7))
    est = solve_fte(obs, rig, model, FteConfig())
    trace = est.diagnostics["cost_trace"]
    assert all(b < a for a, b in zip(trace, trace[1:]))


def test_two_frames_interpolate_exactly(model, rig):
    run = generate_run(model, rig, 2)
    est = solve_fte(run.clean_obs, rig, model, FteConfig())
    assert max(est.diagnostics["residual_rms_px"]) < 1e-4
    assert np.allclose(est.diagnostics["disturbance_norms"], 0.0)


def test_masked_channels_have_no_effect(model, rig):
    run = generate_run(model, rig, 10)
    obs = corrupt(run, CorruptionParams(sigma_noise=3.0, seed=4))
    obs.likelihood[:, 1, :] = 0.2  # below threshold: masked out
    est1 = solve_fte(obs, rig, model, FteConfig())
    wild = ObservationSet(obs.cam_ids, obs.marker_names, obs.uv.copy(),
                          obs.likelihood.copy())
    wild.uv[:, 1, :] += 1e4
    est2 = solve_fte(wild, rig, model, FteConfig())
    assert np.array_equal(est1.poses, est2.poses)


def test_windowed_solve_matches_full(model, rig):
    run = generate_run(model, rig, 80)
    obs = corrupt(run, CorruptionParams(sigma_noise=5.0, seed=8))
    full = solve_fte(obs, rig, model, FteConfig())
    windowed = solve_fte(obs, rig, model,
                         FteConfig(window_threshold=40, window_len=30,
                                   window_overlap=6))
    d = np.linalg.norm(full.marker_positions - windowed.marker_positions,
                       axis=-1)
    assert np.median(d) < 2e-3
    x, v, a = windowed.poses, windowed.velocities, windowed.accelerations
    assert np.max(np.abs(x[1:] - x[:-1] - rig.dt * v[1:])) < 1e-8


def test_nonconvergence_flagged(model, rig):
    run = generate_run(model, rig, 15)
    obs = corrupt(run, CorruptionParams(sigma_noise=10.0, seed=9))
    est = solve_fte(obs, rig, model, FteConfig(max_iter=1))
    assert est.diagnostics["warning"]
    assert np.isfinite(est.diagnostics["projected_gradient_inf_norm"])


def test_infeasible_init_is_clamped(model, rig):
    run = generate_run(model, rig, 8)
    tri_like = solve_fte(run.clean_obs, rig, model, FteConfig())
    # feed an init whose root is far off and angles out of bounds
    bad = tri_like
    bad.marker_positions[:] += 5.0
    est = solve_fte(run.clean_obs, rig, model, FteConfig(), init=bad)
    lo, hi = model.lower_bounds(), model.upper_bounds()
    assert np.all(est.poses >= lo - 1e-12) and np.all(est.poses <= hi + 1e-12)


def test_min_frames_rejected(model, rig):
    run = generate_run(model, rig, 2)
    one = ObservationSet(run.clean_obs.cam_ids, run.clean_obs.marker_names,
                         run.clean_obs.uv[:1], run.clean_obs.likelihood[:1])
    with pytest.raises(ValueError):
        solve_fte(one, rig, model, FteConfig())


def test_short_init_rejected(model, rig):
    from skeltraj.triangulate import triangulate_trajectory
    run = generate_run(model, rig, 6)
    half = ObservationSet(run.clean_obs.cam_ids, run.clean_obs.marker_names,
                          run.clean_obs.uv[:3], run.clean_obs.likelihood[:3])
    init = triangulate_trajectory(half, rig)
    with pytest.raises(ValueError, match="init"):
        solve_fte(run.clean_obs, rig, model, FteConfig(), init=init)
