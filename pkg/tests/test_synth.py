import numpy as np
import pytest

from skeltraj import synth
from skeltraj.camera import project
from skeltraj.synth import CorruptionParams, GaitProfile, corrupt, generate_run


def test_static_profile_identical_poses(model, rig):
    run = generate_run(model, rig, 2, GaitProfile.static())
    assert np.array_equal(run.poses[0], run.poses[1])
    assert np.array_equal(run.markers[0], run.markers[1])


def test_default_gallop_feasible_and_advancing(model, rig, run100):
    run = run100
    lo, hi = model.lower_bounds(), model.upper_bounds()
    assert np.all(run.poses >= lo) and np.all(run.poses <= hi)
    assert np.all(np.diff(run.poses[:, 0]) > 0)


def test_clean_observations_reproject_exactly(model, rig, short_run):
    run = short_run
    valid = run.clean_obs.valid
    for ci, cam in enumerate(rig.cameras):
        uv, ok = project(cam, run.markers.reshape(-1, 3))
        uv = uv.reshape(run.n_frames, -1, 2)
        sel = valid[:, ci]
        assert np.array_equal(run.clean_obs.uv[:, ci][sel], uv[sel])


def test_profile_exceeding_bounds_rejected(model, rig):
    bad = GaitProfile(swings={"theta_3": (0.0, 2.0, 0.0)})  # bound is pi/6
    with pytest.raises(ValueError, match="theta_3"):
        generate_run(model, rig, 5, bad)


def test_min_frames(model, rig):
    with pytest.raises(ValueError):
        generate_run(model, rig, 1)


def test_corrupt_identity_is_bitwise(short_run):
    out = corrupt(short_run, CorruptionParams(seed=42))
    assert np.array_equal(out.uv, short_run.clean_obs.uv, equal_nan=True)
    assert np.array_equal(out.likelihood, short_run.clean_obs.likelihood,
                          equal_nan=True)


def test_corrupt_determinism(short_run):
    p = CorruptionParams(sigma_noise=5.0, p_outlier=0.05, sigma_outlier=100.0,
                         seed=9)
    a = corrupt(short_run, p)
    b = corrupt(short_run, p)
    assert np.array_equal(a.uv, b.uv, equal_nan=True)
    c = corrupt(short_run, CorruptionParams(sigma_noise=5.0, p_outlier=0.05,
                                            sigma_outlier=100.0, seed=10))
    assert not np.array_equal(a.uv, c.uv, equal_nan=True)


@pytest.fixture(scope="module")
def stats_run(model, rig):
    # a long static run: >1e5 observed channels for the marginal checks
    return generate_run(model, rig, 850, GaitProfile.static())


def test_noise_std_statistics(stats_run):
    run = stats_run
    out = corrupt(run, CorruptionParams(sigma_noise=10.0, seed=3))
    d = (out.uv - run.clean_obs.uv)[run.clean_obs.valid]
    assert d.size >= 1e5  # 2 coords per valid channel
    std = d.ravel().std()
    assert abs(std - 10.0) / 10.0 < 0.02


def test_outlier_rate_binomial(stats_run):
    run = stats_run
    p = 0.05
    out = corrupt(run, CorruptionParams(p_outlier=p, sigma_outlier=100.0, seed=4))
    moved = np.any(out.uv != run.clean_obs.uv, axis=-1)[run.clean_obs.valid]
    n = moved.size
    assert n >= 1e5
    expect = n * p
    sigma = np.sqrt(n * p * (1 - p))
    assert abs(moved.sum() - expect) < 3 * sigma


def test_outliers_additive_on_top_of_noise(short_run):
    # same seed: the outlier run reuses the identical noise draws, so the
    # difference is exactly the additional outlier term
    run = short_run
    noise_only = corrupt(run, CorruptionParams(sigma_noise=5.0, seed=6))
    both = corrupt(run, CorruptionParams(sigma_noise=5.0, p_outlier=1.0,
                                         sigma_outlier=100.0, seed=6))
    delta = (both.uv - noise_only.uv)[run.clean_obs.valid]
    assert np.all(delta != 0.0)
    assert abs(delta.ravel().std() - 100.0) / 100.0 < 0.05


def test_outlier_likelihood_configurable(short_run):
    run = short_run
    out = corrupt(run, CorruptionParams(p_outlier=1.0, sigma_outlier=50.0,
                                        outlier_likelihood=0.4, seed=0))
    lk = out.likelihood[run.clean_obs.valid]
    assert np.all(lk == 0.4)


def test_corruption_params_validation():
    with pytest.raises(ValueError):
        CorruptionParams(sigma_noise=-1.0)
    with pytest.raises(ValueError):
        CorruptionParams(p_outlier=1.5)


def test_synthetic_rig_matches_builder(rig):
    built = synth.build_synthetic_rig()
    assert built.frame_rate == rig.frame_rate
    for a, b in zip(built.cameras, rig.cameras):
        assert np.allclose(a.rotation, b.rotation, atol=1e-15)
        assert np.allclose(a.translation, b.translation, atol=1e-15)
