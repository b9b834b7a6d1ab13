import numpy as np
import pytest

from skeltraj import ekf as ekf_mod
from skeltraj import synth
from skeltraj.skeleton import default_model
from skeltraj.synth import synthetic_rig


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture(scope="session")
def rig():
    return synthetic_rig()


@pytest.fixture(scope="session")
def short_run(model, rig):
    """20-frame clean gallop shared by the estimator tests."""
    return synth.generate_run(model, rig, 20)


@pytest.fixture(scope="session")
def run100(model, rig):
    return synth.generate_run(model, rig, 100)


def feasible_poses(model, n, seed=0):
    """Random poses drawn inside the joint bounds; unbounded coordinates are
    sampled from a finite band (translations in the rig's working volume,
    heading over a full turn)."""
    rng = np.random.default_rng(seed)
    lo = model.lower_bounds().copy()
    hi = model.upper_bounds().copy()
    lo[~np.isfinite(lo)] = -np.pi
    hi[~np.isfinite(hi)] = np.pi
    lo[:3] = [1.0, 2.0, 0.3]
    hi[:3] = [9.0, 4.0, 1.0]
    return rng.uniform(lo, hi, size=(n, model.n_pose))


@pytest.fixture(scope="session")
def ekf_cfg(rig):
    return ekf_mod.EkfConfig(dt=rig.dt)
