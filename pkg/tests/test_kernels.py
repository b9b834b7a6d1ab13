"""The numba and numpy kernel paths must agree to machine precision."""

import os
import subprocess
import sys

import numpy as np
import pytest

from skeltraj import kernels

from conftest import feasible_poses

needs_numba = pytest.mark.skipif(not kernels.HAVE_NUMBA,
                                 reason="numba not importable")


@needs_numba
def test_fk_paths_agree(model):
    q = np.ascontiguousarray(feasible_poses(model, 40, seed=11))
    a = kernels.fk_positions_numba(q, *model.packed)
    b = kernels.fk_positions_numpy(q, *model.packed)
    assert np.allclose(a, b, atol=1e-13)


@needs_numba
def test_fk_jacobian_paths_agree(model):
    q = np.ascontiguousarray(feasible_poses(model, 15, seed=12))
    a = kernels.fk_jacobian_numba(q, *model.packed)
    b = kernels.fk_jacobian_numpy(q, *model.packed)
    assert np.allclose(a, b, atol=1e-12)


@needs_numba
def test_projection_paths_agree(rig):
    rng = np.random.default_rng(13)
    pts = np.ascontiguousarray(rng.uniform([-2, -2, -1], [14, 8, 2], (500, 3)))
    for cam in rig.cameras:
        k1, k2, k3, k4 = cam.dist
        args = (cam.fx, cam.fy, cam.cx, cam.cy, k1, k2, k3, k4,
                np.ascontiguousarray(cam.rotation),
                np.ascontiguousarray(cam.translation))
        uv_a, va = kernels.project_points_numba(pts, *args)
        uv_b, vb = kernels.project_points_numpy(pts, *args)
        assert np.array_equal(va, vb)
        assert np.allclose(uv_a[va], uv_b[vb], atol=1e-10)
        ja, va2 = kernels.project_jacobian_numba(pts, *args)
        jb, vb2 = kernels.project_jacobian_numpy(pts, *args)
        assert np.array_equal(va2, vb2)
        assert np.allclose(ja[va2], jb[vb2], atol=1e-9)


@needs_numba
def test_redescending_paths_agree():
    e = np.linspace(-40, 40, 100001)
    a = kernels.redescending_numba(e, 3.0, 10.0, 20.0)
    b = kernels.redescending_numpy(e, 3.0, 10.0, 20.0)
    for x, y in zip(a, b):
        assert np.allclose(x, y, atol=1e-13)


def test_env_flag_selects_numpy_backend():
    code = ("import skeltraj.kernels as k; "
            "print(k.backend(), k.fk_positions is k.fk_positions_numpy)")
    env = dict(os.environ, SKELTRAJ_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]


def test_backend_reports_active_path():
    assert kernels.backend() in ("numba", "numpy")
    if kernels.USE_NUMBA:
        assert kernels.fk_positions is kernels.fk_positions_numba
