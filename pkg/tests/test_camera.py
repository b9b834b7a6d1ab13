import json

import numpy as np
import pytest

from skeltraj.camera import (CameraModel, CameraRig, RigError, load_rig,
                             project, project_jacobian, rig_from_dict,
                             rig_to_dict, save_rig, undistort_ray)


def make_cam(dist=(0.04, 0.01, -0.002, 0.0005), rot=None, trans=None):
    return CameraModel(
        cam_id=0, resolution=(2704, 1520), fx=1300.0, fy=1300.0,
        cx=1352.0, cy=760.0, dist=dist,
        rotation=np.eye(3) if rot is None else rot,
        translation=np.zeros(3) if trans is None else trans)


def test_principal_point_on_axis():
    cam = make_cam(dist=(0.0, 0.0, 0.0, 0.0))
    uv, ok = project(cam, np.array([0.0, 0.0, 5.0]))
    assert ok
    assert np.allclose(uv, [1352.0, 760.0], atol=1e-12)


def test_matches_pinhole_at_small_angles():
    cam = make_cam(dist=(0.0, 0.0, 0.0, 0.0))
    rng = np.random.default_rng(0)
    for _ in range(100):
        theta = rng.uniform(1e-4, 0.01)
        phi = rng.uniform(0, 2 * np.pi)
        z = 5.0
        r = np.tan(theta) * z
        p = np.array([r * np.cos(phi), r * np.sin(phi), z])
        uv, ok = project(cam, p)
        pin = np.array([cam.fx * p[0] / z + cam.cx, cam.fy * p[1] / z + cam.cy])
        assert ok
        assert np.linalg.norm(uv - pin) < 0.01


def test_behind_camera_flag():
    cam = make_cam()
    _, ok = project(cam, np.array([0.0, 0.0, -1.0]))
    assert not ok
    uv, ok0 = project(cam, np.array([0.1, 0.0, 0.0]))
    assert not ok0 and np.all(np.isnan(uv))


def test_continuity_at_axis():
    # at r = 1e-12 the limit path (scale = 1) must agree with the general
    # distortion formula evaluated without thresholding
    cam = make_cam()
    a = 1e-12
    p = np.array([a * 3.0, 0.0, 3.0])
    uv, ok = project(cam, p)
    assert ok
    k1, k2, k3, k4 = cam.dist
    r = a
    theta = np.arctan(r)
    theta_d = theta * (1 + k1 * theta**2 + k2 * theta**4
                       + k3 * theta**6 + k4 * theta**8)
    general = np.array([cam.fx * (theta_d / r) * a + cam.cx, cam.cy])
    assert np.linalg.norm(uv - general) < 1e-9


def test_jacobian_axis_symmetry():
    cam = make_cam()
    jac, ok = project_jacobian(cam, np.array([0.0, 0.0, 4.0]))
    assert ok
    assert abs(jac[0, 1]) < 1e-12  # du/dY
    assert abs(jac[1, 0]) < 1e-12  # dv/dX


def test_jacobian_focal_linearity():
    p = np.array([0.5, -0.3, 4.0])
    j1, _ = project_jacobian(make_cam(), p)
    cam2 = CameraModel(cam_id=0, resolution=(2704, 1520), fx=2600.0, fy=1300.0,
                       cx=1352.0, cy=760.0, dist=(0.04, 0.01, -0.002, 0.0005),
                       rotation=np.eye(3), translation=np.zeros(3))
    j2, _ = project_jacobian(cam2, p)
    assert np.allclose(j2[0], 2.0 * j1[0], rtol=1e-12)
    assert np.allclose(j2[1], j1[1], rtol=1e-12)


def test_jacobian_matches_finite_differences(rig):
    rng = np.random.default_rng(1)
    h = 1e-6
    for cam in rig.cameras:
        for _ in range(40):
            p = rng.uniform([0.5, 0.5, 0.2], [11.5, 5.5, 1.2])
            uv, ok = project(cam, p)
            if not ok:
                continue
            jac, _ = project_jacobian(cam, p)
            ref = np.zeros((2, 3))
            for i in range(3):
                dp = np.zeros(3)
                dp[i] = h
                up, _ = project(cam, p + dp)
                um, _ = project(cam, p - dp)
                ref[:, i] = (up - um) / (2 * h)
            scale = np.maximum(1.0, np.abs(ref))
            assert np.max(np.abs(jac - ref) / scale) < 1e-4


def test_jacobian_behind_camera_flagged():
    cam = make_cam()
    jac, ok = project_jacobian(cam, np.array([0.0, 0.0, -2.0]))
    assert not ok and np.all(np.isnan(jac))


def test_undistort_ray_round_trip(rig):
    rng = np.random.default_rng(2)
    for cam in rig.cameras:
        for _ in range(20):
            p = rng.uniform([1.0, 1.0, 0.2], [11.0, 5.0, 1.2])
            uv, ok = project(cam, p)
            if not ok:
                continue
            ray = undistort_ray(cam, uv)
            to_point = p - cam.center
            to_point /= np.linalg.norm(to_point)
            assert np.linalg.norm(ray - to_point) < 1e-9


def test_shipped_rig_loads(rig):
    assert rig.n_cameras == 6
    assert rig.frame_rate == 120.0
    assert len({c.cam_id for c in rig.cameras}) == 6
    for cam in rig.cameras:
        assert np.max(np.abs(cam.rotation @ cam.rotation.T - np.eye(3))) < 1e-9


def test_rig_rejects_reflection(rig):
    doc = rig_to_dict(rig)
    r = np.array(doc["cameras"][0]["R"]).reshape(3, 3)
    r[0] = -r[0]  # det -1
    doc["cameras"][0]["R"] = [float(v) for v in r.ravel()]
    with pytest.raises(RigError):
        rig_from_dict(doc)


def test_rig_rejects_missing_distortion(rig):
    doc = rig_to_dict(rig)
    doc["cameras"][0]["D"] = doc["cameras"][0]["D"][:3]
    with pytest.raises(RigError):
        rig_from_dict(doc)


def test_rig_rejects_unknown_fields(rig):
    doc = rig_to_dict(rig)
    doc["exposure"] = 1
    with pytest.raises(RigError):
        rig_from_dict(doc)
    doc = rig_to_dict(rig)
    doc["cameras"][0]["lens"] = "gopro"
    with pytest.raises(RigError):
        rig_from_dict(doc)


def test_rig_file_round_trip(tmp_path, rig):
    path = tmp_path / "rig.json"
    save_rig(rig, path)
    again = load_rig(path)
    for a, b in zip(rig.cameras, again.cameras):
        assert a.cam_id == b.cam_id
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)
        assert a.dist == b.dist


def test_rig_parse_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(RigError):
        load_rig(path)


def test_camera_invariant_validation():
    with pytest.raises(RigError):
        make_cam(rot=np.eye(3) * 2.0)
    with pytest.raises(RigError):
        CameraModel(cam_id=0, resolution=(100, 100), fx=-1.0, fy=1.0,
                    cx=50.0, cy=50.0, dist=(0, 0, 0, 0),
                    rotation=np.eye(3), translation=np.zeros(3))
    with pytest.raises(RigError):
        CameraRig(cameras=(make_cam(), make_cam()), frame_rate=120.0)


def test_duplicate_rig_ids_rejected():
    c1 = make_cam()
    with pytest.raises(RigError):
        CameraRig(cameras=(c1, c1), frame_rate=60.0)


def test_strict_json_round_trip(tmp_path, rig):
    save_rig(rig, tmp_path / "rig.json")
    doc = json.loads((tmp_path / "rig.json").read_text())
    assert doc["schema"] == "skeltraj/rig@1"
