// Equidistant fisheye projection, mirroring the pipeline's camera model so
// the per-camera overlay needs nothing beyond the parameters embedded in
// the scene document.

import type { CameraDoc, Vec2, Vec3 } from "./types";

export function projectPoint(cam: CameraDoc, p: Vec3): Vec2 | null {
  const R = cam.R;
  const x = R[0] * p[0] + R[1] * p[1] + R[2] * p[2] + cam.t[0];
  const y = R[3] * p[0] + R[4] * p[1] + R[5] * p[2] + cam.t[1];
  const z = R[6] * p[0] + R[7] * p[1] + R[8] * p[2] + cam.t[2];
  if (z <= 0) return null; // behind the camera
  const [fx, fy, cx, cy] = cam.K;
  const [k1, k2, k3, k4] = cam.D;
  const a = x / z;
  const b = y / z;
  const r = Math.hypot(a, b);
  const theta = Math.atan(r);
  const t2 = theta * theta;
  const thetaD = theta * (1 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))));
  const scale = r < 1e-9 ? 1.0 : thetaD / r;
  return [fx * scale * a + cx, fy * scale * b + cy];
}
