// Per-camera 2D overlay: detections from the document, reprojections of the
// current (possibly corrected) marker estimates, and residual whiskers.

import { projectPoint } from "./projection";
import type { ViewerSession } from "./session";
import type { Vec3 } from "./types";

export interface OverlayPoint {
  marker: string;
  observed: [number, number] | null;
  reprojected: [number, number] | null;
}

export function overlayPoints(
  session: ViewerSession,
  docIndex: number,
  cameraIndex: number,
): OverlayPoint[] {
  const doc = session.docs[docIndex];
  const frame = doc.frames[session.frame];
  const cam = doc.rig.cameras[cameraIndex];
  return doc.marker_names.map((name, mi) => {
    const obs = frame.observations[cameraIndex]?.[mi];
    const observed =
      obs && obs[0] !== null && obs[1] !== null
        ? ([obs[0], obs[1]] as [number, number])
        : null;
    const p = session.markerPosition(docIndex, session.frame, name);
    const reprojected = p === null ? null : projectPoint(cam, p as Vec3);
    return { marker: name, observed, reprojected };
  });
}

export function drawOverlay(
  ctx: CanvasRenderingContext2D,
  session: ViewerSession,
  docIndex: number,
  cameraIndex: number,
  colors: { observed: string; reprojected: string },
): void {
  const doc = session.docs[docIndex];
  const [w, h] = doc.rig.cameras[cameraIndex].resolution;
  const sx = ctx.canvas.width / w;
  const sy = ctx.canvas.height / h;
  for (const pt of overlayPoints(session, docIndex, cameraIndex)) {
    if (pt.observed) {
      ctx.fillStyle = colors.observed;
      ctx.beginPath();
      ctx.arc(pt.observed[0] * sx, pt.observed[1] * sy, 3, 0, 2 * Math.PI);
      ctx.fill();
    }
    if (pt.reprojected) {
      const [u, v] = pt.reprojected;
      ctx.strokeStyle = colors.reprojected;
      ctx.beginPath();
      ctx.moveTo(u * sx - 4, v * sy);
      ctx.lineTo(u * sx + 4, v * sy);
      ctx.moveTo(u * sx, v * sy - 4);
      ctx.lineTo(u * sx, v * sy + 4);
      ctx.stroke();
    }
    if (pt.observed && pt.reprojected) {
      ctx.strokeStyle = "rgba(255,255,255,0.35)";
      ctx.beginPath();
      ctx.moveTo(pt.observed[0] * sx, pt.observed[1] * sy);
      ctx.lineTo(pt.reprojected[0] * sx, pt.reprojected[1] * sy);
      ctx.stroke();
    }
  }
}
