// three.js scene construction: one skeleton per loaded document, markers as
// spheres and links as segments derived from the document's own adjacency.

import * as THREE from "three";
import type { SceneDocument } from "./types";
import { linkSegments } from "./types";
import type { ViewerSession } from "./session";

export const METHOD_COLORS = [0xff8c42, 0x42c6ff, 0x7dff6e, 0xff6ee9];

export interface SkeletonVisual {
  group: THREE.Group;
  markerMeshes: THREE.Mesh[];
  lines: THREE.LineSegments;
  segments: [number, number][];
  docIndex: number;
}

export function buildSkeletonVisual(
  doc: SceneDocument,
  docIndex: number,
): SkeletonVisual {
  const group = new THREE.Group();
  const color = METHOD_COLORS[docIndex % METHOD_COLORS.length];
  const markerMeshes: THREE.Mesh[] = [];
  const geo = new THREE.SphereGeometry(0.02, 12, 12);
  doc.marker_names.forEach((name) => {
    const mesh = new THREE.Mesh(
      geo,
      new THREE.MeshStandardMaterial({ color }),
    );
    mesh.name = `${docIndex}:${name}`;
    mesh.userData = { marker: name, docIndex };
    group.add(mesh);
    markerMeshes.push(mesh);
  });

  const segments = linkSegments(doc);
  const positions = new Float32Array(segments.length * 6);
  const lineGeo = new THREE.BufferGeometry();
  lineGeo.setAttribute("position", new THREE.BufferAttribute(positions, 3));
  const lines = new THREE.LineSegments(
    lineGeo,
    new THREE.LineBasicMaterial({ color }),
  );
  group.add(lines);
  return { group, markerMeshes, lines, segments, docIndex };
}

/** Push the session's current frame (with pending corrections applied) into
 * the meshes and segment buffer. */
export function updateSkeletonVisual(
  visual: SkeletonVisual,
  session: ViewerSession,
): void {
  const doc = session.docs[visual.docIndex];
  const frame = session.frame;
  const pos: (readonly [number, number, number] | null)[] = [];
  doc.marker_names.forEach((name, mi) => {
    const p = session.markerPosition(visual.docIndex, frame, name);
    pos.push(p);
    const mesh = visual.markerMeshes[mi];
    mesh.visible = p !== null;
    if (p !== null) mesh.position.set(p[0], p[1], p[2]);
  });
  const buf = visual.lines.geometry.getAttribute(
    "position",
  ) as THREE.BufferAttribute;
  visual.segments.forEach(([a, b], si) => {
    const pa = pos[a];
    const pb = pos[b];
    const ok = pa !== null && pb !== null;
    for (let k = 0; k < 3; k++) {
      buf.setComponent(si * 2, k, ok ? pa![k] : 0);
      buf.setComponent(si * 2 + 1, k, ok ? pb![k] : 0);
    }
  });
  buf.needsUpdate = true;
}
