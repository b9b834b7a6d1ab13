// Scene document and corrections file shapes, shared with the pipeline.
// The viewer only reads scenes and only writes corrections.

export type Vec3 = [number, number, number];
export type Vec2 = [number, number];

export interface SkeletonNode {
  name: string;
  parent: string | null;
  sequence: [string, string][];
}

export interface SkeletonMarkerDef {
  name: string;
  base: string | null; // marker this one chains from; null = root point
  node: string;
  offset: Vec3;
}

export interface SkeletonDoc {
  schema: string;
  coordinates: string[];
  nodes: SkeletonNode[];
  markers: SkeletonMarkerDef[];
  bounds: Record<string, [number, number]>;
}

export interface CameraDoc {
  id: number;
  resolution: [number, number];
  K: [number, number, number, number]; // fx fy cx cy
  D: [number, number, number, number]; // k1..k4
  R: number[]; // 9 row-major, inertial -> camera
  t: Vec3;
}

export interface RigDoc {
  schema: string;
  frame_rate: number;
  cameras: CameraDoc[];
}

export interface SceneFrame {
  pose: (number | null)[] | null;
  markers: (Vec3 | [number | null, number | null, number | null])[];
  marker_valid: boolean[];
  observations: ((number | null)[][])[]; // [camera][marker][2]
  likelihoods: ((number | null)[][]) | (number | null)[][];
  residuals: ((number | null)[][][]);
}

export interface SceneDocument {
  schema: string;
  method: string;
  frame_rate: number;
  marker_names: string[];
  skeleton: SkeletonDoc;
  rig: RigDoc;
  frames: SceneFrame[];
  diagnostics?: Record<string, unknown>;
}

export interface CorrectionRecord {
  frame: number;
  marker: string;
  original: Vec3;
  corrected: Vec3;
  author: string;
  timestamp: string;
}

export interface CorrectionsDocument {
  schema: "skeltraj/corrections@1";
  corrections: CorrectionRecord[];
}

export const SCENE_SCHEMA = "skeltraj/scene@1";

export class SceneValidationError extends Error {
  constructor(public field: string, message: string) {
    super(`${field}: ${message}`);
    this.name = "SceneValidationError";
  }
}

function need(cond: boolean, field: string, message: string): asserts cond {
  if (!cond) throw new SceneValidationError(field, message);
}

/** Validate an untrusted parsed document; names the failing field. */
export function validateScene(doc: unknown): SceneDocument {
  need(typeof doc === "object" && doc !== null, "document", "not an object");
  const d = doc as Record<string, unknown>;
  need(d.schema === SCENE_SCHEMA, "schema",
       `expected ${SCENE_SCHEMA}, found ${JSON.stringify(d.schema)}`);
  need(typeof d.method === "string", "method", "missing or not a string");
  need(typeof d.frame_rate === "number" && d.frame_rate > 0, "frame_rate",
       "missing or not a positive number");
  need(Array.isArray(d.marker_names) && d.marker_names.length > 0,
       "marker_names", "missing or empty");
  const names = d.marker_names as string[];
  need(names.every((n) => typeof n === "string"), "marker_names",
       "entries must be strings");

  need(typeof d.skeleton === "object" && d.skeleton !== null, "skeleton",
       "missing");
  const skel = d.skeleton as SkeletonDoc;
  need(Array.isArray(skel.markers), "skeleton.markers", "missing");
  const skelNames = new Set(skel.markers.map((m) => m.name));
  for (const n of names) {
    need(skelNames.has(n), "skeleton.markers", `marker ${n} not in skeleton`);
  }
  for (const m of skel.markers) {
    need(m.base === null || skelNames.has(m.base),
         "skeleton.markers", `marker ${m.name} chains from unknown ${m.base}`);
  }

  need(typeof d.rig === "object" && d.rig !== null, "rig", "missing");
  const rig = d.rig as RigDoc;
  need(Array.isArray(rig.cameras) && rig.cameras.length > 0, "rig.cameras",
       "missing or empty");
  for (const [i, cam] of rig.cameras.entries()) {
    need(Array.isArray(cam.R) && cam.R.length === 9, `rig.cameras[${i}].R`,
         "must hold 9 values");
    need(Array.isArray(cam.K) && cam.K.length === 4, `rig.cameras[${i}].K`,
         "must hold fx, fy, cx, cy");
    need(Array.isArray(cam.D) && cam.D.length === 4, `rig.cameras[${i}].D`,
         "must hold k1..k4");
  }

  need(Array.isArray(d.frames) && d.frames.length > 0, "frames",
       "missing or empty");
  const frames = d.frames as SceneFrame[];
  frames.forEach((fr, i) => {
    need(Array.isArray(fr.markers) && fr.markers.length === names.length,
         `frames[${i}].markers`, `expected ${names.length} markers`);
    need(Array.isArray(fr.marker_valid)
         && fr.marker_valid.length === names.length,
         `frames[${i}].marker_valid`, `expected ${names.length} flags`);
    need(Array.isArray(fr.observations)
         && fr.observations.length === rig.cameras.length,
         `frames[${i}].observations`, "one entry per camera required");
  });
  return d as unknown as SceneDocument;
}

/** Marker index pairs to draw as link segments, resolved by name so a
 * document with reordered marker_names still renders its own adjacency. */
export function linkSegments(doc: SceneDocument): [number, number][] {
  const index = new Map(doc.marker_names.map((n, i) => [n, i]));
  const out: [number, number][] = [];
  for (const m of doc.skeleton.markers) {
    if (m.base === null) continue;
    const a = index.get(m.name);
    const b = index.get(m.base);
    if (a !== undefined && b !== undefined) out.push([a, b]);
  }
  return out;
}
