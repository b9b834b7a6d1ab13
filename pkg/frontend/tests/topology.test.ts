import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { linkSegments, validateScene, type SceneDocument } from "../src/types";

const sceneText = readFileSync(
  fileURLToPath(new URL("../fixtures/scene_50.json", import.meta.url)),
  "utf-8",
);

function load(): SceneDocument {
  return validateScene(JSON.parse(sceneText));
}

function segmentNames(doc: SceneDocument): Set<string> {
  return new Set(
    linkSegments(doc).map(([a, b]) =>
      `${doc.marker_names[a]}->${doc.marker_names[b]}`,
    ),
  );
}

describe("link topology", () => {
  it("derives one segment per chained marker from the document", () => {
    const doc = load();
    const chained = doc.skeleton.markers.filter((m) => m.base !== null);
    expect(linkSegments(doc)).toHaveLength(chained.length);
  });

  it("equals skeleton adjacency for an adversarially reordered document", () => {
    const doc = load();
    const reference = segmentNames(doc);

    // shuffle marker_names and permute every per-marker array to match, so
    // the document stays self-consistent but the order is adversarial
    const perm = [...doc.marker_names.keys()].reverse();
    const shuffled = JSON.parse(sceneText) as SceneDocument;
    shuffled.marker_names = perm.map((i) => doc.marker_names[i]);
    for (const frame of shuffled.frames) {
      frame.markers = perm.map((i) => frame.markers[i]);
      frame.marker_valid = perm.map((i) => frame.marker_valid[i]);
      frame.observations = frame.observations.map((cam) =>
        perm.map((i) => cam[i]),
      );
      frame.residuals = frame.residuals.map((cam) => perm.map((i) => cam[i]));
    }
    // also shuffle the skeleton's marker declaration order
    shuffled.skeleton.markers = [...shuffled.skeleton.markers].reverse();

    const got = segmentNames(validateScene(shuffled));
    expect(got).toEqual(reference);
    // indices resolve through the shuffled name table, not positions
    for (const [a, b] of linkSegments(shuffled)) {
      const child = shuffled.marker_names[a];
      const def = shuffled.skeleton.markers.find((m) => m.name === child)!;
      expect(shuffled.marker_names[b]).toBe(def.base);
    }
  });

  it("renders no segment for root-anchored markers", () => {
    const doc = load();
    const rooted = doc.skeleton.markers.filter((m) => m.base === null);
    const segs = segmentNames(doc);
    for (const m of rooted) {
      for (const s of segs) expect(s.startsWith(`${m.name}->`)).toBe(false);
    }
  });
});
