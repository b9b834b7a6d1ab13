import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import {
  parseCorrections,
  serializeCorrections,
  ViewerSession,
} from "../src/session";
import { SceneValidationError } from "../src/types";

const FIXTURE = fileURLToPath(new URL("../fixtures/scene_50.json", import.meta.url));
const sceneText = readFileSync(FIXTURE, "utf-8");

function freshSession(): ViewerSession {
  return ViewerSession.fromJson(sceneText);
}

describe("scene loading", () => {
  it("builds a timeline covering every exported frame", () => {
    const s = freshSession();
    expect(s.frameCount).toBe(50);
    expect(s.markerNames).toHaveLength(20);
  });

  it("loads two documents side by side", () => {
    const s = ViewerSession.fromJson(sceneText, sceneText);
    expect(s.docs).toHaveLength(2);
    expect(s.frameCount).toBe(50);
  });

  it("rejects a corrupt document naming the failing field", () => {
    const doc = JSON.parse(sceneText);
    doc.frames[7].markers = doc.frames[7].markers.slice(0, 5);
    let err: unknown;
    try {
      ViewerSession.fromJson(JSON.stringify(doc));
    } catch (e) {
      err = e;
    }
    expect(err).toBeInstanceOf(SceneValidationError);
    expect((err as SceneValidationError).message).toContain("frames[7].markers");
  });

  it("rejects a wrong schema", () => {
    const doc = JSON.parse(sceneText);
    doc.schema = "skeltraj/scene@999";
    expect(() => ViewerSession.fromJson(JSON.stringify(doc))).toThrow(/schema/);
  });
});

describe("playback cursor", () => {
  it("seek clamps to the frame range", () => {
    const s = freshSession();
    s.seek(1000);
    expect(s.frame).toBe(49);
    s.seek(-3);
    expect(s.frame).toBe(0);
  });

  it("never skips a correction-bearing frame silently", () => {
    const s = freshSession();
    const name = s.markerNames[4];
    s.adjustMarker(10, name, [0, 0, 0]);
    s.playing = true;
    s.rate = 64; // fast-forward: one tick jumps many frames
    const res = s.advance(0.5);
    expect(res.stoppedAtCorrection).toBe(true);
    expect(s.frame).toBe(10);
    expect(s.playing).toBe(false);
  });

  it("advances frame-accurately at slow rates", () => {
    const s = freshSession();
    s.playing = true;
    s.rate = 0.25;
    for (let i = 0; i < 10; i++) s.advance(1 / 60);
    expect(s.frame).toBe(Math.trunc((10 / 60) * 120 * 0.25));
  });
});

describe("marker corrections", () => {
  it("records magnitude in mm and flags large adjustments", () => {
    const s = freshSession();
    const name = s.markerNames[0];
    const orig = s.markerPosition(0, 3, name)!;
    const res = s.adjustMarker(3, name, [orig[0] + 0.15, orig[1], orig[2]]);
    expect(res.magnitudeMm).toBeCloseTo(150, 6);
    expect(res.isLarge).toBe(true);
    const small = s.adjustMarker(4, name, [orig[0] + 0.01, orig[1], orig[2]]);
    expect(small.isLarge).toBe(false);
  });

  it("drag then undo leaves the pending list unchanged", () => {
    const s = freshSession();
    const name = s.markerNames[2];
    const before = s.corrections().length;
    s.adjustMarker(5, name, [1, 2, 3]);
    expect(s.corrections()).toHaveLength(before + 1);
    expect(s.undo()).toBe(true);
    expect(s.corrections()).toHaveLength(before);
    expect(s.undo()).toBe(false);
  });

  it("coalesces repeated adjustments of the same channel, last wins", () => {
    const s = freshSession();
    const name = s.markerNames[6];
    const orig = s.markerPosition(0, 8, name)!;
    s.adjustMarker(8, name, [1, 1, 1]);
    s.adjustMarker(8, name, [2, 2, 2]);
    const recs = s.corrections().filter((c) => c.frame === 8);
    expect(recs).toHaveLength(1);
    expect(recs[0].corrected).toEqual([2, 2, 2]);
    expect(recs[0].original).toEqual(orig); // original pinned to the document
    s.undo(); // back to the first adjustment
    expect(s.corrections().filter((c) => c.frame === 8)[0].corrected)
      .toEqual([1, 1, 1]);
  });

  it("never mutates the loaded document", () => {
    const s = freshSession();
    const name = s.markerNames[0];
    const before = JSON.stringify(s.docs[0].frames[3].markers);
    s.adjustMarker(3, name, [9, 9, 9]);
    expect(JSON.stringify(s.docs[0].frames[3].markers)).toBe(before);
    // the session view reflects the correction, the document does not
    expect(s.markerPosition(0, 3, name)).toEqual([9, 9, 9]);
  });

  it("rejects unknown markers and frames", () => {
    const s = freshSession();
    expect(() => s.adjustMarker(0, "antler", [0, 0, 0])).toThrow(/antler/);
    expect(() => s.adjustMarker(999, s.markerNames[0], [0, 0, 0])).toThrow();
  });
});

describe("corrections file", () => {
  it("zero corrections produce a valid empty file", () => {
    const text = serializeCorrections(freshSession().correctionsFile());
    const parsed = parseCorrections(text);
    expect(parsed.corrections).toHaveLength(0);
  });

  it("orders records canonically by (frame, marker)", () => {
    const s = freshSession();
    s.adjustMarker(9, s.markerNames[1], [0, 0, 0]);
    s.adjustMarker(2, s.markerNames[5], [0, 0, 0]);
    s.adjustMarker(2, s.markerNames[0], [0, 0, 0]);
    const recs = s.correctionsFile().corrections;
    expect(recs.map((r) => r.frame)).toEqual([2, 2, 9]);
    expect(recs[0].marker < recs[1].marker).toBe(true);
  });

  it("round-trips bitwise through reload", () => {
    const s = freshSession();
    s.adjustMarker(1, s.markerNames[0], [0.5, 0.25, 0.125]);
    s.adjustMarker(7, s.markerNames[3], [1.5, -0.5, 2.0]);
    const text = serializeCorrections(s.correctionsFile("qa", "2026-01-01"));
    const again = serializeCorrections(parseCorrections(text));
    expect(again).toBe(text);
  });
});
