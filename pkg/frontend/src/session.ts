// Viewer session state: loaded scenes, playback cursor, marker selection,
// and the pending-corrections ledger. All pure logic; rendering and DOM
// wiring live elsewhere so this file is fully unit-testable.

import type {
  CorrectionRecord,
  CorrectionsDocument,
  SceneDocument,
  Vec3,
} from "./types";
import { validateScene } from "./types";

export const LARGE_ADJUSTMENT_M = 0.1; // flag threshold, 100 mm

export interface PendingCorrection {
  frame: number;
  marker: string;
  original: Vec3;
  corrected: Vec3;
}

export interface AdjustResult {
  magnitudeMm: number;
  isLarge: boolean;
}

interface UndoEntry {
  key: string;
  previous: PendingCorrection | null;
}

export class ViewerSession {
  readonly docs: SceneDocument[];
  frame = 0;
  playing = false;
  rate = 1.0; // playback speed multiplier
  selectedMarker: string | null = null;
  viewCamera: number | null = null; // null = 3D orbit view
  private pending = new Map<string, PendingCorrection>();
  private undoStack: UndoEntry[] = [];
  private fractionalFrame = 0;

  constructor(docs: SceneDocument[]) {
    if (docs.length === 0) throw new Error("no documents loaded");
    const n = docs[0].frames.length;
    for (const d of docs) {
      if (d.frames.length !== n) {
        throw new Error("loaded documents must cover the same frames");
      }
    }
    this.docs = docs;
  }

  static fromJson(...texts: string[]): ViewerSession {
    return new ViewerSession(texts.map((t) => validateScene(JSON.parse(t))));
  }

  get frameCount(): number {
    return this.docs[0].frames.length;
  }

  get markerNames(): string[] {
    return this.docs[0].marker_names;
  }

  seek(frame: number): void {
    this.frame = Math.min(Math.max(Math.trunc(frame), 0), this.frameCount - 1);
    this.fractionalFrame = this.frame;
  }

  /** Advance playback by wall-clock seconds. Never skips a frame carrying a
   * pending correction: playback stops there and reports it. */
  advance(dtSeconds: number): { stoppedAtCorrection: boolean } {
    if (!this.playing) return { stoppedAtCorrection: false };
    const step = dtSeconds * this.docs[0].frame_rate * this.rate;
    const target = this.fractionalFrame + step;
    const from = this.frame;
    const to = Math.min(Math.trunc(target), this.frameCount - 1);
    for (let f = from + 1; f <= to; f++) {
      if (this.correctionsAt(f).length > 0 && f !== to) {
        this.frame = f;
        this.fractionalFrame = f;
        this.playing = false;
        return { stoppedAtCorrection: true };
      }
    }
    this.fractionalFrame = Math.min(target, this.frameCount - 1);
    this.frame = to;
    if (this.frame >= this.frameCount - 1) this.playing = false;
    return { stoppedAtCorrection: false };
  }

  markerPosition(docIndex: number, frame: number, marker: string): Vec3 | null {
    const doc = this.docs[docIndex];
    const mi = doc.marker_names.indexOf(marker);
    if (mi < 0) return null;
    const corrected = this.pending.get(`${frame}:${marker}`);
    if (docIndex === 0 && corrected) return corrected.corrected;
    const p = doc.frames[frame].markers[mi];
    if (p === null || p.some((v) => v === null)) return null;
    return p as Vec3;
  }

  /** Record a correction for (frame, marker). Repeated adjustments of the
   * same channel coalesce into one record (last wins); the original stays
   * pinned to the document's position. */
  adjustMarker(frame: number, marker: string, corrected: Vec3): AdjustResult {
    const doc = this.docs[0];
    const mi = doc.marker_names.indexOf(marker);
    if (mi < 0 || frame < 0 || frame >= this.frameCount) {
      throw new Error(`no such marker/frame: ${marker}@${frame}`);
    }
    const raw = doc.frames[frame].markers[mi];
    if (raw === null || raw.some((v) => v === null)) {
      throw new Error(`marker ${marker} has no position at frame ${frame}`);
    }
    const original = raw as Vec3;
    const key = `${frame}:${marker}`;
    this.undoStack.push({ key, previous: this.pending.get(key) ?? null });
    this.pending.set(key, { frame, marker, original, corrected });
    const dm = Math.hypot(
      corrected[0] - original[0],
      corrected[1] - original[1],
      corrected[2] - original[2],
    );
    return { magnitudeMm: dm * 1000, isLarge: dm > LARGE_ADJUSTMENT_M };
  }

  undo(): boolean {
    const entry = this.undoStack.pop();
    if (!entry) return false;
    if (entry.previous === null) this.pending.delete(entry.key);
    else this.pending.set(entry.key, entry.previous);
    return true;
  }

  correctionsAt(frame: number): PendingCorrection[] {
    return this.corrections().filter((c) => c.frame === frame);
  }

  /** Pending corrections in canonical (frame, marker) order. */
  corrections(): PendingCorrection[] {
    return [...this.pending.values()].sort(
      (a, b) => a.frame - b.frame || a.marker.localeCompare(b.marker),
    );
  }

  /** Serializable corrections file; accepted by the pipeline's
   * apply-corrections command and stable under reload + re-save. */
  correctionsFile(author = "viewer", timestamp = ""): CorrectionsDocument {
    const records: CorrectionRecord[] = this.corrections().map((c) => ({
      frame: c.frame,
      marker: c.marker,
      original: c.original,
      corrected: c.corrected,
      author,
      timestamp,
    }));
    return { schema: "skeltraj/corrections@1", corrections: records };
  }
}

export function serializeCorrections(doc: CorrectionsDocument): string {
  // fixed key order keeps save -> load -> save byte-stable
  const rows = doc.corrections.map((c) =>
    JSON.stringify({
      frame: c.frame,
      marker: c.marker,
      original: c.original,
      corrected: c.corrected,
      author: c.author,
      timestamp: c.timestamp,
    }),
  );
  return `{\n "schema": "${doc.schema}",\n "corrections": [\n  ${rows.join(",\n  ")}\n ]\n}\n`;
}

export function parseCorrections(text: string): CorrectionsDocument {
  const doc = JSON.parse(text) as CorrectionsDocument;
  if (doc.schema !== "skeltraj/corrections@1") {
    throw new Error(`unsupported corrections schema ${doc.schema}`);
  }
  return doc;
}
