// App wiring: local scene file(s) in, 3D orbit view with draggable markers,
// per-camera overlays, timeline playback, local corrections file out.

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import { TransformControls } from "three/examples/jsm/controls/TransformControls.js";
import { drawOverlay } from "./overlay";
import {
  buildSkeletonVisual,
  updateSkeletonVisual,
  type SkeletonVisual,
} from "./scene3d";
import { serializeCorrections, ViewerSession } from "./session";
import { SceneValidationError, type Vec3 } from "./types";
import "./style.css";

const app = document.getElementById("app")!;
app.innerHTML = `
  <div id="toolbar">
    <input type="file" id="file" accept=".json" multiple />
    <button id="play" disabled>play</button>
    <input type="range" id="timeline" min="0" max="0" value="0" disabled />
    <span id="frame-label">-</span>
    <select id="view"><option value="orbit">3D orbit</option></select>
    <select id="rate">
      <option value="0.25">0.25x</option>
      <option value="1" selected>1x</option>
      <option value="4">4x</option>
    </select>
    <button id="undo" disabled>undo</button>
    <button id="save" disabled>save corrections</button>
    <span id="status"></span>
  </div>
  <div id="stage">
    <canvas id="gl"></canvas>
    <canvas id="overlay" width="960" height="540" hidden></canvas>
  </div>`;

const status = document.getElementById("status")!;
const glCanvas = document.getElementById("gl") as HTMLCanvasElement;
const overlayCanvas = document.getElementById("overlay") as HTMLCanvasElement;
const playBtn = document.getElementById("play") as HTMLButtonElement;
const undoBtn = document.getElementById("undo") as HTMLButtonElement;
const saveBtn = document.getElementById("save") as HTMLButtonElement;
const timeline = document.getElementById("timeline") as HTMLInputElement;
const frameLabel = document.getElementById("frame-label")!;
const viewSelect = document.getElementById("view") as HTMLSelectElement;
const rateSelect = document.getElementById("rate") as HTMLSelectElement;

const renderer = new THREE.WebGLRenderer({ canvas: glCanvas, antialias: true });
const scene = new THREE.Scene();
scene.background = new THREE.Color(0x151821);
const camera3d = new THREE.PerspectiveCamera(50, 16 / 9, 0.01, 100);
camera3d.position.set(6, -6, 4);
camera3d.up.set(0, 0, 1);
scene.add(new THREE.AmbientLight(0xffffff, 0.7));
const sun = new THREE.DirectionalLight(0xffffff, 1.2);
sun.position.set(4, -6, 10);
scene.add(sun);
scene.add(new THREE.GridHelper(14, 14).rotateX(Math.PI / 2));

const orbit = new OrbitControls(camera3d, glCanvas);
orbit.target.set(6, 3, 0.5);
const dragger = new TransformControls(camera3d, glCanvas);
dragger.setSize(0.6);
scene.add(dragger);
dragger.addEventListener("dragging-changed", (ev) => {
  orbit.enabled = !(ev as unknown as { value: boolean }).value;
});

let session: ViewerSession | null = null;
let visuals: SkeletonVisual[] = [];
let lastTick = performance.now();

function setStatus(text: string, bad = false) {
  status.textContent = text;
  status.className = bad ? "bad" : "";
}

function refreshUi() {
  if (!session) return;
  timeline.max = String(session.frameCount - 1);
  timeline.value = String(session.frame);
  frameLabel.textContent = `frame ${session.frame + 1}/${session.frameCount}`;
  playBtn.textContent = session.playing ? "pause" : "play";
  visuals.forEach((v) => updateSkeletonVisual(v, session!));
  if (session.viewCamera !== null) {
    overlayCanvas.hidden = false;
    const ctx = overlayCanvas.getContext("2d")!;
    ctx.clearRect(0, 0, overlayCanvas.width, overlayCanvas.height);
    session.docs.forEach((_, di) =>
      drawOverlay(ctx, session!, di, session!.viewCamera!, {
        observed: "#ffd166",
        reprojected: di === 0 ? "#ff8c42" : "#42c6ff",
      }),
    );
  } else {
    overlayCanvas.hidden = true;
  }
}

function loadFiles(files: FileList) {
  Promise.all([...files].map((f) => f.text()))
    .then((texts) => {
      session = ViewerSession.fromJson(...texts);
      visuals.forEach((v) => scene.remove(v.group));
      dragger.detach();
      visuals = session.docs.map((doc, i) => {
        const vis = buildSkeletonVisual(doc, i);
        scene.add(vis.group);
        return vis;
      });
      viewSelect.innerHTML = `<option value="orbit">3D orbit</option>`
        + session.docs[0].rig.cameras
          .map((c, i) => `<option value="${i}">camera ${c.id}</option>`)
          .join("");
      playBtn.disabled = timeline.disabled = saveBtn.disabled = false;
      undoBtn.disabled = false;
      setStatus(`loaded ${session.docs.map((d) => d.method).join(" + ")}, `
        + `${session.frameCount} frames`);
      refreshUi();
    })
    .catch((err) => {
      session = null;
      if (err instanceof SceneValidationError) {
        setStatus(`invalid scene - ${err.message}`, true);
      } else {
        setStatus(`cannot load: ${err}`, true);
      }
    });
}

document.getElementById("file")!.addEventListener("change", (ev) => {
  const files = (ev.target as HTMLInputElement).files;
  if (files && files.length) loadFiles(files);
});

playBtn.addEventListener("click", () => {
  if (!session) return;
  session.playing = !session.playing;
  refreshUi();
});

timeline.addEventListener("input", () => {
  session?.seek(Number(timeline.value));
  refreshUi();
});

rateSelect.addEventListener("change", () => {
  if (session) session.rate = Number(rateSelect.value);
});

viewSelect.addEventListener("change", () => {
  if (!session) return;
  session.viewCamera =
    viewSelect.value === "orbit" ? null : Number(viewSelect.value);
  refreshUi();
});

undoBtn.addEventListener("click", () => {
  if (session?.undo()) {
    setStatus("undid last correction");
    refreshUi();
  }
});

saveBtn.addEventListener("click", () => {
  if (!session) return;
  const text = serializeCorrections(
    session.correctionsFile("viewer", new Date().toISOString()),
  );
  const blob = new Blob([text], { type: "application/json" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = "corrections.json";
  a.click();
  URL.revokeObjectURL(a.href);
  setStatus(`saved ${session.corrections().length} correction(s)`);
});

glCanvas.addEventListener("pointerdown", (ev) => {
  if (!session || dragger.dragging) return;
  const rect = glCanvas.getBoundingClientRect();
  const ndc = new THREE.Vector2(
    ((ev.clientX - rect.left) / rect.width) * 2 - 1,
    -((ev.clientY - rect.top) / rect.height) * 2 + 1,
  );
  const ray = new THREE.Raycaster();
  ray.setFromCamera(ndc, camera3d);
  const meshes = visuals.flatMap((v) => v.markerMeshes).filter((m) => m.visible);
  const hit = ray.intersectObjects(meshes)[0];
  if (hit) {
    session.selectedMarker = hit.object.userData.marker as string;
    dragger.attach(hit.object);
    setStatus(`selected ${session.selectedMarker}`);
  }
});

dragger.addEventListener("mouseUp", () => {
  if (!session || !dragger.object) return;
  const mesh = dragger.object as THREE.Mesh;
  const marker = mesh.userData.marker as string;
  const p = mesh.position;
  const res = session.adjustMarker(session.frame, marker, [p.x, p.y, p.z] as Vec3);
  setStatus(
    `${marker}: moved ${res.magnitudeMm.toFixed(1)} mm`
    + (res.isLarge ? " (large, > 100 mm)" : ""),
  );
  refreshUi();
});

function tick(now: number) {
  const dt = (now - lastTick) / 1000;
  lastTick = now;
  if (session) {
    const before = session.frame;
    const { stoppedAtCorrection } = session.advance(dt);
    if (stoppedAtCorrection) {
      setStatus(`paused at corrected frame ${session.frame + 1}`);
    }
    if (session.frame !== before) refreshUi();
  }
  const w = glCanvas.clientWidth || 960;
  const h = glCanvas.clientHeight || 540;
  renderer.setSize(w, h, false);
  camera3d.aspect = w / h;
  camera3d.updateProjectionMatrix();
  orbit.update();
  renderer.render(scene, camera3d);
  requestAnimationFrame(tick);
}
requestAnimationFrame(tick);
setStatus("open a scene export to begin");
