// Studio wiring: session lifecycle, memory viewport, trajectory authoring,
// edits, step submission and clip review. All state mutations go through
// the documented service endpoints; the viewport renders snapshots only.

import { SessionClient, ApiError } from "./api.js";
import { PointCloudViewer } from "./viewer.js";
import { draftTrajectory, serializeTrajectory, TrajectoryDraft } from "./trajectory.js";
import { EditOpJSON, PoseJSON, SessionSummary } from "./types.js";

const INSTRUCTIONS = [
  "orbit_left", "orbit_right", "pan_left", "pan_right",
  "dolly_in", "dolly_out", "strafe_left", "strafe_right",
  "pan_up", "pan_down", "arc_left", "arc_right",
  "sweep_left", "sweep_right", "push_left", "push_right",
];

type AppState = {
  client: SessionClient;
  session: SessionSummary | null;
  keyframes: PoseJSON[];
  draft: TrajectoryDraft | null;
  pendingEdits: EditOpJSON[];
  stepInFlight: boolean;
  snapshotStep: number;
};

const el = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
};

const banner = (text: string, kind: "info" | "error" = "info") => {
  const b = el<HTMLDivElement>("banner");
  b.textContent = text;
  b.className = `banner ${kind}`;
};

export const startApp = (): void => {
  const canvas = el<HTMLCanvasElement>("viewport");
  const viewer = new PointCloudViewer(canvas, {
    azimuth: 0.6, elevation: 0.35, distance: 4.5, target: [2, 1.2, 2],
  });
  const state: AppState = {
    client: new SessionClient(
      (document.body.dataset.api ?? "http://127.0.0.1:8123")),
    session: null,
    keyframes: [],
    draft: null,
    pendingEdits: [],
    stepInFlight: false,
    snapshotStep: -1,
  };

  const instructionSelect = el<HTMLSelectElement>("instruction");
  INSTRUCTIONS.forEach((name, i) => {
    const opt = document.createElement("option");
    opt.value = String(i);
    opt.textContent = `${i}: ${name}`;
    instructionSelect.appendChild(opt);
  });

  const redraw = () => {
    viewer.render({
      trajectory: state.draft?.poses,
      editBox: currentEditBox(),
    });
    el<HTMLSpanElement>("point-count").textContent =
      String(viewer.pointCount());
    el<HTMLSpanElement>("keyframe-count").textContent =
      String(state.keyframes.length);
    const gap = state.draft
      ? `${state.draft.gap.toFixed(3)} m ${state.draft.continuous ? "(ok)" : "(too far!)"}`
      : "—";
    el<HTMLSpanElement>("draft-gap").textContent = gap;
    el<HTMLButtonElement>("btn-step").disabled =
      !state.session || !state.draft || state.stepInFlight;
  };

  const currentEditBox = () => {
    const read = (id: string) => Number(el<HTMLInputElement>(id).value);
    const min = [read("box-x0"), read("box-y0"), read("box-z0")];
    const max = [read("box-x1"), read("box-y1"), read("box-z1")];
    if (min.every((v, i) => Number.isFinite(v) && Number.isFinite(max[i]) && v < max[i])) {
      return { min, max };
    }
    return null;
  };

  const refreshMemory = async () => {
    if (!state.session) return;
    try {
      const cloud = await state.client.memory(state.session.session_id);
      state.snapshotStep = state.session.clip_index;
      viewer.setCloud(cloud, `@ step ${state.snapshotStep}`);
      redraw();
    } catch (err) {
      banner(`memory load failed: ${err}`, "error");
    }
  };

  el<HTMLButtonElement>("btn-create").onclick = async () => {
    const seed = Number(el<HTMLInputElement>("scene-seed").value) || 0;
    try {
      state.session = await state.client.createSession({
        scene_seed: seed,
        config: {
          clip_len: 5, preceding_len: 2, resolution: 64, memory_d: 0.02,
          retrieval: { k: 3, epsilon: 0.01, iou_cube_side: 0.02 },
        },
      });
      state.keyframes = [state.session.last_pose];
      state.draft = null;
      banner(`session ${state.session.session_id} created `
        + `(${state.session.memory_cells} cells)`);
      await refreshMemory();
    } catch (err) {
      banner(`create failed: ${err}`, "error");
    }
  };

  el<HTMLButtonElement>("btn-keyframe").onclick = () => {
    state.keyframes.push(viewer.cameraPose());
    if (state.session && state.keyframes.length >= 2) {
      state.draft = draftTrajectory(state.keyframes, state.session.clip_len,
                                    state.session.last_pose);
    }
    redraw();
  };

  el<HTMLButtonElement>("btn-clear-keyframes").onclick = () => {
    state.keyframes = state.session ? [state.session.last_pose] : [];
    state.draft = null;
    redraw();
  };

  el<HTMLButtonElement>("btn-queue-delete").onclick = () => {
    const box = currentEditBox();
    if (!box) {
      banner("delete region needs min < max on every axis", "error");
      return;
    }
    state.pendingEdits.push({
      kind: "delete-region",
      region: { type: "box", min: box.min, max: box.max },
    });
    banner(`${state.pendingEdits.length} edit(s) queued for the next step`);
  };

  el<HTMLButtonElement>("btn-apply-delete").onclick = async () => {
    if (!state.session) return;
    const box = currentEditBox();
    if (!box) {
      banner("delete region needs min < max on every axis", "error");
      return;
    }
    try {
      state.session = await state.client.edit(state.session.session_id, {
        kind: "delete-region",
        region: { type: "box", min: box.min, max: box.max },
      });
      banner(`deleted; memory now ${state.session.memory_cells} cells`);
      await refreshMemory();
    } catch (err) {
      banner(`edit failed: ${err}`, "error");
    }
  };

  el<HTMLButtonElement>("btn-step").onclick = async () => {
    if (!state.session || !state.draft || state.stepInFlight) return;
    if (!state.draft.continuous) {
      banner("trajectory start is too far from the previous clip's end", "error");
      return;
    }
    state.stepInFlight = true;
    redraw();
    try {
      const trajectory = serializeTrajectory(state.draft,
                                             state.session.intrinsics);
      state.session = await state.client.step(state.session.session_id, {
        trajectory,
        instruction_id: Number(instructionSelect.value),
        edits: state.pendingEdits,
      });
      state.pendingEdits = [];
      banner(`clip ${state.session.clip_index - 1} generated`);
      await refreshMemory();
      await showClip(state.session.clip_index - 1);
      state.keyframes = [state.session.last_pose];
      state.draft = null;
    } catch (err) {
      const detail = err instanceof ApiError ? `${err.status}: ${err.message}` : String(err);
      banner(`step failed — ${detail}`, "error");
    } finally {
      state.stepInFlight = false;
      redraw();
    }
  };

  const showClip = async (k: number) => {
    if (!state.session || k < 0) return;
    try {
      const frames = await state.client.clipFrames(state.session.session_id, k);
      const strip = el<HTMLDivElement>("clip-strip");
      strip.innerHTML = "";
      frames.forEach((src, i) => {
        const img = document.createElement("img");
        img.src = src;
        img.title = `clip ${k} frame ${i}`;
        strip.appendChild(img);
      });
    } catch (err) {
      banner(`clip fetch failed: ${err}`, "error");
    }
  };

  canvas.addEventListener("mousemove", (ev) => {
    if (ev.buttons !== 1) return;
    viewer.nudge(-ev.movementX * 0.01, ev.movementY * 0.01, 1.0);
    redraw();
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    viewer.nudge(0, 0, ev.deltaY > 0 ? 1.1 : 1 / 1.1);
    redraw();
  });

  el<HTMLButtonElement>("btn-refresh").onclick = refreshMemory;
  redraw();
  banner("create a session to begin");
};

if (typeof document !== "undefined" && document.getElementById("viewport")) {
  startApp();
}
