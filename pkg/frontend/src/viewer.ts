// Canvas-2D point cloud renderer with a per-pixel depth buffer. The memory
// representation is points, so point sprites are the native visualization;
// no GPU dependency keeps the companion self-contained.

import { clampViewport, orbitPose, projectPoint, ViewportState } from "./camera.js";
import { PoseJSON, PointCloudData } from "./types.js";
import { matMulVec, vadd, Vec3 } from "./math.js";

export type Overlays = {
  trajectory?: PoseJSON[];
  editBox?: { min: number[]; max: number[] } | null;
};

export class PointCloudViewer {
  private cloud: PointCloudData | null = null;
  snapshotLabel = "";

  constructor(
    readonly canvas: HTMLCanvasElement,
    public viewport: ViewportState,
  ) {}

  setCloud(cloud: PointCloudData, label: string): void {
    this.cloud = cloud;
    this.snapshotLabel = label;
  }

  pointCount(): number {
    return this.cloud ? this.cloud.count : 0;
  }

  render(overlays: Overlays = {}): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const w = this.canvas.width;
    const h = this.canvas.height;
    ctx.fillStyle = "#10131a";
    ctx.fillRect(0, 0, w, h);
    const pose = orbitPose(this.viewport);
    const focal = 0.9 * Math.min(w, h);

    if (this.cloud && this.cloud.count > 0) {
      const img = ctx.getImageData(0, 0, w, h);
      const depth = new Float32Array(w * h).fill(Infinity);
      const { positions, colors, count } = this.cloud;
      for (let i = 0; i < count; i++) {
        const p = projectPoint(
          [positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]],
          pose, w, h, focal);
        if (!p) continue;
        const x = Math.round(p.x);
        const y = Math.round(p.y);
        if (x < 0 || x >= w || y < 0 || y >= h) continue;
        const at = y * w + x;
        if (p.depth >= depth[at]) continue;
        depth[at] = p.depth;
        img.data[4 * at] = Math.round(colors[3 * i] * 255);
        img.data[4 * at + 1] = Math.round(colors[3 * i + 1] * 255);
        img.data[4 * at + 2] = Math.round(colors[3 * i + 2] * 255);
        img.data[4 * at + 3] = 255;
      }
      ctx.putImageData(img, 0, 0);
    } else {
      ctx.fillStyle = "#8892a6";
      ctx.font = "14px sans-serif";
      ctx.fillText("memory is empty — create a session or run a step", 16, h / 2);
    }

    if (overlays.trajectory && overlays.trajectory.length > 1) {
      ctx.strokeStyle = "#ffd34d";
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      let started = false;
      for (const tp of overlays.trajectory) {
        const p = projectPoint(
          [tp.translation[0], tp.translation[1], tp.translation[2]],
          pose, w, h, focal);
        if (!p) continue;
        if (!started) {
          ctx.moveTo(p.x, p.y);
          started = true;
        } else {
          ctx.lineTo(p.x, p.y);
        }
      }
      ctx.stroke();
    }

    if (overlays.editBox) {
      const { min, max } = overlays.editBox;
      const corners: Vec3[] = [];
      for (const x of [min[0], max[0]]) {
        for (const y of [min[1], max[1]]) {
          for (const z of [min[2], max[2]]) {
            corners.push([x, y, z]);
          }
        }
      }
      const edges = [[0, 1], [0, 2], [0, 4], [1, 3], [1, 5], [2, 3], [2, 6],
                     [3, 7], [4, 5], [4, 6], [5, 7], [6, 7]];
      ctx.strokeStyle = "#ff5d5d";
      ctx.lineWidth = 1;
      for (const [a, b] of edges) {
        const pa = projectPoint(corners[a], pose, w, h, focal);
        const pb = projectPoint(corners[b], pose, w, h, focal);
        if (!pa || !pb) continue;
        ctx.beginPath();
        ctx.moveTo(pa.x, pa.y);
        ctx.lineTo(pb.x, pb.y);
        ctx.stroke();
      }
    }

    ctx.fillStyle = "#c9d4e8";
    ctx.font = "12px monospace";
    ctx.fillText(`${this.pointCount()} points ${this.snapshotLabel}`, 8, 16);
  }

  // Pose the next keyframe where the orbit camera currently sits.
  cameraPose(): PoseJSON {
    return orbitPose(this.viewport);
  }

  nudge(dAzimuth: number, dElevation: number, dDistance: number): void {
    this.viewport = clampViewport({
      ...this.viewport,
      azimuth: this.viewport.azimuth + dAzimuth,
      elevation: this.viewport.elevation + dElevation,
      distance: this.viewport.distance * dDistance,
    });
  }

  dolly(forward: number): void {
    const pose = orbitPose(this.viewport);
    const dir = matMulVec(pose.rotation, [0, 0, forward]);
    this.viewport = {
      ...this.viewport,
      target: vadd(this.viewport.target, dir),
    };
  }
}
