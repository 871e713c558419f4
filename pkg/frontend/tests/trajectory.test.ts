import { describe, expect, it } from "vitest";
import { rotY } from "../src/math.js";
import {
  draftTrajectory, interpolatePoses, outAndBack, serializeTrajectory,
  trajectoriesIdentical,
} from "../src/trajectory.js";
import { IntrinsicsJSON, PoseJSON } from "../src/types.js";

const pose = (yaw: number, t: number[]): PoseJSON => ({
  rotation: rotY(yaw),
  translation: t,
});

const INTR: IntrinsicsJSON = {
  fx: 32, fy: 32, cx: 32, cy: 32, width: 64, height: 64,
};

describe("draftTrajectory", () => {
  it("rejects fewer than 2 keyframes", () => {
    expect(() => draftTrajectory([pose(0, [0, 0, 0])], 5, null)).toThrow();
  });

  it("two identical keyframes give a constant trajectory", () => {
    const k = pose(0.3, [1, 2, 3]);
    const draft = draftTrajectory([k, { ...k }], 5, null);
    expect(draft.poses).toHaveLength(5);
    for (const p of draft.poses) {
      expect(p.translation).toEqual([1, 2, 3]);
      for (let r = 0; r < 3; r++) {
        for (let c = 0; c < 3; c++) {
          expect(p.rotation[r][c]).toBeCloseTo(k.rotation[r][c], 12);
        }
      }
    }
  });

  it("interpolates translation linearly and hits keyframes", () => {
    const a = pose(0, [0, 0, 0]);
    const b = pose(0, [1, 0, 2]);
    const draft = draftTrajectory([a, b], 5, null);
    expect(draft.poses[0].translation).toEqual([0, 0, 0]);
    expect(draft.poses[4].translation[0]).toBeCloseTo(1, 12);
    expect(draft.poses[2].translation[0]).toBeCloseTo(0.5, 12);
    expect(draft.poses[2].translation[2]).toBeCloseTo(1.0, 12);
  });

  it("out-and-back doubles into a palindrome", () => {
    const draft = draftTrajectory([pose(0, [0, 0, 0]), pose(0.6, [1, 0, 0])], 4, null);
    const loop = outAndBack(draft);
    expect(loop).toHaveLength(8);
    expect(loop[0]).toEqual(loop[7]);
    expect(loop[3]).toEqual(loop[4]);
  });

  it("flags a discontinuous start against the previous end pose", () => {
    const prevEnd = pose(0, [10, 0, 0]);
    const draft = draftTrajectory([pose(0, [0, 0, 0]), pose(0, [1, 0, 0])], 3,
                                  prevEnd, 1.0);
    expect(draft.continuous).toBe(false);
    expect(draft.gap).toBeCloseTo(10, 12);
    const ok = draftTrajectory([pose(0, [9.5, 0, 0]), pose(0, [1, 0, 0])], 3,
                               prevEnd, 1.0);
    expect(ok.continuous).toBe(true);
  });

  it("midpoint rotation is the slerp of the keyframe rotations", () => {
    const a = pose(0, [0, 0, 0]);
    const b = pose(1.0, [0, 0, 0]);
    const draft = draftTrajectory([a, b], 3, null);
    const mid = interpolatePoses(a, b, 0.5);
    for (let r = 0; r < 3; r++) {
      for (let c = 0; c < 3; c++) {
        expect(draft.poses[1].rotation[r][c]).toBeCloseTo(mid.rotation[r][c], 12);
        expect(mid.rotation[r][c]).toBeCloseTo(rotY(0.5)[r][c], 12);
      }
    }
  });
});

describe("serialization", () => {
  it("serializes to a deep copy with identical doubles", () => {
    const draft = draftTrajectory(
      [pose(0.123456789, [0.1, -0.2, 0.3]), pose(-0.7, [2.5, 0.0, -1.25])], 6, null);
    const a = serializeTrajectory(draft, INTR);
    const b = serializeTrajectory(draft, INTR);
    expect(trajectoriesIdentical(a, b)).toBe(true);
    // JSON round trip on our side preserves every double bit-exactly.
    const parsed = JSON.parse(JSON.stringify(a));
    expect(trajectoriesIdentical(a, parsed)).toBe(true);
    // mutation of the copy must not leak back
    b.poses[0].translation[0] = 999;
    expect(trajectoriesIdentical(a, b)).toBe(false);
  });
});
