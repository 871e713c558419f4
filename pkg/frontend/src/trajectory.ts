// Trajectory authoring: user keyframes -> interpolated camera path at clip
// length -> service JSON. Translation interpolates linearly, rotation
// spherically; the draft carries continuity flags against the previous
// clip's final pose.

import { matToQuat, quatToMat, slerp, vlerp, vnorm, vsub, Vec3 } from "./math.js";
import { IntrinsicsJSON, PoseJSON, TrajectoryJSON } from "./types.js";

export type TrajectoryDraft = {
  keyframes: PoseJSON[];
  poses: PoseJSON[];       // resampled at clip length
  clipLen: number;
  continuous: boolean;     // first pose within gapBound of previous end pose
  gap: number;             // meters
};

const poseTranslation = (p: PoseJSON): Vec3 =>
  [p.translation[0], p.translation[1], p.translation[2]];

export const interpolatePoses = (a: PoseJSON, b: PoseJSON, t: number): PoseJSON => {
  const qa = matToQuat(a.rotation);
  const qb = matToQuat(b.rotation);
  const rot = quatToMat(slerp(qa, qb, t));
  const tr = vlerp(poseTranslation(a), poseTranslation(b), t);
  return { rotation: rot, translation: [tr[0], tr[1], tr[2]] };
};

export const draftTrajectory = (
  keyframes: PoseJSON[],
  clipLen: number,
  previousEnd: PoseJSON | null,
  gapBound = 1.0,
): TrajectoryDraft => {
  if (keyframes.length < 2) {
    throw new Error("trajectory drafts need at least 2 keyframes");
  }
  if (clipLen < 1) {
    throw new Error("clip length must be positive");
  }
  const poses: PoseJSON[] = [];
  const segments = keyframes.length - 1;
  for (let i = 0; i < clipLen; i++) {
    const s = clipLen === 1 ? 0 : (i / (clipLen - 1)) * segments;
    const k = Math.min(Math.floor(s), segments - 1);
    const t = s - k;
    poses.push(interpolatePoses(keyframes[k], keyframes[k + 1], t));
  }
  let gap = 0;
  if (previousEnd !== null) {
    gap = vnorm(vsub(poseTranslation(poses[0]), poseTranslation(previousEnd)));
  }
  return {
    keyframes,
    poses,
    clipLen,
    continuous: previousEnd === null || gap <= gapBound,
    gap,
  };
};

export const outAndBack = (draft: TrajectoryDraft): PoseJSON[] => {
  const back = [...draft.poses].reverse();
  return [...draft.poses, ...back];
};

// JSON has no negative zero; canonicalize so serialized payloads survive
// any JSON layer bit-exactly (-0 and 0 are the same coordinate anyway).
const cz = (v: number): number => (Object.is(v, -0) ? 0 : v);

export const serializeTrajectory = (
  draft: TrajectoryDraft,
  intrinsics: IntrinsicsJSON,
): TrajectoryJSON => ({
  poses: draft.poses.map((p) => ({
    rotation: p.rotation.map((row) => row.map(cz)),
    translation: p.translation.map(cz),
  })),
  intrinsics: {
    fx: cz(intrinsics.fx), fy: cz(intrinsics.fy),
    cx: cz(intrinsics.cx), cy: cz(intrinsics.cy),
    width: intrinsics.width, height: intrinsics.height,
  },
});

// Structural double-equality: every number must survive bitwise (Object.is).
export const trajectoriesIdentical = (a: TrajectoryJSON, b: TrajectoryJSON): boolean => {
  if (a.poses.length !== b.poses.length) return false;
  const intrKeys: (keyof IntrinsicsJSON)[] =
    ["fx", "fy", "cx", "cy", "width", "height"];
  if (!intrKeys.every((k) => Object.is(a.intrinsics[k], b.intrinsics[k]))) {
    return false;
  }
  for (let i = 0; i < a.poses.length; i++) {
    const pa = a.poses[i];
    const pb = b.poses[i];
    for (let r = 0; r < 3; r++) {
      if (!Object.is(pa.translation[r], pb.translation[r])) return false;
      for (let c = 0; c < 3; c++) {
        if (!Object.is(pa.rotation[r][c], pb.rotation[r][c])) return false;
      }
    }
  }
  return true;
};
