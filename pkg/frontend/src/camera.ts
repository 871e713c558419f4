// Orbit camera for the memory viewport. World convention matches the
// service: +Y down. Elevation raises the eye above the target (negative
// world Y); azimuth 0 looks along +Z.

import { matMul, matMulVec, Mat3, rotX, rotY, Vec3, vsub } from "./math.js";
import { PoseJSON } from "./types.js";

export type ViewportState = {
  azimuth: number;    // radians
  elevation: number;  // radians, (-pi/2, pi/2)
  distance: number;   // meters, > 0
  target: Vec3;
};

export const clampViewport = (v: ViewportState): ViewportState => ({
  azimuth: v.azimuth,
  elevation: Math.max(-1.45, Math.min(1.45, v.elevation)),
  distance: Math.max(0.05, v.distance),
  target: v.target,
});

// Camera-to-world pose of the orbit eye looking at the target.
export const orbitPose = (v: ViewportState): PoseJSON => {
  const rot: Mat3 = matMul(rotY(v.azimuth), rotX(-v.elevation));
  const back = matMulVec(rot, [0, 0, -v.distance]);
  const eye: Vec3 = [v.target[0] + back[0], v.target[1] + back[1], v.target[2] + back[2]];
  return {
    rotation: rot,
    translation: [eye[0], eye[1], eye[2]],
  };
};

export type ProjectedPoint = {
  x: number;
  y: number;
  depth: number;
};

// World -> screen for the orbit camera (simple pinhole over the canvas).
export const projectPoint = (
  world: Vec3,
  pose: PoseJSON,
  width: number,
  height: number,
  focal: number,
): ProjectedPoint | null => {
  const rotT: Mat3 = [
    [pose.rotation[0][0], pose.rotation[1][0], pose.rotation[2][0]],
    [pose.rotation[0][1], pose.rotation[1][1], pose.rotation[2][1]],
    [pose.rotation[0][2], pose.rotation[1][2], pose.rotation[2][2]],
  ];
  const rel = vsub(world, [pose.translation[0], pose.translation[1], pose.translation[2]]);
  const cam = matMulVec(rotT, rel);
  if (cam[2] <= 1e-6) return null;
  return {
    x: (cam[0] / cam[2]) * focal + width / 2,
    y: (cam[1] / cam[2]) * focal + height / 2,
    depth: cam[2],
  };
};
