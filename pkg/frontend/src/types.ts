export type PoseJSON = {
  rotation: number[][];
  translation: number[];
};

export type IntrinsicsJSON = {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
};

export type TrajectoryJSON = {
  poses: PoseJSON[];
  intrinsics: IntrinsicsJSON;
};

export type SessionSummary = {
  session_id: string;
  clip_index: number;
  archive_len: number;
  memory_cells: number;
  clip_len: number;
  resolution: number;
  initial_pose: PoseJSON;
  last_pose: PoseJSON;
  intrinsics: IntrinsicsJSON;
};

export type RegionJSON =
  | { type: "box"; min: number[]; max: number[] }
  | { type: "voxels"; keys: number[][] };

export type PrimitiveJSON = {
  shape: "box" | "sphere";
  color: number[];
  pose?: PoseJSON;
  size?: number[];
  radius?: number;
};

export type EditOpJSON = {
  kind: "delete-region" | "add-primitive" | "recolor-region";
  region?: RegionJSON;
  primitive?: PrimitiveJSON;
  color?: number[];
};

export type StepRequestJSON = {
  trajectory: TrajectoryJSON;
  instruction_id: number;
  edits: EditOpJSON[];
  seed?: number | null;
};

export type PointCloudData = {
  count: number;
  positions: Float32Array; // xyz interleaved
  colors: Float32Array;    // rgb interleaved, [0,1]
};
