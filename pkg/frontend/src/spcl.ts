// Decoder for the service's SPCL point stream:
// "SPCL" | u32 version | u64 count | count * 6 f32 (xyz rgb), little-endian.

import { PointCloudData } from "./types.js";

export class SpclDecodeError extends Error {}

export const decodeSpcl = (buffer: ArrayBuffer): PointCloudData => {
  if (buffer.byteLength < 16) {
    throw new SpclDecodeError("SPCL payload shorter than header");
  }
  const view = new DataView(buffer);
  const magic = String.fromCharCode(view.getUint8(0), view.getUint8(1),
                                    view.getUint8(2), view.getUint8(3));
  if (magic !== "SPCL") {
    throw new SpclDecodeError(`bad magic ${JSON.stringify(magic)}`);
  }
  const version = view.getUint32(4, true);
  if (version !== 1) {
    throw new SpclDecodeError(`unsupported SPCL version ${version}`);
  }
  const count = Number(view.getBigUint64(8, true));
  const expected = 16 + count * 24;
  if (buffer.byteLength < expected) {
    throw new SpclDecodeError(
      `truncated SPCL payload: ${buffer.byteLength} < ${expected}`);
  }
  const data = new Float32Array(buffer, 16, count * 6);
  const positions = new Float32Array(count * 3);
  const colors = new Float32Array(count * 3);
  for (let i = 0; i < count; i++) {
    positions[3 * i] = data[6 * i];
    positions[3 * i + 1] = data[6 * i + 1];
    positions[3 * i + 2] = data[6 * i + 2];
    colors[3 * i] = data[6 * i + 3];
    colors[3 * i + 1] = data[6 * i + 4];
    colors[3 * i + 2] = data[6 * i + 5];
  }
  return { count, positions, colors };
};
