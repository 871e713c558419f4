import { describe, expect, it } from "vitest";
import { decodeSpcl, SpclDecodeError } from "../src/spcl.js";

const encodeSpcl = (points: number[][]): ArrayBuffer => {
  const buf = new ArrayBuffer(16 + points.length * 24);
  const view = new DataView(buf);
  view.setUint8(0, "S".charCodeAt(0));
  view.setUint8(1, "P".charCodeAt(0));
  view.setUint8(2, "C".charCodeAt(0));
  view.setUint8(3, "L".charCodeAt(0));
  view.setUint32(4, 1, true);
  view.setBigUint64(8, BigInt(points.length), true);
  points.forEach((p, i) => {
    p.forEach((v, j) => view.setFloat32(16 + i * 24 + j * 4, v, true));
  });
  return buf;
};

describe("decodeSpcl", () => {
  it("decodes a crafted two-point payload", () => {
    const cloud = decodeSpcl(encodeSpcl([
      [1, 2, 3, 0.5, 0.25, 1.0],
      [-1, 0, 4, 0.0, 1.0, 0.75],
    ]));
    expect(cloud.count).toBe(2);
    expect(Array.from(cloud.positions.slice(0, 3))).toEqual([1, 2, 3]);
    expect(cloud.colors[5]).toBeCloseTo(0.75, 6);
  });

  it("decodes an empty cloud", () => {
    expect(decodeSpcl(encodeSpcl([])).count).toBe(0);
  });

  it("rejects bad magic", () => {
    const buf = encodeSpcl([[0, 0, 0, 0, 0, 0]]);
    new DataView(buf).setUint8(0, "X".charCodeAt(0));
    expect(() => decodeSpcl(buf)).toThrow(SpclDecodeError);
  });

  it("rejects truncated payloads", () => {
    const buf = encodeSpcl([[0, 0, 0, 0, 0, 0]]);
    expect(() => decodeSpcl(buf.slice(0, buf.byteLength - 8)))
      .toThrow(/truncated/);
    expect(() => decodeSpcl(new ArrayBuffer(4))).toThrow(/shorter/);
  });

  it("rejects unknown versions", () => {
    const buf = encodeSpcl([]);
    new DataView(buf).setUint32(4, 9, true);
    expect(() => decodeSpcl(buf)).toThrow(/version/);
  });
});
