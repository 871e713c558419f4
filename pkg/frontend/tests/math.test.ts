import { describe, expect, it } from "vitest";
import {
  matIdentity, matMul, matMulVec, matToQuat, quatToMat, rotX, rotY, slerp,
} from "../src/math.js";

const matClose = (a: number[][], b: number[][], tol = 1e-12) => {
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      expect(Math.abs(a[i][j] - b[i][j])).toBeLessThan(tol);
    }
  }
};

describe("rotations", () => {
  it("rotY(90deg) maps +z to +x", () => {
    const v = matMulVec(rotY(Math.PI / 2), [0, 0, 1]);
    expect(v[0]).toBeCloseTo(1, 12);
    expect(v[1]).toBeCloseTo(0, 12);
    expect(v[2]).toBeCloseTo(0, 12);
  });

  it("quat round trip reproduces the matrix", () => {
    const m = matMul(rotY(0.7), rotX(-0.3));
    matClose(quatToMat(matToQuat(m)), m, 1e-12);
  });

  it("quat round trip survives trace <= 0 branches", () => {
    const m = matMul(rotY(Math.PI - 0.01), rotX(2.9));
    matClose(quatToMat(matToQuat(m)), m, 1e-10);
  });
});

describe("slerp", () => {
  it("hits both endpoints exactly", () => {
    const qa = matToQuat(rotY(0.2));
    const qb = matToQuat(rotY(1.4));
    matClose(quatToMat(slerp(qa, qb, 0)), rotY(0.2), 1e-12);
    matClose(quatToMat(slerp(qa, qb, 1)), rotY(1.4), 1e-12);
  });

  it("midpoint of two yaws is the mean yaw", () => {
    const q = slerp(matToQuat(rotY(0.0)), matToQuat(rotY(1.0)), 0.5);
    matClose(quatToMat(q), rotY(0.5), 1e-12);
  });

  it("identical quats are a fixed point", () => {
    const q = matToQuat(matMul(rotY(0.3), rotX(0.4)));
    const out = slerp(q, q, 0.37);
    for (let i = 0; i < 4; i++) expect(out[i]).toBeCloseTo(q[i], 12);
  });

  it("handles antipodal representations (q and -q)", () => {
    const q = matToQuat(rotY(0.8));
    const neg: [number, number, number, number] = [-q[0], -q[1], -q[2], -q[3]];
    matClose(quatToMat(slerp(q, neg, 0.5)), rotY(0.8), 1e-10);
  });

  it("identity compose sanity", () => {
    matClose(matMul(matIdentity(), rotY(0.4)), rotY(0.4));
  });
});
