// Thin client over the session service HTTP API; the UI talks to the
// service exclusively through this module.

import { decodeSpcl } from "./spcl.js";
import {
  EditOpJSON, PointCloudData, SessionSummary, StepRequestJSON, TrajectoryJSON,
} from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

const raiseOnError = async (response: Response): Promise<Response> => {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return response;
};

export class SessionClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  async health(): Promise<boolean> {
    try {
      const r = await fetch(this.url("/health"));
      return r.ok;
    } catch {
      return false;
    }
  }

  async createSession(payload: Record<string, unknown>): Promise<SessionSummary> {
    const r = await raiseOnError(await fetch(this.url("/sessions"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    }));
    return (await r.json()) as SessionSummary;
  }

  async info(sessionId: string): Promise<SessionSummary> {
    const r = await raiseOnError(await fetch(this.url(`/sessions/${sessionId}`)));
    return (await r.json()) as SessionSummary;
  }

  async memory(sessionId: string): Promise<PointCloudData> {
    const r = await raiseOnError(
      await fetch(this.url(`/sessions/${sessionId}/memory`)));
    return decodeSpcl(await r.arrayBuffer());
  }

  async step(sessionId: string, request: StepRequestJSON): Promise<SessionSummary> {
    const r = await raiseOnError(await fetch(this.url(`/sessions/${sessionId}/step`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(request),
    }));
    return (await r.json()) as SessionSummary;
  }

  async edit(sessionId: string, op: EditOpJSON): Promise<SessionSummary> {
    const r = await raiseOnError(await fetch(this.url(`/sessions/${sessionId}/edit`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(op),
    }));
    return (await r.json()) as SessionSummary;
  }

  async clipFrames(sessionId: string, k: number): Promise<string[]> {
    const r = await raiseOnError(
      await fetch(this.url(`/sessions/${sessionId}/clips/${k}`)));
    const body = (await r.json()) as { frames_png_b64: string[] };
    return body.frames_png_b64.map((b64) => `data:image/png;base64,${b64}`);
  }

  async echoTrajectory(trajectory: TrajectoryJSON): Promise<TrajectoryJSON> {
    const r = await raiseOnError(await fetch(this.url("/trajectory/echo"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(trajectory),
    }));
    return (await r.json()) as TrajectoryJSON;
  }
}
