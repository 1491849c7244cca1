import type { CandidateMeta, RgbaColor, SessionRef, WorkflowKind } from "./types.js";

/** Error body shape the service uses everywhere. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let code = "error";
  let message = response.statusText;
  try {
    const body = (await response.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, code, message);
}

/**
 * Thin typed client over the session service. Every UI mutation goes through
 * exactly one of these calls; there are no private endpoints.
 */
export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      throw await parseError(response);
    }
    return (await response.json()) as T;
  }

  createSession(
    workflow: WorkflowKind,
    options: { width?: number; height?: number; seed?: string } = {},
  ): Promise<SessionRef> {
    return this.request<SessionRef>("POST", "/sessions", {
      workflow,
      width: options.width,
      height: options.height,
      seed: options.seed ?? "0",
    });
  }

  setPrompt(sessionId: string, text: string): Promise<void> {
    return this.request("POST", `/sessions/${sessionId}/prompt`, { text });
  }

  setWeight(sessionId: string, w: number): Promise<void> {
    return this.request("POST", `/sessions/${sessionId}/weight`, { w });
  }

  generate(sessionId: string): Promise<{ candidate_id: number; latent_digest: string; image_url: string }> {
    return this.request("POST", `/sessions/${sessionId}/generate`);
  }

  parallelStart(sessionId: string): Promise<void> {
    return this.request("POST", `/sessions/${sessionId}/parallel/start`);
  }

  parallelStop(sessionId: string): Promise<void> {
    return this.request("POST", `/sessions/${sessionId}/parallel/stop`);
  }

  tick(sessionId: string, nowMs: number): Promise<{ new_candidate_ids: number[] }> {
    return this.request("POST", `/sessions/${sessionId}/tick`, { now_ms: nowMs });
  }

  candidates(sessionId: string): Promise<{ candidates: CandidateMeta[] }> {
    return this.request("GET", `/sessions/${sessionId}/candidates`);
  }

  importCandidate(sessionId: string, candidateId: number): Promise<{ layer_id: number }> {
    return this.request("POST", `/sessions/${sessionId}/import/${candidateId}`);
  }

  brush(
    sessionId: string,
    layerId: number,
    x: number,
    y: number,
    radius: number,
    color: RgbaColor,
  ): Promise<void> {
    return this.request("POST", `/sessions/${sessionId}/layers/${layerId}/brush`, {
      x,
      y,
      radius,
      color: [color.r, color.g, color.b, color.a],
    });
  }

  fill(
    sessionId: string,
    layerId: number,
    x0: number,
    y0: number,
    x1: number,
    y1: number,
    color: RgbaColor,
  ): Promise<void> {
    return this.request("POST", `/sessions/${sessionId}/layers/${layerId}/fill`, {
      x0,
      y0,
      x1,
      y1,
      color: [color.r, color.g, color.b, color.a],
    });
  }

  layerProps(
    sessionId: string,
    layerId: number,
    props: { opacity?: number; visible?: boolean; index?: number },
  ): Promise<void> {
    return this.request("POST", `/sessions/${sessionId}/layers/${layerId}/props`, props);
  }

  rate(sessionId: string, measure: string, score: number): Promise<void> {
    return this.request("POST", `/sessions/${sessionId}/rate`, { measure, score });
  }

  async logText(sessionId: string): Promise<string> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}/log`);
    if (!response.ok) {
      throw await parseError(response);
    }
    return response.text();
  }

  snapshotUrl(sessionId: string, revision: number): string {
    return `${this.baseUrl}/sessions/${sessionId}/snapshot.png?rev=${revision}`;
  }

  eventsUrl(sessionId: string, since: number): string {
    return `${this.baseUrl}/sessions/${sessionId}/events?since=${since}`;
  }

  candidateImageUrl(meta: { image_url: string }): string {
    return this.baseUrl + meta.image_url;
  }
}
