// Thin typed client for the enhancement service HTTP API.

import { Annotation } from "./strokes.js";

export interface SessionInfo {
  id: string;
  width: number;
  height: number;
  eta_init: number;
  personalized: boolean;
}

export interface GammaStats {
  min: number;
  mean: number;
  max: number;
}

export interface EnhanceResponse {
  image_png_base64: string;
  gamma: GammaStats;
  mean_luma: number;
}

export interface CommitResponse {
  m: number;
  active: boolean;
}

export class ServiceError extends Error {
  constructor(readonly status: number, detail: string) {
    super(`service error ${status}: ${detail}`);
  }
}

async function parseOrThrow<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // keep the status text
    }
    throw new ServiceError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class EnhanceClient {
  constructor(readonly baseUrl: string = "") {}

  async createSession(image: Blob, profile?: string): Promise<SessionInfo> {
    const form = new FormData();
    form.append("image", image, "upload.png");
    if (profile) form.append("profile", profile);
    const response = await fetch(`${this.baseUrl}/sessions`, { method: "POST", body: form });
    return parseOrThrow<SessionInfo>(response);
  }

  async enhance(sessionId: string, serializedAnnotation: string): Promise<EnhanceResponse> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}/enhance`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: serializedAnnotation,
    });
    return parseOrThrow<EnhanceResponse>(response);
  }

  async commit(sessionId: string, eta: number): Promise<CommitResponse> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}/commit`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ eta }),
    });
    return parseOrThrow<CommitResponse>(response);
  }

  async deleteSession(sessionId: string): Promise<void> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}`, { method: "DELETE" });
    if (!response.ok && response.status !== 404) {
      throw new ServiceError(response.status, response.statusText);
    }
  }

  async health(): Promise<{ status: string; checkpoint: string }> {
    return parseOrThrow(await fetch(`${this.baseUrl}/healthz`));
  }
}

export type { Annotation };
