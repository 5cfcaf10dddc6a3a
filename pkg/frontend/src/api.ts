import { Point } from "./coords.js";
import { ServerSession } from "./state.js";

export interface QuadrupletInfo {
  id: string;
  status: string;
  scene: string;
  images: Record<string, string>;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function parseOrThrow<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let code = "http_error";
    let message = res.statusText;
    try {
      const body = await res.json();
      code = body.code ?? code;
      message = body.message ?? message;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(res.status, code, message);
  }
  return (await res.json()) as T;
}

/** Thin client over the annotation service REST interface. */
export class ApiClient {
  constructor(private baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(`${this.baseUrl}${path}`, init);
    return parseOrThrow<T>(res);
  }

  private post<T>(path: string, body?: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: body === undefined ? "{}" : JSON.stringify(body),
    });
  }

  listQuadruplets(): Promise<QuadrupletInfo[]> {
    return this.request("/api/quadruplets");
  }

  imageUrl(quadrupletId: string, key: string): string {
    return `${this.baseUrl}/api/image/${quadrupletId}:${key}`;
  }

  createSession(quadrupletId: string): Promise<ServerSession> {
    return this.post("/api/sessions", { quadruplet_id: quadrupletId });
  }

  getSession(sessionId: string): Promise<ServerSession> {
    return this.request(`/api/sessions/${sessionId}`);
  }

  addClick(sessionId: string, a: Point, b: Point): Promise<ServerSession> {
    return this.post(`/api/sessions/${sessionId}/clicks`, {
      a: [a.x, a.y],
      b: [b.x, b.y],
    });
  }

  seed(sessionId: string): Promise<ServerSession> {
    return this.post(`/api/sessions/${sessionId}/seed`);
  }

  refine(sessionId: string): Promise<ServerSession> {
    return this.post(`/api/sessions/${sessionId}/refine`);
  }

  overlayUrl(sessionId: string): string {
    return `${this.baseUrl}/api/sessions/${sessionId}/overlay`;
  }

  accept(sessionId: string): Promise<ServerSession> {
    return this.post(`/api/sessions/${sessionId}/accept`);
  }

  reject(sessionId: string): Promise<ServerSession> {
    return this.post(`/api/sessions/${sessionId}/reject`);
  }
}
