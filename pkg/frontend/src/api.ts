/**
 * Typed client for the changekit session service.
 *
 * The UI never computes scores or masks locally: every displayed set is the
 * verbatim body of a server response, so what the browser shows is exactly
 * what the engine selected.
 */

export interface SessionInfo {
  session_id: string;
  image_size: [number, number];
  n_t: number;
  n_t1: number;
}

export interface ChangeProposalDto {
  id: number;
  source_time: "T0" | "T1";
  size: [number, number];
  counts: number[];
  score: number;
  angle_deg: number;
}

export interface SelectionParams {
  mode: "threshold" | "topk" | "otsu";
  angle?: number;
  k?: number;
}

export interface QueryPointDto {
  x: number;
  y: number;
  t: "T0" | "T1";
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class EngineClient {
  private fetchImpl: FetchLike;

  constructor(public baseUrl: string = "", fetchImpl?: FetchLike) {
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    const body = await resp.text();
    if (!resp.ok) {
      let detail = body;
      try {
        detail = JSON.parse(body).detail ?? body;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, typeof detail === "string" ? detail : JSON.stringify(detail));
    }
    return JSON.parse(body) as T;
  }

  createSession(manifestPath: string): Promise<SessionInfo> {
    return this.json<SessionInfo>("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ manifest_path: manifestPath }),
    });
  }

  getChanges(
    sessionId: string,
    params: SelectionParams,
    signal?: AbortSignal,
  ): Promise<ChangeProposalDto[]> {
    const q = new URLSearchParams({ mode: params.mode });
    if (params.angle !== undefined) q.set("angle", String(params.angle));
    if (params.k !== undefined) q.set("k", String(params.k));
    return this.json<ChangeProposalDto[]>(`/sessions/${sessionId}/changes?${q}`, { signal });
  }

  postQuery(
    sessionId: string,
    points: QueryPointDto[],
    semanticAngle: number,
    selection: SelectionParams,
    signal?: AbortSignal,
  ): Promise<ChangeProposalDto[]> {
    return this.json<ChangeProposalDto[]>(`/sessions/${sessionId}/query`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        points: points.map((p) => ({ x: p.x, y: p.y, t: p.t })),
        semantic_angle: semanticAngle,
        mode: selection.mode,
        angle: selection.angle,
        k: selection.k,
      }),
      signal,
    });
  }

  overlayUrl(sessionId: string, time: "T0" | "T1", ids: number[]): string {
    return `${this.baseUrl}/sessions/${sessionId}/overlay?time=${time}&ids=${ids.join(",")}`;
  }

  latentUrl(sessionId: string, time: "T0" | "T1"): string {
    return `${this.baseUrl}/sessions/${sessionId}/latent?time=${time}`;
  }
}
