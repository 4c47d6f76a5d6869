import type { RegistryRule, SessionPayload } from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export interface AnalyzeOptions {
  noteMeta?: Record<string, unknown>;
  overrides?: Record<string, unknown>;
}

/** Thin typed client over the pipeline service; fetch is injectable for tests. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = globalThis.fetch.bind(globalThis),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: unknown };
        if (body.detail !== undefined) detail = JSON.stringify(body.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  getRegistry(): Promise<RegistryRule[]> {
    return this.request<RegistryRule[]>("/v1/registry");
  }

  analyze(note: string, options: AnalyzeOptions = {}): Promise<SessionPayload> {
    return this.request<SessionPayload>("/v1/analyze", {
      method: "POST",
      body: JSON.stringify({
        note,
        note_meta: options.noteMeta ?? null,
        overrides: options.overrides ?? null,
      }),
    });
  }

  getSession(sessionId: string): Promise<SessionPayload> {
    return this.request<SessionPayload>(`/v1/sessions/${sessionId}`);
  }

  resolveVariables(
    sessionId: string,
    cdrId: string,
    values: Record<string, unknown>,
  ): Promise<SessionPayload> {
    return this.request<SessionPayload>(`/v1/sessions/${sessionId}/variables`, {
      method: "POST",
      body: JSON.stringify({ cdr_id: cdrId, values }),
    });
  }
}
