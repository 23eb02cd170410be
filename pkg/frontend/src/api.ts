import type { QuotaRow, SessionView, SpawnFormValues, TokenResponse } from "./types.js";

/** A structured error from the hub: `{"error": name, "detail": text}`. */
export class ApiError extends Error {
  constructor(
    public readonly errorName: string,
    public readonly detail: string,
    public readonly status: number,
  ) {
    super(`${errorName}: ${detail}`);
  }
}

/** Thrown when the server cannot be reached at all (offline, not a 4xx/5xx). */
export class OfflineError extends Error {}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/**
 * Thin client over the hub HTTP API. Holds the bearer token in memory only;
 * every call except login() refuses to leave the building without one.
 */
export class HubClient {
  token: string | null = null;

  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async login(username: string, secret: string): Promise<TokenResponse> {
    const payload = await this.request("POST", "/hub/api/login", {
      body: { username, secret },
      authenticated: false,
    });
    const response = payload as TokenResponse;
    this.token = response.token;
    return response;
  }

  logout(): void {
    this.token = null;
  }

  async spawn(options: SpawnFormValues): Promise<SessionView> {
    return (await this.request("POST", "/hub/api/sessions", {
      body: options,
    })) as SessionView;
  }

  async getSession(sessionId: string): Promise<SessionView> {
    return (await this.request(
      "GET",
      `/hub/api/sessions/${encodeURIComponent(sessionId)}`,
    )) as SessionView;
  }

  async listSessions(): Promise<SessionView[]> {
    const payload = (await this.request("GET", "/hub/api/sessions")) as {
      sessions: SessionView[];
    };
    return payload.sessions;
  }

  async stopSession(sessionId: string): Promise<SessionView> {
    return (await this.request(
      "DELETE",
      `/hub/api/sessions/${encodeURIComponent(sessionId)}`,
    )) as SessionView;
  }

  async quotaFor(username: string): Promise<QuotaRow> {
    return (await this.request(
      "GET",
      `/hub/api/quota/${encodeURIComponent(username)}`,
    )) as QuotaRow;
  }

  private async request(
    method: string,
    path: string,
    opts: { body?: unknown; authenticated?: boolean } = {},
  ): Promise<unknown> {
    const { body, authenticated = true } = opts;
    const headers: Record<string, string> = {};
    if (authenticated) {
      if (!this.token) {
        throw new ApiError("Unauthorized", "not logged in", 0);
      }
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    if (body !== undefined) {
      headers["Content-Type"] = "application/json";
    }

    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, {
        method,
        headers,
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (exc) {
      throw new OfflineError(String(exc));
    }

    let payload: unknown = null;
    try {
      payload = await response.json();
    } catch {
      // fall through; non-JSON bodies become a generic error below
    }
    if (!response.ok) {
      const record = (payload ?? {}) as { error?: string; detail?: string };
      throw new ApiError(
        record.error ?? `HTTP${response.status}`,
        record.detail ?? "",
        response.status,
      );
    }
    return payload;
  }
}

/**
 * Client-side validation for the spawn form; returns a message to show or
 * null when the form may be submitted. The server re-validates everything —
 * this only exists to block obviously broken submissions early.
 */
export function validateSpawnForm(values: SpawnFormValues): string | null {
  if (!Number.isFinite(values.duration) || values.duration <= 0) {
    return "duration must be a positive number of minutes";
  }
  if (!Number.isFinite(values.cpus) || values.cpus < 1) {
    return "cpus must be at least 1";
  }
  if (!Number.isFinite(values.memory) || values.memory < 64) {
    return "memory must be at least 64 MiB";
  }
  if (!values.image.trim()) {
    return "image must not be empty";
  }
  if (!values.queue.trim()) {
    return "queue must not be empty";
  }
  return null;
}
