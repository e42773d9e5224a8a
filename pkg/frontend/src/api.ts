// HTTP client for one agent's admin API. Every mutation goes through
// decide(); errors come back as typed outcomes, never as uncaught throws,
// so a misbehaving server can only ever produce a banner.

import type {
  ApiError,
  DecisionRequest,
  PendingList,
  RenderedOffer,
  SessionDetail,
  SessionList,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class AdminApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: ApiError,
  ) {
    super(`${body.error}: ${body.detail}`);
    this.name = "AdminApiError";
  }
}

export class AgentUnreachable extends Error {
  constructor(cause: unknown) {
    super(`agent unreachable: ${String(cause)}`);
    this.name = "AgentUnreachable";
  }
}

export class AdminClient {
  constructor(
    private readonly endpoint: string,
    private readonly token: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.endpoint}${path}`, {
        method,
        headers: {
          Authorization: `Bearer ${this.token}`,
          ...(body !== undefined ? { "Content-Type": "application/json" } : {}),
        },
        ...(body !== undefined ? { body: JSON.stringify(body) } : {}),
      });
    } catch (cause) {
      throw new AgentUnreachable(cause);
    }
    if (!response.ok) {
      let parsed: ApiError;
      try {
        parsed = (await response.json()) as ApiError;
      } catch {
        parsed = { error: "http-error", detail: `status ${response.status}` };
      }
      throw new AdminApiError(response.status, parsed);
    }
    return (await response.json()) as T;
  }

  sessions(): Promise<SessionList> {
    return this.call<SessionList>("GET", "/sessions");
  }

  session(sessionId: string): Promise<SessionDetail> {
    return this.call<SessionDetail>("GET", `/sessions/${sessionId}`);
  }

  pending(): Promise<PendingList> {
    return this.call<PendingList>("GET", "/pending");
  }

  render(sessionId: string): Promise<RenderedOffer> {
    return this.call<RenderedOffer>("GET", `/sessions/${sessionId}/render`);
  }

  decide(sessionId: string, request: DecisionRequest): Promise<SessionDetail> {
    return this.call<SessionDetail>("POST", `/sessions/${sessionId}/decision`, request);
  }

  eventsUrl(after: number): string {
    return `${this.endpoint}/events?after=${after}&token=${encodeURIComponent(this.token)}`;
  }

  pollEvents(after: number): Promise<string> {
    return this.callText(`/events?after=${after}&once=1`);
  }

  private async callText(path: string): Promise<string> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.endpoint}${path}`, {
        method: "GET",
        headers: { Authorization: `Bearer ${this.token}` },
      });
    } catch (cause) {
      throw new AgentUnreachable(cause);
    }
    if (!response.ok) {
      throw new AdminApiError(response.status, {
        error: "http-error",
        detail: `status ${response.status}`,
      });
    }
    return response.text();
  }
}

export type DecideOutcome =
  | { ok: true; session: SessionDetail }
  | { ok: false; status: number; error: ApiError };

// The console never masks API errors and never crashes on them: everything
// the server refuses becomes a structured outcome for the banner.
export async function decideSafely(
  client: AdminClient,
  sessionId: string,
  request: DecisionRequest,
): Promise<DecideOutcome> {
  try {
    const session = await client.decide(sessionId, request);
    return { ok: true, session };
  } catch (failure) {
    if (failure instanceof AdminApiError) {
      return { ok: false, status: failure.status, error: failure.body };
    }
    return {
      ok: false,
      status: 0,
      error: { error: "unreachable", detail: String(failure) },
    };
  }
}
