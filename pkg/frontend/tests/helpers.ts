// A mocked admin API with the same routes, auth, status codes, and error
// bodies as the real one, backed by a mutable session table.

import type { ApiError, SessionSummary } from "../src/types.js";
import type { FetchLike } from "../src/api.js";

export interface MockSession {
  summary: SessionSummary;
  pendingDecision: boolean;
}

export class MockAdminApi {
  sessions = new Map<string, MockSession>();
  now = "2026-01-01T00:00:00Z";
  token = "secret";
  calls: { method: string; path: string; body: unknown }[] = [];

  addSession(partial: Partial<SessionSummary> & { sessionId: string }): void {
    const summary: SessionSummary = {
      state: "offered-by-initiator",
      counterparty: "Counterparty Ltd",
      counterpartyId: "party:sha-256:" + "0".repeat(64),
      yourTurn: true,
      offerIndex: 1,
      validUntil: "2026-01-01T00:05:00Z",
      deadlineMs: 300_000,
      pending: true,
      ...partial,
    };
    this.sessions.set(summary.sessionId, {
      summary,
      pendingDecision: summary.pending,
    });
  }

  private error(status: number, body: ApiError): Response {
    return new Response(JSON.stringify(body), { status });
  }

  private json(body: unknown): Response {
    return new Response(JSON.stringify(body), { status: 200 });
  }

  fetch: FetchLike = async (input, init) => {
    const url = new URL(input, "http://mock");
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    this.calls.push({ method, path: url.pathname + url.search, body });

    const auth = new Headers(init?.headers).get("Authorization");
    const tokenParam = url.searchParams.get("token");
    if (auth !== `Bearer ${this.token}` && tokenParam !== this.token) {
      return this.error(401, { error: "unauthorized", detail: "missing or invalid bearer token" });
    }

    if (method === "GET" && url.pathname === "/sessions") {
      return this.json({
        now: this.now,
        sessions: [...this.sessions.values()].map((s) => s.summary),
      });
    }
    if (method === "GET" && url.pathname === "/pending") {
      return this.json({
        now: this.now,
        pending: [...this.sessions.values()]
          .filter((s) => s.pendingDecision)
          .map((s) => s.summary)
          .sort((a, b) => a.deadlineMs - b.deadlineMs),
      });
    }
    const decision = url.pathname.match(/^\/sessions\/([0-9a-f]{32})\/decision$/);
    if (method === "POST" && decision) {
      const session = this.sessions.get(decision[1]);
      if (!session) {
        return this.error(404, { error: "unknown-session", detail: decision[1] });
      }
      if (!session.pendingDecision) {
        return this.error(409, {
          error: "session-not-pending",
          detail: `session ${decision[1]} awaits no decision`,
        });
      }
      if (session.summary.deadlineMs <= 0) {
        session.pendingDecision = false;
        return this.error(410, { error: "session-expired", detail: decision[1] });
      }
      const action = (body as { action?: unknown })?.action;
      if (action === "accept" || action === "reject") {
        session.pendingDecision = false;
        session.summary = {
          ...session.summary,
          state: action === "accept" ? "accepted" : "rejected",
          pending: false,
          yourTurn: false,
        };
        return this.json({ ...session.summary, initiator: "", responder: "", history: [], contracts: [] });
      }
      if (action === "counter") {
        const assignments = (body as { assignments?: unknown }).assignments;
        // Mirrors the real server: assignments is a map of key to either raw
        // text (parsed by the template type) or a {type, value} document.
        const validValue = (v: unknown) =>
          typeof v === "string" ||
          (typeof v === "object" &&
            v !== null &&
            !Array.isArray(v) &&
            Object.keys(v).sort().join(",") === "type,value");
        const knownKeys = new Set(["quantity", "price", "buyer", "seller"]);
        if (
          assignments === null ||
          typeof assignments !== "object" ||
          Array.isArray(assignments) ||
          !Object.values(assignments as object).every(validValue) ||
          !Object.keys(assignments as object).every((k) => knownKeys.has(k))
        ) {
          return this.error(422, { error: "invariant-violation", detail: "malformed assignments" });
        }
        if ((assignments as Record<string, string>)["quantity"] === "0") {
          return this.error(422, {
            error: "constraint-violated",
            detail: "value for 'quantity' violates its constraint",
          });
        }
        session.pendingDecision = false;
        session.summary = {
          ...session.summary,
          state: "offered-by-responder",
          offerIndex: session.summary.offerIndex + 1,
          pending: false,
          yourTurn: false,
        };
        return this.json({ ...session.summary, initiator: "", responder: "", history: [], contracts: [] });
      }
      return this.error(422, {
        error: "invariant-violation",
        detail: `unknown decision action ${JSON.stringify(action)}`,
      });
    }
    const detail = url.pathname.match(/^\/sessions\/([0-9a-f]{32})$/);
    if (method === "GET" && detail) {
      const session = this.sessions.get(detail[1]);
      if (!session) return this.error(404, { error: "unknown-session", detail: detail[1] });
      return this.json({ ...session.summary, initiator: "", responder: "", history: [], contracts: [] });
    }
    if (method === "GET" && url.pathname === "/events") {
      return new Response("", { status: 200 });
    }
    return this.error(404, { error: "unknown-session", detail: url.pathname });
  };
}

export function sid(n: number): string {
  return n.toString(16).padStart(32, "0");
}
