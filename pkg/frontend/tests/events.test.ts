import { describe, expect, it, vi } from "vitest";

import { AdminClient } from "../src/api.js";
import { parseEventStream, subscribeEvents } from "../src/events.js";
import type { EventSourceLike, MessageEventLike } from "../src/events.js";
import { dropPending, initialState, reduceEvent } from "../src/model.js";
import type { AgentEvent } from "../src/types.js";
import { MockAdminApi, sid } from "./helpers.js";

describe("event stream parsing", () => {
  it("parses the agent's text/event-stream format", () => {
    const body =
      "id: 0\nevent: pending\ndata: {\"sessionId\":\"abc\"}\n\n" +
      "id: 1\nevent: accepted\ndata: {\"sessionId\":\"abc\"}\n\n" +
      ": keep-alive\n\n";
    const events = parseEventStream(body);
    expect(events).toEqual([
      { seq: 0, type: "pending", data: { sessionId: "abc" } },
      { seq: 1, type: "accepted", data: { sessionId: "abc" } },
    ]);
  });

  it("skips undecodable payloads instead of crashing", () => {
    const events = parseEventStream("id: 3\nevent: pending\ndata: not json\n\n");
    expect(events).toEqual([]);
  });
});

describe("event reduction", () => {
  it("expiry removes the entry from the pending queue", () => {
    let state = initialState();
    state = {
      ...state,
      pending: [
        {
          sessionId: sid(1),
          state: "offered-by-initiator",
          counterparty: "x",
          counterpartyId: "party:sha-256:" + "0".repeat(64),
          yourTurn: true,
          offerIndex: 1,
          validUntil: "2026-01-01T00:01:00Z",
          deadlineMs: 1000,
          pending: true,
        },
      ],
    };
    const event: AgentEvent = {
      seq: 5,
      type: "pending-expired",
      data: { sessionId: sid(1) },
    };
    const effect = reduceEvent(event);
    expect(effect.dropPendingSession).toBe(sid(1));
    expect(effect.refetchPending).toBe(true);
    state = dropPending(state, effect.dropPendingSession!);
    expect(state.pending).toEqual([]);
  });

  it("trace events do not force refetches", () => {
    const effect = reduceEvent({ seq: 1, type: "document-fetched", data: {} });
    expect(effect.refetchPending).toBe(false);
    expect(effect.refetchSessions).toBe(false);
  });
});

describe("subscription modes", () => {
  it("live mode delivers typed events from an EventSource", () => {
    const listeners = new Map<string, (event: MessageEventLike) => void>();
    const fake: EventSourceLike = {
      onmessage: null,
      addEventListener: (type, listener) => listeners.set(type, listener),
      close: vi.fn(),
    };
    const client = new AdminClient("http://mock", "secret", async () => new Response(""));
    const seen: AgentEvent[] = [];
    const handle = subscribeEvents(client, (event) => seen.push(event), {
      factory: () => fake,
    });
    listeners.get("pending")!({
      data: JSON.stringify({ sessionId: sid(2) }),
      lastEventId: "7",
    });
    expect(seen).toEqual([{ seq: 7, type: "pending", data: { sessionId: sid(2) } }]);
    handle.close();
    expect(fake.close).toHaveBeenCalled();
  });

  it("polling fallback replays the backlog through /events?once=1", async () => {
    const api = new MockAdminApi();
    let served = false;
    const client = new AdminClient("http://mock", "secret", async (input, init) => {
      const url = new URL(input, "http://mock");
      if (url.pathname === "/events") {
        const body = served
          ? ""
          : "id: 0\nevent: accepted\ndata: {\"sessionId\":\"" + sid(3) + "\"}\n\n";
        served = true;
        return new Response(body, { status: 200 });
      }
      return api.fetch(input, init);
    });
    const seen: AgentEvent[] = [];
    let tick: (() => Promise<void>) | null = null;
    const handle = subscribeEvents(client, (event) => seen.push(event), {
      pollIntervalMs: 1,
      setIntervalFn: ((fn: () => Promise<void>) => {
        tick = fn;
        return 1 as unknown as ReturnType<typeof setInterval>;
      }) as typeof setInterval,
      clearIntervalFn: (() => undefined) as typeof clearInterval,
    });
    await tick!();
    expect(seen).toEqual([{ seq: 0, type: "accepted", data: { sessionId: sid(3) } }]);
    await tick!(); // empty follow-up poll is harmless
    expect(seen.length).toBe(1);
    handle.close();
  });
});
