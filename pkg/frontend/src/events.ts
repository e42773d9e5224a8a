// Live updates: server-sent events with a polling fallback. The stream is
// only a change signal; authoritative state is always refetched from the
// read endpoints.

import type { AdminClient } from "./api.js";
import type { AgentEvent } from "./types.js";

export interface MessageEventLike {
  data: string;
  lastEventId: string;
  type?: string;
}

export interface EventSourceLike {
  onmessage: ((event: MessageEventLike) => void) | null;
  addEventListener(type: string, listener: (event: MessageEventLike) => void): void;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export interface EventStreamHandle {
  close(): void;
}

export function parseEventStream(body: string): AgentEvent[] {
  // Minimal text/event-stream parser for the polling fallback.
  const events: AgentEvent[] = [];
  for (const block of body.split("\n\n")) {
    let id = -1;
    let type = "message";
    let data = "";
    for (const line of block.split("\n")) {
      if (line.startsWith("id: ")) id = Number(line.slice(4));
      else if (line.startsWith("event: ")) type = line.slice(7);
      else if (line.startsWith("data: ")) data = line.slice(6);
    }
    if (id >= 0 && data) {
      try {
        events.push({ seq: id, type, data: JSON.parse(data) });
      } catch {
        // skip undecodable event payloads; the next refetch resyncs
      }
    }
  }
  return events;
}

const LIVE_EVENT_TYPES = [
  "offer-applied",
  "offer-sent",
  "pending",
  "pending-expired",
  "accepted",
  "rejected",
  "expired",
  "superseded-decision",
  "document-fetched",
  "trace-denied",
  "trace-complete",
  "notice",
  "quarantined",
  "protocol-error",
];

export function subscribeEvents(
  client: AdminClient,
  onEvent: (event: AgentEvent) => void,
  options: {
    factory?: EventSourceFactory;
    pollIntervalMs?: number;
    setIntervalFn?: typeof setInterval;
    clearIntervalFn?: typeof clearInterval;
  } = {},
): EventStreamHandle {
  let cursor = -1;

  if (options.factory) {
    const source = options.factory(client.eventsUrl(cursor));
    const deliver = (raw: MessageEventLike, type: string) => {
      const seq = Number(raw.lastEventId);
      if (Number.isFinite(seq)) cursor = seq;
      try {
        onEvent({ seq, type, data: JSON.parse(raw.data) });
      } catch {
        // ignore malformed frames
      }
    };
    for (const type of LIVE_EVENT_TYPES) {
      source.addEventListener(type, (raw) => deliver(raw, type));
    }
    source.onmessage = (raw) => deliver(raw, raw.type || "message");
    return { close: () => source.close() };
  }

  const setIntervalFn = options.setIntervalFn ?? setInterval;
  const clearIntervalFn = options.clearIntervalFn ?? clearInterval;
  let polling = false;
  const timer = setIntervalFn(async () => {
    if (polling) return;
    polling = true;
    try {
      const body = await client.pollEvents(cursor);
      for (const event of parseEventStream(body)) {
        cursor = Math.max(cursor, event.seq);
        onEvent(event);
      }
    } catch {
      // unreachable agent: keep polling; the UI banner reflects read failures
    } finally {
      polling = false;
    }
  }, options.pollIntervalMs ?? 2000);
  return { close: () => clearIntervalFn(timer) };
}
