// Pure view-model. The console holds no authoritative state: everything here
// is a projection of admin API responses, and rendered prose passes through
// byte for byte.

import type {
  AgentEvent,
  PendingList,
  RenderedOffer,
  SessionList,
  SessionSummary,
} from "./types.js";

export interface ConsoleState {
  sessions: SessionSummary[];
  pending: SessionSummary[];
  renders: Map<string, RenderedOffer>;
  serverNowMs: number | null; // server-reported clock at the last fetch
  fetchedAtMs: number | null; // local clock at the last fetch
  banner: string | null;
}

export function initialState(): ConsoleState {
  return {
    sessions: [],
    pending: [],
    renders: new Map(),
    serverNowMs: null,
    fetchedAtMs: null,
    banner: null,
  };
}

export function orderPending(entries: SessionSummary[]): SessionSummary[] {
  return [...entries].sort(
    (a, b) => a.deadlineMs - b.deadlineMs || a.sessionId.localeCompare(b.sessionId),
  );
}

export function applyPendingList(
  state: ConsoleState,
  list: PendingList,
  localNowMs: number,
): ConsoleState {
  return {
    ...state,
    pending: orderPending(list.pending),
    serverNowMs: Date.parse(list.now),
    fetchedAtMs: localNowMs,
  };
}

export function applySessionList(
  state: ConsoleState,
  list: SessionList,
  localNowMs: number,
): ConsoleState {
  return {
    ...state,
    sessions: list.sessions,
    serverNowMs: Date.parse(list.now),
    fetchedAtMs: localNowMs,
  };
}

export function applyRender(state: ConsoleState, offer: RenderedOffer): ConsoleState {
  const renders = new Map(state.renders);
  renders.set(offer.sessionId, offer);
  return { ...state, renders };
}

// Countdown from server-reported validUntil against server-reported now:
// the local clock only measures time elapsed since the fetch, never the
// deadline itself, so client clock skew cannot mislead an operator.
export function remainingMs(
  summary: SessionSummary,
  state: ConsoleState,
  localNowMs: number,
): number {
  const elapsed =
    state.fetchedAtMs === null ? 0 : Math.max(0, localNowMs - state.fetchedAtMs);
  return summary.deadlineMs - elapsed;
}

export function formatCountdown(ms: number): string {
  if (ms <= 0) return "expired";
  const totalSeconds = Math.floor(ms / 1000);
  const minutes = Math.floor(totalSeconds / 60);
  const seconds = totalSeconds % 60;
  if (minutes >= 60) {
    const hours = Math.floor(minutes / 60);
    return `${hours}h ${minutes % 60}m`;
  }
  return minutes > 0 ? `${minutes}m ${seconds}s` : `${seconds}s`;
}

export function dropPending(state: ConsoleState, sessionId: string): ConsoleState {
  return {
    ...state,
    pending: state.pending.filter((entry) => entry.sessionId !== sessionId),
  };
}

export interface EventEffect {
  refetchPending: boolean;
  refetchSessions: boolean;
  dropPendingSession: string | null;
}

// Events are hints about what to refetch; list contents always come from
// the read endpoints so the console can never invent state.
export function reduceEvent(event: AgentEvent): EventEffect {
  const sessionId = typeof event.data.sessionId === "string" ? event.data.sessionId : null;
  switch (event.type) {
    case "pending":
      return { refetchPending: true, refetchSessions: true, dropPendingSession: null };
    case "expired":
    case "pending-expired":
      return { refetchPending: true, refetchSessions: true, dropPendingSession: sessionId };
    case "accepted":
    case "rejected":
    case "offer-applied":
    case "offer-sent":
    case "superseded-decision":
      return { refetchPending: true, refetchSessions: true, dropPendingSession: sessionId };
    default:
      return { refetchPending: false, refetchSessions: false, dropPendingSession: null };
  }
}

// Prose is displayed exactly as the agent rendered it.
export function proseOf(offer: RenderedOffer): (string | null)[] {
  return offer.contracts.map((contract) => contract.prose);
}

export function emptyPendingHint(state: ConsoleState): string | null {
  if (state.pending.length > 0) return null;
  return "No offers awaiting a decision; live events will add them here.";
}
