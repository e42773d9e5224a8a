// Wiring: parse the agent address from the fragment, load state, subscribe
// to events, and re-render. State changes appear only after server events
// confirm them; there is no optimistic UI in a legal console.

import { AdminClient, decideSafely } from "./api.js";
import { subscribeEvents, type EventSourceLike } from "./events.js";
import {
  ConsoleState,
  applyPendingList,
  applyRender,
  applySessionList,
  dropPending,
  initialState,
  reduceEvent,
} from "./model.js";
import { renderApp } from "./ui.js";
import type { DecisionRequest } from "./types.js";

function fragmentParams(): Map<string, string> {
  const params = new Map<string, string>();
  for (const pair of window.location.hash.replace(/^#/, "").split("&")) {
    const [key, ...rest] = pair.split("=");
    if (key) params.set(key, decodeURIComponent(rest.join("=")));
  }
  return params;
}

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const params = fragmentParams();
  const endpoint = params.get("endpoint") ?? "http://127.0.0.1:9501";
  const token = params.get("token") ?? "";
  const client = new AdminClient(endpoint, token);

  let state: ConsoleState = initialState();

  const draw = () => renderApp(root, state, handlers, Date.now());

  async function refresh(): Promise<void> {
    try {
      const [pending, sessions] = await Promise.all([
        client.pending(),
        client.sessions(),
      ]);
      state = applyPendingList(state, pending, Date.now());
      state = applySessionList(state, sessions, Date.now());
      const interesting = [...pending.pending, ...sessions.sessions];
      for (const summary of interesting) {
        try {
          state = applyRender(state, await client.render(summary.sessionId));
        } catch {
          // session may have raced away between list and render
        }
      }
      state = { ...state, banner: null };
    } catch (failure) {
      state = { ...state, banner: `agent unreachable: ${String(failure)}` };
    }
    draw();
  }

  const handlers = {
    decide(sessionId: string, request: DecisionRequest): void {
      void (async () => {
        const outcome = await decideSafely(client, sessionId, request);
        if (!outcome.ok) {
          state = {
            ...state,
            banner: `${outcome.error.error}: ${outcome.error.detail}`,
          };
          if (outcome.error.error === "session-expired") {
            state = dropPending(state, sessionId);
          }
          draw();
          return;
        }
        // The view updates from the event stream / refetch, not optimistically.
        await refresh();
      })();
    },
  };

  const supportsEventSource = typeof (window as { EventSource?: unknown }).EventSource === "function";
  subscribeEvents(
    client,
    (event) => {
      const effect = reduceEvent(event);
      if (effect.dropPendingSession) {
        state = dropPending(state, effect.dropPendingSession);
        draw();
      }
      if (effect.refetchPending || effect.refetchSessions) {
        void refresh();
      }
    },
    supportsEventSource
      ? {
          // The DOM EventSource satisfies the structural contract at runtime.
          factory: (url: string) => new EventSource(url) as unknown as EventSourceLike,
        }
      : {},
  );

  setInterval(draw, 1000); // countdown tick
  await refresh();
}

void boot();
