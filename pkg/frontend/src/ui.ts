// DOM layer. All data lands via textContent, so nothing the agent or a
// counterparty wrote can inject markup; prose is shown verbatim.

import { checkAssignments } from "./constraints.js";
import {
  ConsoleState,
  emptyPendingHint,
  formatCountdown,
  proseOf,
  remainingMs,
} from "./model.js";
import type { DecisionRequest, SessionSummary } from "./types.js";

export interface Handlers {
  decide(sessionId: string, request: DecisionRequest): void;
}

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderBanner(state: ConsoleState): HTMLElement | null {
  if (!state.banner) return null;
  return el("div", "banner", state.banner);
}

function renderCountdown(
  summary: SessionSummary,
  state: ConsoleState,
  localNowMs: number,
): HTMLElement {
  const ms = remainingMs(summary, state, localNowMs);
  const node = el("span", ms <= 0 ? "countdown expired" : "countdown");
  node.textContent = formatCountdown(ms);
  node.title = `server deadline ${summary.validUntil}`;
  return node;
}

function renderDecisionForm(
  summary: SessionSummary,
  state: ConsoleState,
  handlers: Handlers,
): HTMLElement {
  const form = el("div", "decision");
  const accept = el("button", "accept", "Accept") as HTMLButtonElement;
  const reject = el("button", "reject", "Reject") as HTMLButtonElement;
  accept.onclick = () => handlers.decide(summary.sessionId, { action: "accept" });
  reject.onclick = () => handlers.decide(summary.sessionId, { action: "reject" });
  form.append(accept, reject);

  const render = state.renders.get(summary.sessionId);
  const contract = render?.contracts[0];
  const counterFields = el("div", "counter-fields");
  const inputs = new Map<string, HTMLInputElement>();
  const violationBox = el("div", "violations");
  if (contract) {
    // Pre-fill from the live offer: arguments for concrete contracts,
    // constraint descriptions for proposals.
    const rows = contract.constraints.length
      ? contract.constraints.map((c) => ({
          key: c.key,
          prefill: c.constraint.constraint === "exact" ? describePrefill(c) : "",
          hint: c.description,
        }))
      : contract.arguments.map((a) => ({ key: a.key, prefill: a.text, hint: a.kind }));
    for (const row of rows) {
      const label = el("label", "field");
      label.append(el("span", "key", row.key));
      const input = document.createElement("input");
      input.value = row.prefill;
      input.placeholder = row.hint;
      inputs.set(row.key, input);
      label.append(input);
      counterFields.append(label);
    }
    const counter = el("button", "counter", "Counter") as HTMLButtonElement;
    counter.onclick = () => {
      const assignments: Record<string, string> = {};
      for (const [key, input] of inputs) {
        if (input.value !== "") assignments[key] = input.value;
      }
      violationBox.textContent = "";
      if (contract.constraints.length > 0) {
        const violations = checkAssignments(contract.constraints, assignments);
        if (violations.length > 0) {
          violationBox.append(
            el("div", "violation", `constraint violated: ${violations.join("; ")}`),
          );
          return;
        }
      }
      handlers.decide(summary.sessionId, { action: "counter", assignments });
    };
    form.append(counterFields, counter, violationBox);
  }
  return form;
}

function describePrefill(view: { constraint: { constraint: string } }): string {
  const doc = view.constraint as { constraint: string; value?: { value: unknown } };
  if (doc.constraint === "exact" && doc.value) return String(doc.value.value);
  return "";
}

function renderCard(
  summary: SessionSummary,
  state: ConsoleState,
  handlers: Handlers,
  localNowMs: number,
): HTMLElement {
  const card = el("article", `card state-${summary.state}`);
  const header = el("header");
  header.append(
    el("strong", "counterparty", summary.counterparty),
    el("code", "session-id", summary.sessionId.slice(0, 12)),
    el("span", "state", summary.state),
    renderCountdown(summary, state, localNowMs),
  );
  card.append(header);

  const render = state.renders.get(summary.sessionId);
  if (render) {
    for (const prose of proseOf(render)) {
      if (prose !== null) {
        const pre = el("pre", "prose");
        pre.textContent = prose;
        card.append(pre);
      }
    }
    const table = el("table", "arguments");
    for (const contract of render.contracts) {
      for (const argument of contract.arguments) {
        const row = el("tr");
        row.append(el("td", "key", argument.key), el("td", "value", argument.text));
        table.append(row);
      }
      for (const constraint of contract.constraints) {
        const row = el("tr", constraint.open ? "open-constraint" : "");
        row.append(
          el("td", "key", constraint.key),
          el("td", "value", constraint.description),
        );
        table.append(row);
      }
    }
    card.append(table);
  }

  if (summary.pending && summary.yourTurn) {
    card.append(renderDecisionForm(summary, state, handlers));
  }
  return card;
}

export function renderApp(
  root: HTMLElement,
  state: ConsoleState,
  handlers: Handlers,
  localNowMs: number,
): void {
  root.textContent = "";
  const banner = renderBanner(state);
  if (banner) root.append(banner);

  const pendingSection = el("section", "pending");
  pendingSection.append(el("h2", undefined, "Awaiting your decision"));
  const hint = emptyPendingHint(state);
  if (hint) {
    pendingSection.append(el("p", "hint", hint));
  }
  for (const summary of state.pending) {
    pendingSection.append(renderCard(summary, state, handlers, localNowMs));
  }
  root.append(pendingSection);

  const allSection = el("section", "sessions");
  allSection.append(el("h2", undefined, "All sessions"));
  for (const summary of state.sessions) {
    allSection.append(renderCard(summary, state, handlers, localNowMs));
  }
  root.append(allSection);
}
