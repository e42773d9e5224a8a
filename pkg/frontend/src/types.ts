// Wire types of the agent admin API (docs/admin-openapi.json is the contract).

export interface SessionSummary {
  sessionId: string;
  state: string;
  counterparty: string;
  counterpartyId: string;
  yourTurn: boolean;
  offerIndex: number;
  validUntil: string;
  deadlineMs: number;
  pending: boolean;
}

export interface HistoryEntry {
  payloadKind: string;
  signer: string;
  envelopeHash: string;
}

export interface SessionDetail extends SessionSummary {
  initiator: string;
  responder: string;
  history: HistoryEntry[];
  contracts: unknown[];
}

export interface SessionList {
  now: string;
  sessions: SessionSummary[];
}

export interface PendingList {
  now: string;
  pending: SessionSummary[];
}

export interface ArgumentView {
  key: string;
  type: string | null;
  kind: string;
  text: string;
}

export type ConstraintDoc =
  | { constraint: "exact"; value: ValueDoc }
  | { constraint: "range"; lo: ValueDoc; hi: ValueDoc }
  | { constraint: "regex"; pattern: string }
  | { constraint: "oneOf"; options: ValueDoc[] }
  | { constraint: "any" };

export interface ValueDoc {
  type: string;
  value: string | number;
}

export interface ConstraintView {
  key: string;
  type: string | null;
  description: string;
  constraint: ConstraintDoc;
  open: boolean;
}

export interface RenderedContract {
  templateHash: string;
  templateTitle: string | null;
  complete: boolean;
  prose: string | null;
  arguments: ArgumentView[];
  constraints: ConstraintView[];
}

export interface RenderedOffer {
  sessionId: string;
  now: string;
  contracts: RenderedContract[];
}

export interface DecisionRequest {
  action: "accept" | "reject" | "counter";
  assignments?: Record<string, string>;
}

export interface ApiError {
  error: string;
  detail: string;
}

export interface AgentEvent {
  seq: number;
  type: string;
  data: Record<string, unknown>;
}
