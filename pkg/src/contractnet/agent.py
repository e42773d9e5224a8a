"""The deployable contract agent.

One agent represents one party: it verifies and persists every message it
sends or receives (persist happens before any side effect), routes protocol
messages into the negotiation engine and the reference tracer, applies the
policy bound to each contract template, parks offers awaiting a human in a
pending queue, and notifies subscribers of everything it applies. Replaying
the append-only message store reconstructs the engine state exactly, which
is how crash recovery works.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from random import Random
from typing import Any, Callable, Iterable, Sequence

from .canon import (
    Hash,
    canonical_bytes,
    format_timestamp,
    hash_of_bytes,
    parse_json_tree,
    parse_timestamp,
)
from .contracts import (
    Contract,
    ContractLike,
    ProposalContract,
    extract_references,
    refine_proposal,
    validate_contract,
    validate_proposal_against_template,
)
from .errors import (
    BadSignature,
    ContractNetError,
    ExpiredIdentity,
    InvalidContract,
    InvariantViolation,
    NegotiationError,
    SessionExpired,
    SessionNotPending,
    SupersededOffer,
    UnknownOriginal,
    UnknownPeer,
    UnknownSession,
)
from .files import decode_document
from .identity import Identity, PartyId, SignedEnvelope, TrustRegistry, sign, verify
from .negotiation import (
    ACCEPTANCE_KIND,
    OFFER_KIND,
    REJECTION_KIND,
    Acceptance,
    NegotiationEngine,
    NegotiationSession,
    Offer,
    Rejection,
    new_session_id,
    parse_message,
)
from .records import build_contract_record
from .stc import build_transition_contract, is_transition_contract, transition_fields
from .templates import Template, TypeRegistry, parse_argument_text
from .tracing import (
    TRACE_ANSWER_KIND,
    TRACE_PUSH_KIND,
    TRACE_REQUEST_KIND,
    DataAnswer,
    DeniedAnswer,
    DocumentStore,
    PartiesOnly,
    Public,
    RedirectAnswer,
    TraceAnswerSet,
    TraceRequest,
    build_trace_push,
    build_trace_request,
    handle_trace_request,
    parse_trace_push,
    public_push_documents,
)
from .transport import Endpoint
from .values import Value

NOTICE_KIND = "notice"

DEFAULT_OFFER_VALIDITY_MS = 60_000
DEFAULT_REDIRECT_DEPTH = 4


# --- policies -----------------------------------------------------------------

@dataclass(frozen=True)
class Decision:
    action: str  # "accept" | "reject" | "counter" | "defer"
    contracts: tuple[ContractLike, ...] = ()


@dataclass(frozen=True)
class Policy:
    """How the agent reacts to offers bound to one template.

    ``decide`` picks the automatic response for an incoming offer (defer
    parks it for a human); ``on_accepted`` is the performance hook invoked
    once a contract of this template is accepted, never on mere offers.
    """

    kind: str
    decide: Callable[[Offer], Decision] = lambda offer: Decision("defer")
    on_accepted: Callable[["Agent", "AcceptedRecord"], None] | None = None


def defer_to_human() -> Policy:
    return Policy(kind="defer")


def auto_accept(
    predicate: Callable[[Offer], bool] | None = None,
    on_accepted: Callable[["Agent", "AcceptedRecord"], None] | None = None,
) -> Policy:
    def decide(offer: Offer) -> Decision:
        if not offer.acceptable_as_is:
            return Decision("defer")
        if predicate is None or predicate(offer):
            return Decision("accept")
        return Decision("defer")

    return Policy(kind="auto-accept", decide=decide, on_accepted=on_accepted)


def auto_reject(predicate: Callable[[Offer], bool] | None = None) -> Policy:
    def decide(offer: Offer) -> Decision:
        if predicate is None or predicate(offer):
            return Decision("reject")
        return Decision("defer")

    return Policy(kind="auto-reject", decide=decide)


def auto_counter(
    transform: Callable[[Offer], Sequence[ContractLike] | None],
    on_accepted: Callable[["Agent", "AcceptedRecord"], None] | None = None,
) -> Policy:
    def decide(offer: Offer) -> Decision:
        contracts = transform(offer)
        if contracts is None:
            return Decision("defer")
        return Decision("counter", tuple(contracts))

    return Policy(kind="auto-counter", decide=decide, on_accepted=on_accepted)


def handler(
    on_accepted: Callable[["Agent", "AcceptedRecord"], None]
) -> Policy:
    """Defer offer decisions but automate performance once accepted."""
    return Policy(kind="handler", on_accepted=on_accepted)


# --- configuration and bookkeeping ------------------------------------------------

@dataclass
class AgentConfig:
    name: str
    identity: Identity
    registry: TrustRegistry
    peers: dict[PartyId, Endpoint] = field(default_factory=dict)
    policies: dict[Hash, Policy] = field(default_factory=dict)
    default_policy: Policy = field(default_factory=defer_to_human)
    templates: tuple[Template, ...] = ()
    offer_validity_ms: int = DEFAULT_OFFER_VALIDITY_MS
    admin_token: str = ""
    store_path: Path | None = None
    quarantine_path: Path | None = None
    push_templates: frozenset[Hash] = frozenset()
    auto_trace: bool = True
    type_registry: TypeRegistry = field(default_factory=TypeRegistry)


@dataclass(frozen=True)
class StoredMessage:
    seq: int
    direction: str  # "in" | "out"
    at: str  # canonical timestamp
    envelope: SignedEnvelope

    def to_doc(self) -> dict:
        return {
            "kind": "stored-message",
            "seq": self.seq,
            "direction": self.direction,
            "at": self.at,
            "envelope": self.envelope.to_doc(),
        }


class MessageStore:
    """Append-only message log; no update or delete exists.

    When backed by a file, each append writes one canonical JSON line and
    flushes before returning, so everything acknowledged is on disk.
    """

    def __init__(self, path: Path | None = None):
        self._path = Path(path) if path else None
        self._records: list[StoredMessage] = []
        self._by_hash: dict[Hash, int] = {}
        self._by_session: dict[str, list[int]] = {}
        self._handle = None
        self.after_append: Callable[[StoredMessage], None] | None = None
        if self._path and self._path.exists():
            for line in self._path.read_bytes().splitlines():
                if line.strip():
                    self._index(self._decode_line(line))
        if self._path:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = open(self._path, "ab")

    @staticmethod
    def _decode_line(line: bytes) -> StoredMessage:
        doc = parse_json_tree(line)
        if doc.get("kind") != "stored-message":
            raise InvariantViolation("not a stored message line")
        return StoredMessage(
            seq=doc["seq"],
            direction=doc["direction"],
            at=doc["at"],
            envelope=SignedEnvelope.from_doc(doc["envelope"]),
        )

    def _index(self, record: StoredMessage) -> None:
        self._records.append(record)
        self._by_hash[record.envelope.envelope_hash] = record.seq
        session_id = _session_id_of(record.envelope)
        if session_id:
            self._by_session.setdefault(session_id, []).append(record.seq)

    def append(self, direction: str, at: datetime, envelope: SignedEnvelope) -> StoredMessage:
        record = StoredMessage(
            seq=len(self._records),
            direction=direction,
            at=format_timestamp(at),
            envelope=envelope,
        )
        if self._handle:
            self._handle.write(canonical_bytes(record.to_doc()) + b"\n")
            self._handle.flush()
        self._index(record)
        if self.after_append is not None:
            self.after_append(record)
        return record

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[StoredMessage]:
        return list(self._records)

    def by_hash(self, envelope_hash: Hash) -> StoredMessage | None:
        seq = self._by_hash.get(envelope_hash)
        return self._records[seq] if seq is not None else None

    def session_envelopes(self, session_id: str) -> list[SignedEnvelope]:
        return [
            self._records[seq].envelope
            for seq in self._by_session.get(session_id, [])
        ]

    def close(self) -> None:
        if self._handle:
            self._handle.close()
            self._handle = None


def _session_id_of(envelope: SignedEnvelope) -> str | None:
    if envelope.payload_kind in (OFFER_KIND, ACCEPTANCE_KIND, REJECTION_KIND):
        try:
            doc = parse_json_tree(envelope.payload)
            return doc.get("sessionId")
        except InvariantViolation:
            return None
    return None


@dataclass(frozen=True)
class AcceptedRecord:
    session_id: str
    contract: Contract
    contract_hash: Hash
    record_hash: Hash
    offer_envelope: SignedEnvelope
    acceptance_envelope: SignedEnvelope
    counterparty: PartyId


@dataclass
class PendingEntry:
    session_id: str
    enqueued_at: datetime
    deadline: datetime


@dataclass
class PendingTrace:
    request_id: str
    target: str
    hashes: dict[Hash, tuple[int, frozenset[str]]]  # hash -> (depth, visited)
    evidence: tuple[SignedEnvelope, ...]
    context: str = ""


@dataclass(frozen=True)
class Event:
    seq: int
    at: str
    type: str
    data: dict

    def to_doc(self) -> dict:
        return {"seq": self.seq, "at": self.at, "type": self.type, "data": self.data}


class Agent:
    """Message dispatch, policy automation, and durable state for one party."""

    def __init__(
        self,
        config: AgentConfig,
        clock,
        send: Callable[[Endpoint, SignedEnvelope], Any] | None = None,
        rng: Random | None = None,
    ):
        self.config = config
        self.identity = config.identity
        self.party_id = config.identity.party_id
        self.registry = config.registry
        self.clock = clock
        self._send = send or (lambda endpoint, envelope: {"status": "dropped"})
        self.rng = rng if rng is not None else Random()

        self.engine = NegotiationEngine(clock.now)
        self.docstore = DocumentStore()
        self.messages = MessageStore(config.store_path)
        self.quarantine: list[tuple[str, SignedEnvelope | bytes]] = []
        self.events: list[Event] = []
        self._event_cv = threading.Condition()
        self.subscribers: list[Callable[[Event], None]] = []
        self.pending_human: dict[str, PendingEntry] = {}
        self.pending_traces: dict[str, PendingTrace] = {}
        self.accepted_contracts: dict[Hash, AcceptedRecord] = {}
        self.accepted_records: dict[Hash, AcceptedRecord] = {}
        self.latest_transition: dict[Hash, Hash] = {}
        self.trace_outcomes: dict[Hash, str] = {}
        self._denial_evidence: dict[Hash, tuple[str, ...]] = {}
        self._handlers: dict[str, Callable[["Agent", SignedEnvelope], None]] = {}
        self._lock = threading.RLock()
        self._replaying = False

        for template in config.templates:
            self.docstore.put(canonical_bytes(template.to_doc()), policy=Public())

    # -- plumbing -------------------------------------------------------------

    @property
    def now(self) -> datetime:
        return self.clock.now()

    def subscribe(self, callback: Callable[[Event], None]) -> None:
        self.subscribers.append(callback)

    def register_handler(
        self, payload_kind: str, callback: Callable[["Agent", SignedEnvelope], None]
    ) -> None:
        self._handlers[payload_kind] = callback

    def _emit(self, event_type: str, data: dict) -> Event:
        event = Event(
            seq=len(self.events),
            at=format_timestamp(self.now),
            type=event_type,
            data=data,
        )
        self.events.append(event)
        with self._event_cv:
            self._event_cv.notify_all()
        for callback in list(self.subscribers):
            callback(event)
        return event

    def endpoint_for(self, party: PartyId) -> Endpoint:
        endpoint = self.config.peers.get(party)
        if endpoint is None:
            raise UnknownPeer(f"no endpoint for {party.text}")
        return endpoint

    def _persist_and_send(self, receiver: PartyId | Endpoint, envelope: SignedEnvelope):
        """Outbound path: persist first, then hand to the transport."""
        endpoint = (
            receiver if isinstance(receiver, Endpoint) else self.endpoint_for(receiver)
        )
        self.messages.append("out", self.now, envelope)
        self._send(endpoint, envelope)

    def _sign_doc(self, payload_kind: str, doc: dict) -> SignedEnvelope:
        return sign(self.identity, payload_kind, canonical_bytes(doc))

    def template_by_hash(self, template_hash: Hash) -> Template | None:
        data = self.docstore.get(template_hash)
        if data is None:
            return None
        try:
            document = decode_document(data)
        except InvariantViolation:
            return None
        return document if isinstance(document, Template) else None

    def policy_for_offer(self, offer: Offer) -> Policy:
        policy = self.config.policies.get(offer.contracts[0].template_hash)
        return policy if policy is not None else self.config.default_policy

    # -- ingest and dispatch -----------------------------------------------------

    def ingest(self, data: bytes) -> None:
        """Transport delivery point; frames arrive as canonical envelope bytes."""
        try:
            envelope = SignedEnvelope.decode(data)
        except InvariantViolation as exc:
            with self._lock:
                self.quarantine.append((f"undecodable: {exc}", data))
                self._emit("quarantined", {"reason": str(exc)})
            return
        self.dispatch(envelope)

    def dispatch(self, envelope: SignedEnvelope) -> None:
        """Verify, persist, route, apply policy; in that order."""
        with self._lock:
            try:
                verify(envelope, self.registry, self.now)
            except (BadSignature, ExpiredIdentity, ContractNetError) as exc:
                self.quarantine.append((str(exc), envelope))
                self._emit(
                    "quarantined",
                    {
                        "reason": str(exc),
                        "envelopeHash": envelope.envelope_hash.text,
                        "signer": envelope.signer.text,
                    },
                )
                return
            self.messages.append("in", self.now, envelope)
            self._route(envelope)

    def _route(self, envelope: SignedEnvelope) -> None:
        kind = envelope.payload_kind
        if kind == OFFER_KIND:
            self._apply_incoming_offer(envelope)
        elif kind == ACCEPTANCE_KIND:
            self._apply_incoming_acceptance(envelope)
        elif kind == REJECTION_KIND:
            self._apply_incoming_rejection(envelope)
        elif kind == TRACE_REQUEST_KIND:
            self._answer_trace_request(envelope)
        elif kind == TRACE_ANSWER_KIND:
            self._apply_trace_answer(envelope)
        elif kind == TRACE_PUSH_KIND:
            self._apply_trace_push(envelope)
        elif kind == NOTICE_KIND:
            self._emit("notice", parse_json_tree(envelope.payload))
        elif kind in self._handlers:
            self._emit("message", {"payloadKind": kind, "signer": envelope.signer.text})
            self._handlers[kind](self, envelope)
        else:
            self._emit(
                "unknown-payload-kind",
                {"payloadKind": kind, "envelopeHash": envelope.envelope_hash.text},
            )

    # -- negotiation inbound -------------------------------------------------------

    def _apply_incoming_offer(self, envelope: SignedEnvelope) -> None:
        offer = parse_message(envelope)
        try:
            if offer.session_id in self.engine.sessions:
                session = self.engine.counter_offer(envelope)
            elif offer.offer_index == 1:
                session = self.engine.open_session(envelope)
            else:
                raise UnknownSession(offer.session_id)
        except NegotiationError as exc:
            self._emit(
                "protocol-error",
                {
                    "code": exc.code,
                    "sessionId": offer.session_id,
                    "detail": str(exc),
                },
            )
            return
        for contract in offer.contracts:
            self.docstore.put(canonical_bytes(contract.to_doc()))
        self.pending_human.pop(offer.session_id, None)
        self._emit(
            "offer-applied",
            {
                "sessionId": session.session_id,
                "offerIndex": offer.offer_index,
                "sender": offer.sender.text,
                "envelopeHash": envelope.envelope_hash.text,
            },
        )
        if self._replaying or offer.receiver != self.party_id:
            return
        if self.config.auto_trace:
            self._start_trace_for_offer(offer, context=offer.session_id)
        self._decide_on_offer(session, offer)

    def _decide_on_offer(self, session: NegotiationSession, offer: Offer) -> None:
        policy = self.policy_for_offer(offer)
        decision = policy.decide(offer)
        if decision.action == "accept" and not self._offer_contracts_valid(offer):
            decision = Decision("defer")
        if decision.action == "accept":
            self._send_acceptance(session)
        elif decision.action == "reject":
            self._send_rejection(session)
        elif decision.action == "counter":
            self._send_counter(session, decision.contracts)
        else:
            self.pending_human[session.session_id] = PendingEntry(
                session_id=session.session_id,
                enqueued_at=self.now,
                deadline=offer.deadline,
            )
            self._emit(
                "pending",
                {"sessionId": session.session_id, "validUntil": offer.valid_until},
            )

    def _offer_contracts_valid(self, offer: Offer) -> bool:
        """Validate offered contracts against templates we hold; unknown
        templates fail closed (a human can still approve them)."""
        for contract in offer.contracts:
            template = self.template_by_hash(contract.template_hash)
            if template is None:
                self._emit(
                    "unknown-template",
                    {"templateHash": contract.template_hash.text},
                )
                return False
            if isinstance(contract, Contract):
                report = validate_contract(contract, template, self.config.type_registry)
            else:
                report = validate_proposal_against_template(contract, template)
            if not report.valid:
                self._emit(
                    "invalid-contract",
                    {
                        "templateHash": contract.template_hash.text,
                        "findings": [
                            {"kind": f.kind, "key": f.key} for f in report.findings
                        ],
                    },
                )
                return False
        return True

    def _apply_incoming_acceptance(self, envelope: SignedEnvelope) -> None:
        self._apply_decision_envelope(envelope, accept=True)

    def _apply_incoming_rejection(self, envelope: SignedEnvelope) -> None:
        self._apply_decision_envelope(envelope, accept=False)

    def _apply_decision_envelope(self, envelope: SignedEnvelope, accept: bool) -> None:
        message = parse_message(envelope)
        try:
            if accept:
                session = self.engine.accept(envelope)
            else:
                session = self.engine.reject(envelope)
        except SupersededOffer as exc:
            # Recorded (the envelope is already persisted) but never applied;
            # the sender learns its acceptance cited a dead offer.
            self._emit(
                "superseded-decision",
                {
                    "sessionId": message.session_id,
                    "offerHash": message.offer_hash.text,
                    "signer": message.signer.text,
                },
            )
            if not self._replaying:
                notice = self._sign_doc(
                    NOTICE_KIND,
                    {
                        "kind": "notice",
                        "about": envelope.envelope_hash.text,
                        "error": exc.code,
                        "sessionId": message.session_id,
                    },
                )
                try:
                    self._persist_and_send(message.signer, notice)
                except ContractNetError:
                    pass
            return
        except NegotiationError as exc:
            self._emit(
                "protocol-error",
                {"code": exc.code, "sessionId": message.session_id, "detail": str(exc)},
            )
            return
        self.pending_human.pop(message.session_id, None)
        if accept:
            self._emit(
                "accepted",
                {
                    "sessionId": session.session_id,
                    "envelopeHash": envelope.envelope_hash.text,
                },
            )
            self._after_acceptance(session, envelope)
        else:
            self._emit(
                "rejected",
                {
                    "sessionId": session.session_id,
                    "envelopeHash": envelope.envelope_hash.text,
                },
            )

    # -- negotiation outbound --------------------------------------------------------

    def make_offer(
        self,
        receiver: PartyId,
        contracts: Sequence[ContractLike],
        validity_ms: int | None = None,
        session_id: str | None = None,
    ) -> str:
        """Open a new session with a signed offer; returns the session id."""
        with self._lock:
            endpoint = self.endpoint_for(receiver)
            self._require_valid_contracts(contracts)
            offer = Offer(
                session_id=session_id or new_session_id(self.rng),
                offer_index=1,
                sender=self.party_id,
                receiver=receiver,
                contracts=tuple(contracts),
                valid_until=format_timestamp(
                    self.now
                    + timedelta(
                        milliseconds=validity_ms
                        if validity_ms is not None
                        else self.config.offer_validity_ms
                    )
                ),
            )
            envelope = self._sign_doc(OFFER_KIND, offer.to_doc())
            self.engine.open_session(envelope)
            for contract in contracts:
                self.docstore.put(canonical_bytes(contract.to_doc()))
            self._push_referenced(offer, endpoint)
            self._persist_and_send(endpoint, envelope)
            self._emit(
                "offer-sent",
                {
                    "sessionId": offer.session_id,
                    "offerIndex": 1,
                    "receiver": receiver.text,
                    "envelopeHash": envelope.envelope_hash.text,
                },
            )
            return offer.session_id

    def _require_valid_contracts(self, contracts: Sequence[ContractLike]) -> None:
        if not contracts:
            raise InvalidContract("an offer needs at least one contract")
        for contract in contracts:
            template = self.template_by_hash(contract.template_hash)
            if template is None:
                raise InvalidContract(
                    f"template {contract.template_hash.text} not in the document store"
                )
            if isinstance(contract, Contract):
                report = validate_contract(contract, template, self.config.type_registry)
            else:
                report = validate_proposal_against_template(contract, template)
            if not report.valid:
                first = report.findings[0]
                raise InvalidContract(f"{first.kind} for key {first.key!r}")

    def _push_referenced(self, offer: Offer, endpoint: Endpoint) -> int:
        """Send referenced public documents ahead of the offer when enabled."""
        if not any(
            c.template_hash in self.config.push_templates for c in offer.contracts
        ):
            return 0
        documents = public_push_documents(offer.contracts, self.docstore)
        if not documents:
            return 0
        push = build_trace_push(self.identity, documents)
        self._persist_and_send(endpoint, push)
        self._emit("push-sent", {"count": len(documents)})
        return len(documents)

    def _send_acceptance(self, session: NegotiationSession) -> SignedEnvelope:
        acceptance = Acceptance(
            session_id=session.session_id,
            offer_index=session.live_offer.offer_index,
            offer_hash=session.live_envelope.envelope_hash,
            signer=self.party_id,
        )
        envelope = self._sign_doc(ACCEPTANCE_KIND, acceptance.to_doc())
        self.engine.accept(envelope)
        self.pending_human.pop(session.session_id, None)
        self._persist_and_send(session.counterparty(self.party_id), envelope)
        self._emit(
            "accepted",
            {"sessionId": session.session_id, "envelopeHash": envelope.envelope_hash.text},
        )
        self._after_acceptance(session, envelope)
        return envelope

    def _send_rejection(self, session: NegotiationSession) -> SignedEnvelope:
        rejection = Rejection(
            session_id=session.session_id,
            offer_index=session.live_offer.offer_index,
            offer_hash=session.live_envelope.envelope_hash,
            signer=self.party_id,
        )
        envelope = self._sign_doc(REJECTION_KIND, rejection.to_doc())
        self.engine.reject(envelope)
        self.pending_human.pop(session.session_id, None)
        self._persist_and_send(session.counterparty(self.party_id), envelope)
        self._emit(
            "rejected",
            {"sessionId": session.session_id, "envelopeHash": envelope.envelope_hash.text},
        )
        return envelope

    def _send_counter(
        self, session: NegotiationSession, contracts: Sequence[ContractLike]
    ) -> SignedEnvelope:
        self._require_valid_contracts(contracts)
        live = session.live_offer
        offer = Offer(
            session_id=session.session_id,
            offer_index=live.offer_index + 1,
            sender=self.party_id,
            receiver=session.counterparty(self.party_id),
            contracts=tuple(contracts),
            valid_until=format_timestamp(
                self.now + timedelta(milliseconds=self.config.offer_validity_ms)
            ),
            prev_offer_hash=session.live_envelope.envelope_hash,
        )
        envelope = self._sign_doc(OFFER_KIND, offer.to_doc())
        self.engine.counter_offer(envelope)
        for contract in contracts:
            self.docstore.put(canonical_bytes(contract.to_doc()))
        self.pending_human.pop(session.session_id, None)
        self._persist_and_send(offer.receiver, envelope)
        self._emit(
            "offer-sent",
            {
                "sessionId": session.session_id,
                "offerIndex": offer.offer_index,
                "receiver": offer.receiver.text,
                "envelopeHash": envelope.envelope_hash.text,
            },
        )
        return envelope

    # -- acceptance aftermath ----------------------------------------------------------

    def _after_acceptance(
        self, session: NegotiationSession, acceptance_envelope: SignedEnvelope
    ) -> None:
        """Build durable records, update transition chains, run performance
        hooks, and trace references with the acceptance as evidence."""
        offer_envelope = session.live_envelope
        offer = session.live_offer
        self.docstore.put(offer_envelope.encode())
        self.docstore.put(acceptance_envelope.encode())
        records: list[AcceptedRecord] = []
        for contract in offer.contracts:
            if isinstance(contract, ProposalContract):
                contract = contract.to_contract()
            contract_bytes = canonical_bytes(contract.to_doc())
            contract_hash = self.docstore.put(contract_bytes)
            record = build_contract_record(contract, offer_envelope, acceptance_envelope)
            record_hash = self.docstore.put(canonical_bytes(record.to_doc()))
            accepted = AcceptedRecord(
                session_id=session.session_id,
                contract=contract,
                contract_hash=contract_hash,
                record_hash=record_hash,
                offer_envelope=offer_envelope,
                acceptance_envelope=acceptance_envelope,
                counterparty=session.counterparty(self.party_id),
            )
            self.accepted_contracts[contract_hash] = accepted
            self.accepted_records[record_hash] = accepted
            records.append(accepted)
            if is_transition_contract(contract):
                original, _, _ = transition_fields(contract)
                self.latest_transition[original] = contract_hash
        if self._replaying:
            return
        for accepted in records:
            policy = self.config.policies.get(accepted.contract.template_hash)
            if policy is not None and policy.on_accepted is not None:
                policy.on_accepted(self, accepted)
        if self.config.auto_trace:
            evidence = (offer_envelope, acceptance_envelope)
            refs = self._unresolved_offer_references(offer)
            if refs:
                counterparty = session.counterparty(self.party_id)
                self._issue_trace(
                    refs,
                    counterparty.text,
                    evidence,
                    context=session.session_id,
                )

    # -- reference tracing --------------------------------------------------------------

    def _unresolved_offer_references(self, offer: Offer) -> list[Hash]:
        refs: set[Hash] = set()
        for contract in offer.contracts:
            refs |= extract_references(contract)
        unresolved = []
        for h in sorted(refs, key=lambda h: h.text):
            if h in self.docstore:
                continue
            outcome = self.trace_outcomes.get(h)
            if outcome in ("pending",):
                continue
            unresolved.append(h)
        return unresolved

    def _start_trace_for_offer(self, offer: Offer, context: str) -> None:
        refs = self._unresolved_offer_references(offer)
        refs = [
            h
            for h in refs
            if self.trace_outcomes.get(h) is None
            or self._may_retry(h, ())
        ]
        if refs:
            self._issue_trace(refs, offer.sender.text, (), context=context)

    def _evidence_fingerprint(
        self, evidence: Sequence[SignedEnvelope]
    ) -> tuple[str, ...]:
        return tuple(sorted(e.envelope_hash.text for e in evidence))

    def _may_retry(self, h: Hash, evidence: Sequence[SignedEnvelope]) -> bool:
        """A denied or failed hash is retried only with different evidence."""
        if self.trace_outcomes.get(h) not in ("denied", "failed"):
            return True
        return self._denial_evidence.get(h) != self._evidence_fingerprint(evidence)

    def trace_session_references(self, session_id: str) -> str | None:
        """Resolve the live offer's references from the counterparty, attaching
        the session's offer/acceptance envelopes as evidence when accepted."""
        with self._lock:
            session = self.engine.sessions.get(session_id)
            if session is None:
                raise UnknownSession(session_id)
            evidence: tuple[SignedEnvelope, ...] = ()
            if session.state.value == "accepted":
                evidence = (session.live_envelope, session.log[-1])
            refs = [
                h
                for h in self._unresolved_offer_references(session.live_offer)
                if self._may_retry(h, evidence)
            ]
            if not refs:
                self._emit("trace-complete", {"context": session_id, "fetched": []})
                return None
            counterparty = session.counterparty(self.party_id)
            return self._issue_trace(refs, counterparty.text, evidence, session_id)

    def trace_hashes(
        self,
        hashes: Sequence[Hash],
        target: str,
        evidence: Sequence[SignedEnvelope] = (),
        context: str = "",
    ) -> str | None:
        with self._lock:
            refs = [
                h
                for h in hashes
                if h not in self.docstore and self._may_retry(h, evidence)
            ]
            if not refs:
                return None
            return self._issue_trace(refs, target, tuple(evidence), context)

    def _resolve_locator(self, locator: str) -> Endpoint | None:
        if locator.startswith("party:"):
            try:
                return self.config.peers.get(PartyId.parse(locator))
            except InvariantViolation:
                return None
        try:
            return Endpoint.parse(locator)
        except InvariantViolation:
            return None

    def _issue_trace(
        self,
        hashes: Sequence[Hash],
        target: str,
        evidence: tuple[SignedEnvelope, ...],
        context: str = "",
        depth_map: dict[Hash, tuple[int, frozenset[str]]] | None = None,
    ) -> str | None:
        endpoint = self._resolve_locator(target)
        if endpoint is None:
            for h in hashes:
                self.trace_outcomes[h] = "failed"
            self._emit("trace-failed", {"target": target, "reason": "unresolvable"})
            return None
        request_id = f"{self.rng.getrandbits(128):032x}"
        request = build_trace_request(self.identity, request_id, hashes, evidence)
        self.pending_traces[request_id] = PendingTrace(
            request_id=request_id,
            target=target,
            hashes=depth_map
            or {h: (0, frozenset({target})) for h in hashes},
            evidence=evidence,
            context=context,
        )
        for h in hashes:
            self.trace_outcomes[h] = "pending"
        self._persist_and_send(endpoint, request)
        self._emit(
            "trace-requested",
            {
                "requestId": request_id,
                "target": target,
                "hashes": [h.text for h in hashes],
                "context": context,
            },
        )
        return request_id

    def _answer_trace_request(self, envelope: SignedEnvelope) -> None:
        try:
            answer_set = handle_trace_request(
                envelope, self.docstore, self.registry, self.now
            )
        except (InvariantViolation, ContractNetError) as exc:
            self._emit("protocol-error", {"code": "bad-trace-request", "detail": str(exc)})
            return
        request = TraceRequest.from_doc(parse_json_tree(envelope.payload))
        response = self._sign_doc(TRACE_ANSWER_KIND, answer_set.to_doc())
        if self._replaying:
            return
        try:
            self._persist_and_send(request.requester, response)
        except UnknownPeer:
            # Answer whoever delivered the request even without a peer entry.
            self._emit(
                "trace-answer-undeliverable", {"requester": request.requester.text}
            )
            return
        self._emit(
            "trace-answered",
            {
                "requestId": request.request_id,
                "requester": request.requester.text,
                "served": sorted(
                    h.text
                    for h, a in answer_set.answers.items()
                    if isinstance(a, DataAnswer)
                ),
            },
        )

    def _apply_trace_answer(self, envelope: SignedEnvelope) -> None:
        answer_set = TraceAnswerSet.from_doc(parse_json_tree(envelope.payload))
        pending = self.pending_traces.pop(answer_set.request_id, None)
        if pending is None:
            self._emit(
                "protocol-error",
                {"code": "unexpected-trace-answer", "requestId": answer_set.request_id},
            )
            return
        fetched: list[str] = []
        redirects: dict[str, list[Hash]] = {}
        redirect_depths: dict[Hash, tuple[int, frozenset[str]]] = {}
        for h, (depth, visited) in pending.hashes.items():
            answer = answer_set.answers.get(h)
            if isinstance(answer, DataAnswer):
                if hash_of_bytes(answer.data) != h:
                    self.trace_outcomes[h] = "failed"
                    self._emit("trace-corrupt", {"hash": h.text})
                    continue
                self.docstore.put(answer.data)
                self.trace_outcomes[h] = "fetched"
                fetched.append(h.text)
                self._emit(
                    "document-fetched", {"hash": h.text, "context": pending.context}
                )
            elif isinstance(answer, RedirectAnswer):
                if depth + 1 > DEFAULT_REDIRECT_DEPTH or answer.locator in visited:
                    self.trace_outcomes[h] = "failed"
                    self._emit(
                        "trace-failed",
                        {"hash": h.text, "reason": "redirect limit or cycle"},
                    )
                    continue
                redirects.setdefault(answer.locator, []).append(h)
                redirect_depths[h] = (depth + 1, visited | {answer.locator})
            elif isinstance(answer, DeniedAnswer):
                self.trace_outcomes[h] = "denied"
                self._denial_evidence[h] = self._evidence_fingerprint(pending.evidence)
                data = {
                    "hash": h.text,
                    "permissionHint": answer.permission_hint,
                    "context": pending.context,
                }
                if answer.grant_template is not None:
                    data["grantTemplate"] = answer.grant_template.text
                self._emit("trace-denied", data)
                if not self._replaying:
                    self._retry_denied_with_acceptance(h, pending.context)
            else:
                self.trace_outcomes[h] = "failed"
                self._emit("trace-failed", {"hash": h.text, "reason": "no answer"})
        if not self._replaying:
            for locator, hashes in sorted(redirects.items()):
                self._issue_trace(
                    tuple(hashes),
                    locator,
                    pending.evidence,
                    context=pending.context,
                    depth_map={h: redirect_depths[h] for h in hashes},
                )
        if not any(
            self.trace_outcomes.get(h) == "pending" for h in pending.hashes
        ):
            self._emit(
                "trace-complete", {"context": pending.context, "fetched": fetched}
            )

    def _retry_denied_with_acceptance(self, h: Hash, context: str) -> None:
        """A denial can be overcome by new evidence; once the related session
        is accepted, re-trace carrying the offer/acceptance pair."""
        session = self.engine.sessions.get(context)
        if session is None or session.state.value != "accepted":
            return
        evidence = (session.live_envelope, session.log[-1])
        if not self._may_retry(h, evidence):
            return
        counterparty = session.counterparty(self.party_id)
        self._issue_trace((h,), counterparty.text, evidence, context=context)

    def _apply_trace_push(self, envelope: SignedEnvelope) -> None:
        stored = []
        for data in parse_trace_push(envelope):
            key = hash_of_bytes(data)
            if key not in self.docstore:
                self.docstore.put(data)
                stored.append(key.text)
        self._emit("push-received", {"stored": stored})

    # -- transition records ----------------------------------------------------------

    def record_state_transition(
        self,
        original: Hash,
        evidence: bytes | Hash,
        counterparty: PartyId | None = None,
    ) -> str:
        """Offer a transition record for an accepted contract to the other party."""
        with self._lock:
            accepted = self.accepted_contracts.get(original)
            if accepted is None:
                raise UnknownOriginal(
                    f"{original.text} is not an accepted contract here"
                )
            receiver = counterparty if counterparty is not None else accepted.counterparty
            if isinstance(evidence, Hash):
                evidence_hash = evidence
                if evidence_hash not in self.docstore:
                    raise UnknownOriginal(
                        f"evidence {evidence_hash.text} is not in the document store"
                    )
            else:
                # The counterparty co-signs the record, so it may fetch the
                # evidence backing it.
                evidence_hash = self.docstore.put(
                    evidence, policy=PartiesOnly(frozenset({receiver}))
                )
            prev = self.latest_transition.get(original)
            contract = build_transition_contract(original, evidence_hash, prev)
            self._ensure_transition_templates()
            return self.make_offer(receiver, [contract])

    def _ensure_transition_templates(self) -> None:
        from .stc import (
            followup_transition_template,
            initial_transition_template,
            transition_template_hashes,
        )

        for template in (initial_transition_template(), followup_transition_template()):
            self.docstore.put(canonical_bytes(template.to_doc()), policy=Public())
        # Push the templates alongside transition offers so a counterparty
        # that never saw one can still validate and auto-accept.
        self.config.push_templates = frozenset(
            self.config.push_templates | transition_template_hashes()
        )

    # -- custom payloads ----------------------------------------------------------------

    def send_custom(
        self, receiver: PartyId | Endpoint, payload_kind: str, doc: dict
    ) -> SignedEnvelope:
        with self._lock:
            envelope = self._sign_doc(payload_kind, doc)
            self._persist_and_send(receiver, envelope)
            return envelope

    def send_push(
        self, receiver: PartyId | Endpoint, documents: Sequence[bytes]
    ) -> SignedEnvelope:
        """Push documents to a peer unprompted; the receiver dedupes by hash."""
        with self._lock:
            push = build_trace_push(self.identity, list(documents))
            self._persist_and_send(receiver, push)
            return push

    # -- human decisions (admin surface) ---------------------------------------------------

    def list_sessions(self) -> list[NegotiationSession]:
        with self._lock:
            return sorted(self.engine.sessions.values(), key=lambda s: s.session_id)

    def get_session(self, session_id: str) -> NegotiationSession:
        with self._lock:
            session = self.engine.sessions.get(session_id)
            if session is None:
                raise UnknownSession(session_id)
            return session

    def get_pending(self) -> list[PendingEntry]:
        with self._lock:
            self.check_expiry()
            return sorted(self.pending_human.values(), key=lambda e: (e.deadline, e.session_id))

    def decide(
        self,
        session_id: str,
        action: str,
        assignments: Sequence[tuple[str, Any]] | None = None,
        contracts: Sequence[ContractLike] | None = None,
    ) -> NegotiationSession:
        """Resolve a deferred offer: accept, reject, or counter."""
        with self._lock:
            session = self.engine.sessions.get(session_id)
            if session is None:
                raise UnknownSession(session_id)
            entry = self.pending_human.get(session_id)
            if entry is None:
                raise SessionNotPending(f"session {session_id} awaits no decision")
            if self.now > session.live_offer.deadline:
                self.engine.expire(session_id)
                self.pending_human.pop(session_id, None)
                self._emit("expired", {"sessionId": session_id})
                raise SessionExpired(session_id)
            if action == "accept":
                self._send_acceptance(session)
            elif action == "reject":
                self._send_rejection(session)
            elif action == "counter":
                counter_contracts = (
                    tuple(contracts)
                    if contracts is not None
                    else self._counter_from_assignments(session, assignments or [])
                )
                self._send_counter(session, counter_contracts)
            else:
                raise InvariantViolation(f"unknown decision action {action!r}")
            return session

    def _counter_from_assignments(
        self, session: NegotiationSession, assignments: Sequence[tuple[str, Any]]
    ) -> tuple[ContractLike, ...]:
        """Build counter contracts by editing the live offer's arguments."""
        live_contracts = session.live_offer.contracts
        if len(live_contracts) != 1:
            raise InvariantViolation(
                "assignment-based counters require a single-contract offer"
            )
        contract = live_contracts[0]
        template = self.template_by_hash(contract.template_hash)
        typed: list[tuple[str, Any]] = []
        for key, raw in assignments:
            if isinstance(raw, dict):
                typed.append((key, Value.from_doc(raw)))
            elif template is not None:
                typed.append(
                    (key, parse_argument_text(template.parameter_type(key), str(raw)))
                )
            else:
                raise InvariantViolation(
                    "template unknown; provide typed value documents"
                )
        if isinstance(contract, ProposalContract):
            refined = refine_proposal(contract, typed)
            return (refined,)
        updated = dict(contract.arguments)
        for key, value in typed:
            if key not in updated:
                raise InvariantViolation(f"contract binds no argument {key!r}")
            updated[key] = value
        return (
            Contract(
                template_hash=contract.template_hash,
                arguments=tuple(updated.items()),
            ),
        )

    # -- expiry and recovery -----------------------------------------------------------

    def check_expiry(self) -> list[str]:
        """Expire overdue sessions; called on clock ticks and admin reads."""
        expired = []
        with self._lock:
            for session in list(self.engine.sessions.values()):
                if session.terminal:
                    continue
                if self.now > session.live_offer.deadline:
                    self.engine.expire(session.session_id)
                    expired.append(session.session_id)
                    was_pending = self.pending_human.pop(session.session_id, None)
                    self._emit("expired", {"sessionId": session.session_id})
                    if was_pending:
                        self._emit(
                            "pending-expired", {"sessionId": session.session_id}
                        )
        return expired

    def snapshot(self) -> dict:
        """Engine state summary used by crash-recovery comparisons."""
        with self._lock:
            return {
                session_id: {
                    "state": session.state.value,
                    "live": session.live_envelope.envelope_hash.text,
                    "log": [e.envelope_hash.text for e in session.log],
                }
                for session_id, session in self.engine.sessions.items()
            }

    def replay_from_records(self, records: Iterable[StoredMessage]) -> None:
        """Rebuild engine state by re-applying persisted messages in order.

        Each message is applied at its recorded wall time, so deadline checks
        resolve exactly as they did live; otherwise a session whose offers
        have since expired would be refused on replay and silently vanish.
        """
        self._replaying = True
        try:
            for record in records:
                self.replay_record(record)
        finally:
            self._replaying = False

    def replay_record(self, record: StoredMessage) -> None:
        """Apply one persisted message at its recorded time; errors that were
        refused live are refused again and swallowed."""
        was_replaying = self._replaying
        self._replaying = True
        engine_now = self.engine._now
        self.engine._now = lambda at=parse_timestamp(record.at): at
        try:
            envelope = record.envelope
            if envelope.payload_kind in (OFFER_KIND, ACCEPTANCE_KIND, REJECTION_KIND):
                self._replay_negotiation(envelope)
            elif envelope.payload_kind == TRACE_ANSWER_KIND and record.direction == "in":
                self._replay_trace_answer(envelope)
            elif envelope.payload_kind == TRACE_PUSH_KIND and record.direction == "in":
                self._apply_trace_push(envelope)
        except (ContractNetError, InvariantViolation):
            pass
        finally:
            self.engine._now = engine_now
            self._replaying = was_replaying

    def _replay_negotiation(self, envelope: SignedEnvelope) -> None:
        if envelope.payload_kind == OFFER_KIND:
            self._apply_incoming_offer(envelope)
        elif envelope.payload_kind == ACCEPTANCE_KIND:
            self._apply_incoming_acceptance(envelope)
        else:
            self._apply_incoming_rejection(envelope)

    def _replay_trace_answer(self, envelope: SignedEnvelope) -> None:
        answer_set = TraceAnswerSet.from_doc(parse_json_tree(envelope.payload))
        for h, answer in answer_set.answers.items():
            if isinstance(answer, DataAnswer) and hash_of_bytes(answer.data) == h:
                self.docstore.put(answer.data)

    @classmethod
    def rebuild(cls, config: AgentConfig, clock, send=None) -> "Agent":
        """Recover an agent from its persisted message log."""
        agent = cls(config, clock, send)
        agent.replay_from_records(agent.messages.records())
        agent.check_expiry()
        return agent
