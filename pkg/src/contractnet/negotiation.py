"""Two-party negotiation sessions: offers, counter-offers, acceptance, rejection.

A session is a turn-alternating exchange of offers identified by a 128-bit
session id; each offer links to its predecessor by envelope hash, so the
per-session log is a tamper-evident chain. Exactly one terminal outcome is
ever applied: Accepted, Rejected, or Expired. An offer is acceptable at
exactly its deadline and expired strictly after it.

Engine methods take signed envelopes whose signatures the caller has already
verified against its trust registry (the agent's dispatch loop does this);
the engine enforces everything structural: turn order, index continuity,
chain links, offer binding, deadlines, and the terminal lock.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from random import Random
from typing import Callable, Iterable, Sequence, Union

from .canon import (
    HEX128_RE,
    Hash,
    canonical_bytes,
    canonical_timestamp,
    format_timestamp,
    parse_json_tree,
    parse_timestamp,
)
from .contracts import Contract, ContractLike, ProposalContract
from .errors import (
    AlreadyExpired,
    BadChainLink,
    DuplicateSession,
    IncompleteProposal,
    IndexGap,
    InvariantViolation,
    NotYetExpired,
    NotYourTurn,
    SessionExpired,
    SessionTerminal,
    SupersededOffer,
    UnknownOffer,
    UnknownSession,
)
from .identity import PartyId, SignedEnvelope, TrustRegistry, verify

OFFER_KIND = "offer"
ACCEPTANCE_KIND = "acceptance"
REJECTION_KIND = "rejection"


def new_session_id(rng: Random) -> str:
    return f"{rng.getrandbits(128):032x}"


def _check_session_id(session_id: str) -> str:
    if not HEX128_RE.match(session_id):
        raise InvariantViolation(f"malformed session id {session_id!r}")
    return session_id


@dataclass(frozen=True)
class Offer:
    session_id: str
    offer_index: int
    sender: PartyId
    receiver: PartyId
    contracts: tuple[ContractLike, ...]
    valid_until: str  # canonical timestamp text
    prev_offer_hash: Hash | None = None

    def __post_init__(self):
        _check_session_id(self.session_id)
        object.__setattr__(self, "contracts", tuple(self.contracts))
        if not isinstance(self.offer_index, int) or self.offer_index < 1:
            raise InvariantViolation("offer index must be a positive integer")
        if (self.offer_index == 1) != (self.prev_offer_hash is None):
            raise InvariantViolation(
                "offer index 1 must not link a predecessor; later offers must"
            )
        if not self.contracts:
            raise InvariantViolation("an offer carries at least one contract")
        if self.sender == self.receiver:
            raise InvariantViolation("offer sender and receiver must differ")
        if canonical_timestamp(self.valid_until) != self.valid_until:
            raise InvariantViolation(f"non-canonical deadline {self.valid_until!r}")

    @property
    def deadline(self) -> datetime:
        return parse_timestamp(self.valid_until)

    @property
    def acceptable_as_is(self) -> bool:
        """False when any carried proposal still has open constraints."""
        return all(
            not isinstance(c, ProposalContract) or c.complete for c in self.contracts
        )

    def to_doc(self) -> dict:
        doc = {
            "kind": "offer",
            "sessionId": self.session_id,
            "offerIndex": self.offer_index,
            "sender": self.sender.text,
            "receiver": self.receiver.text,
            "contracts": [c.to_doc() for c in self.contracts],
            "validUntil": self.valid_until,
        }
        if self.prev_offer_hash is not None:
            doc["prevOfferHash"] = self.prev_offer_hash.text
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "Offer":
        if not isinstance(doc, dict) or doc.get("kind") != "offer":
            raise InvariantViolation("not an offer document")
        required = {"kind", "sessionId", "offerIndex", "sender", "receiver",
                    "contracts", "validUntil"}
        if not required <= set(doc) or set(doc) - required - {"prevOfferHash"}:
            raise InvariantViolation("malformed offer fields")
        contracts: list[ContractLike] = []
        for entry in doc["contracts"]:
            if not isinstance(entry, dict):
                raise InvariantViolation("malformed contract entry")
            if entry.get("kind") == "contract":
                contracts.append(Contract.from_doc(entry))
            elif entry.get("kind") == "proposal":
                contracts.append(ProposalContract.from_doc(entry))
            else:
                raise InvariantViolation("offer contracts must be contract or proposal")
        prev = doc.get("prevOfferHash")
        return cls(
            session_id=doc["sessionId"],
            offer_index=doc["offerIndex"],
            sender=PartyId.parse(doc["sender"]),
            receiver=PartyId.parse(doc["receiver"]),
            contracts=tuple(contracts),
            valid_until=doc["validUntil"],
            prev_offer_hash=Hash.parse(prev) if prev is not None else None,
        )


@dataclass(frozen=True)
class Acceptance:
    session_id: str
    offer_index: int
    offer_hash: Hash
    signer: PartyId

    def __post_init__(self):
        _check_session_id(self.session_id)
        if not isinstance(self.offer_index, int) or self.offer_index < 1:
            raise InvariantViolation("offer index must be a positive integer")

    def to_doc(self) -> dict:
        return {
            "kind": "acceptance",
            "sessionId": self.session_id,
            "offerIndex": self.offer_index,
            "offerHash": self.offer_hash.text,
            "signer": self.signer.text,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Acceptance":
        return _decision_from_doc(cls, "acceptance", doc)


@dataclass(frozen=True)
class Rejection:
    session_id: str
    offer_index: int
    offer_hash: Hash
    signer: PartyId

    def __post_init__(self):
        _check_session_id(self.session_id)
        if not isinstance(self.offer_index, int) or self.offer_index < 1:
            raise InvariantViolation("offer index must be a positive integer")

    def to_doc(self) -> dict:
        return {
            "kind": "rejection",
            "sessionId": self.session_id,
            "offerIndex": self.offer_index,
            "offerHash": self.offer_hash.text,
            "signer": self.signer.text,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Rejection":
        return _decision_from_doc(cls, "rejection", doc)


def _decision_from_doc(cls, kind: str, doc: dict):
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise InvariantViolation(f"not a {kind} document")
    if set(doc) != {"kind", "sessionId", "offerIndex", "offerHash", "signer"}:
        raise InvariantViolation(f"malformed {kind} fields")
    return cls(
        session_id=doc["sessionId"],
        offer_index=doc["offerIndex"],
        offer_hash=Hash.parse(doc["offerHash"]),
        signer=PartyId.parse(doc["signer"]),
    )


Message = Union[Offer, Acceptance, Rejection]

_PAYLOAD_DECODERS: dict[str, Callable[[dict], Message]] = {
    OFFER_KIND: Offer.from_doc,
    ACCEPTANCE_KIND: Acceptance.from_doc,
    REJECTION_KIND: Rejection.from_doc,
}


def parse_message(envelope: SignedEnvelope) -> Message:
    """Decode and structurally validate a negotiation payload."""
    decoder = _PAYLOAD_DECODERS.get(envelope.payload_kind)
    if decoder is None:
        raise InvariantViolation(
            f"payload kind {envelope.payload_kind!r} is not a negotiation message"
        )
    message = decoder(parse_json_tree(envelope.payload))
    if canonical_bytes(message.to_doc()) != envelope.payload:
        raise InvariantViolation("payload bytes are not canonical")
    author = message.sender if isinstance(message, Offer) else message.signer
    if author != envelope.signer:
        raise InvariantViolation("message author differs from envelope signer")
    return message


class SessionState(enum.Enum):
    OFFERED_BY_INITIATOR = "offered-by-initiator"
    OFFERED_BY_RESPONDER = "offered-by-responder"
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    EXPIRED = "expired"


TERMINAL_STATES = frozenset(
    {SessionState.ACCEPTED, SessionState.REJECTED, SessionState.EXPIRED}
)


@dataclass
class NegotiationSession:
    session_id: str
    initiator: PartyId
    responder: PartyId
    state: SessionState
    live_envelope: SignedEnvelope
    live_offer: Offer
    log: list[SignedEnvelope] = field(default_factory=list)

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_STATES

    @property
    def turn(self) -> PartyId | None:
        """Party entitled to move next; None once the session is terminal."""
        if self.terminal:
            return None
        return self.live_offer.receiver

    def offer_hashes(self) -> list[Hash]:
        return [
            e.envelope_hash for e in self.log if e.payload_kind == OFFER_KIND
        ]

    def counterparty(self, me: PartyId) -> PartyId:
        return self.responder if me == self.initiator else self.initiator


class NegotiationEngine:
    """Holds all sessions for one agent and applies protocol transitions."""

    def __init__(self, clock: Callable[[], datetime]):
        self._now = clock
        self.sessions: dict[str, NegotiationSession] = {}

    # -- helpers ---------------------------------------------------------------

    def _session(self, session_id: str) -> NegotiationSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSession(session_id)
        return session

    def _require_live(self, session: NegotiationSession) -> None:
        if session.terminal:
            raise SessionTerminal(session.session_id)
        if self._now() > session.live_offer.deadline:
            raise SessionExpired(
                session.session_id,
                f"offer {session.live_offer.offer_index} in session "
                f"{session.session_id} expired at {session.live_offer.valid_until}",
            )

    def _bind_offer_hash(
        self, session: NegotiationSession, cited: Hash, cited_index: int
    ) -> None:
        live = session.live_envelope
        if cited == live.envelope_hash:
            if cited_index != session.live_offer.offer_index:
                raise InvariantViolation(
                    "cited offer index disagrees with the cited offer hash"
                )
            return
        if cited in session.offer_hashes():
            raise SupersededOffer(
                session.session_id,
                f"offer {cited.text} was superseded by a counter-offer",
            )
        raise UnknownOffer(
            session.session_id, f"no offer {cited.text} in session {session.session_id}"
        )

    # -- transitions -------------------------------------------------------------

    def open_session(self, envelope: SignedEnvelope) -> NegotiationSession:
        offer = parse_message(envelope)
        if not isinstance(offer, Offer):
            raise InvariantViolation("session opens with an offer")
        if offer.offer_index != 1:
            raise UnknownSession(
                offer.session_id,
                f"offer {offer.offer_index} arrived for unknown session "
                f"{offer.session_id}",
            )
        if offer.session_id in self.sessions:
            raise DuplicateSession(offer.session_id)
        if self._now() > offer.deadline:
            raise AlreadyExpired(
                offer.session_id, f"opening offer already expired at {offer.valid_until}"
            )
        session = NegotiationSession(
            session_id=offer.session_id,
            initiator=offer.sender,
            responder=offer.receiver,
            state=SessionState.OFFERED_BY_INITIATOR,
            live_envelope=envelope,
            live_offer=offer,
            log=[envelope],
        )
        self.sessions[offer.session_id] = session
        return session

    def counter_offer(self, envelope: SignedEnvelope) -> NegotiationSession:
        offer = parse_message(envelope)
        if not isinstance(offer, Offer):
            raise InvariantViolation("counter-offer must be an offer")
        session = self._session(offer.session_id)
        self._require_live(session)
        if offer.sender != session.live_offer.receiver:
            raise NotYourTurn(
                session.session_id,
                f"{offer.sender.text} moved out of turn in session {session.session_id}",
            )
        if offer.receiver != session.live_offer.sender:
            raise InvariantViolation("counter-offer must address the other party")
        if offer.offer_index != session.live_offer.offer_index + 1:
            raise IndexGap(
                session.session_id,
                f"expected offer index {session.live_offer.offer_index + 1}, "
                f"got {offer.offer_index}",
            )
        if offer.prev_offer_hash != session.live_envelope.envelope_hash:
            raise BadChainLink(
                session.session_id, "counter-offer does not link the live offer"
            )
        session.live_envelope = envelope
        session.live_offer = offer
        session.state = (
            SessionState.OFFERED_BY_INITIATOR
            if offer.sender == session.initiator
            else SessionState.OFFERED_BY_RESPONDER
        )
        session.log.append(envelope)
        return session

    def accept(self, envelope: SignedEnvelope) -> NegotiationSession:
        acceptance = parse_message(envelope)
        if not isinstance(acceptance, Acceptance):
            raise InvariantViolation("not an acceptance")
        session = self._session(acceptance.session_id)
        self._require_live(session)
        # Binding is checked before turn: a stale acceptance citing a
        # superseded offer surfaces as exactly that, whoever sent it.
        self._bind_offer_hash(session, acceptance.offer_hash, acceptance.offer_index)
        if acceptance.signer != session.live_offer.receiver:
            raise NotYourTurn(
                session.session_id,
                f"{acceptance.signer.text} cannot accept: not their turn",
            )
        if not session.live_offer.acceptable_as_is:
            raise IncompleteProposal(
                session.session_id,
                "live offer contains a proposal with open constraints",
            )
        session.state = SessionState.ACCEPTED
        session.log.append(envelope)
        return session

    def reject(self, envelope: SignedEnvelope) -> NegotiationSession:
        rejection = parse_message(envelope)
        if not isinstance(rejection, Rejection):
            raise InvariantViolation("not a rejection")
        session = self._session(rejection.session_id)
        self._require_live(session)
        self._bind_offer_hash(session, rejection.offer_hash, rejection.offer_index)
        if rejection.signer != session.live_offer.receiver:
            raise NotYourTurn(
                session.session_id,
                f"{rejection.signer.text} cannot reject: not their turn",
            )
        session.state = SessionState.REJECTED
        session.log.append(envelope)
        return session

    def expire(self, session_id: str, now: datetime | None = None) -> NegotiationSession:
        session = self._session(session_id)
        if session.terminal:
            raise SessionTerminal(session_id)
        at = now if now is not None else self._now()
        if at <= session.live_offer.deadline:
            raise NotYetExpired(
                session_id,
                f"offer valid until {session.live_offer.valid_until}, now "
                f"{format_timestamp(at)}",
            )
        session.state = SessionState.EXPIRED
        return session

    def transcript(self, session_id: str) -> list[SignedEnvelope]:
        return list(self._session(session_id).log)


# --- standalone transcript verification -----------------------------------------
#
# Reconstructs and checks a full session from its envelopes alone, the way an
# adjudicator would: signatures against the registry, hash-chain links, turn
# alternation, index continuity, offer binding, and the single-terminal rule.

@dataclass
class TranscriptReport:
    ok: bool
    session_id: str | None = None
    final_state: SessionState | None = None
    messages: int = 0
    broken_at: int | None = None  # index of the first bad envelope
    reason: str | None = None


def verify_transcript(
    envelopes: Sequence[SignedEnvelope],
    registry: TrustRegistry,
    at: datetime | None = None,
) -> TranscriptReport:
    """Replay a transcript without engine state; report the first broken link.

    Identity validity is checked at ``at`` when given, otherwise at each
    cited offer's deadline (the moment the message could last have been
    applied), so archived transcripts verify long after the identities used
    in them rotated out of the registry.
    """
    if not envelopes:
        return TranscriptReport(ok=False, reason="empty transcript")
    state: dict = {}
    for i, envelope in enumerate(envelopes):
        try:
            message = parse_message(envelope)
            if i == 0:
                if not isinstance(message, Offer) or message.offer_index != 1:
                    raise InvariantViolation("transcript must open with offer 1")
                verify(envelope, registry, at if at is not None else message.deadline)
                state = {
                    "offer": message,
                    "offer_env": envelope,
                    "session_id": message.session_id,
                    "hashes": [envelope.envelope_hash],
                    "terminal": None,
                }
                continue
            if isinstance(message, Offer):
                check_at = at if at is not None else message.deadline
            else:
                check_at = at if at is not None else state["offer"].deadline
            verify(envelope, registry, check_at)
            if state["terminal"] is not None:
                raise InvariantViolation("message after terminal state")
            if message.session_id != state["session_id"]:
                raise InvariantViolation("session id changes mid-transcript")
            live: Offer = state["offer"]
            if isinstance(message, Offer):
                if message.sender != live.receiver or message.receiver != live.sender:
                    raise InvariantViolation("turn alternation broken")
                if message.offer_index != live.offer_index + 1:
                    raise InvariantViolation("offer index gap")
                if message.prev_offer_hash != state["offer_env"].envelope_hash:
                    raise InvariantViolation("offer chain link broken")
                state["offer"] = message
                state["offer_env"] = envelope
                state["hashes"].append(envelope.envelope_hash)
            else:
                if message.signer != live.receiver:
                    raise InvariantViolation("decision out of turn")
                if message.offer_hash != state["offer_env"].envelope_hash:
                    raise InvariantViolation("decision does not bind the live offer")
                if message.offer_index != live.offer_index:
                    raise InvariantViolation("decision index disagrees with live offer")
                if not isinstance(message, Rejection) and not live.acceptable_as_is:
                    raise InvariantViolation("acceptance of an incomplete proposal")
                state["terminal"] = (
                    SessionState.ACCEPTED
                    if isinstance(message, Acceptance)
                    else SessionState.REJECTED
                )
        except Exception as exc:  # noqa: BLE001 - every defect maps to a report
            return TranscriptReport(
                ok=False,
                session_id=state.get("session_id"),
                messages=i,
                broken_at=i,
                reason=str(exc),
            )
    final = state["terminal"]
    if final is None:
        live = state["offer"]
        final = (
            SessionState.OFFERED_BY_INITIATOR
            if len(state["hashes"]) % 2 == 1
            else SessionState.OFFERED_BY_RESPONDER
        )
    return TranscriptReport(
        ok=True,
        session_id=state["session_id"],
        final_state=final,
        messages=len(envelopes),
    )


# --- transcript files -------------------------------------------------------------

def save_transcript(path, envelopes: Iterable[SignedEnvelope]) -> None:
    lines = [canonical_bytes(e.to_doc()) for e in envelopes]
    Path(path).write_bytes(b"\n".join(lines) + (b"\n" if lines else b""))


def load_transcript(path) -> list[SignedEnvelope]:
    envelopes = []
    for line in Path(path).read_bytes().splitlines():
        if line.strip():
            envelopes.append(SignedEnvelope.decode(line))
    return envelopes
