"""Exception hierarchy for the contract network toolkit.

Every error raised by this package derives from :class:`ContractNetError`.
Protocol-level errors carry enough context (session ids, keys, hashes) to be
surfaced verbatim over the admin API or the CLI's ``--json`` output.
"""

from __future__ import annotations


class ContractNetError(Exception):
    """Base class for all errors raised by contractnet."""

    code = "error"

    def to_json(self) -> dict:
        return {"error": self.code, "detail": str(self)}


class InvariantViolation(ContractNetError):
    """A document or message does not satisfy its structural invariants."""

    code = "invariant-violation"


# --- contract-core ---------------------------------------------------------

class TemplateMismatch(ContractNetError):
    """Contract names a different template than the one supplied."""

    code = "template-mismatch"


class UnboundPlaceholder(ContractNetError):
    """A provision references a key with no value available."""

    code = "unbound-placeholder"


class UnknownKey(ContractNetError):
    """An assignment targets a key the proposal does not declare."""

    code = "unknown-key"


class ConstraintViolated(ContractNetError):
    """An assigned value does not match the standing constraint."""

    code = "constraint-violated"

    def __init__(self, key: str, detail: str = ""):
        self.key = key
        super().__init__(f"value for {key!r} violates its constraint"
                         + (f": {detail}" if detail else ""))


class InvalidContract(ContractNetError):
    """Contract failed validation against its template."""

    code = "invalid-contract"


# --- identity-crypto -------------------------------------------------------

class MissingPrivateKey(ContractNetError):
    code = "missing-private-key"


class UnknownSigner(ContractNetError):
    code = "unknown-signer"


class ExpiredIdentity(ContractNetError):
    code = "expired-identity"


class BadSignature(ContractNetError):
    code = "bad-signature"


# --- negotiation-engine ----------------------------------------------------

class NegotiationError(ContractNetError):
    """Base for per-session protocol errors; carries the session id."""

    def __init__(self, session_id: str, detail: str = ""):
        self.session_id = session_id
        super().__init__(detail or f"{self.code} in session {session_id}")


class UnknownSession(NegotiationError):
    code = "unknown-session"


class DuplicateSession(NegotiationError):
    code = "duplicate-session"


class AlreadyExpired(NegotiationError):
    code = "already-expired"


class NotYourTurn(NegotiationError):
    code = "not-your-turn"


class IndexGap(NegotiationError):
    code = "index-gap"


class BadChainLink(NegotiationError):
    code = "bad-chain-link"


class SessionTerminal(NegotiationError):
    code = "session-terminal"


class SessionExpired(NegotiationError):
    code = "session-expired"


class SupersededOffer(NegotiationError):
    """Acceptance or rejection cites an offer a counter-offer replaced."""

    code = "superseded-offer"


class UnknownOffer(NegotiationError):
    """Acceptance or rejection cites a hash this session never produced."""

    code = "unknown-offer"


class IncompleteProposal(NegotiationError):
    """Offer contains a proposal with open constraints and cannot be accepted."""

    code = "incomplete-proposal"


class NotYetExpired(NegotiationError):
    code = "not-yet-expired"


# --- reference-tracer ------------------------------------------------------

class DepthExceeded(ContractNetError):
    code = "depth-exceeded"


# --- agent-node ------------------------------------------------------------

class UnknownPeer(ContractNetError):
    code = "unknown-peer"


class UnknownOriginal(ContractNetError):
    code = "unknown-original"


class NoCounterpartyEndpoint(ContractNetError):
    code = "no-counterparty-endpoint"


class UnknownPayloadKind(ContractNetError):
    code = "unknown-payload-kind"


class Unauthorized(ContractNetError):
    code = "unauthorized"


class SessionNotPending(ContractNetError):
    code = "session-not-pending"


class ChainBroken(ContractNetError):
    """A transition-record chain fails verification."""

    code = "chain-broken"


# --- net-transport ---------------------------------------------------------

class Unreachable(ContractNetError):
    code = "unreachable"


class Partitioned(ContractNetError):
    code = "partitioned"


class FrameTooLarge(ContractNetError):
    code = "frame-too-large"
