"""Derived documents built from negotiation results.

A contract record bundles an accepted contract with the offer and acceptance
envelopes that bound it, so a third party can verify the agreement from the
record alone. Records are content-addressed like everything else, which lets
later contracts reference them as proof of expected payments or prior deals.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime

from .canon import Hash, canonical_bytes, hash_of_bytes, parse_json_tree
from .contracts import Contract
from .errors import InvariantViolation
from .identity import SignedEnvelope, TrustRegistry, verify
from .negotiation import Acceptance, Offer, parse_message

CONTRACT_RECORD_KIND = "contract-record"


@dataclass(frozen=True)
class ContractRecord:
    contract: Contract
    offer_envelope: SignedEnvelope
    acceptance_envelope: SignedEnvelope

    def to_doc(self) -> dict:
        return {
            "kind": CONTRACT_RECORD_KIND,
            "contract": self.contract.to_doc(),
            "offer": self.offer_envelope.to_doc(),
            "acceptance": self.acceptance_envelope.to_doc(),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ContractRecord":
        if not isinstance(doc, dict) or doc.get("kind") != CONTRACT_RECORD_KIND:
            raise InvariantViolation("not a contract record")
        if set(doc) != {"kind", "contract", "offer", "acceptance"}:
            raise InvariantViolation("malformed contract record fields")
        return cls(
            contract=Contract.from_doc(doc["contract"]),
            offer_envelope=SignedEnvelope.from_doc(doc["offer"]),
            acceptance_envelope=SignedEnvelope.from_doc(doc["acceptance"]),
        )

    @property
    def record_hash(self) -> Hash:
        return hash_of_bytes(canonical_bytes(self.to_doc()))


def build_contract_record(
    contract: Contract,
    offer_envelope: SignedEnvelope,
    acceptance_envelope: SignedEnvelope,
) -> ContractRecord:
    record = ContractRecord(contract, offer_envelope, acceptance_envelope)
    _check_record(record)
    return record


def _check_record(record: ContractRecord) -> None:
    offer = parse_message(record.offer_envelope)
    acceptance = parse_message(record.acceptance_envelope)
    if not isinstance(offer, Offer) or not isinstance(acceptance, Acceptance):
        raise InvariantViolation("record envelopes must be an offer and an acceptance")
    if acceptance.offer_hash != record.offer_envelope.envelope_hash:
        raise InvariantViolation("acceptance does not bind the recorded offer")
    if acceptance.session_id != offer.session_id:
        raise InvariantViolation("record envelopes belong to different sessions")
    if record.contract not in offer.contracts:
        raise InvariantViolation("recorded contract is not part of the offer")


def decode_contract_record(data: bytes) -> ContractRecord:
    record = ContractRecord.from_doc(parse_json_tree(data))
    if canonical_bytes(record.to_doc()) != data:
        raise InvariantViolation("contract record bytes are not canonical")
    _check_record(record)
    return record


def verify_contract_record(
    record: ContractRecord, registry: TrustRegistry, at: datetime | None = None
) -> tuple[Offer, Acceptance]:
    """Signature-check both envelopes; returns the parsed pair."""
    offer = parse_message(record.offer_envelope)
    check_at = at if at is not None else offer.deadline
    verify(record.offer_envelope, registry, check_at)
    verify(record.acceptance_envelope, registry, check_at)
    acceptance = parse_message(record.acceptance_envelope)
    if acceptance.signer != offer.receiver:
        raise InvariantViolation("acceptance signer is not the offer receiver")
    return offer, acceptance
