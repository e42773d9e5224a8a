#!/usr/bin/env python3
"""Regenerate committed artifacts: golden canonical vectors, the wire-frame
hex dumps, and the admin OpenAPI document.

Everything here is seeded, so regeneration is reproducible; the test suite
fails if the committed files drift from what the code produces.

Usage: python scripts/generate_goldens.py
"""

from __future__ import annotations

import json
import sys
from datetime import timedelta
from pathlib import Path
from random import Random

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from contractnet.agent import Agent, AgentConfig  # noqa: E402
from contractnet.canon import canonical_bytes, format_timestamp, hash_of_bytes  # noqa: E402
from contractnet.contracts import (  # noqa: E402
    Any_,
    Contract,
    OneOf,
    ProposalContract,
    Range,
)
from contractnet.identity import TrustRegistry, generate_identity, sign  # noqa: E402
from contractnet.negotiation import Acceptance, Offer, Rejection  # noqa: E402
from contractnet.records import build_contract_record  # noqa: E402
from contractnet.scenarios.fixtures import steel_rod_purchase  # noqa: E402
from contractnet.stc import build_transition_contract  # noqa: E402
from contractnet.templates import Template  # noqa: E402
from contractnet.tracing import (  # noqa: E402
    DataAnswer,
    DeniedAnswer,
    RedirectAnswer,
    TraceAnswerSet,
    TraceRequest,
)
from contractnet.transport import SIM_EPOCH, frame  # noqa: E402
from contractnet.values import Value  # noqa: E402

GOLDEN_DIR = REPO / "golden"
DOCS_DIR = REPO / "docs"

SESSION_ID = "000102030405060708090a0b0c0d0e0f"
REQUEST_ID = "f0e0d0c0b0a090807060504030201000"


def build_vectors() -> dict[str, bytes]:
    rng = Random(2026)
    seller = generate_identity("Golden Seller", rng)
    buyer = generate_identity("Golden Buyer", rng)

    registry = TrustRegistry()
    for identity in (seller, buyer):
        registry.add(
            identity,
            valid_from=SIM_EPOCH,
            valid_until=SIM_EPOCH + timedelta(days=3650),
        )

    empty_template = Template(title="", elements=())
    steel = steel_rod_purchase()
    contract = Contract(
        template_hash=steel.hash,
        arguments=(
            ("quantity", Value.integer(500)),
            ("price", Value.text("1234.50 EUR")),
            ("buyer", Value.party(buyer.party_id)),
            ("seller", Value.party(seller.party_id)),
        ),
    )
    proposal = ProposalContract(
        template_hash=steel.hash,
        constraints=(
            ("quantity", Range(Value.integer(100), Value.integer(1000))),
            ("price", Any_()),
            ("buyer", OneOf((Value.party(buyer.party_id),))),
            ("seller", OneOf((Value.party(seller.party_id),))),
        ),
    )
    valid_until = format_timestamp(SIM_EPOCH + timedelta(minutes=10))
    offer = Offer(
        session_id=SESSION_ID,
        offer_index=1,
        sender=seller.party_id,
        receiver=buyer.party_id,
        contracts=(contract,),
        valid_until=valid_until,
    )
    offer_envelope = sign(seller, "offer", canonical_bytes(offer.to_doc()))
    acceptance = Acceptance(
        session_id=SESSION_ID,
        offer_index=1,
        offer_hash=offer_envelope.envelope_hash,
        signer=buyer.party_id,
    )
    acceptance_envelope = sign(buyer, "acceptance", canonical_bytes(acceptance.to_doc()))
    rejection = Rejection(
        session_id=SESSION_ID,
        offer_index=1,
        offer_hash=offer_envelope.envelope_hash,
        signer=buyer.party_id,
    )
    record = build_contract_record(contract, offer_envelope, acceptance_envelope)
    evidence_hash = hash_of_bytes(b"golden evidence: delivery note 7731")
    transition = build_transition_contract(
        original=hash_of_bytes(canonical_bytes(contract.to_doc())),
        evidence=evidence_hash,
    )
    trace_request = TraceRequest(
        request_id=REQUEST_ID,
        requester=buyer.party_id,
        hashes=(steel.hash, evidence_hash),
        evidence=(offer_envelope, acceptance_envelope),
    )
    trace_answer = TraceAnswerSet(
        request_id=REQUEST_ID,
        answers={
            steel.hash: DataAnswer(canonical_bytes(steel.to_doc())),
            evidence_hash: RedirectAnswer("tcp:files.example:9400", "ask the archive"),
            hash_of_bytes(b"a third hash"): DeniedAnswer(
                "negotiate a dataset sale first", steel.hash
            ),
        },
    )

    return {
        "template-empty": canonical_bytes(empty_template.to_doc()),
        "template-steel-rod": canonical_bytes(steel.to_doc()),
        "contract-steel-rod": canonical_bytes(contract.to_doc()),
        "proposal-steel-rod": canonical_bytes(proposal.to_doc()),
        "offer": canonical_bytes(offer.to_doc()),
        "acceptance": canonical_bytes(acceptance.to_doc()),
        "rejection": canonical_bytes(rejection.to_doc()),
        "envelope-offer": offer_envelope.encode(),
        "envelope-acceptance": acceptance_envelope.encode(),
        "contract-record": canonical_bytes(record.to_doc()),
        "transition-initial": canonical_bytes(transition.to_doc()),
        "trace-request": canonical_bytes(trace_request.to_doc()),
        "trace-answer": canonical_bytes(trace_answer.to_doc()),
        "trust-registry": canonical_bytes(registry.to_doc()),
    }


def write_goldens() -> None:
    GOLDEN_DIR.mkdir(exist_ok=True)
    vectors = build_vectors()
    manifest = {"kind": "golden-manifest", "vectors": {}}
    for name, data in sorted(vectors.items()):
        path = GOLDEN_DIR / f"{name}.canon"
        path.write_bytes(data)
        manifest["vectors"][name] = {
            "file": path.name,
            "sha256": hash_of_bytes(data).digest.hex(),
        }
    (GOLDEN_DIR / "manifest.json").write_bytes(canonical_bytes(manifest))
    print(f"wrote {len(vectors)} golden vectors to {GOLDEN_DIR}")


def hexdump(data: bytes) -> str:
    lines = []
    for offset in range(0, len(data), 16):
        chunk = data[offset : offset + 16]
        hexes = " ".join(f"{b:02x}" for b in chunk)
        text = "".join(chr(b) if 32 <= b < 127 else "." for b in chunk)
        lines.append(f"{offset:08x}  {hexes:<47}  |{text}|")
    return "\n".join(lines)


def write_wire_frames() -> None:
    DOCS_DIR.mkdir(exist_ok=True)
    vectors = build_vectors()
    frames = {
        "acceptance envelope": frame(vectors["envelope-acceptance"]),
        "offer envelope": frame(vectors["envelope-offer"]),
    }
    parts = [
        "# Wire framing",
        "",
        "TCP transport frames are a 4-byte big-endian length prefix followed by",
        "the canonical JSON bytes of one signed envelope. The maximum frame size",
        "is 16 MiB (16777216 bytes); peers close the connection on oversize",
        "announcements. The two golden frames below are bit-exact: they frame",
        "the committed `golden/envelope-acceptance.canon` and",
        "`golden/envelope-offer.canon` vectors.",
        "",
    ]
    for title, data in frames.items():
        parts.append(f"## Golden frame: {title} ({len(data)} bytes)")
        parts.append("")
        parts.append("```")
        parts.append(hexdump(data))
        parts.append("```")
        parts.append("")
    (DOCS_DIR / "wire-frames.md").write_text("\n".join(parts))
    print(f"wrote {DOCS_DIR / 'wire-frames.md'}")


def write_openapi() -> None:
    from contractnet.admin import build_admin_app
    from contractnet.transport import ManualClock

    rng = Random(0)
    identity = generate_identity("openapi", rng)
    registry = TrustRegistry()
    registry.add(
        identity, valid_from=SIM_EPOCH, valid_until=SIM_EPOCH + timedelta(days=1)
    )
    agent = Agent(
        AgentConfig(name="spec", identity=identity, registry=registry,
                    admin_token="spec"),
        ManualClock(),
    )
    app = build_admin_app(agent)
    schema = app.openapi()
    DOCS_DIR.mkdir(exist_ok=True)
    (DOCS_DIR / "admin-openapi.json").write_text(
        json.dumps(schema, indent=2, sort_keys=True) + "\n"
    )
    print(f"wrote {DOCS_DIR / 'admin-openapi.json'}")


if __name__ == "__main__":
    write_goldens()
    write_wire_frames()
    write_openapi()
