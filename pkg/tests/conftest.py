from __future__ import annotations

from datetime import timedelta
from random import Random

import pytest

from contractnet.canon import canonical_bytes, format_timestamp
from contractnet.contracts import Contract
from contractnet.identity import TrustRegistry, generate_identity, sign
from contractnet.negotiation import Acceptance, Offer, Rejection
from contractnet.scenarios.fixtures import steel_rod_purchase
from contractnet.templates import TypeRegistry
from contractnet.transport import SIM_EPOCH, ManualClock
from contractnet.values import Value


@pytest.fixture
def rng():
    return Random(20260101)


@pytest.fixture
def clock():
    return ManualClock(SIM_EPOCH)


@pytest.fixture
def parties(rng):
    """Two identities (x offers, z responds) plus a registry covering both."""
    x = generate_identity("x", rng)
    z = generate_identity("z", rng)
    registry = TrustRegistry()
    for identity in (x, z):
        registry.add(
            identity,
            valid_from=SIM_EPOCH,
            valid_until=SIM_EPOCH + timedelta(days=3650),
        )
    return x, z, registry


@pytest.fixture
def steel_template():
    return steel_rod_purchase()


@pytest.fixture
def type_registry():
    return TypeRegistry()


@pytest.fixture
def steel_contract(parties, steel_template):
    x, z, _ = parties
    return Contract(
        template_hash=steel_template.hash,
        arguments=(
            ("quantity", Value.integer(500)),
            ("price", Value.text("1234.50 EUR")),
            ("buyer", Value.party(z.party_id)),
            ("seller", Value.party(x.party_id)),
        ),
    )


class EnvelopeFactory:
    """Builds well-signed negotiation messages for engine-level tests."""

    def __init__(self, clock):
        self.clock = clock

    def offer(
        self,
        sender,
        receiver,
        session_id,
        index,
        contracts,
        prev=None,
        validity=timedelta(minutes=5),
    ):
        offer = Offer(
            session_id=session_id,
            offer_index=index,
            sender=sender.party_id,
            receiver=receiver.party_id,
            contracts=tuple(contracts),
            valid_until=format_timestamp(self.clock.now() + validity),
            prev_offer_hash=prev,
        )
        return sign(sender, "offer", canonical_bytes(offer.to_doc()))

    def acceptance(self, signer, session_id, index, offer_hash):
        acceptance = Acceptance(
            session_id=session_id,
            offer_index=index,
            offer_hash=offer_hash,
            signer=signer.party_id,
        )
        return sign(signer, "acceptance", canonical_bytes(acceptance.to_doc()))

    def rejection(self, signer, session_id, index, offer_hash):
        rejection = Rejection(
            session_id=session_id,
            offer_index=index,
            offer_hash=offer_hash,
            signer=signer.party_id,
        )
        return sign(signer, "rejection", canonical_bytes(rejection.to_doc()))


@pytest.fixture
def envelopes(clock):
    return EnvelopeFactory(clock)
