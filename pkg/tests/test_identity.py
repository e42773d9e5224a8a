"""Identities, signatures, envelopes, trust registry, and key files."""

from __future__ import annotations

import base64
import json
from datetime import timedelta
from random import Random

import pytest

from contractnet.errors import (
    BadSignature,
    ExpiredIdentity,
    InvariantViolation,
    MissingPrivateKey,
    UnknownSigner,
)
from contractnet.identity import (
    Identity,
    PartyId,
    SignedEnvelope,
    TrustRegistry,
    generate_identity,
    load_identity,
    save_identity,
    sign,
    verify,
)
from contractnet.transport import SIM_EPOCH


def test_seeded_generation_is_deterministic():
    a = generate_identity("a", Random(7))
    b = generate_identity("a", Random(7))
    c = generate_identity("a", Random(8))
    assert a.party_id == b.party_id
    assert a.private_key == b.private_key
    assert a.party_id != c.party_id


def test_party_id_is_public_key_fingerprint(rng):
    identity = generate_identity("x", rng)
    assert identity.party_id == PartyId.of_public_key(identity.public_key)
    assert PartyId.parse(identity.party_id.text) == identity.party_id


def test_party_id_text_roundtrip():
    with pytest.raises(InvariantViolation):
        PartyId.parse("party:sha-256:xyz")
    with pytest.raises(InvariantViolation):
        PartyId.parse("sha-256:" + "0" * 64)


def test_sign_verify_roundtrip(parties, clock):
    x, _, registry = parties
    envelope = sign(x, "offer", b'{"kind":"offer"}')
    assert verify(envelope, registry, clock.now()) == x.party_id


def test_tampered_payload_rejected(parties, clock):
    x, _, registry = parties
    envelope = sign(x, "offer", b'{"kind":"offer"}')
    for i in range(len(envelope.payload)):
        flipped = bytearray(envelope.payload)
        flipped[i] ^= 0x01
        tampered = SignedEnvelope(
            payload_kind=envelope.payload_kind,
            payload=bytes(flipped),
            signer=envelope.signer,
            signature=envelope.signature,
        )
        with pytest.raises(BadSignature):
            verify(tampered, registry, clock.now())


def test_payload_kind_is_covered_by_signature(parties, clock):
    x, _, registry = parties
    envelope = sign(x, "offer", b"payload")
    forged = SignedEnvelope(
        payload_kind="acceptance",
        payload=envelope.payload,
        signer=envelope.signer,
        signature=envelope.signature,
    )
    with pytest.raises(BadSignature):
        verify(forged, registry, clock.now())


def test_unknown_signer(clock, rng):
    stranger = generate_identity("stranger", rng)
    envelope = sign(stranger, "offer", b"x")
    with pytest.raises(UnknownSigner):
        verify(envelope, TrustRegistry(), clock.now())


def test_expired_identity_window(rng, clock):
    identity = generate_identity("short-lived", rng)
    registry = TrustRegistry()
    registry.add(
        identity,
        valid_from=SIM_EPOCH,
        valid_until=SIM_EPOCH + timedelta(days=1),
    )
    envelope = sign(identity, "offer", b"x")
    assert verify(envelope, registry, SIM_EPOCH + timedelta(days=1)) == identity.party_id
    with pytest.raises(ExpiredIdentity):
        verify(envelope, registry, SIM_EPOCH + timedelta(days=1, seconds=1))
    with pytest.raises(ExpiredIdentity):
        verify(envelope, registry, SIM_EPOCH - timedelta(seconds=1))


def test_signing_without_private_key(parties):
    x, _, _ = parties
    public_only = Identity(
        party_id=x.party_id,
        public_key=x.public_key,
        display_name=x.display_name,
    )
    with pytest.raises(MissingPrivateKey):
        sign(public_only, "offer", b"x")


def test_same_payload_signs_identically_and_both_verify(parties, clock):
    x, _, registry = parties
    first = sign(x, "offer", b"same")
    second = sign(x, "offer", b"same")
    assert verify(first, registry, clock.now()) == x.party_id
    assert verify(second, registry, clock.now()) == x.party_id


def test_no_envelope_verifies_under_two_keys(clock):
    """Randomized corpora: an envelope verifies only under its signer."""
    rng = Random(55)
    registry = TrustRegistry()
    identities = [generate_identity(f"p{i}", rng) for i in range(8)]
    for identity in identities:
        registry.add(
            identity,
            valid_from=SIM_EPOCH,
            valid_until=SIM_EPOCH + timedelta(days=1),
        )
    for identity in identities:
        payload = bytes(rng.randrange(256) for _ in range(64))
        envelope = sign(identity, "offer", payload)
        assert verify(envelope, registry, clock.now()) == identity.party_id
        for other in identities:
            if other.party_id == identity.party_id:
                continue
            forged = SignedEnvelope(
                payload_kind=envelope.payload_kind,
                payload=envelope.payload,
                signer=other.party_id,
                signature=envelope.signature,
            )
            with pytest.raises(BadSignature):
                verify(forged, registry, clock.now())


def test_large_payload_roundtrip(parties, clock):
    x, _, registry = parties
    payload = b"\xab" * (1024 * 1024)
    envelope = sign(x, "trace-answer", payload)
    assert verify(envelope, registry, clock.now()) == x.party_id


def test_envelope_decode_requires_canonical_bytes(parties):
    x, _, _ = parties
    envelope = sign(x, "offer", b"x")
    data = envelope.encode()
    assert SignedEnvelope.decode(data) == envelope
    with pytest.raises(InvariantViolation):
        SignedEnvelope.decode(data + b" ")
    doc = json.loads(data)
    doc["extra"] = 1
    with pytest.raises(InvariantViolation):
        SignedEnvelope.from_doc(doc)


def test_envelope_hash_is_derived_not_carried(parties):
    x, _, _ = parties
    envelope = sign(x, "offer", b"x")
    assert "envelopeHash" not in envelope.to_doc()
    rebuilt = SignedEnvelope.decode(envelope.encode())
    assert rebuilt.envelope_hash == envelope.envelope_hash


def test_key_files_roundtrip_and_permissions(tmp_path, rng):
    identity = generate_identity("Alice", rng)
    id_path, secret_path = save_identity(identity, tmp_path, "alice")
    assert id_path.name == "alice.id.json"
    assert secret_path.name == "alice.secret.json"
    assert (secret_path.stat().st_mode & 0o777) == 0o600
    loaded = load_identity(tmp_path, "alice")
    assert loaded == identity
    public_only = load_identity(tmp_path, "alice", with_secret=False)
    assert public_only.private_key is None


def test_id_file_contains_no_private_key_bytes(tmp_path, rng):
    identity = generate_identity("Alice", rng)
    id_path, _ = save_identity(identity, tmp_path, "alice")
    content = id_path.read_text()
    assert base64.b64encode(identity.private_key).decode() not in content
    assert identity.private_key.hex() not in content


def test_registry_file_roundtrip_and_hash(tmp_path, parties):
    _, _, registry = parties
    path = tmp_path / "trust.json"
    saved_hash = registry.save(path)
    loaded = TrustRegistry.load(path)
    assert loaded.registry_hash == saved_hash == registry.registry_hash
    assert loaded.parties() == registry.parties()


def test_registry_rejects_mismatched_key(parties):
    x, z, _ = parties
    registry = TrustRegistry()
    with pytest.raises(InvariantViolation):
        registry.add(
            x.party_id,
            public_key=z.public_key,
            valid_from=SIM_EPOCH,
            valid_until=SIM_EPOCH + timedelta(days=1),
        )
