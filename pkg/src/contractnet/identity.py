"""Party identities, Ed25519 signing, and the signed-envelope wrapper.

A party is identified by the hash of its public key. Every protocol document
travels inside a :class:`SignedEnvelope`; the envelope's hash is what other
documents point at, and its signature is what makes the record non-repudiable.
Key-to-party bindings live in a local :class:`TrustRegistry` exchanged out of
band.
"""

from __future__ import annotations

import json
import os
import re
import struct
from dataclasses import dataclass, field
from datetime import datetime
from functools import cached_property
from pathlib import Path
from random import Random

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

from .canon import (
    PAYLOAD_KIND_RE,
    Hash,
    b64decode,
    b64encode,
    canonical_bytes,
    format_timestamp,
    hash_of_bytes,
    parse_timestamp,
)
from .errors import (
    BadSignature,
    ExpiredIdentity,
    InvariantViolation,
    MissingPrivateKey,
    UnknownSigner,
)

SIGNATURE_ALGORITHM = "ed25519"

_PARTY_RE = re.compile(r"^party:([a-z0-9-]+):([0-9a-f]+)$")


@dataclass(frozen=True, order=True)
class PartyId:
    """Fingerprint of a party's public key."""

    key_hash: Hash

    @property
    def text(self) -> str:
        return f"party:{self.key_hash.text}"

    @classmethod
    def parse(cls, text: str) -> "PartyId":
        m = _PARTY_RE.match(text)
        if not m:
            raise InvariantViolation(f"malformed party id {text!r}")
        return cls(Hash.parse(f"{m.group(1)}:{m.group(2)}"))

    @classmethod
    def of_public_key(cls, public_key: bytes) -> "PartyId":
        return cls(hash_of_bytes(public_key))

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class Identity:
    """A keypair plus display name; the private half never leaves this host."""

    party_id: PartyId
    public_key: bytes
    display_name: str
    private_key: bytes | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.party_id != PartyId.of_public_key(self.public_key):
            raise InvariantViolation("party id does not match public key")

    @property
    def can_sign(self) -> bool:
        return self.private_key is not None


def generate_identity(display_name: str, rng: Random) -> Identity:
    """Fresh Ed25519 identity; deterministic for a seeded ``rng``."""
    private = Ed25519PrivateKey.from_private_bytes(rng.randbytes(32))
    private_bytes = private.private_bytes(
        Encoding.Raw, PrivateFormat.Raw, NoEncryption()
    )
    public_bytes = private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return Identity(
        party_id=PartyId.of_public_key(public_bytes),
        public_key=public_bytes,
        display_name=display_name,
        private_key=private_bytes,
    )


def _signing_input(payload_kind: str, payload: bytes) -> bytes:
    # Length-prefix the kind so (kind, payload) pairs cannot collide.
    kind_bytes = payload_kind.encode("utf-8")
    return struct.pack(">I", len(kind_bytes)) + kind_bytes + payload


@dataclass(frozen=True, eq=True)
class SignedEnvelope:
    """A payload of canonical bytes wrapped with signer and signature.

    ``envelope_hash`` is derived from the canonical envelope encoding and is
    never carried on the wire, so a receiver always recomputes it.
    """

    payload_kind: str
    payload: bytes
    signer: PartyId
    signature: bytes

    def __post_init__(self):
        if not PAYLOAD_KIND_RE.match(self.payload_kind):
            raise InvariantViolation(f"malformed payload kind {self.payload_kind!r}")

    def to_doc(self) -> dict:
        return {
            "kind": "envelope",
            "payloadKind": self.payload_kind,
            "payload": b64encode(self.payload),
            "signer": self.signer.text,
            "signature": b64encode(self.signature),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "SignedEnvelope":
        if not isinstance(doc, dict) or doc.get("kind") != "envelope":
            raise InvariantViolation("not an envelope document")
        expected = {"kind", "payloadKind", "payload", "signer", "signature"}
        if set(doc) != expected:
            raise InvariantViolation(f"envelope fields must be {sorted(expected)}")
        return cls(
            payload_kind=doc["payloadKind"],
            payload=b64decode(doc["payload"]),
            signer=PartyId.parse(doc["signer"]),
            signature=b64decode(doc["signature"]),
        )

    @cached_property
    def envelope_hash(self) -> Hash:
        return hash_of_bytes(canonical_bytes(self.to_doc()))

    def encode(self) -> bytes:
        return canonical_bytes(self.to_doc())

    @classmethod
    def decode(cls, data: bytes) -> "SignedEnvelope":
        from .canon import parse_json_tree

        envelope = cls.from_doc(parse_json_tree(data))
        if envelope.encode() != data:
            raise InvariantViolation("envelope bytes are not canonical")
        return envelope


def sign(identity: Identity, payload_kind: str, payload: bytes) -> SignedEnvelope:
    if identity.private_key is None:
        raise MissingPrivateKey(f"{identity.display_name!r} holds no private key")
    private = Ed25519PrivateKey.from_private_bytes(identity.private_key)
    signature = private.sign(_signing_input(payload_kind, payload))
    return SignedEnvelope(
        payload_kind=payload_kind,
        payload=payload,
        signer=identity.party_id,
        signature=signature,
    )


@dataclass(frozen=True)
class RegistryEntry:
    public_key: bytes
    display_name: str
    valid_from: datetime
    valid_until: datetime

    def covers(self, at: datetime) -> bool:
        return self.valid_from <= at <= self.valid_until


class TrustRegistry:
    """Local mapping from party ids to public keys and validity windows."""

    def __init__(self):
        self._entries: dict[PartyId, RegistryEntry] = {}

    def add(
        self,
        identity_or_party: Identity | PartyId,
        public_key: bytes | None = None,
        display_name: str = "",
        valid_from: datetime | None = None,
        valid_until: datetime | None = None,
    ) -> None:
        if isinstance(identity_or_party, Identity):
            party = identity_or_party.party_id
            public_key = identity_or_party.public_key
            display_name = display_name or identity_or_party.display_name
        else:
            party = identity_or_party
            if public_key is None:
                raise InvariantViolation("public key required")
        if valid_from is None or valid_until is None:
            raise InvariantViolation("validity window required")
        if PartyId.of_public_key(public_key) != party:
            raise InvariantViolation("public key does not match party id")
        if valid_from > valid_until:
            raise InvariantViolation("validity window is empty")
        self._entries[party] = RegistryEntry(
            public_key, display_name, valid_from, valid_until
        )

    def lookup(self, party: PartyId, at: datetime) -> RegistryEntry:
        entry = self._entries.get(party)
        if entry is None:
            raise UnknownSigner(f"no registry entry for {party.text}")
        if not entry.covers(at):
            raise ExpiredIdentity(
                f"{party.text} valid {format_timestamp(entry.valid_from)}"
                f"..{format_timestamp(entry.valid_until)}, queried at {format_timestamp(at)}"
            )
        return entry

    def display_name(self, party: PartyId) -> str:
        entry = self._entries.get(party)
        return entry.display_name if entry else party.text

    def parties(self) -> list[PartyId]:
        return sorted(self._entries, key=lambda p: p.text)

    def to_doc(self) -> dict:
        return {
            "kind": "trust-registry",
            "entries": {
                party.text: {
                    "publicKey": b64encode(entry.public_key),
                    "displayName": entry.display_name,
                    "validFrom": format_timestamp(entry.valid_from),
                    "validUntil": format_timestamp(entry.valid_until),
                }
                for party, entry in self._entries.items()
            },
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "TrustRegistry":
        if not isinstance(doc, dict) or doc.get("kind") != "trust-registry":
            raise InvariantViolation("not a trust registry document")
        registry = cls()
        for party_text, entry in doc.get("entries", {}).items():
            registry.add(
                PartyId.parse(party_text),
                public_key=b64decode(entry["publicKey"]),
                display_name=entry["displayName"],
                valid_from=parse_timestamp(entry["validFrom"]),
                valid_until=parse_timestamp(entry["validUntil"]),
            )
        return registry

    @property
    def registry_hash(self) -> Hash:
        return hash_of_bytes(canonical_bytes(self.to_doc()))

    def save(self, path: str | Path) -> Hash:
        data = canonical_bytes(self.to_doc())
        Path(path).write_bytes(data)
        return hash_of_bytes(data)

    @classmethod
    def load(cls, path: str | Path) -> "TrustRegistry":
        from .canon import parse_json_tree

        return cls.from_doc(parse_json_tree(Path(path).read_bytes()))


def verify(envelope: SignedEnvelope, registry: TrustRegistry, at: datetime) -> PartyId:
    """Check the envelope signature against the registered key; returns the signer."""
    entry = registry.lookup(envelope.signer, at)
    public = Ed25519PublicKey.from_public_bytes(entry.public_key)
    try:
        public.verify(
            envelope.signature,
            _signing_input(envelope.payload_kind, envelope.payload),
        )
    except InvalidSignature as exc:
        raise BadSignature(
            f"signature by {envelope.signer.text} does not verify"
        ) from exc
    return envelope.signer


# --- key files ---------------------------------------------------------------

def save_identity(identity: Identity, directory: str | Path, name: str) -> tuple[Path, Path | None]:
    """Write ``<name>.id.json`` and, when a private key is held, ``<name>.secret.json``.

    The secret file is created with owner-only permissions.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    id_path = directory / f"{name}.id.json"
    id_doc = {
        "kind": "identity",
        "partyId": identity.party_id.text,
        "publicKey": b64encode(identity.public_key),
        "displayName": identity.display_name,
    }
    id_path.write_bytes(canonical_bytes(id_doc))
    secret_path = None
    if identity.private_key is not None:
        secret_path = directory / f"{name}.secret.json"
        secret_doc = {
            "kind": "identity-secret",
            "partyId": identity.party_id.text,
            "privateKey": b64encode(identity.private_key),
        }
        fd = os.open(secret_path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "wb") as handle:
            handle.write(canonical_bytes(secret_doc))
    return id_path, secret_path


def load_identity(directory: str | Path, name: str, with_secret: bool = True) -> Identity:
    directory = Path(directory)
    id_doc = json.loads((directory / f"{name}.id.json").read_text())
    if id_doc.get("kind") != "identity":
        raise InvariantViolation("not an identity file")
    private_key = None
    secret_path = directory / f"{name}.secret.json"
    if with_secret and secret_path.exists():
        secret_doc = json.loads(secret_path.read_text())
        if secret_doc.get("kind") != "identity-secret":
            raise InvariantViolation("not an identity secret file")
        if secret_doc.get("partyId") != id_doc.get("partyId"):
            raise InvariantViolation("secret file belongs to a different party")
        private_key = b64decode(secret_doc["privateKey"])
    return Identity(
        party_id=PartyId.parse(id_doc["partyId"]),
        public_key=b64decode(id_doc["publicKey"]),
        display_name=id_doc["displayName"],
        private_key=private_key,
    )
