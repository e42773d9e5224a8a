"""Typed argument values for contracts.

A value is one of seven kinds: text, int, decimal, timestamp, party,
reference, or token. Each kind has a single canonical text form so that
rendering and hashing are deterministic. Decimals and timestamps are exact
strings, never binary floating point.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from decimal import Decimal
from typing import Union

from .canon import (
    TOKEN_RE,
    Hash,
    canonical_timestamp,
    format_timestamp,
    is_canonical_decimal,
    normalize_decimal,
    parse_timestamp,
)
from .errors import InvariantViolation
from .identity import PartyId

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

VALUE_KINDS = ("text", "int", "decimal", "timestamp", "party", "reference", "token")

# Kinds with a total ordering usable in range constraints.
ORDERED_KINDS = frozenset({"int", "decimal", "timestamp"})


@dataclass(frozen=True)
class Value:
    """One argument value; ``payload`` is already in canonical form."""

    kind: str
    payload: Union[str, int, Hash, PartyId]

    def __post_init__(self):
        if self.kind not in VALUE_KINDS:
            raise InvariantViolation(f"unknown value kind {self.kind!r}")

    # -- constructors --------------------------------------------------------

    @classmethod
    def text(cls, value: str) -> "Value":
        if not isinstance(value, str):
            raise InvariantViolation("text value must be a string")
        return cls("text", value)

    @classmethod
    def integer(cls, value: int) -> "Value":
        if not isinstance(value, int) or isinstance(value, bool):
            raise InvariantViolation("int value must be an integer")
        if not INT64_MIN <= value <= INT64_MAX:
            raise InvariantViolation("int value outside signed 64-bit range")
        return cls("int", value)

    @classmethod
    def decimal(cls, value: str) -> "Value":
        return cls("decimal", normalize_decimal(value))

    @classmethod
    def timestamp(cls, value: Union[str, datetime]) -> "Value":
        if isinstance(value, datetime):
            return cls("timestamp", format_timestamp(value))
        return cls("timestamp", canonical_timestamp(value))

    @classmethod
    def party(cls, value: Union[str, PartyId]) -> "Value":
        if isinstance(value, str):
            value = PartyId.parse(value)
        return cls("party", value)

    @classmethod
    def reference(cls, value: Union[str, Hash]) -> "Value":
        if isinstance(value, str):
            value = Hash.parse(value)
        return cls("reference", value)

    @classmethod
    def token(cls, value: str) -> "Value":
        if not TOKEN_RE.match(value):
            raise InvariantViolation(f"malformed token {value!r}")
        return cls("token", value)

    # -- views ----------------------------------------------------------------

    @property
    def canonical_text(self) -> str:
        """Text form used when rendering into contract prose."""
        if self.kind == "int":
            return str(self.payload)
        if self.kind == "party":
            return self.payload.text
        if self.kind == "reference":
            return self.payload.text
        return self.payload  # text, decimal, timestamp, token are strings

    def as_datetime(self) -> datetime:
        if self.kind != "timestamp":
            raise InvariantViolation(f"{self.kind} value is not a timestamp")
        return parse_timestamp(self.payload)

    def as_decimal(self) -> Decimal:
        if self.kind != "decimal":
            raise InvariantViolation(f"{self.kind} value is not a decimal")
        return Decimal(self.payload)

    def sort_key(self):
        """Orderable key for kinds in ORDERED_KINDS."""
        if self.kind == "int":
            return self.payload
        if self.kind == "decimal":
            return self.as_decimal()
        if self.kind == "timestamp":
            return self.as_datetime()
        raise InvariantViolation(f"{self.kind} values are not ordered")

    # -- wire form -------------------------------------------------------------

    def to_doc(self) -> dict:
        if self.kind == "int":
            return {"type": "int", "value": self.payload}
        return {"type": self.kind, "value": self.canonical_text}

    @classmethod
    def from_doc(cls, doc: dict) -> "Value":
        if not isinstance(doc, dict) or set(doc) != {"type", "value"}:
            raise InvariantViolation("value document must have exactly type and value")
        kind, raw = doc["type"], doc["value"]
        if kind == "int":
            if not isinstance(raw, int) or isinstance(raw, bool):
                raise InvariantViolation("int value must be a JSON integer")
            return cls.integer(raw)
        if not isinstance(raw, str):
            raise InvariantViolation(f"{kind} value must be a string")
        if kind == "text":
            return cls.text(raw)
        if kind == "decimal":
            if not is_canonical_decimal(raw):
                raise InvariantViolation(f"non-canonical decimal {raw!r}")
            return cls("decimal", raw)
        if kind == "timestamp":
            if canonical_timestamp(raw) != raw:
                raise InvariantViolation(f"non-canonical timestamp {raw!r}")
            return cls("timestamp", raw)
        if kind == "party":
            return cls.party(raw)
        if kind == "reference":
            return cls.reference(raw)
        if kind == "token":
            return cls.token(raw)
        raise InvariantViolation(f"unknown value kind {kind!r}")
