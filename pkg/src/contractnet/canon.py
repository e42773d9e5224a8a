"""Canonical serialization and content hashing.

Every document exchanged between agents (templates, contracts, protocol
messages) has exactly one byte encoding: UTF-8 JSON with lexicographically
sorted object keys, no insignificant whitespace, integers in minimal decimal
form, and binary fields as base64 text. Floating point is banned from the
data model; exact decimals travel as strings. Hashes are computed over these
canonical bytes, so two agents always agree on the hash of a document.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Any, Callable, Mapping

from .errors import InvariantViolation

# Registered digest algorithms: name -> (constructor, digest length in bytes).
HASH_ALGORITHMS: dict[str, tuple[Callable, int]] = {
    "sha-256": (hashlib.sha256, 32),
}

DEFAULT_HASH_ALGORITHM = "sha-256"

_HASH_TEXT_RE = re.compile(r"^([a-z0-9-]+):([0-9a-f]+)$")

IDENTIFIER_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
TOKEN_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.\-]*$")
PAYLOAD_KIND_RE = re.compile(r"^[a-z][a-z0-9-]*$")
HEX128_RE = re.compile(r"^[0-9a-f]{32}$")


@dataclass(frozen=True)
class Hash:
    """A content address: digest algorithm plus raw digest bytes."""

    algorithm: str
    digest: bytes

    def __post_init__(self):
        spec = HASH_ALGORITHMS.get(self.algorithm)
        if spec is None:
            raise InvariantViolation(f"unregistered hash algorithm {self.algorithm!r}")
        if len(self.digest) != spec[1]:
            raise InvariantViolation(
                f"{self.algorithm} digest must be {spec[1]} bytes, got {len(self.digest)}"
            )

    @property
    def text(self) -> str:
        return f"{self.algorithm}:{self.digest.hex()}"

    @classmethod
    def parse(cls, text: str) -> "Hash":
        m = _HASH_TEXT_RE.match(text)
        if not m:
            raise InvariantViolation(f"malformed hash text {text!r}")
        algorithm, hexdigest = m.group(1), m.group(2)
        if len(hexdigest) % 2:
            raise InvariantViolation(f"odd-length hex digest in {text!r}")
        return cls(algorithm, bytes.fromhex(hexdigest))

    def __str__(self) -> str:
        return self.text


def hash_of_bytes(data: bytes, algorithm: str = DEFAULT_HASH_ALGORITHM) -> Hash:
    spec = HASH_ALGORITHMS.get(algorithm)
    if spec is None:
        raise InvariantViolation(f"unregistered hash algorithm {algorithm!r}")
    return Hash(algorithm, spec[0](data).digest())


def _check_tree(value: Any, path: str) -> None:
    if isinstance(value, bool) or value is None:
        raise InvariantViolation(f"{type(value).__name__} not allowed in documents at {path}")
    if isinstance(value, float):
        raise InvariantViolation(f"floating point not allowed in documents at {path}")
    if isinstance(value, (str, int)):
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check_tree(item, f"{path}[{i}]")
        return
    if isinstance(value, Mapping):
        for key, item in value.items():
            if not isinstance(key, str):
                raise InvariantViolation(f"non-string key {key!r} at {path}")
            _check_tree(item, f"{path}.{key}")
        return
    raise InvariantViolation(f"unsupported value {type(value).__name__} at {path}")


def canonical_bytes(doc: Mapping | list) -> bytes:
    """Encode a JSON tree to its unique canonical byte form."""
    _check_tree(doc, "$")
    return json.dumps(
        doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def canonicalize(document: Any) -> bytes:
    """Canonical bytes of a document object (anything with ``to_doc``) or tree."""
    to_doc = getattr(document, "to_doc", None)
    if callable(to_doc):
        return canonical_bytes(to_doc())
    return canonical_bytes(document)


def hash_of(document: Any, algorithm: str = DEFAULT_HASH_ALGORITHM) -> Hash:
    """Hash over the canonical bytes of a document."""
    return hash_of_bytes(canonicalize(document), algorithm)


def parse_json_tree(data: bytes) -> Any:
    try:
        return json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvariantViolation(f"not valid JSON: {exc}") from exc


# --- binary fields ----------------------------------------------------------

def b64encode(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64decode(text: str) -> bytes:
    try:
        data = base64.b64decode(text, validate=True)
    except Exception as exc:
        raise InvariantViolation(f"malformed base64: {exc}") from exc
    if base64.b64encode(data).decode("ascii") != text:
        raise InvariantViolation("non-canonical base64")
    return data


# --- timestamps -------------------------------------------------------------
#
# Canonical text form: RFC 3339 UTC with "Z" suffix, seconds always present,
# fractional seconds up to microseconds with trailing zeros stripped.

_TS_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})"
    r"(?:\.(\d{1,6}))?(Z|[+-]\d{2}:\d{2})$"
)


def parse_timestamp(text: str) -> datetime:
    """Parse an RFC 3339 timestamp; returns an aware UTC datetime."""
    m = _TS_RE.match(text)
    if not m:
        raise InvariantViolation(f"malformed timestamp {text!r}")
    year, month, day, hour, minute, second = (int(m.group(i)) for i in range(1, 7))
    frac = m.group(7) or ""
    micro = int(frac.ljust(6, "0")) if frac else 0
    offset = m.group(8)
    if offset == "Z":
        tz = timezone.utc
    else:
        sign = 1 if offset[0] == "+" else -1
        tz = timezone(sign * timedelta(hours=int(offset[1:3]), minutes=int(offset[4:6])))
    try:
        dt = datetime(year, month, day, hour, minute, second, micro, tzinfo=tz)
    except ValueError as exc:
        raise InvariantViolation(f"invalid timestamp {text!r}: {exc}") from exc
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    """Canonical text form of an aware datetime (converted to UTC)."""
    if dt.tzinfo is None:
        raise InvariantViolation("timestamps must be timezone-aware")
    dt = dt.astimezone(timezone.utc)
    base = dt.strftime("%Y-%m-%dT%H:%M:%S")
    if dt.microsecond:
        frac = f"{dt.microsecond:06d}".rstrip("0")
        return f"{base}.{frac}Z"
    return f"{base}Z"


def canonical_timestamp(text: str) -> str:
    """Normalize any RFC 3339 timestamp text to its canonical form."""
    return format_timestamp(parse_timestamp(text))


# --- decimals ---------------------------------------------------------------
#
# Canonical text form: optional minus, integer part with no leading zeros
# (bare "0" allowed), optional fraction with no trailing zeros. "-0" is "0".

_DECIMAL_INPUT_RE = re.compile(r"^[+-]?[0-9]+(\.[0-9]+)?$")
_DECIMAL_CANONICAL_RE = re.compile(r"^-?(0|[1-9][0-9]*)(\.[0-9]*[1-9])?$")


def normalize_decimal(text: str) -> str:
    if not _DECIMAL_INPUT_RE.match(text):
        raise InvariantViolation(f"malformed decimal {text!r}")
    negative = text.startswith("-")
    text = text.lstrip("+-")
    if "." in text:
        intpart, frac = text.split(".")
        frac = frac.rstrip("0")
    else:
        intpart, frac = text, ""
    intpart = intpart.lstrip("0") or "0"
    result = intpart + (f".{frac}" if frac else "")
    if negative and result != "0":
        result = "-" + result
    return result


def is_canonical_decimal(text: str) -> bool:
    return bool(_DECIMAL_CANONICAL_RE.match(text))
