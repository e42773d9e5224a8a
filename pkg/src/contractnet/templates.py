"""Legal templates: prose provisions with typed, named placeholders.

A template is an ordered list of elements, each either a provision (human
readable text, possibly containing ``${key}`` placeholders) or a parameter
(a key/type pair). The template's hash is computed from its canonical form
and is how contracts refer to it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

from .canon import IDENTIFIER_RE, TOKEN_RE, Hash, canonical_bytes, hash_of_bytes
from .errors import InvariantViolation
from .values import Value


@dataclass(frozen=True)
class Provision:
    text: str


@dataclass(frozen=True)
class Parameter:
    key: str
    type_name: str


Element = Union[Provision, Parameter]

# Segments of a parsed provision: literal text or a placeholder key.
_PLACEHOLDER_KEY_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def parse_provision(text: str) -> list[tuple[str, str]]:
    """Split provision text into ("lit", text) and ("key", name) segments.

    ``${key}`` marks a placeholder; ``$$`` is a literal dollar sign; a ``$``
    followed by anything else is literal. An unterminated ``${`` is an error.
    """
    segments: list[tuple[str, str]] = []
    literal: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch != "$":
            literal.append(ch)
            i += 1
            continue
        if text[i + 1 : i + 2] == "$":
            literal.append("$")
            i += 2
            continue
        if text[i + 1 : i + 2] == "{":
            m = _PLACEHOLDER_KEY_RE.match(text, i + 2)
            if not m or text[m.end() : m.end() + 1] != "}":
                raise InvariantViolation(
                    f"malformed placeholder at offset {i} in provision {text!r}"
                )
            if literal:
                segments.append(("lit", "".join(literal)))
                literal = []
            segments.append(("key", m.group(0)))
            i = m.end() + 1
            continue
        literal.append("$")
        i += 1
    if literal:
        segments.append(("lit", "".join(literal)))
    return segments


def placeholder_keys(text: str) -> list[str]:
    return [value for tag, value in parse_provision(text) if tag == "key"]


_ENUM_TYPE_RE = re.compile(r"^enum\(([^()]*)\)$")


def _valid_type_name(name: str) -> bool:
    if IDENTIFIER_RE.match(name):
        return True
    m = _ENUM_TYPE_RE.match(name)
    if not m:
        return False
    members = m.group(1).split(",")
    return len(members) >= 1 and all(TOKEN_RE.match(member) for member in members) and len(
        set(members)
    ) == len(members)


@dataclass(frozen=True)
class Template:
    title: str
    elements: tuple[Element, ...]

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        keys = [e.key for e in self.elements if isinstance(e, Parameter)]
        dupes = {k for k in keys if keys.count(k) > 1}
        if dupes:
            raise InvariantViolation(f"duplicate parameter keys {sorted(dupes)}")
        for key in keys:
            if not IDENTIFIER_RE.match(key):
                raise InvariantViolation(f"malformed parameter key {key!r}")
        declared = set(keys)
        for element in self.elements:
            if isinstance(element, Parameter):
                if not _valid_type_name(element.type_name):
                    raise InvariantViolation(
                        f"malformed type name {element.type_name!r} for key {element.key!r}"
                    )
            else:
                for key in placeholder_keys(element.text):
                    if key not in declared:
                        raise InvariantViolation(
                            f"provision references undeclared key {key!r}"
                        )

    @property
    def parameters(self) -> tuple[Parameter, ...]:
        return tuple(e for e in self.elements if isinstance(e, Parameter))

    @property
    def parameter_keys(self) -> frozenset[str]:
        return frozenset(p.key for p in self.parameters)

    def parameter_type(self, key: str) -> str:
        for p in self.parameters:
            if p.key == key:
                return p.type_name
        raise InvariantViolation(f"template declares no parameter {key!r}")

    def to_doc(self) -> dict:
        elements = []
        for element in self.elements:
            if isinstance(element, Provision):
                elements.append({"provision": element.text})
            else:
                elements.append(
                    {"parameter": {"key": element.key, "type": element.type_name}}
                )
        return {"kind": "template", "title": self.title, "elements": elements}

    @classmethod
    def from_doc(cls, doc: dict) -> "Template":
        if not isinstance(doc, dict) or doc.get("kind") != "template":
            raise InvariantViolation("not a template document")
        if set(doc) != {"kind", "title", "elements"}:
            raise InvariantViolation("template fields must be kind, title, elements")
        if not isinstance(doc["title"], str) or not isinstance(doc["elements"], list):
            raise InvariantViolation("malformed template document")
        elements: list[Element] = []
        for entry in doc["elements"]:
            if not isinstance(entry, dict) or len(entry) != 1:
                raise InvariantViolation("template element must have exactly one variant")
            if "provision" in entry:
                if not isinstance(entry["provision"], str):
                    raise InvariantViolation("provision must be text")
                elements.append(Provision(entry["provision"]))
            elif "parameter" in entry:
                param = entry["parameter"]
                if not isinstance(param, dict) or set(param) != {"key", "type"}:
                    raise InvariantViolation("parameter must have key and type")
                elements.append(Parameter(param["key"], param["type"]))
            else:
                raise InvariantViolation("element must be a provision or a parameter")
        return cls(title=doc["title"], elements=tuple(elements))

    @cached_property
    def hash(self) -> Hash:
        # Recomputed from canonical bytes; never accepted from input.
        return hash_of_bytes(canonical_bytes(self.to_doc()))


@dataclass(frozen=True)
class ParamType:
    """A named, deterministic, side-effect-free predicate over values."""

    name: str
    predicate: Callable[[Value], bool]

    def accepts(self, value: Value) -> bool:
        return bool(self.predicate(value))


_CURRENCY_AMOUNT_RE = re.compile(r"^-?(0|[1-9][0-9]*)(\.[0-9]+)? [A-Z]{3}$")


def _builtin_types() -> dict[str, ParamType]:
    def typed(kind: str) -> Callable[[Value], bool]:
        return lambda v: v.kind == kind

    return {
        "text": ParamType("text", typed("text")),
        "int": ParamType("int", typed("int")),
        "positiveInt": ParamType(
            "positiveInt", lambda v: v.kind == "int" and v.payload > 0
        ),
        "decimal": ParamType("decimal", typed("decimal")),
        "currencyAmount": ParamType(
            "currencyAmount",
            lambda v: v.kind == "text" and bool(_CURRENCY_AMOUNT_RE.match(v.payload)),
        ),
        "timestamp": ParamType("timestamp", typed("timestamp")),
        "party": ParamType("party", typed("party")),
        "reference": ParamType("reference", typed("reference")),
    }


class TypeRegistry:
    """Resolves parameter type names to predicates.

    ``enum(A,B,...)`` type names are resolved structurally: the value must be
    a token equal to one of the listed members.
    """

    def __init__(self, types: dict[str, ParamType] | None = None):
        self._types = dict(types) if types is not None else _builtin_types()

    def register(self, param_type: ParamType) -> None:
        if param_type.name in self._types:
            raise InvariantViolation(f"type {param_type.name!r} already registered")
        self._types[param_type.name] = param_type

    def resolve(self, name: str) -> ParamType | None:
        known = self._types.get(name)
        if known is not None:
            return known
        m = _ENUM_TYPE_RE.match(name)
        if m and _valid_type_name(name):
            members = frozenset(m.group(1).split(","))
            return ParamType(
                name, lambda v: v.kind == "token" and v.payload in members
            )
        return None


BUILTIN_TYPES = TypeRegistry()


def parse_argument_text(type_name: str, raw: str) -> Value:
    """Build a Value of the right kind for a declared parameter type.

    Used by authoring surfaces (CLI, console counter-offers) where arguments
    arrive as plain text.
    """
    if type_name in ("int", "positiveInt"):
        try:
            return Value.integer(int(raw, 10))
        except ValueError as exc:
            raise InvariantViolation(f"not an integer: {raw!r}") from exc
    if type_name == "decimal":
        return Value.decimal(raw)
    if type_name == "timestamp":
        return Value.timestamp(raw)
    if type_name == "party":
        return Value.party(raw)
    if type_name == "reference":
        return Value.reference(raw)
    if _ENUM_TYPE_RE.match(type_name):
        return Value.token(raw)
    return Value.text(raw)
