"""Contracts and proposals bound to templates by hash.

A contract supplies one value per template parameter. A proposal supplies
constraints instead (ranges, regexes, enumerations, exact pins, or "any");
it narrows through refinement and becomes a contract once every constraint
is an exact pin. Two contracts are equal when they bind the same values to
the same template, regardless of the order arguments were written in.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

from .canon import IDENTIFIER_RE, Hash, canonical_bytes, hash_of_bytes
from .errors import (
    ConstraintViolated,
    InvariantViolation,
    TemplateMismatch,
    UnboundPlaceholder,
    UnknownKey,
)
from .templates import Provision, Template, TypeRegistry, parse_provision
from .values import ORDERED_KINDS, Value

# --- restricted regular expressions ------------------------------------------
#
# Constraint patterns allow literals, character classes, * + ?, alternation
# and grouping, always matched against the whole string. Everything else
# (bounded repeats, anchors, backslash classes, lookarounds) is rejected so
# the dialect behaves identically across implementations.

_REGEX_ESCAPABLE = set("*+?|()[]\\.^${}-")


def validate_restricted_regex(pattern: str) -> None:
    i = 0
    depth = 0
    in_class = False
    while i < len(pattern):
        ch = pattern[i]
        if ch == "\\":
            if i + 1 >= len(pattern) or pattern[i + 1] not in _REGEX_ESCAPABLE:
                raise InvariantViolation(
                    f"unsupported escape at offset {i} in pattern {pattern!r}"
                )
            i += 2
            continue
        if in_class:
            if ch == "]":
                in_class = False
            i += 1
            continue
        if ch == "[":
            in_class = True
            i += 1
            continue
        if ch == "(":
            if pattern[i + 1 : i + 2] == "?":
                raise InvariantViolation("(?...) groups are not supported")
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise InvariantViolation(f"unbalanced ')' in pattern {pattern!r}")
        elif ch in ".^${}":
            raise InvariantViolation(
                f"metacharacter {ch!r} not in the restricted dialect; escape it"
            )
        i += 1
    if in_class:
        raise InvariantViolation(f"unterminated character class in {pattern!r}")
    if depth != 0:
        raise InvariantViolation(f"unbalanced '(' in pattern {pattern!r}")
    try:
        re.compile(pattern)
    except re.error as exc:
        raise InvariantViolation(f"invalid pattern {pattern!r}: {exc}") from exc


# --- constraints --------------------------------------------------------------

@dataclass(frozen=True)
class Exact:
    value: Value


@dataclass(frozen=True)
class Range:
    lo: Value
    hi: Value

    def __post_init__(self):
        if self.lo.kind != self.hi.kind:
            raise InvariantViolation("range endpoints must share one value kind")
        if self.lo.kind not in ORDERED_KINDS:
            raise InvariantViolation(f"{self.lo.kind} values cannot form a range")
        if self.lo.sort_key() > self.hi.sort_key():
            raise InvariantViolation("range lower bound exceeds upper bound")


@dataclass(frozen=True)
class Regex:
    pattern: str

    def __post_init__(self):
        validate_restricted_regex(self.pattern)


@dataclass(frozen=True)
class OneOf:
    options: tuple[Value, ...]

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if not self.options:
            raise InvariantViolation("oneOf requires at least one option")
        kinds = {v.kind for v in self.options}
        if len(kinds) != 1:
            raise InvariantViolation("oneOf options must share one value kind")
        if len(set(self.options)) != len(self.options):
            raise InvariantViolation("oneOf options must be pairwise distinct")


@dataclass(frozen=True)
class Any_:
    pass


Constraint = Union[Exact, Range, Regex, OneOf, Any_]


def match_constraint(constraint: Constraint, value: Value) -> bool:
    """Total match function; cross-kind comparisons are simply false."""
    if isinstance(constraint, Exact):
        return constraint.value == value
    if isinstance(constraint, Range):
        if value.kind != constraint.lo.kind:
            return False
        return constraint.lo.sort_key() <= value.sort_key() <= constraint.hi.sort_key()
    if isinstance(constraint, Regex):
        if value.kind != "text":
            return False
        return re.fullmatch(constraint.pattern, value.payload) is not None
    if isinstance(constraint, OneOf):
        return value in constraint.options
    if isinstance(constraint, Any_):
        return True
    raise InvariantViolation(f"unknown constraint {constraint!r}")


def constraint_to_doc(constraint: Constraint) -> dict:
    if isinstance(constraint, Exact):
        return {"constraint": "exact", "value": constraint.value.to_doc()}
    if isinstance(constraint, Range):
        return {
            "constraint": "range",
            "lo": constraint.lo.to_doc(),
            "hi": constraint.hi.to_doc(),
        }
    if isinstance(constraint, Regex):
        return {"constraint": "regex", "pattern": constraint.pattern}
    if isinstance(constraint, OneOf):
        return {
            "constraint": "oneOf",
            "options": [v.to_doc() for v in constraint.options],
        }
    if isinstance(constraint, Any_):
        return {"constraint": "any"}
    raise InvariantViolation(f"unknown constraint {constraint!r}")


def constraint_from_doc(doc: dict) -> Constraint:
    if not isinstance(doc, dict) or "constraint" not in doc:
        raise InvariantViolation("malformed constraint document")
    kind = doc["constraint"]
    if kind == "exact":
        return Exact(Value.from_doc(doc["value"]))
    if kind == "range":
        return Range(Value.from_doc(doc["lo"]), Value.from_doc(doc["hi"]))
    if kind == "regex":
        return Regex(doc["pattern"])
    if kind == "oneOf":
        return OneOf(tuple(Value.from_doc(v) for v in doc["options"]))
    if kind == "any":
        return Any_()
    raise InvariantViolation(f"unknown constraint kind {kind!r}")


def describe_constraint(constraint: Constraint) -> str:
    """Short human-readable description, used when rendering proposals."""
    if isinstance(constraint, Exact):
        return constraint.value.canonical_text
    if isinstance(constraint, Range):
        return f"between {constraint.lo.canonical_text} and {constraint.hi.canonical_text}"
    if isinstance(constraint, Regex):
        return f"matching /{constraint.pattern}/"
    if isinstance(constraint, OneOf):
        return "one of " + ", ".join(v.canonical_text for v in constraint.options)
    return "to be determined"


# --- contracts -----------------------------------------------------------------

def _check_keys(pairs: Sequence[tuple[str, object]]) -> None:
    keys = [k for k, _ in pairs]
    for key in keys:
        if not IDENTIFIER_RE.match(key):
            raise InvariantViolation(f"malformed argument key {key!r}")
    dupes = {k for k in keys if keys.count(k) > 1}
    if dupes:
        raise InvariantViolation(f"duplicate argument keys {sorted(dupes)}")


@dataclass(frozen=True, eq=False)
class Contract:
    """A template reference plus one value per parameter, in author order.

    Author order is presentation only: equality, hashing and the canonical
    encoding all use key-sorted order.
    """

    template_hash: Hash
    arguments: tuple[tuple[str, Value], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "arguments", tuple((k, v) for k, v in self.arguments)
        )
        _check_keys(self.arguments)

    def value_of(self, key: str) -> Value:
        for k, v in self.arguments:
            if k == key:
                return v
        raise UnknownKey(f"contract binds no argument {key!r}")

    @property
    def keys(self) -> frozenset[str]:
        return frozenset(k for k, _ in self.arguments)

    def _canonical_pairs(self) -> tuple[tuple[str, Value], ...]:
        return tuple(sorted(self.arguments, key=lambda kv: kv[0]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Contract):
            return NotImplemented
        return (
            self.template_hash == other.template_hash
            and self._canonical_pairs() == other._canonical_pairs()
        )

    def __hash__(self) -> int:
        return hash((self.template_hash, self._canonical_pairs()))

    def to_doc(self) -> dict:
        return {
            "kind": "contract",
            "templateHash": self.template_hash.text,
            "arguments": {k: v.to_doc() for k, v in self.arguments},
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Contract":
        if not isinstance(doc, dict) or doc.get("kind") != "contract":
            raise InvariantViolation("not a contract document")
        if set(doc) != {"kind", "templateHash", "arguments"}:
            raise InvariantViolation("contract fields must be kind, templateHash, arguments")
        if not isinstance(doc["arguments"], dict):
            raise InvariantViolation("contract arguments must be a key-value map")
        return cls(
            template_hash=Hash.parse(doc["templateHash"]),
            arguments=tuple(
                (k, Value.from_doc(v)) for k, v in sorted(doc["arguments"].items())
            ),
        )

    @property
    def contract_hash(self) -> Hash:
        return hash_of_bytes(canonical_bytes(self.to_doc()))


@dataclass(frozen=True, eq=False)
class ProposalContract:
    """Like a contract, but each key carries a constraint instead of a value."""

    template_hash: Hash
    constraints: tuple[tuple[str, Constraint], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "constraints", tuple((k, c) for k, c in self.constraints)
        )
        _check_keys(self.constraints)

    def constraint_of(self, key: str) -> Constraint:
        for k, c in self.constraints:
            if k == key:
                return c
        raise UnknownKey(f"proposal declares no key {key!r}")

    @property
    def keys(self) -> frozenset[str]:
        return frozenset(k for k, _ in self.constraints)

    @property
    def complete(self) -> bool:
        return all(isinstance(c, Exact) for _, c in self.constraints)

    def to_contract(self) -> Contract:
        if not self.complete:
            open_keys = sorted(
                k for k, c in self.constraints if not isinstance(c, Exact)
            )
            raise InvariantViolation(
                f"proposal still has open constraints for {open_keys}"
            )
        return Contract(
            template_hash=self.template_hash,
            arguments=tuple((k, c.value) for k, c in self.constraints),
        )

    def _canonical_pairs(self) -> tuple[tuple[str, Constraint], ...]:
        return tuple(sorted(self.constraints, key=lambda kv: kv[0]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProposalContract):
            return NotImplemented
        return (
            self.template_hash == other.template_hash
            and self._canonical_pairs() == other._canonical_pairs()
        )

    def __hash__(self) -> int:
        return hash((self.template_hash, self._canonical_pairs()))

    def to_doc(self) -> dict:
        return {
            "kind": "proposal",
            "templateHash": self.template_hash.text,
            "constraints": {k: constraint_to_doc(c) for k, c in self.constraints},
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ProposalContract":
        if not isinstance(doc, dict) or doc.get("kind") != "proposal":
            raise InvariantViolation("not a proposal document")
        if set(doc) != {"kind", "templateHash", "constraints"}:
            raise InvariantViolation(
                "proposal fields must be kind, templateHash, constraints"
            )
        if not isinstance(doc["constraints"], dict):
            raise InvariantViolation("proposal constraints must be a key-value map")
        return cls(
            template_hash=Hash.parse(doc["templateHash"]),
            constraints=tuple(
                (k, constraint_from_doc(c))
                for k, c in sorted(doc["constraints"].items())
            ),
        )


ContractLike = Union[Contract, ProposalContract]


# --- validation ------------------------------------------------------------------

MISSING_ARGUMENT = "missing-argument"
EXTRA_ARGUMENT = "extra-argument"
TYPE_MISMATCH = "type-mismatch"
UNKNOWN_TYPE = "unknown-type"


@dataclass(frozen=True)
class Finding:
    kind: str
    key: str
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = field(default_factory=tuple)

    @property
    def valid(self) -> bool:
        return not self.findings

    def __iter__(self):
        return iter(self.findings)


def validate_contract(
    contract: Contract, template: Template, registry: TypeRegistry
) -> ValidationReport:
    """Key-set equality plus per-value predicate checks against the template."""
    if contract.template_hash != template.hash:
        raise TemplateMismatch(
            f"contract names {contract.template_hash.text}, "
            f"template is {template.hash.text}"
        )
    findings: list[Finding] = []
    declared = {p.key: p.type_name for p in template.parameters}
    bound = dict(contract.arguments)
    for key in sorted(declared.keys() - bound.keys()):
        findings.append(Finding(MISSING_ARGUMENT, key))
    for key in sorted(bound.keys() - declared.keys()):
        findings.append(Finding(EXTRA_ARGUMENT, key))
    for key in sorted(declared.keys() & bound.keys()):
        type_name = declared[key]
        param_type = registry.resolve(type_name)
        if param_type is None:
            findings.append(Finding(UNKNOWN_TYPE, key, type_name))
        elif not param_type.accepts(bound[key]):
            findings.append(Finding(TYPE_MISMATCH, key, type_name))
    return ValidationReport(tuple(findings))


# --- rendering --------------------------------------------------------------------

def render_contract(contract: Contract, template: Template) -> str:
    """Concatenate provisions with placeholders replaced by argument text."""
    bound = dict(contract.arguments)
    parts: list[str] = []
    for element in template.elements:
        if not isinstance(element, Provision):
            continue
        for tag, chunk in parse_provision(element.text):
            if tag == "lit":
                parts.append(chunk)
            else:
                value = bound.get(chunk)
                if value is None:
                    raise UnboundPlaceholder(f"no argument bound for {chunk!r}")
                parts.append(value.canonical_text)
    return "".join(parts)


def render_proposal(proposal: ProposalContract, template: Template) -> str:
    """Render a proposal with constraint descriptions in place of values."""
    bound = dict(proposal.constraints)
    parts: list[str] = []
    for element in template.elements:
        if not isinstance(element, Provision):
            continue
        for tag, chunk in parse_provision(element.text):
            if tag == "lit":
                parts.append(chunk)
            else:
                constraint = bound.get(chunk)
                if constraint is None:
                    raise UnboundPlaceholder(f"no constraint bound for {chunk!r}")
                if isinstance(constraint, Exact):
                    parts.append(constraint.value.canonical_text)
                else:
                    parts.append(f"[{chunk}: {describe_constraint(constraint)}]")
    return "".join(parts)


# --- references and refinement -------------------------------------------------------

def extract_references(contract: ContractLike) -> set[Hash]:
    """All hash links in a contract: the template plus reference arguments.

    Proposals contribute references pinned by exact constraints.
    """
    refs: set[Hash] = {contract.template_hash}
    if isinstance(contract, Contract):
        for _, value in contract.arguments:
            if value.kind == "reference":
                refs.add(value.payload)
    else:
        for _, constraint in contract.constraints:
            if isinstance(constraint, Exact) and constraint.value.kind == "reference":
                refs.add(constraint.value.payload)
    return refs


def refine_proposal(
    proposal: ProposalContract, assignments: Iterable[tuple[str, Value]]
) -> ContractLike:
    """Pin keys to values that satisfy their standing constraints.

    Never widens: a refined key's constraint becomes exact, and the pinned
    value matched the prior constraint. Returns a Contract when every key
    ends up exact, otherwise the narrower proposal.
    """
    assignments = list(assignments)
    keys = {k for k, _ in proposal.constraints}
    updated = dict(proposal.constraints)
    for key, value in assignments:
        if key not in keys:
            raise UnknownKey(f"proposal declares no key {key!r}")
        if not match_constraint(updated[key], value):
            raise ConstraintViolated(key, describe_constraint(updated[key]))
        updated[key] = Exact(value)
    refined = ProposalContract(
        template_hash=proposal.template_hash,
        constraints=tuple((k, updated[k]) for k, _ in proposal.constraints),
    )
    if refined.complete:
        return refined.to_contract()
    return refined


def validate_proposal_against_template(
    proposal: ProposalContract, template: Template
) -> ValidationReport:
    """Key-set equality between proposal constraints and template parameters."""
    if proposal.template_hash != template.hash:
        raise TemplateMismatch(
            f"proposal names {proposal.template_hash.text}, "
            f"template is {template.hash.text}"
        )
    findings: list[Finding] = []
    declared = template.parameter_keys
    bound = proposal.keys
    for key in sorted(declared - bound):
        findings.append(Finding(MISSING_ARGUMENT, key))
    for key in sorted(bound - declared):
        findings.append(Finding(EXTRA_ARGUMENT, key))
    return ValidationReport(tuple(findings))
