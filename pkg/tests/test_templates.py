"""Template invariants, placeholder parsing, and the type registry."""

from __future__ import annotations

import pytest

from contractnet.errors import InvariantViolation
from contractnet.templates import (
    Parameter,
    Provision,
    Template,
    TypeRegistry,
    parse_provision,
    placeholder_keys,
)
from contractnet.values import Value


def test_placeholder_parsing():
    assert parse_provision("pay ${price} now") == [
        ("lit", "pay "), ("key", "price"), ("lit", " now")
    ]
    assert parse_provision("costs $$5, not ${price}") == [
        ("lit", "costs $5, not "), ("key", "price")
    ]
    assert parse_provision("a lone $ sign") == [("lit", "a lone $ sign")]
    assert parse_provision("") == []
    assert placeholder_keys("${a} ${b} ${a}") == ["a", "b", "a"]


def test_unterminated_placeholder_rejected():
    with pytest.raises(InvariantViolation):
        parse_provision("pay ${price now")
    with pytest.raises(InvariantViolation):
        parse_provision("pay ${}")


def test_template_invariants():
    with pytest.raises(InvariantViolation, match="duplicate parameter"):
        Template(title="t", elements=(
            Parameter("a", "int"), Parameter("a", "text"),
        ))
    with pytest.raises(InvariantViolation, match="undeclared key"):
        Template(title="t", elements=(Provision("pay ${price}"),))
    with pytest.raises(InvariantViolation, match="malformed type name"):
        Template(title="t", elements=(Parameter("a", "enum()"),))


def test_template_hash_recomputed_not_trusted(steel_template):
    doc = steel_template.to_doc()
    rebuilt = Template.from_doc(doc)
    assert rebuilt.hash == steel_template.hash
    # Any content change moves the hash.
    changed = dict(doc)
    changed["title"] = doc["title"] + "!"
    assert Template.from_doc(changed).hash != steel_template.hash


def test_template_doc_roundtrip(steel_template):
    assert Template.from_doc(steel_template.to_doc()) == steel_template


def test_builtin_types():
    registry = TypeRegistry()
    cases = [
        ("text", Value.text("x"), Value.integer(1)),
        ("int", Value.integer(-5), Value.decimal("5")),
        ("positiveInt", Value.integer(5), Value.integer(0)),
        ("decimal", Value.decimal("1.5"), Value.text("1.5")),
        ("currencyAmount", Value.text("1234.50 EUR"), Value.text("1234.50")),
        ("timestamp", Value.timestamp("2026-01-01T00:00:00Z"), Value.text("now")),
        ("reference", Value.reference("sha-256:" + "0" * 64), Value.text("sha-256:00")),
    ]
    for name, good, bad in cases:
        param_type = registry.resolve(name)
        assert param_type is not None, name
        assert param_type.accepts(good), name
        assert not param_type.accepts(bad), name


def test_currency_amount_shapes():
    registry = TypeRegistry()
    currency = registry.resolve("currencyAmount")
    for good in ("0.50 SEK", "1234.50 EUR", "99 USD", "-12.5 NOK"):
        assert currency.accepts(Value.text(good)), good
    for bad in ("1234.50EUR", "1234.50 eur", "01.50 EUR", "1234.50 EURO", "EUR 5"):
        assert not currency.accepts(Value.text(bad)), bad


def test_enum_types_resolve_structurally():
    registry = TypeRegistry()
    enum = registry.resolve("enum(EUR,SEK)")
    assert enum.accepts(Value.token("EUR"))
    assert enum.accepts(Value.token("SEK"))
    assert not enum.accepts(Value.token("USD"))
    assert not enum.accepts(Value.text("EUR"))
    assert registry.resolve("enum(EUR,EUR)") is None  # duplicate members
    assert registry.resolve("mystery") is None


def test_registry_rejects_duplicate_registration():
    from contractnet.templates import ParamType

    registry = TypeRegistry()
    with pytest.raises(InvariantViolation):
        registry.register(ParamType("int", lambda v: True))
