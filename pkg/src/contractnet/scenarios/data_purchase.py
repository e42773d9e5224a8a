"""Confidential data sold against a signed acceptance.

Seller a runs a contract agent A and a file store agent AS. Buyer b's agent
B negotiates a dataset-sale contract with A; the dataset itself is referenced
by hash. A redirects lookups of that hash to AS, and AS serves the bytes only
to a requester that presents an acceptance naming it as the eligible buyer,
signed by both sides. An outsider gets a denial with a hint naming the
template to negotiate.
"""

from __future__ import annotations

from ..agent import auto_accept
from ..canon import hash_of_bytes
from ..tracing import GatedByAcceptance, Public, Redirect
from ..values import Value
from ..contracts import Contract
from .fixtures import dataset_sale
from .runner import ScenarioContext

name = "data-purchase"
description = "dataset delivered only against the signed acceptance naming the buyer"


def run(ctx: ScenarioContext) -> None:
    template = dataset_sale()

    seller = ctx.new_agent(
        "A",
        display_name="Aldersberg Analytics",
        templates=(template,),
        push_templates=frozenset({template.hash}),
    )
    store_node = ctx.new_agent("AS", display_name="Aldersberg File Store")
    buyer = ctx.new_agent(
        "B",
        display_name="Borealis Motors",
        policies={template.hash: auto_accept()},
    )
    outsider = ctx.new_agent("C", display_name="Carousel Trading")
    ctx.connect_all()

    dataset = bytes(ctx.rng.randrange(256) for _ in range(256))
    datum = hash_of_bytes(dataset)
    price = f"{ctx.rng.randint(500, 4000)}.{ctx.rng.randint(0, 99):02d} EUR"

    # The seller's agent redirects dataset lookups to the file store, which
    # gates them on a signed acceptance naming the requester as the buyer.
    seller.docstore.put(dataset, policy=Redirect(locator=ctx.endpoint_of("AS").text))
    store_node.docstore.put(
        dataset,
        policy=GatedByAcceptance(
            template_hash=template.hash,
            receiver_key="buyer",
            datum_key="datum",
            grantor=seller.party_id,
            hint="present the signed acceptance of the dataset sale naming you as buyer",
        ),
    )
    store_node.docstore.put(
        seller.docstore.get(template.hash), policy=Public()
    )

    contract = Contract(
        template_hash=template.hash,
        arguments=(
            ("datum", Value.reference(datum)),
            ("price", Value.text(price)),
            ("buyer", Value.party(buyer.party_id)),
            ("seller", Value.party(seller.party_id)),
        ),
    )

    probe = {}

    def offer_and_settle():
        probe["before_accept"] = datum in buyer.docstore
        probe["session"] = seller.make_offer(buyer.party_id, [contract])

    ctx.step("A offers the dataset-sale contract to B", offer_and_settle)

    session_id = probe["session"]
    ctx.step("clock advances while the trace completes", lambda: ctx.advance_ms(200))

    def outsider_probe():
        outsider.trace_hashes([datum], ctx.endpoint_of("AS").text)

    ctx.step("outsider C asks the file store for the dataset", outsider_probe)

    # -- assertions ---------------------------------------------------------------

    seller_session = seller.engine.sessions.get(session_id)
    buyer_session = buyer.engine.sessions.get(session_id)
    ctx.assert_that(
        "the dataset sale is accepted on both sides",
        seller_session is not None
        and buyer_session is not None
        and seller_session.state.value == "accepted"
        and buyer_session.state.value == "accepted",
    )
    ctx.assert_that(
        "B holds the dataset after acceptance, not before",
        (datum in buyer.docstore) and not probe["before_accept"],
    )
    ctx.assert_that(
        "B fetched the dataset via the redirect to the file store",
        buyer.trace_outcomes.get(datum) == "fetched",
        detail=f"outcome={buyer.trace_outcomes.get(datum)}",
    )

    # The file store's own log proves the order: the request it answered with
    # data carried the acceptance, and every earlier request was denied.
    store_served = [
        e for e in store_node.events if e.type == "trace-answered" and e.data["served"]
    ]
    denials_first = [
        e
        for e in store_node.events
        if e.type == "trace-answered" and not e.data["served"]
    ]
    ctx.assert_that(
        "the file store denied evidence-free requests and served exactly one grant",
        len(store_served) == 1 and len(denials_first) >= 1,
        detail=f"served={len(store_served)} denied={len(denials_first)}",
    )
    first_denied = buyer.events and any(
        e.type == "trace-denied" and e.data["hash"] == datum.text
        for e in buyer.events
    )
    ctx.assert_that(
        "B's first attempt was denied with a usable permission hint",
        bool(first_denied),
    )
    ctx.assert_that(
        "outsider C presenting no acceptance is denied",
        outsider.trace_outcomes.get(datum) == "denied"
        and datum not in outsider.docstore,
    )
    expected_kinds = [("out", "offer"), ("in", "acceptance")]
    from .runner import negotiation_kinds

    ctx.assert_sequence(
        "A's negotiation log is exactly offer then acceptance",
        negotiation_kinds(seller),
        expected_kinds,
    )
