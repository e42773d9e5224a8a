"""Order-driven manufacturing with an immutable link to the preliminary deal.

Customer agent B offers a component order to supplier agent A. A's workflow
system (a scripted subscriber) is notified, instructs A to accept, and asks
the plant to manufacture. When the plant reports completion, the workflow has
A offer a delivery-and-payment contract back to B that references the
acceptance of the preliminary order by hash, and B accepts it.
"""

from __future__ import annotations

from datetime import timedelta

from ..agent import Agent, auto_accept, handler
from ..contracts import Contract
from ..values import Value
from .fixtures import component_order, delivery_and_payment
from .runner import ScenarioContext

name = "manufacturing"
description = "follow-up delivery contract references the preliminary acceptance immutably"


class Plant:
    """Stand-in manufacturing system; receives requests, reports completion."""

    def __init__(self):
        self.requests: list[dict] = []
        self.reports: list[dict] = []

    def request(self, order: dict) -> None:
        self.requests.append(order)

    def complete_next(self) -> dict:
        order = self.requests[len(self.reports)]
        report = {"order": order, "status": "manufactured"}
        self.reports.append(report)
        return report


class Workflow:
    """Scripted workflow integration: notified of every message A applies,
    instructs the accept, and files the follow-up offer once the plant is done."""

    def __init__(self, agent: Agent, plant: Plant, customer_party, templates):
        self.agent = agent
        self.plant = plant
        self.customer = customer_party
        self.order_template, self.delivery_template = templates
        self.notifications: list[str] = []
        self.acceptance_hash = None
        self.order_contract = None
        self.followup_session = None
        agent.subscribe(self.on_event)

    def on_event(self, event) -> None:
        self.notifications.append(event.type)
        if event.type == "pending":
            session = self.agent.engine.sessions[event.data["sessionId"]]
            if session.live_offer.contracts[0].template_hash == self.order_template.hash:
                self.agent.decide(session.session_id, "accept")
        elif event.type == "accepted":
            session = self.agent.engine.sessions[event.data["sessionId"]]
            contract = session.live_offer.contracts[0]
            if contract.template_hash == self.order_template.hash:
                self.acceptance_hash = session.log[-1].envelope_hash
                self.order_contract = contract
                self.plant.request(
                    {
                        "component": contract.value_of("component").payload,
                        "quantity": contract.value_of("quantity").payload,
                    }
                )

    def on_manufactured(self, report: dict) -> None:
        amount = self.order_contract.value_of("price").payload
        contract = Contract(
            template_hash=self.delivery_template.hash,
            arguments=(
                ("order", Value.reference(self.acceptance_hash)),
                ("amount", Value.text(amount)),
                ("buyer", Value.party(self.customer)),
                ("seller", Value.party(self.agent.party_id)),
            ),
        )
        self.followup_session = self.agent.make_offer(self.customer, [contract])


def run(ctx: ScenarioContext) -> None:
    order_template = component_order()
    delivery_template = delivery_and_payment()

    supplier = ctx.new_agent(
        "A",
        display_name="Aldersberg Steel",
        templates=(order_template, delivery_template),
        policies={order_template.hash: handler(lambda agent, rec: None)},
    )
    customer = ctx.new_agent(
        "B",
        display_name="Borealis Motors",
        templates=(order_template, delivery_template),
        policies={delivery_template.hash: auto_accept()},
    )
    ctx.connect_all()

    plant = Plant()
    workflow = Workflow(
        supplier, plant, customer.party_id, (order_template, delivery_template)
    )

    price = f"{ctx.rng.randint(5_000, 60_000)}.{ctx.rng.randint(0, 99):02d} EUR"
    order = Contract(
        template_hash=order_template.hash,
        arguments=(
            ("component", Value.text(f"axle-{ctx.rng.randint(100, 999)}")),
            ("quantity", Value.integer(ctx.rng.randint(10, 500))),
            ("price", Value.text(price)),
            (
                "deadline",
                Value.timestamp(ctx.clock.now() + timedelta(days=30)),
            ),
            ("buyer", Value.party(customer.party_id)),
            ("seller", Value.party(supplier.party_id)),
        ),
    )

    probe: dict = {}

    def place_order():
        probe["order_session"] = customer.make_offer(supplier.party_id, [order])

    ctx.step("B offers the component order; A's workflow accepts it", place_order)

    def manufacture_and_invoice():
        report = plant.complete_next()
        workflow.on_manufactured(report)

    ctx.step(
        "the plant reports completion; A offers the delivery contract",
        manufacture_and_invoice,
    )

    # -- assertions -------------------------------------------------------------------

    order_session = supplier.engine.sessions.get(probe["order_session"])
    ctx.assert_that(
        "the preliminary order is accepted",
        order_session is not None and order_session.state.value == "accepted",
    )
    ctx.assert_that(
        "the workflow was notified and instructed the acceptance",
        "pending" in workflow.notifications and workflow.acceptance_hash is not None,
    )
    ctx.assert_that(
        "the plant received exactly one manufacturing request",
        len(plant.requests) == 1 and len(plant.reports) == 1,
    )
    followup = (
        supplier.engine.sessions.get(workflow.followup_session)
        if workflow.followup_session
        else None
    )
    ctx.assert_that(
        "the delivery contract is accepted by B",
        followup is not None and followup.state.value == "accepted",
    )
    ctx.assert_that(
        "the delivery contract references the preliminary acceptance by hash",
        followup is not None
        and followup.live_offer.contracts[0].value_of("order").payload
        == workflow.acceptance_hash,
    )
    ctx.assert_that(
        "B resolved the referenced acceptance locally without a network fetch",
        followup is not None
        and workflow.acceptance_hash in customer.docstore
        and customer.trace_outcomes.get(workflow.acceptance_hash) is None,
    )
