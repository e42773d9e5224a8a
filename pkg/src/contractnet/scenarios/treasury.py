"""Receivables-backed loan negotiation with automatic reference tracing.

Supplier agent A closes several customer contracts with B and feeds the
signed records to the treasury agent AT. AT later requests a loan from bank
M, citing the records as proof of incoming cash. M traces the references,
verifies both signatures on every record, sums the receivable amounts, and
counters with a non-zero interest rate, which AT accepts. The expected total
is computed by the fixture generator when the amounts are drawn, so the
bank's extraction path is checked against an independent accumulation.
"""

from __future__ import annotations

from decimal import Decimal

from ..agent import Agent, auto_accept
from ..contracts import Contract
from ..records import decode_contract_record, verify_contract_record
from ..tracing import PartiesOnly
from ..values import Value
from .fixtures import receivables_backed_loan, steel_rod_purchase
from .runner import ScenarioContext

name = "treasury"
description = "bank verifies receivable records cited by a loan request and counters with interest"

CUSTOMER_CONTRACTS = 4


def run(ctx: ScenarioContext) -> None:
    sale_template = steel_rod_purchase()
    loan_template = receivables_backed_loan(CUSTOMER_CONTRACTS)

    supplier = ctx.new_agent(
        "A", display_name="Aldersberg Steel", templates=(sale_template,)
    )
    customer = ctx.new_agent(
        "B",
        display_name="Borealis Motors",
        templates=(sale_template,),
        policies={sale_template.hash: auto_accept()},
    )
    treasury = ctx.new_agent(
        "AT", display_name="Aldersberg Treasury", templates=(loan_template,)
    )

    verified: dict = {"sum": None, "records": 0, "failures": 0}
    probe: dict = {}

    bank = ctx.new_agent("M", display_name="Meridian Bank")
    ctx.connect_all()

    # Supplier forwards every accepted sale record to the treasury agent.
    def feed_treasury(agent: Agent, accepted) -> None:
        record_bytes = agent.docstore.get(accepted.record_hash)
        agent.send_push(treasury.party_id, [record_bytes])

    supplier.config.policies[sale_template.hash] = auto_accept(on_accepted=feed_treasury)

    # Customer contracts: the fixture oracle accumulates the expected total
    # independently of the bank's extraction path.
    amounts = [
        f"{ctx.rng.randint(10_000, 90_000)}.{ctx.rng.randint(0, 99):02d}"
        for _ in range(CUSTOMER_CONTRACTS)
    ]
    expected_total = sum(Decimal(a) for a in amounts)

    def close_sales():
        for amount in amounts:
            contract = Contract(
                template_hash=sale_template.hash,
                arguments=(
                    ("quantity", Value.integer(ctx.rng.randint(100, 900))),
                    ("price", Value.text(f"{amount} EUR")),
                    ("buyer", Value.party(customer.party_id)),
                    ("seller", Value.party(supplier.party_id)),
                ),
            )
            supplier.make_offer(customer.party_id, [contract])

    ctx.step("A and B close customer contracts; records flow to AT", close_sales)

    record_hashes = [
        h
        for h in treasury.docstore.hashes()
        if b'"kind":"contract-record"' in treasury.docstore.get(h)
    ]

    def set_record_policies():
        for h in record_hashes:
            treasury.docstore.set_policy(h, PartiesOnly(frozenset({bank.party_id})))

    ctx.step("AT discloses the records to the bank only", set_record_policies)

    # Bank side: when the loan offer arrives it is parked pending; the bank's
    # scripted desk traces the references, verifies every record, sums the
    # receivables, then counters with a market interest rate.
    interest_rate = f"{ctx.rng.randint(15, 45) / 10:.1f}".rstrip("0").rstrip(".")

    def bank_desk(event) -> None:
        if event.type == "trace-complete" and event.data["context"]:
            session_id = event.data["context"]
            session = bank.engine.sessions.get(session_id)
            if session is None or session_id not in bank.pending_human:
                return
            offer = session.live_offer
            contract = offer.contracts[0]
            total = Decimal(0)
            count = 0
            for key, value in contract.arguments:
                if not key.startswith("receivable"):
                    continue
                data = bank.docstore.get(value.payload)
                if data is None:
                    verified["failures"] += 1
                    continue
                try:
                    record = decode_contract_record(data)
                    verify_contract_record(record, bank.registry)
                except Exception:
                    verified["failures"] += 1
                    continue
                amount_text = record.contract.value_of("price").payload
                total += Decimal(amount_text.split(" ")[0])
                count += 1
            verified["sum"] = total
            verified["records"] = count
            if verified["failures"] == 0 and count == CUSTOMER_CONTRACTS:
                countered = dict(contract.arguments)
                countered["interestPercent"] = Value.decimal(interest_rate)
                countered["lender"] = Value.party(bank.party_id)
                bank.decide(
                    session_id,
                    "counter",
                    contracts=[
                        Contract(
                            template_hash=contract.template_hash,
                            arguments=tuple(countered.items()),
                        )
                    ],
                )

    bank.subscribe(bank_desk)

    # Treasury accepts any counter at or below its interest ceiling.
    def affordable(offer) -> bool:
        rate = Decimal(offer.contracts[0].value_of("interestPercent").payload)
        return rate <= Decimal("5")

    treasury.config.policies[loan_template.hash] = auto_accept(predicate=affordable)

    principal = f"{ctx.rng.randint(50_000, 200_000)}.00 EUR"

    def request_loan():
        arguments = [
            ("principal", Value.text(principal)),
            ("interestPercent", Value.decimal("0")),
            ("lender", Value.party(bank.party_id)),
            ("borrower", Value.party(treasury.party_id)),
        ]
        for i, h in enumerate(record_hashes, start=1):
            arguments.append((f"receivable{i}", Value.reference(h)))
        loan = Contract(template_hash=loan_template.hash, arguments=tuple(arguments))
        probe["session"] = treasury.make_offer(bank.party_id, [loan])

    ctx.step("AT requests a zero-interest loan citing the records", request_loan)

    # -- assertions -----------------------------------------------------------------

    ctx.assert_that(
        "the treasury received one record per customer contract",
        len(record_hashes) == CUSTOMER_CONTRACTS,
        detail=f"records={len(record_hashes)}",
    )
    ctx.assert_that(
        "the bank resolved every cited receivable and verified both signatures",
        verified["records"] == CUSTOMER_CONTRACTS and verified["failures"] == 0,
        detail=f"verified={verified['records']} failures={verified['failures']}",
    )
    ctx.assert_that(
        "the bank's computed inflow equals the fixture oracle total",
        verified["sum"] == expected_total,
        detail=f"bank={verified['sum']} fixture={expected_total}",
    )
    session = bank.engine.sessions.get(probe["session"])
    ctx.assert_that(
        "the loan session ends accepted at the countered interest rate",
        session is not None
        and session.state.value == "accepted"
        and session.live_offer.contracts[0].value_of("interestPercent").payload
        == interest_rate,
        detail=f"state={session.state.value if session else None}",
    )
    ctx.assert_that(
        "the counter-offer came from the bank with offer index 2",
        session is not None
        and session.live_offer.offer_index == 2
        and session.live_offer.sender == bank.party_id,
    )
