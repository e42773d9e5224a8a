"""Contract templates used by the scripted scenarios and tests.

The Steel Rod Purchase template is the canonical worked example across the
docs; the others back one scenario each. All fixture values are synthetic
and derived from the scenario seed at run time.
"""

from __future__ import annotations

from functools import lru_cache

from ..templates import Parameter, Provision, Template


@lru_cache(maxsize=1)
def steel_rod_purchase() -> Template:
    return Template(
        title="Steel Rod Purchase",
        elements=(
            Provision(
                "Seller ${seller} agrees to manufacture and deliver "
                "${quantity} steel rods to buyer ${buyer}."
            ),
            Provision(" Buyer ${buyer} agrees to pay ${price} upon delivery."),
            Parameter("quantity", "positiveInt"),
            Parameter("price", "currencyAmount"),
            Parameter("buyer", "party"),
            Parameter("seller", "party"),
        ),
    )


@lru_cache(maxsize=1)
def dataset_sale() -> Template:
    return Template(
        title="Dataset Sale With Electronic Delivery",
        elements=(
            Provision(
                "Seller ${seller} grants buyer ${buyer} access to the dataset "
                "identified by ${datum}."
            ),
            Provision(
                " Buyer ${buyer} agrees to pay ${price} and to keep the "
                "dataset confidential."
            ),
            Parameter("datum", "reference"),
            Parameter("price", "currencyAmount"),
            Parameter("buyer", "party"),
            Parameter("seller", "party"),
        ),
    )


@lru_cache(maxsize=1)
def component_order() -> Template:
    return Template(
        title="Component Manufacturing Order",
        elements=(
            Provision(
                "Buyer ${buyer} orders ${quantity} units of component "
                "${component} from seller ${seller}, to be manufactured no "
                "later than ${deadline}."
            ),
            Provision(" Buyer ${buyer} will pay ${price} if the order is fulfilled on time."),
            Parameter("component", "text"),
            Parameter("quantity", "positiveInt"),
            Parameter("price", "currencyAmount"),
            Parameter("deadline", "timestamp"),
            Parameter("buyer", "party"),
            Parameter("seller", "party"),
        ),
    )


@lru_cache(maxsize=1)
def delivery_and_payment() -> Template:
    return Template(
        title="Delivery And Payment",
        elements=(
            Provision(
                "This contract concerns the order agreed under ${order}. "
                "Seller ${seller} has manufactured the ordered goods; buyer "
                "${buyer} will pay ${amount} upon delivery."
            ),
            Parameter("order", "reference"),
            Parameter("amount", "currencyAmount"),
            Parameter("buyer", "party"),
            Parameter("seller", "party"),
        ),
    )


@lru_cache(maxsize=8)
def receivables_backed_loan(receivables: int) -> Template:
    """Loan request citing N accepted customer contracts as collateral."""
    elements: list = [
        Provision(
            "Lender ${lender} grants borrower ${borrower} a loan of "
            "${principal} at ${interestPercent} percent interest, secured by "
            "the receivables listed below."
        ),
        Parameter("principal", "currencyAmount"),
        Parameter("interestPercent", "decimal"),
        Parameter("lender", "party"),
        Parameter("borrower", "party"),
    ]
    for i in range(1, receivables + 1):
        elements.append(Provision(f" Receivable {i}: ${{receivable{i}}}."))
        elements.append(Parameter(f"receivable{i}", "reference"))
    return Template(title=f"Receivables-Backed Loan ({receivables})", elements=tuple(elements))


@lru_cache(maxsize=1)
def device_sale() -> Template:
    return Template(
        title="Device Sale And Ownership Transfer",
        elements=(
            Provision(
                "Seller ${seller} transfers ownership of device ${device} to "
                "buyer ${buyer} for ${price}."
            ),
            Provision(
                " The device currently operates under certificate "
                "${deviceCert}; key management responsibility transfers from "
                "the authority certified by ${sellerKeyCert} to the authority "
                "certified by ${buyerKeyCert}."
            ),
            Parameter("device", "text"),
            Parameter("price", "currencyAmount"),
            Parameter("buyer", "party"),
            Parameter("seller", "party"),
            Parameter("deviceCert", "reference"),
            Parameter("sellerKeyCert", "reference"),
            Parameter("buyerKeyCert", "reference"),
        ),
    )
