"""State transition records: follow-up contracts proving obligation triggers.

When a trigger named by an accepted contract occurs (a delivery, an
inspection, a payment), the observing party negotiates a small follow-up
contract that references the evidence, the previous transition record, and
the original contract. The records form a hash chain walkable by anyone
holding the documents, so the current obligation state is provable without
trusting either party's database.
"""

from __future__ import annotations

from functools import lru_cache

from .canon import Hash
from .contracts import Contract
from .errors import ChainBroken, InvariantViolation
from .files import decode_document
from .templates import Parameter, Provision, Template
from .tracing import DocumentStore
from .values import Value


@lru_cache(maxsize=1)
def initial_transition_template() -> Template:
    return Template(
        title="State Transition Record",
        elements=(
            Provision(
                "This record documents a state transition of the contract "
                "${original}, evidenced by document ${evidence}."
            ),
            Parameter("original", "reference"),
            Parameter("evidence", "reference"),
        ),
    )


@lru_cache(maxsize=1)
def followup_transition_template() -> Template:
    return Template(
        title="State Transition Record (follow-up)",
        elements=(
            Provision(
                "This record documents a state transition of the contract "
                "${original}, evidenced by document ${evidence}."
            ),
            Provision(" It follows the prior transition record ${prevStc}."),
            Parameter("original", "reference"),
            Parameter("evidence", "reference"),
            Parameter("prevStc", "reference"),
        ),
    )


def transition_template_hashes() -> frozenset[Hash]:
    return frozenset(
        {initial_transition_template().hash, followup_transition_template().hash}
    )


def is_transition_contract(contract: Contract) -> bool:
    return contract.template_hash in transition_template_hashes()


def build_transition_contract(
    original: Hash, evidence: Hash, prev: Hash | None = None
) -> Contract:
    if prev is None:
        template = initial_transition_template()
        arguments = (
            ("original", Value.reference(original)),
            ("evidence", Value.reference(evidence)),
        )
    else:
        template = followup_transition_template()
        arguments = (
            ("original", Value.reference(original)),
            ("evidence", Value.reference(evidence)),
            ("prevStc", Value.reference(prev)),
        )
    return Contract(template_hash=template.hash, arguments=arguments)


def transition_fields(contract: Contract) -> tuple[Hash, Hash, Hash | None]:
    """(original, evidence, prev) of a transition contract."""
    if not is_transition_contract(contract):
        raise InvariantViolation("not a state transition contract")
    original = contract.value_of("original").payload
    evidence = contract.value_of("evidence").payload
    prev = None
    if contract.template_hash == followup_transition_template().hash:
        prev = contract.value_of("prevStc").payload
    return original, evidence, prev


def verify_transition_chain(store: DocumentStore, head: Hash) -> list[Hash]:
    """Walk a transition chain from its newest record back to the original.

    Every link must resolve in the store: each record, its evidence, each
    predecessor, and finally the original contract; all records must agree
    on the original. Returns the chain, newest first. Raises ChainBroken.
    """
    chain: list[Hash] = []
    seen: set[Hash] = set()
    original: Hash | None = None
    current: Hash | None = head
    while current is not None:
        if current in seen:
            raise ChainBroken(f"transition chain cycles at {current.text}")
        seen.add(current)
        data = store.get(current)
        if data is None:
            raise ChainBroken(f"transition record {current.text} missing from store")
        try:
            contract = decode_document(data)
        except InvariantViolation as exc:
            raise ChainBroken(f"record {current.text} is not a document: {exc}") from exc
        if not isinstance(contract, Contract) or not is_transition_contract(contract):
            raise ChainBroken(f"{current.text} is not a transition record")
        this_original, evidence, prev = transition_fields(contract)
        if original is None:
            original = this_original
        elif this_original != original:
            raise ChainBroken(
                f"record {current.text} names original {this_original.text}, "
                f"chain started from {original.text}"
            )
        if evidence not in store:
            raise ChainBroken(f"evidence {evidence.text} missing from store")
        chain.append(current)
        current = prev
    if original is None or original not in store:
        raise ChainBroken(
            f"original contract {original.text if original else '?'} missing from store"
        )
    try:
        original_doc = decode_document(store.get(original))
    except InvariantViolation as exc:
        raise ChainBroken(f"original {original.text} is not a document: {exc}") from exc
    if not isinstance(original_doc, Contract):
        raise ChainBroken(f"original {original.text} is not a contract")
    return chain
