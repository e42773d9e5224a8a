"""contractnet: peer-to-peer contract agents.

Legal templates with typed placeholders, contracts bound to them by hash,
a two-party negotiation protocol producing signed non-repudiable records,
and automatic tracing of hash references between documents.
"""

from .canon import Hash, canonical_bytes, canonicalize, hash_of, hash_of_bytes
from .contracts import (
    Any_,
    Contract,
    Exact,
    OneOf,
    ProposalContract,
    Range,
    Regex,
    extract_references,
    match_constraint,
    refine_proposal,
    render_contract,
    validate_contract,
)
from .identity import (
    Identity,
    PartyId,
    SignedEnvelope,
    TrustRegistry,
    generate_identity,
    sign,
    verify,
)
from .negotiation import (
    Acceptance,
    NegotiationEngine,
    Offer,
    Rejection,
    SessionState,
    verify_transcript,
)
from .templates import Parameter, Provision, Template, TypeRegistry
from .tracing import DocumentStore, Tracer
from .values import Value

__all__ = [
    "Acceptance",
    "Any_",
    "Contract",
    "DocumentStore",
    "Exact",
    "Hash",
    "Identity",
    "NegotiationEngine",
    "Offer",
    "OneOf",
    "Parameter",
    "PartyId",
    "ProposalContract",
    "Provision",
    "Range",
    "Regex",
    "Rejection",
    "SessionState",
    "SignedEnvelope",
    "Template",
    "Tracer",
    "TrustRegistry",
    "TypeRegistry",
    "Value",
    "canonical_bytes",
    "canonicalize",
    "extract_references",
    "generate_identity",
    "hash_of",
    "hash_of_bytes",
    "match_constraint",
    "refine_proposal",
    "render_contract",
    "sign",
    "validate_contract",
    "verify",
    "verify_transcript",
]

__version__ = "0.1.0"
