"""Hash-reference tracing: content-addressed storage and lookup of linked documents.

Contracts point at other documents by hash. A receiving agent scans for
references, filters out hashes it already holds, and asks the sender (or a
redirect target) for the rest. The answering side consults a per-hash
disclosure policy and responds with the data, a redirect to another source,
or a denial that says how permission could be secured.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence, Union

from .canon import (
    HEX128_RE,
    Hash,
    b64decode,
    b64encode,
    canonical_bytes,
    hash_of_bytes,
    parse_json_tree,
)
from .contracts import ContractLike, extract_references
from .errors import InvariantViolation
from .identity import Identity, PartyId, SignedEnvelope, TrustRegistry, sign, verify
from .negotiation import Acceptance, Offer, parse_message

TRACE_REQUEST_KIND = "trace-request"
TRACE_ANSWER_KIND = "trace-answer"
TRACE_PUSH_KIND = "trace-push"

DEFAULT_REDIRECT_DEPTH = 4


# --- disclosure policies ------------------------------------------------------

@dataclass(frozen=True)
class Public:
    pass


@dataclass(frozen=True)
class PartiesOnly:
    parties: frozenset[PartyId]
    hint: str = "not permitted"
    grant_template: Hash | None = None

    def __post_init__(self):
        object.__setattr__(self, "parties", frozenset(self.parties))


@dataclass(frozen=True)
class GatedByAcceptance:
    """Grants access to whoever presents a signed acceptance of a matching offer.

    The presented evidence must contain an offer/acceptance envelope pair
    where the offer is signed by ``grantor``, the acceptance binds that offer
    and is signed by the requester, the offered contract uses
    ``template_hash``, names the requester under ``receiver_key``, and (when
    ``datum_key`` is set) references the requested hash under ``datum_key``.
    """

    template_hash: Hash
    receiver_key: str
    grantor: PartyId
    datum_key: str | None = None
    hint: str = "present a signed acceptance naming you as receiver"

    def evaluate(
        self,
        requested: Hash,
        requester: PartyId,
        evidence: Sequence[SignedEnvelope],
        registry: TrustRegistry,
    ) -> bool:
        offers: dict[Hash, Offer] = {}
        for envelope in evidence:
            try:
                message = parse_message(envelope)
            except InvariantViolation:
                continue
            if isinstance(message, Offer):
                try:
                    verify(envelope, registry, message.deadline)
                except Exception:
                    continue
                offers[envelope.envelope_hash] = message
        for envelope in evidence:
            try:
                message = parse_message(envelope)
            except InvariantViolation:
                continue
            if not isinstance(message, Acceptance):
                continue
            offer = offers.get(message.offer_hash)
            if offer is None:
                continue
            try:
                verify(envelope, registry, offer.deadline)
            except Exception:
                continue
            if message.signer != requester or offer.sender != self.grantor:
                continue
            if offer.receiver != requester:
                continue
            for contract in offer.contracts:
                if contract.template_hash != self.template_hash:
                    continue
                if not hasattr(contract, "value_of"):
                    continue
                try:
                    named = contract.value_of(self.receiver_key)
                except Exception:
                    continue
                if named.kind != "party" or named.payload != requester:
                    continue
                if self.datum_key is not None:
                    try:
                        datum = contract.value_of(self.datum_key)
                    except Exception:
                        continue
                    if datum.kind != "reference" or datum.payload != requested:
                        continue
                return True
        return False


@dataclass(frozen=True)
class GatedPredicate:
    """In-memory gate over (requested, requester, evidence); not persistable."""

    predicate: Callable[[Hash, PartyId, Sequence[SignedEnvelope]], bool]
    hint: str = "not permitted"


@dataclass(frozen=True)
class Redirect:
    locator: str
    hint: str = ""


Policy = Union[Public, PartiesOnly, GatedByAcceptance, GatedPredicate, Redirect]


def policy_to_doc(policy: Policy) -> dict:
    if isinstance(policy, Public):
        return {"policy": "public"}
    if isinstance(policy, PartiesOnly):
        doc = {
            "policy": "parties-only",
            "parties": sorted(p.text for p in policy.parties),
            "hint": policy.hint,
        }
        if policy.grant_template is not None:
            doc["grantTemplate"] = policy.grant_template.text
        return doc
    if isinstance(policy, GatedByAcceptance):
        doc = {
            "policy": "gated-by-acceptance",
            "template": policy.template_hash.text,
            "receiverKey": policy.receiver_key,
            "grantor": policy.grantor.text,
            "hint": policy.hint,
        }
        if policy.datum_key is not None:
            doc["datumKey"] = policy.datum_key
        return doc
    if isinstance(policy, Redirect):
        return {"policy": "redirect", "locator": policy.locator, "hint": policy.hint}
    raise InvariantViolation(f"policy {policy!r} cannot be serialized")


def policy_from_doc(doc: dict) -> Policy:
    kind = doc.get("policy")
    if kind == "public":
        return Public()
    if kind == "parties-only":
        grant = doc.get("grantTemplate")
        return PartiesOnly(
            parties=frozenset(PartyId.parse(p) for p in doc["parties"]),
            hint=doc.get("hint", "not permitted"),
            grant_template=Hash.parse(grant) if grant else None,
        )
    if kind == "gated-by-acceptance":
        return GatedByAcceptance(
            template_hash=Hash.parse(doc["template"]),
            receiver_key=doc["receiverKey"],
            grantor=PartyId.parse(doc["grantor"]),
            datum_key=doc.get("datumKey"),
            hint=doc.get("hint", ""),
        )
    if kind == "redirect":
        return Redirect(locator=doc["locator"], hint=doc.get("hint", ""))
    raise InvariantViolation(f"unknown policy kind {kind!r}")


# --- document store -------------------------------------------------------------

class DocumentStore:
    """Content-addressed bytes plus a per-hash disclosure policy table.

    Undisclosed by default: a hash with no policy entry is never served.
    """

    def __init__(self):
        self._docs: dict[Hash, bytes] = {}
        self._policies: dict[Hash, Policy] = {}

    def put(self, data: bytes, policy: Policy | None = None) -> Hash:
        key = hash_of_bytes(data)
        self._docs[key] = data
        if policy is not None:
            self._policies[key] = policy
        return key

    def get(self, key: Hash) -> bytes | None:
        return self._docs.get(key)

    def __contains__(self, key: Hash) -> bool:
        return key in self._docs

    def __len__(self) -> int:
        return len(self._docs)

    def hashes(self) -> list[Hash]:
        return sorted(self._docs, key=lambda h: h.text)

    def set_policy(self, key: Hash, policy: Policy) -> None:
        self._policies[key] = policy

    def policy_for(self, key: Hash) -> Policy | None:
        return self._policies.get(key)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for key, data in self._docs.items():
            (directory / key.digest.hex()).write_bytes(data)
        policies = {
            key.text: policy_to_doc(policy)
            for key, policy in self._policies.items()
            if not isinstance(policy, GatedPredicate)
        }
        (directory / "policies.json").write_bytes(
            canonical_bytes({"kind": "policy-table", "policies": policies})
        )

    @classmethod
    def load(cls, directory: str | Path) -> "DocumentStore":
        directory = Path(directory)
        store = cls()
        for entry in sorted(directory.iterdir()):
            if entry.name == "policies.json" or not entry.is_file():
                continue
            data = entry.read_bytes()
            key = hash_of_bytes(data)
            if key.digest.hex() != entry.name:
                raise InvariantViolation(
                    f"store file {entry.name} does not hash to its name"
                )
            store._docs[key] = data
        policy_path = directory / "policies.json"
        if policy_path.exists():
            table = parse_json_tree(policy_path.read_bytes())
            for key_text, doc in table.get("policies", {}).items():
                store._policies[Hash.parse(key_text)] = policy_from_doc(doc)
        return store


# --- wire messages ----------------------------------------------------------------

@dataclass(frozen=True)
class TraceRequest:
    request_id: str
    requester: PartyId
    hashes: tuple[Hash, ...]
    evidence: tuple[SignedEnvelope, ...] = ()

    def __post_init__(self):
        if not HEX128_RE.match(self.request_id):
            raise InvariantViolation(f"malformed request id {self.request_id!r}")
        object.__setattr__(self, "hashes", tuple(self.hashes))
        object.__setattr__(self, "evidence", tuple(self.evidence))
        if not self.hashes:
            raise InvariantViolation("trace request lists at least one hash")
        if len(set(self.hashes)) != len(self.hashes):
            raise InvariantViolation("trace request hashes must be distinct")

    def to_doc(self) -> dict:
        return {
            "kind": "trace-request",
            "requestId": self.request_id,
            "requester": self.requester.text,
            "hashes": [h.text for h in self.hashes],
            "evidence": [e.to_doc() for e in self.evidence],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "TraceRequest":
        if not isinstance(doc, dict) or doc.get("kind") != "trace-request":
            raise InvariantViolation("not a trace request")
        if set(doc) != {"kind", "requestId", "requester", "hashes", "evidence"}:
            raise InvariantViolation("malformed trace request fields")
        return cls(
            request_id=doc["requestId"],
            requester=PartyId.parse(doc["requester"]),
            hashes=tuple(Hash.parse(h) for h in doc["hashes"]),
            evidence=tuple(SignedEnvelope.from_doc(e) for e in doc["evidence"]),
        )


@dataclass(frozen=True)
class DataAnswer:
    data: bytes


@dataclass(frozen=True)
class RedirectAnswer:
    locator: str
    hint: str = ""


@dataclass(frozen=True)
class DeniedAnswer:
    permission_hint: str
    grant_template: Hash | None = None


Answer = Union[DataAnswer, RedirectAnswer, DeniedAnswer]


def _answer_to_doc(answer: Answer) -> dict:
    if isinstance(answer, DataAnswer):
        return {"result": "data", "data": b64encode(answer.data)}
    if isinstance(answer, RedirectAnswer):
        return {"result": "redirect", "locator": answer.locator, "hint": answer.hint}
    if isinstance(answer, DeniedAnswer):
        doc = {"result": "denied", "permissionHint": answer.permission_hint}
        if answer.grant_template is not None:
            doc["grantTemplate"] = answer.grant_template.text
        return doc
    raise InvariantViolation(f"unknown answer {answer!r}")


def _answer_from_doc(doc: dict) -> Answer:
    result = doc.get("result")
    if result == "data":
        return DataAnswer(b64decode(doc["data"]))
    if result == "redirect":
        return RedirectAnswer(doc["locator"], doc.get("hint", ""))
    if result == "denied":
        grant = doc.get("grantTemplate")
        return DeniedAnswer(
            doc["permissionHint"], Hash.parse(grant) if grant else None
        )
    raise InvariantViolation(f"unknown answer result {result!r}")


@dataclass(frozen=True)
class TraceAnswerSet:
    request_id: str
    answers: Mapping[Hash, Answer]

    def to_doc(self) -> dict:
        return {
            "kind": "trace-answer",
            "requestId": self.request_id,
            "answers": {
                h.text: _answer_to_doc(a) for h, a in self.answers.items()
            },
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "TraceAnswerSet":
        if not isinstance(doc, dict) or doc.get("kind") != "trace-answer":
            raise InvariantViolation("not a trace answer")
        return cls(
            request_id=doc["requestId"],
            answers={
                Hash.parse(h): _answer_from_doc(a)
                for h, a in doc["answers"].items()
            },
        )


def build_trace_request(
    identity: Identity,
    request_id: str,
    hashes: Sequence[Hash],
    evidence: Sequence[SignedEnvelope] = (),
) -> SignedEnvelope:
    request = TraceRequest(
        request_id=request_id,
        requester=identity.party_id,
        hashes=tuple(hashes),
        evidence=tuple(evidence),
    )
    return sign(identity, TRACE_REQUEST_KIND, canonical_bytes(request.to_doc()))


def build_trace_answer(
    identity: Identity, request_id: str, answers: Mapping[Hash, Answer]
) -> SignedEnvelope:
    answer_set = TraceAnswerSet(request_id=request_id, answers=dict(answers))
    return sign(identity, TRACE_ANSWER_KIND, canonical_bytes(answer_set.to_doc()))


def build_trace_push(identity: Identity, documents: Sequence[bytes]) -> SignedEnvelope:
    doc = {
        "kind": "trace-push",
        "documents": [b64encode(d) for d in documents],
    }
    return sign(identity, TRACE_PUSH_KIND, canonical_bytes(doc))


def parse_trace_push(envelope: SignedEnvelope) -> list[bytes]:
    if envelope.payload_kind != TRACE_PUSH_KIND:
        raise InvariantViolation("not a trace push")
    doc = parse_json_tree(envelope.payload)
    return [b64decode(d) for d in doc.get("documents", [])]


# --- answering side ------------------------------------------------------------------

def evaluate_policy(
    policy: Policy | None,
    requested: Hash,
    requester: PartyId,
    evidence: Sequence[SignedEnvelope],
    registry: TrustRegistry,
) -> bool:
    """True when the policy discloses the document to this requester."""
    if policy is None:
        return False
    if isinstance(policy, Public):
        return True
    if isinstance(policy, PartiesOnly):
        return requester in policy.parties
    if isinstance(policy, GatedByAcceptance):
        return policy.evaluate(requested, requester, evidence, registry)
    if isinstance(policy, GatedPredicate):
        return bool(policy.predicate(requested, requester, evidence))
    if isinstance(policy, Redirect):
        return False
    raise InvariantViolation(f"unknown policy {policy!r}")


def _denial_for(policy: Policy | None) -> DeniedAnswer:
    if policy is None:
        return DeniedAnswer("unknown document")
    if isinstance(policy, (PartiesOnly, GatedByAcceptance, GatedPredicate)):
        grant = getattr(policy, "grant_template", None)
        return DeniedAnswer(policy.hint, grant)
    return DeniedAnswer("not permitted")


def handle_trace_request(
    envelope: SignedEnvelope,
    store: DocumentStore,
    registry: TrustRegistry,
    now: datetime,
) -> TraceAnswerSet:
    """Answer each requested hash with data, a redirect, or a denial."""
    verify(envelope, registry, now)
    request = TraceRequest.from_doc(parse_json_tree(envelope.payload))
    if request.requester != envelope.signer:
        raise InvariantViolation("trace requester differs from envelope signer")
    answers: dict[Hash, Answer] = {}
    for requested in request.hashes:
        policy = store.policy_for(requested)
        if isinstance(policy, Redirect):
            answers[requested] = RedirectAnswer(policy.locator, policy.hint)
            continue
        data = store.get(requested)
        if data is not None and evaluate_policy(
            policy, requested, request.requester, request.evidence, registry
        ):
            answers[requested] = DataAnswer(data)
        else:
            answers[requested] = _denial_for(policy)
    return TraceAnswerSet(request_id=request.request_id, answers=answers)


# --- requesting side ----------------------------------------------------------------

class TraceClient(Protocol):
    """Issues one batched trace request to a target and returns its answers.

    ``target`` is either a party id text (the contract sender) or a redirect
    locator. Implementations may raise; the tracer records the failure per
    hash and keeps going.
    """

    def request(
        self,
        target: str,
        hashes: Sequence[Hash],
        evidence: Sequence[SignedEnvelope],
    ) -> Mapping[Hash, Answer]:
        ...


@dataclass
class TraceReport:
    known: list[Hash] = field(default_factory=list)
    fetched: list[Hash] = field(default_factory=list)
    redirected: list[Hash] = field(default_factory=list)  # fetched via redirect
    denied: dict[Hash, DeniedAnswer] = field(default_factory=dict)
    failed: dict[Hash, str] = field(default_factory=dict)
    requests_issued: int = 0

    @property
    def resolved(self) -> bool:
        return not self.denied and not self.failed


class Tracer:
    """Resolves contract references against a store, remembering outcomes.

    The memo makes tracing idempotent: hashes already fetched, denied, or
    failed are not asked for again by later traces through the same tracer.
    """

    def __init__(
        self,
        store: DocumentStore,
        client: TraceClient,
        depth_limit: int = DEFAULT_REDIRECT_DEPTH,
    ):
        self.store = store
        self.client = client
        self.depth_limit = depth_limit
        self.attempted: dict[Hash, str] = {}

    def trace_contract(
        self,
        contract: ContractLike,
        origin: str,
        evidence: Sequence[SignedEnvelope] = (),
    ) -> TraceReport:
        return self.trace_hashes(
            sorted(extract_references(contract), key=lambda h: h.text),
            origin,
            evidence,
        )

    def trace_hashes(
        self,
        hashes: Sequence[Hash],
        origin: str,
        evidence: Sequence[SignedEnvelope] = (),
    ) -> TraceReport:
        report = TraceReport()
        pending: dict[Hash, tuple[str, int, set[str]]] = {}
        for h in hashes:
            if h in self.store:
                report.known.append(h)
            elif h in self.attempted:
                outcome = self.attempted[h]
                if outcome == "denied":
                    report.denied[h] = DeniedAnswer("denied on a previous trace")
                else:
                    report.failed[h] = "failed on a previous trace"
            else:
                pending[h] = (origin, 0, {origin})
        while pending:
            by_target: dict[str, list[Hash]] = {}
            for h, (target, _, _) in pending.items():
                by_target.setdefault(target, []).append(h)
            next_pending: dict[Hash, tuple[str, int, set[str]]] = {}
            for target, batch in sorted(by_target.items()):
                batch = sorted(batch, key=lambda h: h.text)
                try:
                    answers = self.client.request(target, batch, evidence)
                    report.requests_issued += 1
                except Exception as exc:  # noqa: BLE001 - per-hash, never batch-fatal
                    for h in batch:
                        report.failed[h] = f"transport: {exc}"
                        self.attempted[h] = "failed"
                    continue
                for h in batch:
                    answer = answers.get(h)
                    _, depth, visited = pending[h]
                    if isinstance(answer, DataAnswer):
                        if hash_of_bytes(answer.data) != h:
                            report.failed[h] = "corrupt answer discarded"
                            self.attempted[h] = "failed"
                            continue
                        self.store.put(answer.data)
                        self.attempted[h] = "fetched"
                        if depth > 0:
                            report.redirected.append(h)
                        else:
                            report.fetched.append(h)
                    elif isinstance(answer, RedirectAnswer):
                        if depth + 1 > self.depth_limit:
                            report.failed[h] = "redirect depth exceeded"
                            self.attempted[h] = "failed"
                        elif answer.locator in visited:
                            report.failed[h] = "redirect cycle detected"
                            self.attempted[h] = "failed"
                        else:
                            next_pending[h] = (
                                answer.locator,
                                depth + 1,
                                visited | {answer.locator},
                            )
                    elif isinstance(answer, DeniedAnswer):
                        report.denied[h] = answer
                        self.attempted[h] = "denied"
                    else:
                        report.failed[h] = "no answer for hash"
                        self.attempted[h] = "failed"
            pending = next_pending
        return report


def public_push_documents(
    contracts: Iterable[ContractLike], store: DocumentStore
) -> list[bytes]:
    """Referenced documents this store may send preemptively alongside an offer."""
    documents: list[bytes] = []
    seen: set[Hash] = set()
    for contract in contracts:
        for h in sorted(extract_references(contract), key=lambda h: h.text):
            if h in seen:
                continue
            seen.add(h)
            if isinstance(store.policy_for(h), Public):
                data = store.get(h)
                if data is not None:
                    documents.append(data)
    return documents


class LocalTraceClient:
    """Synchronous client that answers from in-process stores; used by tests
    and the CLI's offline trace mode. Targets map to (store, registry,
    identity-of-answerer) triples."""

    def __init__(self, requester: Identity, now: Callable[[], datetime]):
        self.requester = requester
        self.now = now
        self._targets: dict[str, tuple[DocumentStore, TrustRegistry, Identity]] = {}
        self._request_counter = 0

    def add_target(
        self, name: str, store: DocumentStore, registry: TrustRegistry, answerer: Identity
    ) -> None:
        self._targets[name] = (store, registry, answerer)

    def request(
        self,
        target: str,
        hashes: Sequence[Hash],
        evidence: Sequence[SignedEnvelope],
    ) -> Mapping[Hash, Answer]:
        if target not in self._targets:
            raise InvariantViolation(f"unknown trace target {target!r}")
        store, registry, _ = self._targets[target]
        self._request_counter += 1
        request_id = f"{self._request_counter:032x}"
        envelope = build_trace_request(self.requester, request_id, hashes, evidence)
        answer_set = handle_trace_request(envelope, store, registry, self.now())
        return dict(answer_set.answers)
