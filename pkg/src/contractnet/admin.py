"""Admin HTTP API: the surface the operator console and the CLI talk to.

Read endpoints project the agent's sessions; the decision endpoint funnels a
human's accept/reject/counter into the owning session. State changes surface
on the server-sent event stream, and every response carries the server's
clock so clients never trust their own. All routes require the bearer token
from the agent's configuration.
"""

from __future__ import annotations

import json
from typing import Optional, Union

from fastapi import Depends, FastAPI, Query, Request
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.security import HTTPAuthorizationCredentials, HTTPBearer
from pydantic import BaseModel, Field

from .agent import Agent
from .canon import Hash, format_timestamp
from .contracts import (
    Contract,
    ProposalContract,
    constraint_to_doc,
    describe_constraint,
    render_contract,
    render_proposal,
)
from .errors import (
    ConstraintViolated,
    ContractNetError,
    InvalidContract,
    InvariantViolation,
    NotYourTurn,
    SessionExpired,
    SessionNotPending,
    SessionTerminal,
    Unauthorized,
    UnknownKey,
    UnknownPeer,
    UnknownSession,
)
from .identity import PartyId
from .negotiation import NegotiationSession

_STATUS_BY_ERROR = {
    Unauthorized: 401,
    UnknownSession: 404,
    UnknownPeer: 404,
    SessionNotPending: 409,
    SessionTerminal: 409,
    NotYourTurn: 409,
    SessionExpired: 410,
    ConstraintViolated: 422,
    InvalidContract: 422,
    InvariantViolation: 422,
    UnknownKey: 422,
}


def _status_for(exc: ContractNetError) -> int:
    for cls, status in _STATUS_BY_ERROR.items():
        if isinstance(exc, cls):
            return status
    return 400


class SessionSummary(BaseModel):
    sessionId: str
    state: str
    counterparty: str
    counterpartyId: str
    yourTurn: bool
    offerIndex: int
    validUntil: str
    deadlineMs: int
    pending: bool


class HistoryEntry(BaseModel):
    payloadKind: str
    signer: str
    envelopeHash: str


class SessionDetail(SessionSummary):
    initiator: str
    responder: str
    history: list[HistoryEntry]
    contracts: list[dict]


class SessionList(BaseModel):
    now: str
    sessions: list[SessionSummary]


class PendingList(BaseModel):
    now: str
    pending: list[SessionSummary]


class ArgumentView(BaseModel):
    key: str
    type: Optional[str] = None
    kind: str
    text: str


class ConstraintView(BaseModel):
    key: str
    type: Optional[str] = None
    description: str
    constraint: dict
    open: bool


class RenderedContract(BaseModel):
    templateHash: str
    templateTitle: Optional[str] = None
    complete: bool
    prose: Optional[str] = None
    arguments: list[ArgumentView] = Field(default_factory=list)
    constraints: list[ConstraintView] = Field(default_factory=list)


class RenderedOffer(BaseModel):
    sessionId: str
    now: str
    contracts: list[RenderedContract]


class DecisionRequest(BaseModel):
    action: str
    assignments: Optional[dict[str, Union[str, dict]]] = None
    contracts: Optional[list[dict]] = None


class OfferRequest(BaseModel):
    receiver: str
    contracts: list[dict]
    validityMs: Optional[int] = None


class OfferCreated(BaseModel):
    sessionId: str


class TraceRequestBody(BaseModel):
    session: Optional[str] = None
    target: Optional[str] = None
    hashes: Optional[list[str]] = None


class TraceStarted(BaseModel):
    requestId: Optional[str] = None


class ErrorBody(BaseModel):
    error: str
    detail: str


def _session_summary(agent: Agent, session: NegotiationSession) -> SessionSummary:
    now = agent.now
    deadline = session.live_offer.deadline
    counterparty = session.counterparty(agent.party_id)
    return SessionSummary(
        sessionId=session.session_id,
        state=session.state.value,
        counterparty=agent.registry.display_name(counterparty),
        counterpartyId=counterparty.text,
        yourTurn=session.turn == agent.party_id,
        offerIndex=session.live_offer.offer_index,
        validUntil=session.live_offer.valid_until,
        deadlineMs=int((deadline - now).total_seconds() * 1000),
        pending=session.session_id in agent.pending_human,
    )


def _session_detail(agent: Agent, session: NegotiationSession) -> SessionDetail:
    summary = _session_summary(agent, session)
    return SessionDetail(
        **summary.model_dump(),
        initiator=session.initiator.text,
        responder=session.responder.text,
        history=[
            HistoryEntry(
                payloadKind=e.payload_kind,
                signer=e.signer.text,
                envelopeHash=e.envelope_hash.text,
            )
            for e in session.log
        ],
        contracts=[c.to_doc() for c in session.live_offer.contracts],
    )


def _rendered_contract(agent: Agent, contract) -> RenderedContract:
    template = agent.template_by_hash(contract.template_hash)
    types = {p.key: p.type_name for p in template.parameters} if template else {}
    if isinstance(contract, Contract):
        prose = render_contract(contract, template) if template else None
        return RenderedContract(
            templateHash=contract.template_hash.text,
            templateTitle=template.title if template else None,
            complete=True,
            prose=prose,
            arguments=[
                ArgumentView(
                    key=key,
                    type=types.get(key),
                    kind=value.kind,
                    text=value.canonical_text,
                )
                for key, value in contract.arguments
            ],
        )
    assert isinstance(contract, ProposalContract)
    prose = render_proposal(contract, template) if template else None
    from .contracts import Exact

    return RenderedContract(
        templateHash=contract.template_hash.text,
        templateTitle=template.title if template else None,
        complete=contract.complete,
        prose=prose,
        constraints=[
            ConstraintView(
                key=key,
                type=types.get(key),
                description=describe_constraint(constraint),
                constraint=constraint_to_doc(constraint),
                open=not isinstance(constraint, Exact),
            )
            for key, constraint in contract.constraints
        ],
    )


def build_admin_app(agent: Agent, token: str | None = None) -> FastAPI:
    expected_token = token if token is not None else agent.config.admin_token
    app = FastAPI(
        title="contractnet agent admin API",
        version="0.1.0",
        description=(
            "Human-operator surface of a contract agent: inspect negotiation "
            "sessions, read rendered contract prose, decide on pending offers, "
            "open new sessions, and follow applied messages as server-sent "
            "events."
        ),
    )
    bearer = HTTPBearer(auto_error=False)

    def authorized(
        credentials: HTTPAuthorizationCredentials | None = Depends(bearer),
    ) -> None:
        if credentials is None or credentials.credentials != expected_token:
            raise Unauthorized("missing or invalid bearer token")

    @app.exception_handler(ContractNetError)
    async def contractnet_error(request: Request, exc: ContractNetError):
        return JSONResponse(status_code=_status_for(exc), content=exc.to_json())

    @app.get("/sessions", response_model=SessionList, responses={401: {"model": ErrorBody}})
    def list_sessions(_: None = Depends(authorized)) -> SessionList:
        agent.check_expiry()
        return SessionList(
            now=format_timestamp(agent.now),
            sessions=[_session_summary(agent, s) for s in agent.list_sessions()],
        )

    @app.get(
        "/sessions/{session_id}",
        response_model=SessionDetail,
        responses={401: {"model": ErrorBody}, 404: {"model": ErrorBody}},
    )
    def get_session(session_id: str, _: None = Depends(authorized)) -> SessionDetail:
        agent.check_expiry()
        return _session_detail(agent, agent.get_session(session_id))

    @app.get(
        "/sessions/{session_id}/render",
        response_model=RenderedOffer,
        responses={401: {"model": ErrorBody}, 404: {"model": ErrorBody}},
    )
    def render_offer(session_id: str, _: None = Depends(authorized)) -> RenderedOffer:
        session = agent.get_session(session_id)
        return RenderedOffer(
            sessionId=session_id,
            now=format_timestamp(agent.now),
            contracts=[
                _rendered_contract(agent, c) for c in session.live_offer.contracts
            ],
        )

    @app.get("/pending", response_model=PendingList, responses={401: {"model": ErrorBody}})
    def get_pending(_: None = Depends(authorized)) -> PendingList:
        entries = agent.get_pending()
        return PendingList(
            now=format_timestamp(agent.now),
            pending=[
                _session_summary(agent, agent.get_session(e.session_id))
                for e in entries
            ],
        )

    @app.post(
        "/sessions/{session_id}/decision",
        response_model=SessionDetail,
        responses={
            401: {"model": ErrorBody},
            404: {"model": ErrorBody},
            409: {"model": ErrorBody},
            410: {"model": ErrorBody},
            422: {"model": ErrorBody},
        },
    )
    def decide(
        session_id: str, body: DecisionRequest, _: None = Depends(authorized)
    ) -> SessionDetail:
        contracts = None
        if body.contracts is not None:
            contracts = [_contract_from_doc(doc) for doc in body.contracts]
        assignments = list(body.assignments.items()) if body.assignments else None
        session = agent.decide(
            session_id, body.action, assignments=assignments, contracts=contracts
        )
        return _session_detail(agent, session)

    @app.post(
        "/offers",
        response_model=OfferCreated,
        status_code=201,
        responses={401: {"model": ErrorBody}, 404: {"model": ErrorBody}, 422: {"model": ErrorBody}},
    )
    def post_offer(body: OfferRequest, _: None = Depends(authorized)) -> OfferCreated:
        receiver = PartyId.parse(body.receiver)
        contracts = [_contract_from_doc(doc) for doc in body.contracts]
        session_id = agent.make_offer(receiver, contracts, validity_ms=body.validityMs)
        return OfferCreated(sessionId=session_id)

    @app.post(
        "/trace",
        response_model=TraceStarted,
        responses={401: {"model": ErrorBody}, 404: {"model": ErrorBody}, 422: {"model": ErrorBody}},
    )
    def post_trace(body: TraceRequestBody, _: None = Depends(authorized)) -> TraceStarted:
        if body.session:
            return TraceStarted(requestId=agent.trace_session_references(body.session))
        if not body.target or not body.hashes:
            raise InvariantViolation("trace needs a session, or a target plus hashes")
        request_id = agent.trace_hashes(
            [Hash.parse(h) for h in body.hashes], body.target
        )
        return TraceStarted(requestId=request_id)

    @app.get("/events", responses={401: {"model": ErrorBody}})
    def events(
        request: Request,
        after: int = Query(default=-1),
        once: bool = Query(default=False),
        token: Optional[str] = Query(default=None),
        credentials: HTTPAuthorizationCredentials | None = Depends(bearer),
    ) -> StreamingResponse:
        # EventSource cannot set headers, so this route alone also accepts
        # the bearer token as a query parameter.
        bearer_ok = credentials is not None and credentials.credentials == expected_token
        if not bearer_ok and token != expected_token:
            raise Unauthorized("missing or invalid bearer token")
        last_event_id = request.headers.get("last-event-id")
        start_after = after
        if last_event_id is not None:
            try:
                start_after = int(last_event_id)
            except ValueError:
                pass

        def stream():
            cursor = start_after + 1
            while True:
                backlog = agent.events[cursor:]
                for event in backlog:
                    payload = json.dumps(event.data, sort_keys=True)
                    yield (
                        f"id: {event.seq}\nevent: {event.type}\ndata: {payload}\n\n"
                    )
                    cursor = event.seq + 1
                if once:
                    return
                with agent._event_cv:
                    if len(agent.events) <= cursor:
                        agent._event_cv.wait(timeout=15.0)
                if len(agent.events) <= cursor:
                    yield ": keep-alive\n\n"

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app


def _contract_from_doc(doc: dict):
    kind = doc.get("kind")
    if kind == "contract":
        return Contract.from_doc(doc)
    if kind == "proposal":
        return ProposalContract.from_doc(doc)
    raise InvariantViolation("contracts must have kind contract or proposal")
