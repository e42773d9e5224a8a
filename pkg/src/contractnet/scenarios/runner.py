"""Deterministic scenario harness.

A scenario builds a cast of agents on the simulated network (or, for the
transport-interchangeability check, on localhost TCP), drives scripted steps,
settles message traffic after each step, and evaluates assertions. With a
fixed seed a scenario is bit-reproducible: identities, session ids, fixture
amounts, virtual timestamps, and therefore every signed envelope come out
identical run after run, which the run digest makes checkable.
"""

from __future__ import annotations

import hashlib
import time as _time
from dataclasses import dataclass, field
from datetime import timedelta
from random import Random
from typing import Callable

from ..agent import Agent, AgentConfig, Event, Policy
from ..canon import canonical_bytes, parse_json_tree
from ..errors import InvariantViolation
from ..identity import Identity, TrustRegistry, generate_identity
from ..negotiation import ACCEPTANCE_KIND, OFFER_KIND, REJECTION_KIND
from ..templates import Template
from ..transport import SIM_EPOCH, Endpoint, ManualClock, SimNetwork, TcpTransport

IDENTITY_VALIDITY = timedelta(days=3650)


@dataclass
class StepRecord:
    index: int
    description: str
    deliveries: int
    events: list[dict] = field(default_factory=list)


@dataclass
class AssertionResult:
    description: str
    ok: bool
    detail: str = ""


@dataclass
class ScenarioResult:
    name: str
    seed: int
    transport: str
    steps: list[StepRecord] = field(default_factory=list)
    assertions: list[AssertionResult] = field(default_factory=list)
    digest: str = ""
    elapsed_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(a.ok for a in self.assertions)

    def tap_lines(self) -> list[str]:
        lines = [f"1..{len(self.assertions)}"]
        for i, a in enumerate(self.assertions, start=1):
            status = "ok" if a.ok else "not ok"
            line = f"{status} {i} - {a.description}"
            if not a.ok and a.detail:
                line += f" # {a.detail}"
            lines.append(line)
        return lines

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "transport": self.transport,
            "passed": self.passed,
            "digest": self.digest,
            "elapsedSeconds": round(self.elapsed_s, 3),
            "steps": [
                {
                    "index": s.index,
                    "description": s.description,
                    "deliveries": s.deliveries,
                    "events": s.events,
                }
                for s in self.steps
            ],
            "assertions": [
                {"description": a.description, "ok": a.ok, "detail": a.detail}
                for a in self.assertions
            ],
        }


class ScenarioContext:
    """Cast management, step driving, and assertion collection."""

    def __init__(self, name: str, seed: int = 0, transport: str = "sim"):
        if transport not in ("sim", "tcp"):
            raise InvariantViolation(f"unknown scenario transport {transport!r}")
        self.name = name
        self.seed = seed
        self.transport = transport
        self.rng = Random(seed)
        self.registry = TrustRegistry()
        self.agents: dict[str, Agent] = {}
        self.result = ScenarioResult(name=name, seed=seed, transport=transport)
        self._event_marks: dict[str, int] = {}
        if transport == "sim":
            self.sim: SimNetwork | None = SimNetwork()
            self.clock = self.sim.clock
            self._tcp_transports: dict[str, TcpTransport] = {}
        else:
            self.sim = None
            self.clock = ManualClock(SIM_EPOCH)
            self._tcp_transports = {}

    # -- cast ---------------------------------------------------------------------

    def new_identity(self, display_name: str) -> Identity:
        identity = generate_identity(display_name, self.rng)
        self.registry.add(
            identity,
            valid_from=SIM_EPOCH,
            valid_until=SIM_EPOCH + IDENTITY_VALIDITY,
        )
        return identity

    def new_agent(
        self,
        name: str,
        display_name: str | None = None,
        policies: dict | None = None,
        default_policy: Policy | None = None,
        templates: tuple[Template, ...] = (),
        push_templates: frozenset = frozenset(),
        auto_trace: bool = True,
        offer_validity_ms: int = 300_000,
    ) -> Agent:
        identity = self.new_identity(display_name or name)
        config = AgentConfig(
            name=name,
            identity=identity,
            registry=self.registry,
            policies=dict(policies or {}),
            templates=tuple(templates),
            push_templates=frozenset(push_templates),
            auto_trace=auto_trace,
            offer_validity_ms=offer_validity_ms,
            admin_token="scenario",
        )
        if default_policy is not None:
            config.default_policy = default_policy
        agent_rng = Random(self.rng.getrandbits(64))
        if self.transport == "sim":
            assert self.sim is not None
            send = lambda endpoint, envelope, _n=name: self.sim.send(  # noqa: E731
                _n, endpoint, envelope
            )
            agent = Agent(config, self.clock, send, rng=agent_rng)
            endpoint = self.sim.register(name, agent.ingest)
            self.sim.add_ticker(agent.check_expiry)
        else:
            agent = Agent(config, self.clock, rng=agent_rng)
            transport = TcpTransport("127.0.0.1", 0, agent.ingest).start()
            agent._send = lambda endpoint, envelope, _t=transport: _t.send(
                endpoint, envelope
            )
            endpoint = transport.endpoint
            self._tcp_transports[name] = transport
        agent.endpoint = endpoint  # type: ignore[attr-defined]
        self.agents[name] = agent
        self._event_marks[name] = 0
        return agent

    def connect_all(self) -> None:
        """Give every agent every other agent's endpoint."""
        for name, agent in self.agents.items():
            for other_name, other in self.agents.items():
                if other_name != name:
                    agent.config.peers[other.party_id] = other.endpoint  # type: ignore[attr-defined]

    def endpoint_of(self, name: str) -> Endpoint:
        return self.agents[name].endpoint  # type: ignore[attr-defined]

    # -- stepping -------------------------------------------------------------------

    def step(self, description: str, action: Callable[[], None] | None = None) -> StepRecord:
        before = sum(len(a.messages) for a in self.agents.values())
        if action is not None:
            action()
        self._settle()
        after = sum(len(a.messages) for a in self.agents.values())
        record = StepRecord(
            index=len(self.result.steps) + 1,
            description=description,
            deliveries=after - before,
            events=self._drain_events(),
        )
        self.result.steps.append(record)
        return record

    def _settle(self) -> None:
        if self.sim is not None:
            self.sim.run_until_quiet()
            return
        # TCP: wait until message counts are stable.
        deadline = _time.monotonic() + 10.0
        stable_since = None
        last = -1
        while _time.monotonic() < deadline:
            count = sum(len(a.messages) for a in self.agents.values())
            if count == last:
                if stable_since is None:
                    stable_since = _time.monotonic()
                elif _time.monotonic() - stable_since > 0.25:
                    return
            else:
                stable_since = None
                last = count
            _time.sleep(0.02)

    def advance_ms(self, delta_ms: int) -> None:
        if self.sim is not None:
            self.sim.advance(delta_ms)
        else:
            self.clock.advance_ms(delta_ms)
            for agent in self.agents.values():
                agent.check_expiry()

    def _drain_events(self) -> list[dict]:
        drained: list[dict] = []
        for name in sorted(self.agents):
            agent = self.agents[name]
            mark = self._event_marks[name]
            for event in agent.events[mark:]:
                drained.append({"agent": name, **event.to_doc()})
            self._event_marks[name] = len(agent.events)
        return drained

    def events_of(self, name: str, event_type: str | None = None) -> list[Event]:
        events = self.agents[name].events
        if event_type is None:
            return list(events)
        return [e for e in events if e.type == event_type]

    # -- assertions -------------------------------------------------------------------

    def assert_that(self, description: str, ok: bool, detail: str = "") -> None:
        self.result.assertions.append(
            AssertionResult(description=description, ok=bool(ok), detail=detail)
        )

    def assert_sequence(self, description: str, actual, expected) -> None:
        actual = list(actual)
        expected = list(expected)
        for i, (a, e) in enumerate(zip(actual, expected)):
            if a != e:
                self.assert_that(
                    description,
                    False,
                    f"diverges at step {i}: got {a!r}, expected {e!r}",
                )
                return
        if len(actual) != len(expected):
            self.assert_that(
                description,
                False,
                f"length {len(actual)} differs from expected {len(expected)}; "
                f"first missing/extra at index {min(len(actual), len(expected))}",
            )
            return
        self.assert_that(description, True)

    # -- results ---------------------------------------------------------------------

    def finish(self) -> ScenarioResult:
        self.result.digest = self.run_digest()
        for transport in self._tcp_transports.values():
            transport.close()
        return self.result

    def run_digest(self) -> str:
        """Digest over every agent's full message log, in cast order."""
        digest = hashlib.sha256()
        for name in sorted(self.agents):
            digest.update(name.encode())
            for record in self.agents[name].messages.records():
                digest.update(canonical_bytes(record.to_doc()))
        return digest.hexdigest()

    def negotiation_summary(self) -> dict:
        """Transport-independent view of all sessions: message kinds, indexes,
        senders, and contract bodies with deadline fields dropped."""
        summary: dict = {}
        for name in sorted(self.agents):
            agent = self.agents[name]
            sessions = {}
            for session_id, session in sorted(agent.engine.sessions.items()):
                entries = []
                for envelope in session.log:
                    doc = parse_json_tree(envelope.payload)
                    doc.pop("validUntil", None)
                    doc.pop("prevOfferHash", None)
                    doc.pop("offerHash", None)
                    entries.append({"payloadKind": envelope.payload_kind, "doc": doc})
                sessions[session_id] = {
                    "state": session.state.value,
                    "messages": entries,
                }
            summary[name] = sessions
        return summary


def negotiation_kinds(agent: Agent) -> list[tuple[str, str]]:
    """(direction, payloadKind) pairs for the agent's negotiation traffic."""
    pairs = []
    for record in agent.messages.records():
        if record.envelope.payload_kind in (OFFER_KIND, ACCEPTANCE_KIND, REJECTION_KIND):
            pairs.append((record.direction, record.envelope.payload_kind))
    return pairs
