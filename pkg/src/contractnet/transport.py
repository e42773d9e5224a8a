"""Message transports: a deterministic in-process simulator and a TCP wire.

Both move signed envelopes between named endpoints behind one ``send``
interface. The simulator runs on a virtual clock that only moves when the
driver advances it, giving bit-reproducible scenario runs; the TCP transport
frames canonical envelope bytes with a 4-byte big-endian length prefix.
"""

from __future__ import annotations

import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from random import Random
from typing import Callable, Protocol

from .errors import FrameTooLarge, InvariantViolation, Unreachable
from .identity import SignedEnvelope

MAX_FRAME_BYTES = 16 * 1024 * 1024

SIM_EPOCH = datetime(2026, 1, 1, 0, 0, 0, tzinfo=timezone.utc)


@dataclass(frozen=True)
class Endpoint:
    scheme: str
    address: str

    def __post_init__(self):
        if self.scheme not in ("sim", "tcp"):
            raise InvariantViolation(f"unknown endpoint scheme {self.scheme!r}")

    @property
    def text(self) -> str:
        return f"{self.scheme}:{self.address}"

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        scheme, sep, address = text.partition(":")
        if not sep or not address:
            raise InvariantViolation(f"malformed endpoint {text!r}")
        return cls(scheme, address)

    def host_port(self) -> tuple[str, int]:
        if self.scheme != "tcp":
            raise InvariantViolation(f"{self.text} is not a tcp endpoint")
        host, sep, port = self.address.rpartition(":")
        if not sep:
            raise InvariantViolation(f"tcp endpoint needs host:port, got {self.address!r}")
        return host, int(port)


class Clock(Protocol):
    def now(self) -> datetime: ...


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class ManualClock:
    """Injectable clock; time moves only via advance/set."""

    def __init__(self, start: datetime = SIM_EPOCH):
        if start.tzinfo is None:
            raise InvariantViolation("clock start must be timezone-aware")
        self._now = start.astimezone(timezone.utc)

    def now(self) -> datetime:
        return self._now

    def advance_ms(self, delta_ms: int) -> datetime:
        if delta_ms < 0:
            raise InvariantViolation("clock cannot move backwards")
        self._now += timedelta(milliseconds=delta_ms)
        return self._now

    def set(self, at: datetime) -> None:
        if at.astimezone(timezone.utc) < self._now:
            raise InvariantViolation("clock cannot move backwards")
        self._now = at.astimezone(timezone.utc)


# --- wire framing --------------------------------------------------------------

def frame(data: bytes) -> bytes:
    if len(data) > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"frame of {len(data)} bytes exceeds {MAX_FRAME_BYTES}")
    return struct.pack(">I", len(data)) + data


def read_frame(read: Callable[[int], bytes]) -> bytes | None:
    """Read one frame from a blocking reader; None on orderly EOF."""
    header = _read_exact(read, 4, at_start=True)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"peer announced {length} byte frame")
    return _read_exact(read, length)


def _read_exact(read: Callable[[int], bytes], n: int, at_start: bool = False) -> bytes | None:
    """Read exactly n bytes; None on EOF at a frame boundary (only when
    ``at_start``), InvariantViolation on EOF anywhere else."""
    chunks = []
    got = 0
    while got < n:
        chunk = read(n - got)
        if not chunk:
            if at_start and got == 0:
                return None
            raise InvariantViolation("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


# --- simulated network ------------------------------------------------------------

@dataclass(order=True)
class _Scheduled:
    deliver_at_ms: int
    seq: int
    sender: str = field(compare=False)
    recipient: str = field(compare=False)
    data: bytes = field(compare=False)


class SimNetwork:
    """Step-driven network with per-link latency and partition flags.

    Delivery is FIFO per ordered endpoint pair, envelopes travel as canonical
    bytes, and all registered agents share the network's virtual clock.
    """

    DEFAULT_LATENCY_MS = 1

    def __init__(self, start: datetime = SIM_EPOCH, loss_seed: int = 0):
        self.clock = ManualClock(start)
        self._time_ms = 0
        self._seq = 0
        self._ingests: dict[str, Callable[[bytes], None]] = {}
        self._tickers: list[Callable[[], None]] = []
        self._latency: dict[tuple[str, str], int] = {}
        self._partitioned: set[tuple[str, str]] = set()
        self._loss: dict[tuple[str, str], float] = {}
        self._loss_rng = Random(loss_seed)
        self._queue: list[_Scheduled] = []
        self._held: dict[tuple[str, str], list[bytes]] = {}
        self._last_scheduled: dict[tuple[str, str], int] = {}
        self.delivery_log: list[tuple[int, str, str]] = []
        self.dropped: list[tuple[str, str]] = []

    def register(self, name: str, ingest: Callable[[bytes], None]) -> Endpoint:
        if name in self._ingests:
            raise InvariantViolation(f"endpoint {name!r} already registered")
        self._ingests[name] = ingest
        return Endpoint("sim", name)

    def add_ticker(self, tick: Callable[[], None]) -> None:
        """Called after each advance step, once deliveries for it are done."""
        self._tickers.append(tick)

    def set_latency(self, frm: str, to: str, latency_ms: int) -> None:
        self._latency[(frm, to)] = latency_ms

    def latency(self, frm: str, to: str) -> int:
        return self._latency.get((frm, to), self.DEFAULT_LATENCY_MS)

    def set_loss(self, frm: str, to: str, rate: float) -> None:
        """Probabilistic drop on one link; off (0.0) by default, seeded for
        reproducibility. Messaging is assumed reliable, so scenarios leave
        this alone; it exists for robustness experiments."""
        if not 0.0 <= rate <= 1.0:
            raise InvariantViolation("loss rate must be within [0, 1]")
        self._loss[(frm, to)] = rate

    def partition(self, a: str, b: str, bidirectional: bool = True) -> None:
        self._partitioned.add((a, b))
        if bidirectional:
            self._partitioned.add((b, a))

    def heal(self, a: str, b: str, bidirectional: bool = True) -> None:
        links = [(a, b)] + ([(b, a)] if bidirectional else [])
        for link in links:
            self._partitioned.discard(link)
            for data in self._held.pop(link, []):
                self._schedule(link[0], link[1], data)

    def send(self, frm: str, to: Endpoint, envelope: SignedEnvelope) -> dict:
        if to.scheme != "sim":
            raise InvariantViolation(f"sim network cannot reach {to.text}")
        if to.address not in self._ingests:
            raise Unreachable(f"no sim endpoint {to.address!r}")
        data = envelope.encode()
        link = (frm, to.address)
        if link in self._partitioned:
            self._held.setdefault(link, []).append(data)
            return {"status": "held", "reason": "partitioned"}
        rate = self._loss.get(link, 0.0)
        if rate and self._loss_rng.random() < rate:
            self.dropped.append(link)
            return {"status": "dropped"}
        deliver_at = self._schedule(frm, to.address, data)
        return {"status": "queued", "deliverAtMs": deliver_at}

    def _schedule(self, frm: str, to: str, data: bytes) -> int:
        link = (frm, to)
        deliver_at = self._time_ms + self.latency(frm, to)
        # Per-link FIFO even if latency changed while messages were in flight.
        deliver_at = max(deliver_at, self._last_scheduled.get(link, 0))
        self._last_scheduled[link] = deliver_at
        self._queue.append(_Scheduled(deliver_at, self._seq, frm, to, data))
        self._seq += 1
        self._queue.sort()
        return deliver_at

    def advance(self, delta_ms: int) -> list[tuple[str, str]]:
        """Move the virtual clock, delivering everything that falls due.

        Messages sent during delivery (replies) are themselves delivered if
        their time falls within the advanced window. Returns (sender,
        recipient) pairs in delivery order.
        """
        if delta_ms < 0:
            raise InvariantViolation("cannot advance by a negative duration")
        target = self._time_ms + delta_ms
        delivered: list[tuple[str, str]] = []
        while True:
            due = [s for s in self._queue if s.deliver_at_ms <= target]
            if not due:
                break
            item = min(due)
            self._queue.remove(item)
            if item.deliver_at_ms > self._time_ms:
                self._advance_clock(item.deliver_at_ms)
            self._ingests[item.recipient](item.data)
            self.delivery_log.append((self._time_ms, item.sender, item.recipient))
            delivered.append((item.sender, item.recipient))
        if target > self._time_ms:
            self._advance_clock(target)
        for tick in self._tickers:
            tick()
        return delivered

    def _advance_clock(self, to_ms: int) -> None:
        self.clock.advance_ms(to_ms - self._time_ms)
        self._time_ms = to_ms

    def run_until_quiet(self, max_ms: int = 60_000, step_ms: int = 5) -> int:
        """Advance in small steps until no messages remain in flight."""
        waited = 0
        while (self._queue or any(self._held.values())) and waited < max_ms:
            if self._queue:
                next_due = min(s.deliver_at_ms for s in self._queue)
                step = max(step_ms, next_due - self._time_ms)
            else:
                step = step_ms
            self.advance(step)
            waited += step
        return waited

    def undelivered(self) -> list[tuple[str, str]]:
        held = [(a, b) for (a, b), msgs in self._held.items() for _ in msgs]
        queued = [(s.sender, s.recipient) for s in self._queue]
        return held + queued

    @property
    def now_ms(self) -> int:
        return self._time_ms


# --- tcp transport -------------------------------------------------------------------

class _FrameHandler(socketserver.BaseRequestHandler):
    def handle(self):
        while True:
            try:
                data = read_frame(self.request.recv)
            except FrameTooLarge:
                self.request.close()
                return
            except (ConnectionError, OSError, InvariantViolation):
                return
            if data is None:
                return
            self.server.transport._deliver(data)  # type: ignore[attr-defined]


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class TcpTransport:
    """Length-prefixed canonical envelopes over TCP, one listener per agent.

    Outbound connections are cached per endpoint and re-established once on
    failure. Inbound frames funnel through a lock into the ingest callback,
    preserving the agent's serialized-ingest contract.
    """

    def __init__(self, host: str, port: int, ingest: Callable[[bytes], None]):
        self._ingest = ingest
        self._ingest_lock = threading.Lock()
        self._server = _Server((host, port), _FrameHandler)
        self._server.transport = self  # type: ignore[attr-defined]
        self.host = host
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._connections: dict[str, socket.socket] = {}
        self._send_lock = threading.Lock()

    @property
    def endpoint(self) -> Endpoint:
        return Endpoint("tcp", f"{self.host}:{self.port}")

    def start(self) -> "TcpTransport":
        self._thread.start()
        return self

    def _deliver(self, data: bytes) -> None:
        with self._ingest_lock:
            self._ingest(data)

    def send(self, to: Endpoint, envelope: SignedEnvelope) -> dict:
        payload = frame(envelope.encode())
        with self._send_lock:
            sock = self._connections.get(to.address)
            for attempt in (1, 2):
                if sock is None:
                    try:
                        sock = socket.create_connection(to.host_port(), timeout=10)
                    except OSError as exc:
                        raise Unreachable(f"cannot connect to {to.text}: {exc}") from exc
                    self._connections[to.address] = sock
                try:
                    sock.sendall(payload)
                    return {"status": "sent"}
                except OSError:
                    sock.close()
                    self._connections.pop(to.address, None)
                    sock = None
                    if attempt == 2:
                        raise Unreachable(f"connection to {to.text} failed")
        return {"status": "sent"}

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        with self._send_lock:
            for sock in self._connections.values():
                sock.close()
            self._connections.clear()
