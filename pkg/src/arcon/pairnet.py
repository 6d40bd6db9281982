"""Simulated short-range pairing network.

A master accepts pairings from slave endpoints over local stream sockets.
Physical constraints are simulated: a capacity cap (7 slaves by default)
and a range gate (8 m by default, inclusive). Positions live in simulation
config, so "range" is decoupled from actual connectivity.

The pure decision layer (request_pair, heartbeat_tick) is separated from
the socket plumbing (Piconet, connect_slave) to keep the rules testable
without I/O.
"""

from __future__ import annotations

import math
import socket
import threading
import time
import uuid
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from .canonical import dumps_canonical, loads
from .errors import (
    AlreadyPaired,
    ArconError,
    CapacityExceeded,
    ConfigInvalid,
    IoFailure,
    MalformedPayload,
    OutOfRange,
    PortUnavailable,
    SessionClosed,
    Timeout,
    TransportFailure,
    UnknownEndpoint,
    error_from_code,
)
from .wire import Envelope, MessageSocket, SeqCounter

DEFAULT_MAX_SLAVES = 7
DEFAULT_MAX_RANGE_M = 8.0
DEFAULT_HEARTBEAT_INTERVAL_S = 2.0
DEFAULT_HEARTBEAT_TIMEOUT_S = 6.0


class Role(str, Enum):
    MASTER = "master"
    SLAVE = "slave"


@dataclass(frozen=True)
class Endpoint:
    address: str
    x_m: float
    y_m: float
    role: Role = Role.SLAVE

    def validate(self) -> "Endpoint":
        if not self.address:
            raise ConfigInvalid("endpoint address must be non-empty")
        if not (math.isfinite(self.x_m) and math.isfinite(self.y_m)):
            raise ConfigInvalid(f"endpoint {self.address}: position must be finite")
        return self

    @property
    def position(self) -> tuple[float, float]:
        return (self.x_m, self.y_m)


def distance_m(a: Endpoint, b: Endpoint) -> float:
    return math.hypot(a.x_m - b.x_m, a.y_m - b.y_m)


@dataclass(frozen=True)
class NetConfig:
    max_slaves: int = DEFAULT_MAX_SLAVES
    max_range_m: float = DEFAULT_MAX_RANGE_M
    heartbeat_interval_s: float = DEFAULT_HEARTBEAT_INTERVAL_S
    heartbeat_timeout_s: float = DEFAULT_HEARTBEAT_TIMEOUT_S

    def validate(self) -> "NetConfig":
        if self.max_slaves < 1:
            raise ConfigInvalid("max_slaves must be at least 1")
        if not self.max_range_m > 0:
            raise ConfigInvalid("max_range_m must be positive")
        if not self.heartbeat_timeout_s > self.heartbeat_interval_s:
            raise ConfigInvalid("heartbeat timeout must exceed the interval")
        return self


class SessionState(str, Enum):
    PAIRING = "pairing"
    ACTIVE = "active"
    CLOSED = "closed"


@dataclass
class PairingSession:
    session_id: str
    master_addr: str
    slave_addr: str
    state: SessionState = SessionState.PAIRING
    established_at: float = 0.0
    last_seen: float = 0.0
    last_ping_at: float = 0.0
    close_reason: str | None = None

    def activate(self, now: float) -> None:
        if self.state is not SessionState.PAIRING:
            raise SessionClosed(f"cannot activate a {self.state.value} session")
        self.state = SessionState.ACTIVE
        self.established_at = now
        self.last_seen = now
        self.last_ping_at = now

    def touch(self, now: float) -> None:
        if self.state is SessionState.ACTIVE:
            self.last_seen = now

    def close(self, reason: str) -> bool:
        """Transition to Closed; returns False if already closed (no-op)."""
        if self.state is SessionState.CLOSED:
            return False
        self.state = SessionState.CLOSED
        self.close_reason = reason
        return True


def request_pair(
    master: Endpoint,
    slave: Endpoint,
    cfg: NetConfig,
    active_count: int,
    active_slave_addrs: Iterable[str] = (),
    now: float = 0.0,
) -> PairingSession:
    """Admission decision for one pairing attempt.

    Checks run already-paired, then range, then capacity; the first
    violation wins. On success the returned session is already Active.
    """
    if slave.address in set(active_slave_addrs):
        raise AlreadyPaired(f"{slave.address} already has an active session")
    dist = distance_m(master, slave)
    if dist > cfg.max_range_m:
        raise OutOfRange(
            f"{slave.address} is {dist:.2f} m away, beyond {cfg.max_range_m} m"
        )
    if active_count >= cfg.max_slaves:
        raise CapacityExceeded(
            f"{active_count} slaves already paired, maximum is {cfg.max_slaves}"
        )
    session = PairingSession(
        session_id=str(uuid.uuid4()),
        master_addr=master.address,
        slave_addr=slave.address,
    )
    session.activate(now)
    return session


@dataclass(frozen=True)
class TickAction:
    kind: str  # "ping" or "close"
    reason: str | None = None


def heartbeat_tick(
    session: PairingSession, now: float, cfg: NetConfig, in_range: bool = True
) -> list[TickAction]:
    """Advance one session's liveness state; mutates the session in place."""
    if session.state is not SessionState.ACTIVE:
        return []
    if not in_range:
        session.close("range")
        return [TickAction("close", "range")]
    if now - session.last_seen > cfg.heartbeat_timeout_s:
        session.close("timeout")
        return [TickAction("close", "timeout")]
    since_seen = now - session.last_seen
    since_ping = now - session.last_ping_at
    if since_seen >= cfg.heartbeat_interval_s and since_ping >= cfg.heartbeat_interval_s:
        session.last_ping_at = now
        return [TickAction("ping")]
    return []


@dataclass(frozen=True)
class LinkStatus:
    address: str
    distance_m: float
    in_range: bool
    session_state: SessionState | None


def load_topology(path: str | Path) -> list[Endpoint]:
    path = Path(path)
    try:
        doc = loads(path.read_bytes())
    except OSError as exc:
        raise IoFailure(f"cannot read topology {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigInvalid(f"topology {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("endpoints"), list):
        raise ConfigInvalid(f"topology {path} must be {{\"endpoints\": [...]}}")
    endpoints = []
    seen: set[str] = set()
    for entry in doc["endpoints"]:
        try:
            ep = Endpoint(
                address=str(entry["address"]),
                x_m=float(entry["x_m"]),
                y_m=float(entry["y_m"]),
                role=Role(entry.get("role", "slave")),
            ).validate()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid(f"topology {path}: bad endpoint: {exc}") from exc
        if ep.address in seen:
            raise ConfigInvalid(f"topology {path}: duplicate address {ep.address!r}")
        seen.add(ep.address)
        endpoints.append(ep)
    return endpoints


def dump_topology(endpoints: Iterable[Endpoint], path: str | Path) -> None:
    doc = {
        "endpoints": [
            {"address": e.address, "role": e.role.value, "x_m": e.x_m, "y_m": e.y_m}
            for e in endpoints
        ]
    }
    Path(path).write_bytes(dumps_canonical(doc))


def _reject_body(exc: ArconError) -> dict:
    return {
        "code": exc.code,
        "message": exc.message,
        "reason": getattr(exc, "reason", exc.code),
    }


class _Waiter:
    __slots__ = ("ready", "result", "error")

    def __init__(self):
        self.ready = threading.Event()
        self.result: dict | None = None
        self.error: ArconError | None = None


class SessionChannel:
    """One live slave connection on the master side."""

    def __init__(self, session: PairingSession, msock: MessageSocket):
        self.session = session
        self.msock = msock
        self.seq = SeqCounter()
        self.pending: dict[int, _Waiter] = {}
        self.lock = threading.Lock()
        self.thread: threading.Thread | None = None

    def fail_pending(self, error: ArconError) -> None:
        with self.lock:
            waiters = list(self.pending.values())
            self.pending.clear()
        for waiter in waiters:
            waiter.error = error
            waiter.ready.set()


class Piconet:
    """Master side of the simulated network.

    Listens for slave connections, runs the pairing handshake, answers
    pings, correlates command results, and enforces range/capacity on a
    periodic heartbeat tick.
    """

    def __init__(
        self,
        host: str,
        port: int,
        cfg: NetConfig,
        master: Endpoint,
        clock: Callable[[], float] = time.monotonic,
        authorizer: Callable[[str], dict] | None = None,
        on_paired: Callable[[str, PairingSession], None] | None = None,
        on_event: Callable[[str, dict], None] | None = None,
        on_session_closed: Callable[[str, PairingSession], None] | None = None,
        tick_interval_s: float = 0.2,
    ):
        cfg.validate()
        master.validate()
        self.cfg = cfg
        self.master = master
        self.clock = clock
        self.authorizer = authorizer
        self.on_paired = on_paired
        self.on_event = on_event
        self.on_session_closed = on_session_closed
        self.tick_interval_s = tick_interval_s
        self._lock = threading.RLock()
        self._endpoints: dict[str, Endpoint] = {master.address: master}
        self._channels: dict[str, SessionChannel] = {}
        self._stopping = threading.Event()
        self._threads: list[threading.Thread] = []
        try:
            self._listener = socket.create_server((host, port))
        except OSError as exc:
            raise PortUnavailable(f"cannot listen on {host}:{port}: {exc}") from exc
        self.host, self.port = self._listener.getsockname()[:2]

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "Piconet":
        accept = threading.Thread(target=self._accept_loop, daemon=True)
        beat = threading.Thread(target=self._heartbeat_loop, daemon=True)
        self._threads = [accept, beat]
        accept.start()
        beat.start()
        return self

    def stop(self) -> None:
        self._stopping.set()
        # shutdown, not just close: close alone leaves a blocked accept() asleep
        try:
            self._listener.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            channels = list(self._channels.values())
        for channel in channels:
            try:
                channel.msock.send(Envelope(t="BYE"))
            except ArconError:
                pass
            self._close_channel(channel, "shutdown")
        for thread in self._threads:
            thread.join(timeout=2.0)

    # -- topology ------------------------------------------------------------

    def add_endpoint(self, endpoint: Endpoint) -> None:
        endpoint.validate()
        with self._lock:
            self._endpoints[endpoint.address] = endpoint

    def get_endpoint(self, address: str) -> Endpoint:
        with self._lock:
            try:
                return self._endpoints[address]
            except KeyError:
                raise UnknownEndpoint(f"no endpoint {address!r}") from None

    def move_endpoint(self, address: str, x_m: float, y_m: float) -> list[LinkStatus]:
        """Reposition an endpoint; out-of-range links close at the next tick."""
        with self._lock:
            if address not in self._endpoints:
                raise UnknownEndpoint(f"no endpoint {address!r}")
            old = self._endpoints[address]
            self._endpoints[address] = Endpoint(
                address=address, x_m=float(x_m), y_m=float(y_m), role=old.role
            ).validate()
            return self._link_statuses()

    def _link_statuses(self) -> list[LinkStatus]:
        master = self._endpoints[self.master.address]
        out = []
        for address, endpoint in sorted(self._endpoints.items()):
            if address == self.master.address:
                continue
            dist = distance_m(master, endpoint)
            channel = self._channels.get(address)
            out.append(
                LinkStatus(
                    address=address,
                    distance_m=dist,
                    in_range=dist <= self.cfg.max_range_m,
                    session_state=channel.session.state if channel else None,
                )
            )
        return out

    # -- session access ------------------------------------------------------

    def session_for(self, address: str) -> PairingSession | None:
        with self._lock:
            channel = self._channels.get(address)
            return channel.session if channel else None

    def active_addresses(self) -> list[str]:
        with self._lock:
            return sorted(
                a
                for a, ch in self._channels.items()
                if ch.session.state is SessionState.ACTIVE
            )

    def send_command(
        self, address: str, body: dict, timeout: float | None = None
    ) -> dict:
        """Send one CMD and block for its CMD_RESULT body."""
        if timeout is None:
            timeout = self.cfg.heartbeat_timeout_s
        with self._lock:
            channel = self._channels.get(address)
        if channel is None or channel.session.state is not SessionState.ACTIVE:
            raise SessionClosed(f"no active session for {address!r}")
        seq = channel.seq.next()
        waiter = _Waiter()
        with channel.lock:
            channel.pending[seq] = waiter
        try:
            channel.msock.send(Envelope(t="CMD", seq=seq, body=body))
        except ArconError:
            with channel.lock:
                channel.pending.pop(seq, None)
            raise
        if not waiter.ready.wait(timeout):
            with channel.lock:
                channel.pending.pop(seq, None)
            self._close_channel(channel, "timeout")
            raise Timeout(f"no result from {address!r} within {timeout} s")
        if waiter.error is not None:
            raise waiter.error
        assert waiter.result is not None
        return waiter.result

    # -- internals -----------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(
                target=self._serve_connection, args=(conn,), daemon=True
            ).start()

    def _serve_connection(self, conn: socket.socket) -> None:
        msock = MessageSocket(conn)
        try:
            channel = self._handshake(msock)
        except ArconError:
            msock.close()
            return
        if channel is None:
            msock.close()
            return
        channel.thread = threading.current_thread()
        self._read_loop(channel)

    def _handshake(self, msock: MessageSocket) -> SessionChannel | None:
        msock.send(Envelope(t="HELLO", body={"address": self.master.address}))
        try:
            env = msock.recv(timeout=self.cfg.heartbeat_timeout_s)
        except (socket.timeout, ArconError):
            return None
        if env is None or env.t != "PAIR_REQUEST" or not isinstance(env.body, dict):
            return None
        address = env.body.get("address")
        if not isinstance(address, str) or not address:
            msock.send(
                Envelope(
                    t="PAIR_REJECT",
                    body=_reject_body(MalformedPayload("pair request needs an address")),
                )
            )
            return None
        now = self.clock()
        with self._lock:
            if address not in self._endpoints:
                x = env.body.get("x_m", 0.0)
                y = env.body.get("y_m", 0.0)
                try:
                    self._endpoints[address] = Endpoint(
                        address=address, x_m=float(x), y_m=float(y)
                    ).validate()
                except (TypeError, ValueError, ConfigInvalid):
                    msock.send(
                        Envelope(
                            t="PAIR_REJECT",
                            body=_reject_body(
                                MalformedPayload("pair request position is invalid")
                            ),
                        )
                    )
                    return None
            extra: dict = {}
            if self.authorizer is not None:
                try:
                    extra = self.authorizer(address) or {}
                except ArconError as exc:
                    msock.send(Envelope(t="PAIR_REJECT", body=_reject_body(exc)))
                    return None
            active = [
                a
                for a, ch in self._channels.items()
                if ch.session.state is SessionState.ACTIVE
            ]
            try:
                session = request_pair(
                    self._endpoints[self.master.address],
                    self._endpoints[address],
                    self.cfg,
                    active_count=len(active),
                    active_slave_addrs=active,
                    now=now,
                )
            except (AlreadyPaired, OutOfRange, CapacityExceeded) as exc:
                msock.send(Envelope(t="PAIR_REJECT", body=_reject_body(exc)))
                return None
            channel = SessionChannel(session, msock)
            self._channels[address] = channel
        body = {
            "address": self.master.address,
            "heartbeat_interval_s": self.cfg.heartbeat_interval_s,
            "heartbeat_timeout_s": self.cfg.heartbeat_timeout_s,
            "session_id": session.session_id,
        }
        body.update(extra)
        try:
            msock.send(Envelope(t="PAIR_ACCEPT", body=body))
        except ArconError:
            self._close_channel(channel, "eof")
            return None
        if self.on_paired is not None:
            self.on_paired(address, session)
        return channel

    def _read_loop(self, channel: SessionChannel) -> None:
        while channel.session.state is SessionState.ACTIVE:
            try:
                env = channel.msock.recv(timeout=None)
            except ArconError:
                self._close_channel(channel, "eof")
                return
            if env is None:
                self._close_channel(channel, "eof")
                return
            channel.session.touch(self.clock())
            if env.t == "PONG":
                continue
            if env.t == "PING":
                try:
                    channel.msock.send(Envelope(t="PONG", seq=env.seq))
                except ArconError:
                    self._close_channel(channel, "eof")
                    return
            elif env.t == "CMD_RESULT" and env.seq is not None:
                with channel.lock:
                    waiter = channel.pending.pop(env.seq, None)
                if waiter is not None:
                    waiter.result = env.body if isinstance(env.body, dict) else {}
                    waiter.ready.set()
            elif env.t == "EVENT":
                if self.on_event is not None and isinstance(env.body, dict):
                    self.on_event(channel.session.slave_addr, env.body)
            elif env.t == "BYE":
                self._close_channel(channel, "bye")
                return

    def _heartbeat_loop(self) -> None:
        while not self._stopping.wait(self.tick_interval_s):
            self.tick()

    def tick(self, now: float | None = None) -> None:
        if now is None:
            now = self.clock()
        with self._lock:
            master = self._endpoints[self.master.address]
            channels = [
                (ch, distance_m(master, self._endpoints[addr]))
                for addr, ch in self._channels.items()
                if ch.session.state is SessionState.ACTIVE
            ]
        for channel, dist in channels:
            actions = heartbeat_tick(
                channel.session, now, self.cfg, in_range=dist <= self.cfg.max_range_m
            )
            for action in actions:
                if action.kind == "ping":
                    try:
                        channel.msock.send(
                            Envelope(t="PING", seq=channel.seq.next())
                        )
                    except ArconError:
                        self._close_channel(channel, "eof")
                elif action.kind == "close":
                    # heartbeat_tick already moved the state; finish the job
                    self._finalize_close(channel)

    def _close_channel(self, channel: SessionChannel, reason: str) -> None:
        if channel.session.close(reason):
            self._finalize_close(channel)

    def _finalize_close(self, channel: SessionChannel) -> None:
        channel.fail_pending(
            SessionClosed(
                f"session to {channel.session.slave_addr!r} closed "
                f"({channel.session.close_reason})"
            )
        )
        channel.msock.close()
        if self.on_session_closed is not None:
            self.on_session_closed(channel.session.slave_addr, channel.session)


def connect_slave(
    host: str,
    port: int,
    address: str,
    position: tuple[float, float] = (0.0, 0.0),
    timeout: float = 5.0,
) -> tuple[MessageSocket, dict]:
    """Dial the master and run the pairing handshake from the slave side.

    Returns the connected socket and the PAIR_ACCEPT body. A PAIR_REJECT
    is raised as the error its reason code names.
    """
    try:
        raw = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportFailure(f"cannot reach master at {host}:{port}: {exc}") from exc
    msock = MessageSocket(raw)
    try:
        hello = msock.recv(timeout=timeout)
        if hello is None or hello.t != "HELLO":
            raise TransportFailure("master did not say HELLO")
        msock.send(
            Envelope(
                t="PAIR_REQUEST",
                body={
                    "address": address,
                    "x_m": float(position[0]),
                    "y_m": float(position[1]),
                },
            )
        )
        reply = msock.recv(timeout=timeout)
        if reply is None:
            raise TransportFailure("connection closed during pairing")
        if reply.t == "PAIR_REJECT":
            body = reply.body or {}
            reason = str(body.get("reason", "unknown"))
            code = str(body.get("code") or reason)
            message = str(body.get("message", f"pairing rejected ({reason})"))
            raise error_from_code(code, message)
        if reply.t != "PAIR_ACCEPT" or not isinstance(reply.body, dict):
            raise TransportFailure(f"unexpected pairing reply {reply.t}")
        return msock, reply.body
    except socket.timeout:
        msock.close()
        raise Timeout(f"pairing with {host}:{port} timed out") from None
    except BaseException:
        msock.close()
        raise
