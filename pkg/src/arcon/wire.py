"""Wire protocol: length-prefixed canonical-JSON envelopes over stream sockets.

Frame layout is a 4-byte big-endian payload length followed by the payload,
canonical JSON with sorted keys and no insignificant whitespace. The codec
is a bijection on valid envelopes, so both ends can be tested bit-exactly.
"""

from __future__ import annotations

import socket
import struct
import threading
from dataclasses import dataclass

from .canonical import dumps_canonical, loads
from .errors import FrameTooLarge, MalformedPayload, TransportFailure, Truncated

MAX_PAYLOAD = 1 << 20  # 1 MiB

MESSAGE_TYPES = frozenset(
    {
        "HELLO",
        "PAIR_REQUEST",
        "PAIR_ACCEPT",
        "PAIR_REJECT",
        "CMD",
        "CMD_RESULT",
        "EVENT",
        "PING",
        "PONG",
        "BYE",
    }
)

MAX_SEQ = (1 << 64) - 1


@dataclass(frozen=True)
class Envelope:
    t: str
    seq: int | None = None
    body: dict | None = None

    def validate(self) -> "Envelope":
        if self.t not in MESSAGE_TYPES:
            raise MalformedPayload(f"unknown message type {self.t!r}")
        if self.seq is not None:
            if not isinstance(self.seq, int) or isinstance(self.seq, bool):
                raise MalformedPayload("seq must be an integer")
            if not 0 <= self.seq <= MAX_SEQ:
                raise MalformedPayload(f"seq {self.seq} outside unsigned 64-bit range")
        if self.body is not None and not isinstance(self.body, dict):
            raise MalformedPayload("body must be a map")
        return self

    def to_payload(self) -> dict:
        payload: dict = {"t": self.t}
        if self.seq is not None:
            payload["seq"] = self.seq
        if self.body is not None:
            payload["body"] = self.body
        return payload


def encode(env: Envelope) -> bytes:
    env.validate()
    payload = dumps_canonical(env.to_payload())
    if len(payload) > MAX_PAYLOAD:
        raise FrameTooLarge(f"payload {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return struct.pack(">I", len(payload)) + payload


def _parse_payload(payload: bytes) -> Envelope:
    try:
        doc = loads(payload)
    except (UnicodeDecodeError, ValueError) as exc:
        raise MalformedPayload(f"payload is not canonical JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedPayload("payload must be a JSON object")
    extra = set(doc) - {"t", "seq", "body"}
    if extra:
        raise MalformedPayload(f"unexpected payload keys {sorted(extra)}")
    if "t" not in doc or not isinstance(doc["t"], str):
        raise MalformedPayload("payload must carry a string 't'")
    return Envelope(t=doc["t"], seq=doc.get("seq"), body=doc.get("body")).validate()


def decode(data: bytes) -> Envelope:
    """Decode one complete frame. Truncated means "wait for more bytes"."""
    env, consumed = decode_prefix(data)
    if consumed != len(data):
        raise MalformedPayload(f"{len(data) - consumed} trailing bytes after frame")
    return env


def decode_prefix(data: bytes) -> tuple[Envelope, int]:
    """Decode the first frame in *data*, returning it and the bytes consumed."""
    if len(data) < 4:
        raise Truncated("incomplete length prefix")
    (length,) = struct.unpack(">I", data[:4])
    if length > MAX_PAYLOAD:
        raise FrameTooLarge(f"declared payload {length} bytes exceeds {MAX_PAYLOAD}")
    if len(data) < 4 + length:
        raise Truncated(f"have {len(data) - 4} of {length} payload bytes")
    return _parse_payload(data[4 : 4 + length]), 4 + length


class FrameReader:
    """Incremental frame assembler for a byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Envelope]:
        """Absorb bytes, returning every envelope completed by them."""
        self._buf.extend(data)
        out: list[Envelope] = []
        while True:
            try:
                env, consumed = decode_prefix(bytes(self._buf))
            except Truncated:
                return out
            del self._buf[:consumed]
            out.append(env)

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


class SeqCounter:
    """Strictly increasing sequence numbers for one sender on one session."""

    def __init__(self, start: int = 1):
        self._next = start
        self._lock = threading.Lock()

    def next(self) -> int:
        with self._lock:
            value = self._next
            self._next += 1
            return value


class MessageSocket:
    """Blocking envelope transport over a connected stream socket.

    Writes are serialized by a lock so envelopes from different threads
    never interleave. Reads are expected from a single consumer thread.
    """

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._send_lock = threading.Lock()
        self._reader = FrameReader()
        self._ready: list[Envelope] = []
        self._closed = False

    def send(self, env: Envelope) -> None:
        frame = encode(env)
        with self._send_lock:
            try:
                self._sock.sendall(frame)
            except OSError as exc:
                raise TransportFailure(f"send failed: {exc}") from exc

    def recv(self, timeout: float | None = None) -> Envelope | None:
        """Next envelope, or None on clean EOF. socket.timeout propagates."""
        if self._ready:
            return self._ready.pop(0)
        self._sock.settimeout(timeout)
        while True:
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                raise
            except OSError as exc:
                if self._closed:
                    return None
                raise TransportFailure(f"recv failed: {exc}") from exc
            if not chunk:
                if self._reader.pending_bytes:
                    raise Truncated("connection closed mid-frame")
                return None
            envelopes = self._reader.feed(chunk)
            if envelopes:
                self._ready.extend(envelopes[1:])
                return envelopes[0]

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    @property
    def raw(self) -> socket.socket:
        return self._sock
