"""HTTP API for the hub; all machine bodies are canonical JSON.

Served with the standard-library threading HTTP server. Registration
accepts multipart uploads of PGM images; events stream as one JSON
object per line.
"""

from __future__ import annotations

import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import TYPE_CHECKING
from urllib.parse import parse_qs, urlparse

from .canonical import dumps_canonical, loads
from .devices import Command
from .errors import ArconError, MalformedPayload, PortUnavailable
from .frames import decode_pgm, encode_pgm

if TYPE_CHECKING:
    from .hub import Hub

_STATUS_BY_CODE = {
    "UnknownDevice": 404,
    "UnknownEndpoint": 404,
    "InvalidArgument": 400,
    "MalformedImage": 400,
    "MalformedPayload": 400,
    "InsufficientDetail": 400,
    "DuplicateImage": 400,
    "TooManyImages": 400,
    "NoImages": 400,
    "SelfTransfer": 400,
    "NotPaired": 409,
    "AlreadyPaired": 409,
    "DevicePoweredOff": 409,
    "UnsupportedCommand": 409,
    "SessionClosed": 409,
    "OutOfRange": 409,
    "CapacityExceeded": 409,
    "Timeout": 504,
}

PGM_CONTENT_TYPE = "image/x-portable-graymap"


def _status_for(code: str) -> int:
    return _STATUS_BY_CODE.get(code, 500)


def device_summary(record) -> dict:
    return {
        "device_id": record.device_id,
        "name": record.name,
        "address": record.address,
        "kind": record.kind.value,
        "capabilities": sorted(c.value for c in record.capabilities),
        "created_at": record.created_at,
        "signature_count": len(record.signatures),
    }


_DISPOSITION = re.compile(
    rb'form-data\s*;\s*name="(?P<name>[^"]*)"(?:\s*;\s*filename="(?P<filename>[^"]*)")?',
    re.IGNORECASE,
)


def parse_multipart(body: bytes, content_type: str) -> tuple[dict, list[tuple[str, bytes]]]:
    """Minimal multipart/form-data parser.

    Returns plain form fields and (filename, bytes) file parts in order.
    """
    match = re.search(r'boundary="?([^";]+)"?', content_type)
    if not match:
        raise MalformedPayload("multipart body without a boundary")
    boundary = b"--" + match.group(1).encode("ascii")
    fields: dict[str, str] = {}
    files: list[tuple[str, bytes]] = []
    chunks = body.split(boundary)
    # first chunk is a preamble, last is the "--\r\n" epilogue
    for chunk in chunks[1:-1]:
        chunk = chunk.removeprefix(b"\r\n")
        head, sep, payload = chunk.partition(b"\r\n\r\n")
        if not sep:
            raise MalformedPayload("multipart part without a header block")
        payload = payload.removesuffix(b"\r\n")
        disposition = None
        for line in head.split(b"\r\n"):
            if line.lower().startswith(b"content-disposition:"):
                disposition = _DISPOSITION.search(line)
        if disposition is None:
            raise MalformedPayload("multipart part without content-disposition")
        name = disposition.group("name").decode("utf-8", "replace")
        filename = disposition.group("filename")
        if filename is not None:
            files.append((filename.decode("utf-8", "replace"), payload))
        else:
            fields[name] = payload.decode("utf-8", "replace")
    return fields, files


def encode_multipart(
    fields: dict[str, str], files: list[tuple[str, str, bytes]]
) -> tuple[bytes, str]:
    """Build a multipart/form-data body; files are (field, filename, data)."""
    boundary = "arconform"
    out = bytearray()
    for name, value in fields.items():
        out += (
            f"--{boundary}\r\nContent-Disposition: form-data; "
            f'name="{name}"\r\n\r\n{value}\r\n'
        ).encode("utf-8")
    for name, filename, data in files:
        out += (
            f"--{boundary}\r\nContent-Disposition: form-data; "
            f'name="{name}"; filename="{filename}"\r\n'
            f"Content-Type: {PGM_CONTENT_TYPE}\r\n\r\n"
        ).encode("utf-8")
        out += data + b"\r\n"
    out += f"--{boundary}--\r\n".encode("utf-8")
    return bytes(out), f"multipart/form-data; boundary={boundary}"


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.0"
    hub: "Hub" = None  # injected by serve()

    # quiet by default; the hub logs what matters
    def log_message(self, format, *args):
        pass

    # -- plumbing ------------------------------------------------------------

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def _read_json(self) -> dict:
        body = self._read_body()
        if not body:
            return {}
        try:
            doc = loads(body)
        except ValueError as exc:
            raise MalformedPayload(f"request body is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise MalformedPayload("request body must be a JSON object")
        return doc

    def _send_json(self, payload: dict, status: int = 200) -> None:
        data = dumps_canonical(payload) + b"\n"
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def _send_error_payload(self, exc: ArconError) -> None:
        self._send_json(exc.to_payload(), _status_for(exc.code))

    def _route(self, method: str) -> None:
        parsed = urlparse(self.path)
        parts = [p for p in parsed.path.split("/") if p]
        query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
        try:
            handled = self._dispatch(method, parts, query)
        except ArconError as exc:
            self._send_error_payload(exc)
            return
        except (BrokenPipeError, ConnectionResetError):
            return
        except Exception as exc:  # noqa: BLE001 - surfaced as a 500
            self._send_json({"error": "Internal", "message": str(exc)}, 500)
            return
        if not handled:
            self._send_json({"error": "NotFound", "message": self.path}, 404)

    def do_GET(self):
        self._route("GET")

    def do_POST(self):
        self._route("POST")

    def do_DELETE(self):
        self._route("DELETE")

    def do_OPTIONS(self):
        # CORS preflight so a browser-served console can call the API
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Access-Control-Max-Age", "86400")
        self.end_headers()

    # -- routes --------------------------------------------------------------

    def _dispatch(self, method: str, parts: list[str], query: dict) -> bool:
        hub = self.hub
        if method == "GET" and parts == ["devices"]:
            self._send_json(
                {"devices": [device_summary(r) for r in hub.registry.list_devices()]}
            )
            return True
        if method == "POST" and parts == ["devices"]:
            self._register(hub)
            return True
        if method == "DELETE" and len(parts) == 2 and parts[0] == "devices":
            record = hub.remove_device(parts[1])
            self._send_json({"removed": record.device_id})
            return True
        if method == "GET" and parts == ["view"]:
            self._send_json(hub.current_view().to_payload())
            return True
        if method == "GET" and parts == ["frame", "current"]:
            current = hub.frames.current()
            if current is None:
                self._send_json({"error": "NotFound", "message": "no frames"}, 404)
                return True
            frame_id, frame = current
            data = encode_pgm(frame)
            self.send_response(200)
            self.send_header("Content-Type", PGM_CONTENT_TYPE)
            self.send_header("Content-Length", str(len(data)))
            self.send_header("X-Frame-Id", frame_id)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Expose-Headers", "X-Frame-Id")
            self.end_headers()
            self.wfile.write(data)
            return True
        if (
            method == "POST"
            and len(parts) == 3
            and parts[0] == "devices"
            and parts[2] == "commands"
        ):
            doc = self._read_json()
            cmd = Command.from_payload(doc)
            result = hub.dispatch(parts[1], cmd)
            self._send_json(result.to_payload())
            return True
        if method == "POST" and parts == ["transfers"]:
            doc = self._read_json()
            try:
                src = str(doc["src_device_id"])
                dst = str(doc["dst_device_id"])
                total = int(doc["total_bytes"])
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedPayload(f"bad transfer request: {exc}") from None
            job = hub.start_transfer(
                src,
                dst,
                label=str(doc.get("label", "")),
                total_bytes=total,
                chunk_bytes=int(doc.get("chunk_bytes", 256)),
            )
            self._send_json(job.to_payload(), 201)
            return True
        if method == "GET" and len(parts) == 2 and parts[0] == "transfers":
            self._send_json(hub.get_transfer(parts[1]).to_payload())
            return True
        if method == "GET" and parts == ["events"]:
            self._stream_events(hub, query.get("device_id"))
            return True
        if method == "POST" and parts == ["scan"]:
            body = self._read_body()
            frame = None
            if body:
                frame = decode_pgm(body)
            recognitions = hub.scan_now(frame)
            self._send_json(
                {
                    "frame_id": hub.current_view().frame_id,
                    "recognitions": [r.to_payload() for r in recognitions],
                }
            )
            return True
        return False

    def _register(self, hub: "Hub") -> None:
        content_type = self.headers.get("Content-Type") or ""
        if "multipart/form-data" not in content_type:
            raise MalformedPayload("registration requires multipart/form-data")
        fields, files = parse_multipart(self._read_body(), content_type)
        images = [decode_pgm(data) for _, data in files]
        capabilities = None
        if fields.get("capabilities"):
            capabilities = [
                c.strip() for c in fields["capabilities"].split(",") if c.strip()
            ]
        record = hub.register_device(
            name=fields.get("name", ""),
            address=fields.get("address", ""),
            kind=fields.get("kind", "generic"),
            capabilities=capabilities,
            images=images,
        )
        self._send_json(device_summary(record), 201)

    def _stream_events(self, hub: "Hub", device_id: str | None) -> None:
        sub = hub.subscribe_events(device_id)
        try:
            self.send_response(200)
            self.send_header("Content-Type", "application/x-ndjson")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            while True:
                event = sub.get(timeout=0.5)
                if event is None:
                    # keepalive blank line; readers skip empties and we
                    # notice a gone client by the failed write
                    self.wfile.write(b"\n")
                    self.wfile.flush()
                    continue
                self.wfile.write(dumps_canonical(event.to_payload()) + b"\n")
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            sub.close()


def serve(hub: "Hub", host: str, port: int) -> ThreadingHTTPServer:
    """Start the API server on a daemon thread; returns the live server."""
    handler = type("BoundHandler", (_Handler,), {"hub": hub})
    try:
        server = ThreadingHTTPServer((host, port), handler)
    except OSError as exc:
        raise PortUnavailable(f"cannot listen on {host}:{port}: {exc}") from exc
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
