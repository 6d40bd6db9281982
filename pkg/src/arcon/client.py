"""Thin HTTP client for the hub API, shared by the CLI and tests."""

from __future__ import annotations

import socket
import urllib.error
import urllib.request
from typing import Iterator

from .canonical import dumps_canonical, loads
from .errors import ArconError, TransportFailure, error_from_code
from .httpapi import PGM_CONTENT_TYPE, encode_multipart


class HubClient:
    def __init__(self, hub: str = "127.0.0.1:7420", timeout: float = 10.0):
        if "//" in hub:
            hub = hub.split("//", 1)[1]
        self.base = f"http://{hub.rstrip('/')}"
        self.timeout = timeout

    # -- transport -----------------------------------------------------------

    def _request(
        self,
        method: str,
        path: str,
        body: bytes | None = None,
        content_type: str | None = None,
        timeout: float | None = None,
    ):
        req = urllib.request.Request(self.base + path, data=body, method=method)
        if content_type:
            req.add_header("Content-Type", content_type)
        try:
            return urllib.request.urlopen(req, timeout=timeout or self.timeout)
        except urllib.error.HTTPError as exc:
            raw = exc.read()
            try:
                doc = loads(raw)
            except ValueError:
                doc = {}
            if isinstance(doc, dict) and "error" in doc:
                raise error_from_code(
                    str(doc["error"]), str(doc.get("message", ""))
                ) from None
            raise TransportFailure(f"hub returned {exc.code} for {path}") from None
        except (urllib.error.URLError, socket.timeout, ConnectionError, OSError) as exc:
            raise TransportFailure(f"hub unreachable at {self.base}: {exc}") from None

    def _json(self, method: str, path: str, payload: dict | None = None) -> dict:
        body = dumps_canonical(payload) if payload is not None else None
        with self._request(
            method, path, body, "application/json" if body else None
        ) as resp:
            return loads(resp.read())

    # -- endpoints -----------------------------------------------------------

    def devices(self) -> list[dict]:
        return self._json("GET", "/devices")["devices"]

    def register(
        self,
        name: str,
        kind: str,
        address: str,
        images: list[tuple[str, bytes]],
        capabilities: list[str] | None = None,
    ) -> dict:
        fields = {"name": name, "kind": kind, "address": address}
        if capabilities:
            fields["capabilities"] = ",".join(capabilities)
        body, content_type = encode_multipart(
            fields, [("image", filename, data) for filename, data in images]
        )
        with self._request("POST", "/devices", body, content_type) as resp:
            return loads(resp.read())

    def remove(self, device_id: str) -> dict:
        return self._json("DELETE", f"/devices/{device_id}")

    def view(self) -> dict:
        return self._json("GET", "/view")

    def current_frame(self) -> bytes:
        with self._request("GET", "/frame/current") as resp:
            return resp.read()

    def command(self, device_id: str, kind: str, args: dict | None = None) -> dict:
        return self._json(
            "POST", f"/devices/{device_id}/commands", {"kind": kind, "args": args or {}}
        )

    def transfer(
        self,
        src_device_id: str,
        dst_device_id: str,
        label: str,
        total_bytes: int,
        chunk_bytes: int = 256,
    ) -> dict:
        return self._json(
            "POST",
            "/transfers",
            {
                "src_device_id": src_device_id,
                "dst_device_id": dst_device_id,
                "label": label,
                "total_bytes": total_bytes,
                "chunk_bytes": chunk_bytes,
            },
        )

    def get_transfer(self, job_id: str) -> dict:
        return self._json("GET", f"/transfers/{job_id}")

    def scan(self, frame_bytes: bytes | None = None) -> dict:
        with self._request(
            "POST", "/scan", frame_bytes, PGM_CONTENT_TYPE if frame_bytes else None
        ) as resp:
            return loads(resp.read())

    def events(
        self, device_id: str | None = None, timeout: float = 3600.0
    ) -> Iterator[dict]:
        """Stream events as dicts until the connection drops."""
        path = "/events"
        if device_id:
            path += f"?device_id={device_id}"
        resp = self._request("GET", path, timeout=timeout)
        try:
            for line in resp:
                line = line.strip()
                if not line:
                    continue
                try:
                    yield loads(line)
                except ValueError:
                    continue
        except (ConnectionError, socket.timeout, OSError) as exc:
            raise TransportFailure(f"event stream dropped: {exc}") from None
        finally:
            resp.close()
