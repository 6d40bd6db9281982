"""Canonical JSON: UTF-8, sorted keys, no insignificant whitespace.

Every byte sequence the system persists or puts on the wire goes through
dumps_canonical so that checksums and frame lengths are reproducible.
"""

import json
from typing import Any


def dumps_canonical(obj: Any) -> bytes:
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def loads(data: bytes) -> Any:
    return json.loads(data.decode("utf-8"))
