"""Grayscale frames and binary PGM (P5) ingestion.

Frames stand in for the live camera: 8-bit luminance, row-major. The minimum
size (9x8) is what the difference hash grid needs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IoFailure, MalformedImage

MIN_WIDTH = 9
MIN_HEIGHT = 8


@dataclass(frozen=True)
class GrayFrame:
    width: int
    height: int
    pixels: bytes  # row-major, len == width * height

    def validate(self) -> "GrayFrame":
        if self.width < MIN_WIDTH or self.height < MIN_HEIGHT:
            raise MalformedImage(
                f"frame must be at least {MIN_WIDTH}x{MIN_HEIGHT}, "
                f"got {self.width}x{self.height}"
            )
        if len(self.pixels) != self.width * self.height:
            raise MalformedImage(
                f"pixel count {len(self.pixels)} != {self.width}x{self.height}"
            )
        return self

    def as_array(self) -> np.ndarray:
        """View as a (height, width) uint8 array."""
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(
            self.height, self.width
        )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "GrayFrame":
        if arr.ndim != 2:
            raise MalformedImage(f"expected a 2-D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.issubdtype(arr.dtype, np.integer) and arr.min() >= 0 and arr.max() <= 255:
                arr = arr.astype(np.uint8)
            else:
                raise MalformedImage(f"pixel values must be 8-bit, dtype {arr.dtype}")
        h, w = arr.shape
        return cls(width=w, height=h, pixels=arr.tobytes()).validate()


_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*((?:\d+))")


def _read_header_ints(data: bytes, start: int, count: int) -> tuple[list[int], int]:
    values = []
    pos = start
    for _ in range(count):
        m = _PGM_TOKEN.match(data, pos)
        if not m:
            raise MalformedImage("truncated PGM header")
        values.append(int(m.group(1)))
        pos = m.end()
    return values, pos


def decode_pgm(data: bytes) -> GrayFrame:
    """Parse a binary PGM (P5, maxval 255)."""
    if not data.startswith(b"P5"):
        raise MalformedImage("not a binary PGM (missing P5 magic)")
    (width, height, maxval), pos = _read_header_ints(data, 2, 3)
    if maxval != 255:
        raise MalformedImage(f"PGM maxval must be 255, got {maxval}")
    # exactly one whitespace byte separates the header from pixel data
    pos += 1
    pixels = data[pos : pos + width * height]
    if len(pixels) != width * height:
        raise MalformedImage(
            f"PGM body has {len(pixels)} bytes, expected {width * height}"
        )
    return GrayFrame(width=width, height=height, pixels=pixels).validate()


def encode_pgm(frame: GrayFrame) -> bytes:
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii")
    return header + frame.pixels


def read_pgm(path: str | Path) -> GrayFrame:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode_pgm(data)


def write_pgm(path: str | Path, frame: GrayFrame) -> int:
    data = encode_pgm(frame)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return len(data)
