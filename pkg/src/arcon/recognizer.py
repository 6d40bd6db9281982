"""Matching engine: difference hashing and multi-scale template correlation.

All operations are pure functions on immutable inputs. The sliding-window
scan shares one integral image per frame so scanning many devices costs
little more than scanning one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import ArconError
from .frames import GrayFrame

if TYPE_CHECKING:
    from .registry import DeviceRecord

TEMPLATE_SIZE = 32
HASH_COLS = 9
HASH_ROWS = 8

DEFAULT_SCALES = (0.5, 0.75, 1.0, 1.25, 1.5)
DEFAULT_STRIDE = 8
DEFAULT_THRESHOLD = 0.80
DEFAULT_MAX_SIMULTANEOUS = 5


class WindowLargerThanFrame(ArconError):
    code = "WindowLargerThanFrame"


@dataclass(frozen=True)
class ScanConfig:
    scales: tuple[float, ...] = DEFAULT_SCALES
    stride: int = DEFAULT_STRIDE
    threshold: float = DEFAULT_THRESHOLD
    max_simultaneous: int = DEFAULT_MAX_SIMULTANEOUS

    def validate(self) -> "ScanConfig":
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError("scales must be non-empty and positive")
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must be in (0, 1]")
        if self.max_simultaneous < 1:
            raise ValueError("max_simultaneous must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        return self


@dataclass(frozen=True)
class MatchCandidate:
    bbox: tuple[int, int, int, int]  # x, y, w, h in frame pixels
    score: float
    scale: float
    signature_index: int

    def sort_key(self):
        x, y, _, _ = self.bbox
        return (-self.score, y, x, self.scale, self.signature_index)


@dataclass(frozen=True)
class Recognition:
    device_id: str
    best: MatchCandidate

    def to_payload(self) -> dict:
        x, y, w, h = self.best.bbox
        return {
            "device_id": self.device_id,
            "bbox": [x, y, w, h],
            "score": self.best.score,
            "scale": self.best.scale,
            "signature_index": self.best.signature_index,
        }


def _cell_bounds(src: int, out: int) -> tuple[np.ndarray, np.ndarray]:
    """Partition [0, src) into `out` cells; upsampling repeats source rows."""
    edges = (np.arange(out + 1, dtype=np.int64) * src) // out
    lo = edges[:-1]
    hi = np.maximum(edges[1:], lo + 1)
    return lo, hi


def _integral(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape
    out = np.zeros((h + 1, w + 1), dtype=np.int64)
    out[1:, 1:] = arr.astype(np.int64).cumsum(axis=0).cumsum(axis=1)
    return out


def box_resample(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample by averaging the source partitioned into an out_h x out_w grid."""
    src_h, src_w = arr.shape
    ylo, yhi = _cell_bounds(src_h, out_h)
    xlo, xhi = _cell_bounds(src_w, out_w)
    integral = _integral(arr)
    sums = (
        integral[yhi[:, None], xhi[None, :]]
        - integral[ylo[:, None], xhi[None, :]]
        - integral[yhi[:, None], xlo[None, :]]
        + integral[ylo[:, None], xlo[None, :]]
    )
    counts = (yhi - ylo)[:, None] * (xhi - xlo)[None, :]
    return sums / counts


def normalize_patch(values: np.ndarray) -> np.ndarray:
    """Flatten, subtract the mean, scale to unit L2 norm (all-zero if flat)."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    centered = flat - flat.mean()
    norm = float(np.sqrt(np.dot(centered, centered)))
    if norm == 0.0:
        return np.zeros_like(flat)
    return centered / norm


def dhash(frame: GrayFrame) -> int:
    """64-bit difference hash over a 9x8 box-resampled grid.

    Bit r*8+c (LSB first) is set iff cell (r, c) is darker than its right
    neighbor, so the hash survives any luminance change that preserves
    pixel ordering.
    """
    frame.validate()
    grid = box_resample(frame.as_array(), HASH_ROWS, HASH_COLS)
    bits = grid[:, :-1] < grid[:, 1:]
    value = 0
    for i, bit in enumerate(bits.ravel()):
        if bit:
            value |= 1 << i
    return value


def hamming(a: int, b: int) -> int:
    return (a ^ b).bit_count()


def ncc(template: np.ndarray, window: np.ndarray) -> float:
    """Correlate a pre-normalized template against a raw window.

    The window is mean-subtracted and L2-normalized here; a zero-variance
    window scores 0 by convention.
    """
    t = np.asarray(template, dtype=np.float64).ravel()
    w = np.asarray(window, dtype=np.float64).ravel()
    if t.shape != w.shape:
        raise ValueError(f"shape mismatch: template {t.shape} vs window {w.shape}")
    centered = w - w.mean()
    norm = float(np.sqrt(np.dot(centered, centered)))
    if norm == 0.0:
        return 0.0
    return float(np.dot(t, centered) / norm)


def window_size(scale: float) -> int:
    return int(round(TEMPLATE_SIZE * scale))


class _FrameWindows:
    """Sliding windows of one frame, box-resampled and normalized per scale.

    The per-scale stack is computed once and scored against every signature,
    which keeps a multi-device scan near the single-device cost.
    """

    def __init__(self, frame: GrayFrame, stride: int):
        self.arr = frame.as_array()
        self.height, self.width = self.arr.shape
        self.stride = stride
        self.integral = _integral(self.arr)

    def stack(self, scale: float):
        """(centered, norms, ys, xs, win) for one scale, or None if the
        window does not fit in the frame."""
        win = window_size(scale)
        if win < 1 or win > self.width or win > self.height:
            return None
        ys = np.arange(0, self.height - win + 1, self.stride)
        xs = np.arange(0, self.width - win + 1, self.stride)
        ylo, yhi = _cell_bounds(win, TEMPLATE_SIZE)
        xlo, xhi = _cell_bounds(win, TEMPLATE_SIZE)
        counts = ((yhi - ylo)[:, None] * (xhi - xlo)[None, :]).astype(np.float64)
        cells = np.empty(
            (len(ys), len(xs), TEMPLATE_SIZE, TEMPLATE_SIZE), dtype=np.float64
        )
        xs_lo = xs[:, None] + xlo[None, :]
        xs_hi = xs[:, None] + xhi[None, :]
        for r in range(TEMPLATE_SIZE):
            dy = self.integral[ys + yhi[r]] - self.integral[ys + ylo[r]]
            cells[:, :, r, :] = dy[:, xs_hi] - dy[:, xs_lo]
        flat = (cells / counts).reshape(-1, TEMPLATE_SIZE * TEMPLATE_SIZE)
        centered = flat - flat.mean(axis=1, keepdims=True)
        norms = np.sqrt(np.einsum("ij,ij->i", centered, centered))
        return centered, norms, ys, xs, win


def _best_at_scale(stack, template: np.ndarray, scale: float, sig_idx: int):
    centered, norms, ys, xs, win = stack
    dots = centered @ template
    scores = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
    # first argmax in row-major order = smallest y, then smallest x
    i = int(np.argmax(scores))
    y = int(ys[i // len(xs)])
    x = int(xs[i % len(xs)])
    return MatchCandidate(
        bbox=(x, y, win, win),
        score=float(scores[i]),
        scale=scale,
        signature_index=sig_idx,
    )


def _pick_better(best: MatchCandidate | None, cand: MatchCandidate) -> MatchCandidate:
    if best is None or cand.sort_key() < best.sort_key():
        return cand
    return best


def _scan_records(
    frame: GrayFrame,
    records: Sequence["DeviceRecord"],
    cfg: ScanConfig,
) -> tuple[dict, bool]:
    """Best candidate per device id across scales; scale loop is outermost so
    only one window stack is live at a time."""
    windows = _FrameWindows(frame, cfg.stride)
    best: dict[str, MatchCandidate | None] = {r.device_id: None for r in records}
    any_scale = False
    for scale in cfg.scales:
        stack = windows.stack(scale)
        if stack is None:
            continue
        any_scale = True
        for record in records:
            for sig_idx, sig in enumerate(record.signatures):
                cand = _best_at_scale(stack, sig.template, scale, sig_idx)
                best[record.device_id] = _pick_better(best[record.device_id], cand)
    return best, any_scale


def match_device(
    frame: GrayFrame, record: "DeviceRecord", cfg: ScanConfig | None = None
) -> MatchCandidate | None:
    """Best match of any of the record's signatures at any scale, or None if
    the best score is below the recognition threshold.

    Score ties break toward smaller y, then x, then scale, then signature
    index, which makes the result reproducible against exhaustive search.
    """
    cfg = (cfg or ScanConfig()).validate()
    frame.validate()
    best, any_scale = _scan_records(frame, [record], cfg)
    if not any_scale:
        raise WindowLargerThanFrame(
            f"no scale in {cfg.scales} fits a window inside "
            f"{frame.width}x{frame.height}"
        )
    cand = best[record.device_id]
    if cand is None or cand.score < cfg.threshold:
        return None
    return cand


def scan_frame(
    frame: GrayFrame,
    records: Sequence["DeviceRecord"],
    cfg: ScanConfig | None = None,
) -> list[Recognition]:
    """Match every record against the frame, keep those at or above the
    threshold, strongest first, truncated to cfg.max_simultaneous."""
    cfg = (cfg or ScanConfig()).validate()
    frame.validate()
    if not records:
        return []
    best, any_scale = _scan_records(frame, records, cfg)
    if not any_scale:
        return []
    hits = [
        Recognition(device_id=device_id, best=cand)
        for device_id, cand in best.items()
        if cand is not None and cand.score >= cfg.threshold
    ]
    hits.sort(key=lambda r: (-r.best.score, r.device_id))
    return hits[: cfg.max_simultaneous]
