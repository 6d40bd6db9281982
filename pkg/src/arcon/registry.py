"""Device registry: reference-image validation, signatures, persistence.

Registration turns 1-6 pictures of a device into matchable signatures
(difference hash + normalized 32x32 template). The registry file is
versioned canonical JSON with a CRC32 over the device payload so a
truncated or bit-flipped file never loads silently.
"""

from __future__ import annotations

import base64
import threading
import time
import uuid
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import recognizer
from .canonical import dumps_canonical, loads
from .devices import CommandKind, DeviceKind, capabilities_for
from .errors import (
    CorruptRegistry,
    DuplicateImage,
    InsufficientDetail,
    InvalidArgument,
    IoFailure,
    NoImages,
    TooManyImages,
    UnknownDevice,
)
from .frames import GrayFrame

DEFAULT_DETAIL_THRESHOLD = 2.0
MAX_SIGNATURES = 6
REGISTRY_VERSION = 1

# duplicate-image rejection: identical dhash AND near-identical template
DUPLICATE_TEMPLATE_DISTANCE = 1e-6


@dataclass(frozen=True)
class DetailReport:
    score: float
    passed: bool
    threshold: float

    def to_payload(self) -> dict:
        return {"score": self.score, "pass": self.passed, "threshold": self.threshold}


@dataclass(frozen=True, eq=False)
class ImageSignature:
    dhash: int
    template: np.ndarray  # (1024,) float64, zero mean, unit L2 norm
    detail_score: float
    source_dims: tuple[int, int]  # original width, height


@dataclass(frozen=True)
class DeviceRecord:
    device_id: str
    name: str
    address: str
    kind: DeviceKind
    capabilities: frozenset[CommandKind]
    signatures: tuple[ImageSignature, ...]
    created_at: float


def validate_detail(
    image: GrayFrame, threshold: float = DEFAULT_DETAIL_THRESHOLD
) -> DetailReport:
    """Mean forward-difference gradient energy over interior pixels.

    A picture needs enough texture to be matchable; flat images score 0.
    """
    image.validate()
    arr = image.as_array().astype(np.int64)
    dx = np.abs(np.diff(arr, axis=1))[:-1, :]
    dy = np.abs(np.diff(arr, axis=0))[:, :-1]
    score = float((dx + dy).mean())
    return DetailReport(score=score, passed=score >= threshold, threshold=threshold)


def make_signature(
    image: GrayFrame, detail_threshold: float = DEFAULT_DETAIL_THRESHOLD
) -> ImageSignature:
    report = validate_detail(image, detail_threshold)
    if not report.passed:
        raise InsufficientDetail(
            f"detail score {report.score:.3f} below threshold {report.threshold}",
            report=report,
        )
    arr = image.as_array()
    template = recognizer.normalize_patch(
        recognizer.box_resample(arr, recognizer.TEMPLATE_SIZE, recognizer.TEMPLATE_SIZE)
    )
    return ImageSignature(
        dhash=recognizer.dhash(image),
        template=template,
        detail_score=report.score,
        source_dims=(image.width, image.height),
    )


def signatures_duplicate(a: ImageSignature, b: ImageSignature) -> bool:
    if a.dhash != b.dhash:
        return False
    return float(np.linalg.norm(a.template - b.template)) < DUPLICATE_TEMPLATE_DISTANCE


class Registry:
    """Thread-safe store of device records keyed by device id."""

    def __init__(
        self,
        detail_threshold: float = DEFAULT_DETAIL_THRESHOLD,
        clock: Callable[[], float] = time.time,
    ):
        self.detail_threshold = detail_threshold
        self._clock = clock
        self._lock = threading.RLock()
        self._records: dict[str, DeviceRecord] = {}

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def register_device(
        self,
        name: str,
        address: str,
        kind: DeviceKind | str,
        capabilities: Iterable[CommandKind | str] | None = None,
        images: Sequence[GrayFrame] = (),
    ) -> DeviceRecord:
        if not name:
            raise InvalidArgument("device name must be non-empty")
        kind = DeviceKind.parse(kind)
        allowed = capabilities_for(kind)
        if capabilities is None:
            caps = allowed
        else:
            caps = frozenset(CommandKind.parse(c) for c in capabilities)
            unsupported = caps - allowed
            if unsupported:
                names = sorted(c.value for c in unsupported)
                raise InvalidArgument(
                    f"{kind.value} agent cannot execute {names}"
                )
        if not images:
            raise NoImages("at least one registration image is required")
        if len(images) > MAX_SIGNATURES:
            raise TooManyImages(
                f"{len(images)} images given, maximum is {MAX_SIGNATURES}"
            )
        signatures: list[ImageSignature] = []
        for index, image in enumerate(images):
            try:
                sig = make_signature(image, self.detail_threshold)
            except InsufficientDetail as exc:
                raise InsufficientDetail(
                    f"image {index}: {exc.message}", report=exc.report, index=index
                ) from None
            for prev_index, prev in enumerate(signatures):
                if signatures_duplicate(prev, sig):
                    raise DuplicateImage(
                        f"image {index} duplicates image {prev_index}"
                    )
            signatures.append(sig)
        record = DeviceRecord(
            device_id=str(uuid.uuid4()),
            name=name,
            address=address,
            kind=kind,
            capabilities=caps,
            signatures=tuple(signatures),
            created_at=float(self._clock()),
        )
        with self._lock:
            self._records[record.device_id] = record
        return record

    def list_devices(self) -> list[DeviceRecord]:
        with self._lock:
            records = list(self._records.values())
        records.sort(key=lambda r: (r.created_at, r.device_id))
        return records

    def get_device(self, device_id: str) -> DeviceRecord:
        with self._lock:
            try:
                return self._records[device_id]
            except KeyError:
                raise UnknownDevice(f"no device {device_id!r}") from None

    def find_by_address(self, address: str) -> DeviceRecord | None:
        with self._lock:
            for record in self._records.values():
                if record.address == address:
                    return record
        return None

    def remove_device(self, device_id: str) -> DeviceRecord:
        with self._lock:
            try:
                return self._records.pop(device_id)
            except KeyError:
                raise UnknownDevice(f"no device {device_id!r}") from None

    # -- persistence ---------------------------------------------------------

    def persist(self, path: str | Path) -> int:
        path = Path(path)
        with self._lock:
            devices = [_record_to_json(r) for r in self.list_devices()]
        payload = dumps_canonical(devices)
        crc = f"{zlib.crc32(payload) & 0xFFFFFFFF:08x}"
        data = dumps_canonical(
            {"crc32": crc, "devices": devices, "version": REGISTRY_VERSION}
        )
        tmp = path.with_name(path.name + ".tmp")
        try:
            tmp.write_bytes(data)
            tmp.replace(path)
        except OSError as exc:
            raise IoFailure(f"cannot write registry {path}: {exc}") from exc
        return len(data)

    @classmethod
    def load(
        cls,
        path: str | Path,
        detail_threshold: float = DEFAULT_DETAIL_THRESHOLD,
        clock: Callable[[], float] = time.time,
    ) -> "Registry":
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise IoFailure(f"cannot read registry {path}: {exc}") from exc
        try:
            doc = loads(data)
        except (UnicodeDecodeError, ValueError) as exc:
            raise CorruptRegistry(f"registry {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise CorruptRegistry(f"registry {path}: top level must be an object")
        if doc.get("version") != REGISTRY_VERSION:
            raise CorruptRegistry(
                f"registry {path}: unsupported version {doc.get('version')!r}"
            )
        devices = doc.get("devices")
        if not isinstance(devices, list):
            raise CorruptRegistry(f"registry {path}: devices must be a list")
        expected = f"{zlib.crc32(dumps_canonical(devices)) & 0xFFFFFFFF:08x}"
        if doc.get("crc32") != expected:
            raise CorruptRegistry(
                f"registry {path}: checksum mismatch "
                f"(stored {doc.get('crc32')!r}, computed {expected!r})"
            )
        registry = cls(detail_threshold=detail_threshold, clock=clock)
        for entry in devices:
            record = _record_from_json(entry, path)
            registry._records[record.device_id] = record
        return registry


def _record_to_json(record: DeviceRecord) -> dict:
    return {
        "address": record.address,
        "capabilities": sorted(c.value for c in record.capabilities),
        "created_at": record.created_at,
        "device_id": record.device_id,
        "kind": record.kind.value,
        "name": record.name,
        "signatures": [
            {
                "detail_score": sig.detail_score,
                "dhash": f"{sig.dhash:016x}",
                "source_dims": list(sig.source_dims),
                "template": base64.b64encode(
                    sig.template.astype("<f8").tobytes()
                ).decode("ascii"),
            }
            for sig in record.signatures
        ],
    }


def _record_from_json(entry: dict, path: Path) -> DeviceRecord:
    try:
        signatures = []
        for sig in entry["signatures"]:
            template = np.frombuffer(
                base64.b64decode(sig["template"], validate=True), dtype="<f8"
            ).astype(np.float64)
            if template.shape != (recognizer.TEMPLATE_SIZE**2,):
                raise ValueError(f"template has {template.size} values")
            signatures.append(
                ImageSignature(
                    dhash=int(sig["dhash"], 16),
                    template=template,
                    detail_score=float(sig["detail_score"]),
                    source_dims=(int(sig["source_dims"][0]), int(sig["source_dims"][1])),
                )
            )
        if not 1 <= len(signatures) <= MAX_SIGNATURES:
            raise ValueError(f"{len(signatures)} signatures")
        return DeviceRecord(
            device_id=str(entry["device_id"]),
            name=str(entry["name"]),
            address=str(entry["address"]),
            kind=DeviceKind(entry["kind"]),
            capabilities=frozenset(
                CommandKind(c) for c in entry["capabilities"]
            ),
            signatures=tuple(signatures),
            created_at=float(entry["created_at"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptRegistry(f"registry {path}: bad device entry: {exc}") from exc
