"""Controller service: registry, periodic scans, sessions, commands, transfers.

The hub is the master side of the pairing network plus everything the
console needs: a frame source standing in for the camera, a scan loop
publishing immutable view snapshots, a command dispatcher that routes
through active sessions, chunked transfers, and a bounded event stream.
"""

from __future__ import annotations

import math
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterator

from .canonical import loads
from .devices import Command, CommandKind, DeviceState, Event, EventKind
from .errors import (
    ArconError,
    ConfigInvalid,
    CorruptRegistry,
    InvalidArgument,
    IoFailure,
    NotPaired,
    RegistryLoadFailure,
    SelfTransfer,
    UnknownDevice,
    error_from_code,
)
from .frames import GrayFrame, read_pgm
from .pairnet import (
    Endpoint,
    NetConfig,
    PairingSession,
    Piconet,
    Role,
    SessionState,
)
from .recognizer import Recognition, ScanConfig, WindowLargerThanFrame, scan_frame
from .registry import Registry

DEFAULT_API_PORT = 7420
DEFAULT_NET_PORT = 7421
DEFAULT_FRAME_RATE_FPS = 2.0
DEFAULT_SCAN_INTERVAL_S = 0.25
DEFAULT_CHUNK_BYTES = 256
DEFAULT_EVENT_BUFFER = 256


def _parse_listen(value: str, default_port: int) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep:
        return value or "127.0.0.1", default_port
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise ConfigInvalid(f"bad listen address {value!r}") from None


@dataclass(frozen=True)
class HubConfig:
    registry_path: Path
    frame_source: Path | None = None
    net: NetConfig = field(default_factory=NetConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)
    api_listen: str = f"127.0.0.1:{DEFAULT_API_PORT}"
    net_listen: str = f"127.0.0.1:{DEFAULT_NET_PORT}"
    master_address: str = "hub"
    master_position: tuple[float, float] = (0.0, 0.0)
    frame_rate_fps: float = DEFAULT_FRAME_RATE_FPS
    scan_interval_s: float = DEFAULT_SCAN_INTERVAL_S
    topology: tuple[Endpoint, ...] = ()
    event_buffer: int = DEFAULT_EVENT_BUFFER

    def validate(self) -> "HubConfig":
        self.net.validate()
        try:
            self.scan.validate()
        except ValueError as exc:
            raise ConfigInvalid(f"bad scan config: {exc}") from exc
        if not self.master_address:
            raise ConfigInvalid("master address must be non-empty")
        if not (
            math.isfinite(self.master_position[0])
            and math.isfinite(self.master_position[1])
        ):
            raise ConfigInvalid("master position must be finite")
        if not self.frame_rate_fps > 0:
            raise ConfigInvalid("frame rate must be positive")
        if not self.scan_interval_s > 0:
            raise ConfigInvalid("scan interval must be positive")
        if self.event_buffer < 1:
            raise ConfigInvalid("event buffer must hold at least one event")
        if self.frame_source is not None and not self.frame_source.exists():
            raise ConfigInvalid(f"frame source {self.frame_source} does not exist")
        _parse_listen(self.api_listen, DEFAULT_API_PORT)
        _parse_listen(self.net_listen, DEFAULT_NET_PORT)
        return self

    @classmethod
    def from_payload(cls, payload: dict, base_dir: Path | None = None) -> "HubConfig":
        if not isinstance(payload, dict):
            raise ConfigInvalid("hub config must be an object")

        def _path(value: str) -> Path:
            p = Path(value)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            return p

        try:
            net = NetConfig(**payload.get("net", {}))
            scan_args = dict(payload.get("scan", {}))
            if "scales" in scan_args:
                scan_args["scales"] = tuple(scan_args["scales"])
            scan = ScanConfig(**scan_args)
            pos = payload.get("master_position", {})
            topology = tuple(
                Endpoint(
                    address=str(e["address"]),
                    x_m=float(e["x_m"]),
                    y_m=float(e["y_m"]),
                    role=Role(e.get("role", "slave")),
                ).validate()
                for e in payload.get("topology", ())
            )
            return cls(
                registry_path=_path(str(payload["registry_path"])),
                frame_source=(
                    _path(str(payload["frame_source"]))
                    if payload.get("frame_source")
                    else None
                ),
                net=net,
                scan=scan,
                api_listen=str(payload.get("api_listen", f"127.0.0.1:{DEFAULT_API_PORT}")),
                net_listen=str(payload.get("net_listen", f"127.0.0.1:{DEFAULT_NET_PORT}")),
                master_address=str(payload.get("master_address", "hub")),
                master_position=(
                    float(pos.get("x_m", 0.0)),
                    float(pos.get("y_m", 0.0)),
                ),
                frame_rate_fps=float(
                    payload.get("frame_rate_fps", DEFAULT_FRAME_RATE_FPS)
                ),
                scan_interval_s=float(
                    payload.get("scan_interval_s", DEFAULT_SCAN_INTERVAL_S)
                ),
                topology=topology,
                event_buffer=int(payload.get("event_buffer", DEFAULT_EVENT_BUFFER)),
            ).validate()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid(f"bad hub config: {exc}") from exc


def load_hub_config(path: str | Path) -> HubConfig:
    path = Path(path)
    try:
        doc = loads(path.read_bytes())
    except OSError as exc:
        raise IoFailure(f"cannot read hub config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigInvalid(f"hub config {path} is not valid JSON: {exc}") from exc
    return HubConfig.from_payload(doc, base_dir=path.parent)


class FrameSource:
    """Plays a directory of frames in filename order at a fixed rate.

    A single file is a static scene. Playback holds the last frame, so
    scans keep working after the sequence ends.
    """

    def __init__(
        self,
        path: Path | None,
        fps: float = DEFAULT_FRAME_RATE_FPS,
        clock: Callable[[], float] = time.monotonic,
    ):
        self._clock = clock
        self._fps = fps
        self._frames: list[tuple[str, GrayFrame]] = []
        if path is not None:
            if path.is_dir():
                names = sorted(p.name for p in path.glob("*.pgm"))
                self._frames = [(n, read_pgm(path / n)) for n in names]
            else:
                self._frames = [(path.name, read_pgm(path))]
        self._started = self._clock()

    def __len__(self) -> int:
        return len(self._frames)

    def current(self) -> tuple[str, GrayFrame] | None:
        if not self._frames:
            return None
        elapsed = max(self._clock() - self._started, 0.0)
        index = min(int(elapsed * self._fps), len(self._frames) - 1)
        return self._frames[index]


class TransferState(str, Enum):
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


@dataclass
class TransferJob:
    job_id: str
    src_device_id: str
    dst_device_id: str
    label: str
    total_bytes: int
    sent_bytes: int = 0
    chunk_bytes: int = DEFAULT_CHUNK_BYTES
    state: TransferState = TransferState.RUNNING

    def to_payload(self) -> dict:
        return {
            "job_id": self.job_id,
            "src_device_id": self.src_device_id,
            "dst_device_id": self.dst_device_id,
            "label": self.label,
            "total_bytes": self.total_bytes,
            "sent_bytes": self.sent_bytes,
            "chunk_bytes": self.chunk_bytes,
            "state": self.state.value,
        }

    def copy(self) -> "TransferJob":
        return TransferJob(**{k: getattr(self, k) for k in self.__dataclass_fields__})


@dataclass(frozen=True)
class ViewModel:
    frame_id: str | None
    scan_epoch: int
    recognitions: tuple[Recognition, ...]
    device_states: dict[str, DeviceState]
    sessions: dict[str, str]
    active_transfers: tuple[TransferJob, ...]

    def to_payload(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "scan_epoch": self.scan_epoch,
            "recognitions": [r.to_payload() for r in self.recognitions],
            "device_states": {
                device_id: state.to_payload()
                for device_id, state in sorted(self.device_states.items())
            },
            "sessions": dict(sorted(self.sessions.items())),
            "active_transfers": [t.to_payload() for t in self.active_transfers],
        }


class _Subscription:
    def __init__(self, bus: "EventBus", device_id: str | None, capacity: int):
        self._bus = bus
        self.device_id = device_id
        self._queue: deque[Event] = deque(maxlen=capacity)
        self._cond = threading.Condition()
        self.dropped = 0
        self.closed = False

    def _offer(self, event: Event) -> None:
        with self._cond:
            if self.device_id is not None and event.device_id != self.device_id:
                return
            if len(self._queue) == self._queue.maxlen:
                self.dropped += 1
            self._queue.append(event)
            self._cond.notify()

    def get(self, timeout: float | None = None) -> Event | None:
        with self._cond:
            if not self._queue:
                self._cond.wait(timeout)
            if not self._queue:
                return None
            return self._queue.popleft()

    def drain(self) -> list[Event]:
        with self._cond:
            out = list(self._queue)
            self._queue.clear()
            return out

    def close(self) -> None:
        self.closed = True
        self._bus.unsubscribe(self)

    def __iter__(self) -> Iterator[Event]:
        while not self.closed:
            event = self.get(timeout=0.5)
            if event is not None:
                yield event


class EventBus:
    """Fan-out with bounded per-subscriber buffers; overflow drops oldest."""

    def __init__(self, capacity: int = DEFAULT_EVENT_BUFFER):
        self.capacity = capacity
        self._lock = threading.Lock()
        self._subs: list[_Subscription] = []

    def subscribe(self, device_id: str | None = None) -> _Subscription:
        sub = _Subscription(self, device_id, self.capacity)
        with self._lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: _Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def publish(self, event: Event) -> None:
        with self._lock:
            subs = list(self._subs)
        for sub in subs:
            sub._offer(event)

    @property
    def total_dropped(self) -> int:
        with self._lock:
            return sum(s.dropped for s in self._subs)


@dataclass(frozen=True)
class CommandResult:
    ok: bool
    state: DeviceState
    events: tuple[Event, ...]

    def to_payload(self) -> dict:
        return {
            "ok": self.ok,
            "state": self.state.to_payload(),
            "events": [e.to_payload() for e in self.events],
        }


class Hub:
    """One controller instance; start() brings up network, scans, and API."""

    def __init__(self, cfg: HubConfig, clock: Callable[[], float] = time.time):
        cfg.validate()
        self.cfg = cfg
        self.clock = clock
        if not cfg.registry_path.exists():
            raise RegistryLoadFailure(f"registry not found at {cfg.registry_path}")
        try:
            self.registry = Registry.load(cfg.registry_path)
        except (CorruptRegistry, IoFailure) as exc:
            raise RegistryLoadFailure(
                f"cannot load registry {cfg.registry_path}: {exc.message}"
            ) from exc
        self.frames = FrameSource(cfg.frame_source, fps=cfg.frame_rate_fps)
        self.events = EventBus(cfg.event_buffer)
        net_host, net_port = _parse_listen(cfg.net_listen, DEFAULT_NET_PORT)
        self.net = Piconet(
            net_host,
            net_port,
            cfg.net,
            Endpoint(
                address=cfg.master_address,
                x_m=cfg.master_position[0],
                y_m=cfg.master_position[1],
                role=Role.MASTER,
            ),
            authorizer=self._authorize_pairing,
            on_paired=self._on_paired,
            on_event=self._on_agent_event,
            on_session_closed=self._on_session_closed,
        )
        for endpoint in cfg.topology:
            self.net.add_endpoint(endpoint)
        self._states: dict[str, DeviceState] = {}
        self._states_lock = threading.Lock()
        self._transfers: dict[str, TransferJob] = {}
        self._transfers_lock = threading.Lock()
        self._registry_write_lock = threading.Lock()
        self._view_lock = threading.Lock()
        self.command_log: list[tuple[str, dict]] = []
        self._scan_epoch = 0
        initial = self.frames.current()
        self._frame_id: str | None = initial[0] if initial else None
        self._recognitions: tuple[Recognition, ...] = ()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._api_server = None

    # -- lifecycle -----------------------------------------------------------

    def start(self, with_api: bool = True) -> "Hub":
        self.net.start()
        scanner = threading.Thread(target=self._scan_loop, daemon=True)
        scanner.start()
        self._threads.append(scanner)
        if with_api:
            from . import httpapi

            api_host, api_port = _parse_listen(self.cfg.api_listen, DEFAULT_API_PORT)
            self._api_server = httpapi.serve(self, api_host, api_port)
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._api_server is not None:
            self._api_server.shutdown()
            self._api_server.server_close()
            self._api_server = None
        self.net.stop()
        for thread in self._threads:
            thread.join(timeout=2.0)

    @property
    def api_port(self) -> int:
        if self._api_server is None:
            return _parse_listen(self.cfg.api_listen, DEFAULT_API_PORT)[1]
        return self._api_server.server_address[1]

    # -- registration --------------------------------------------------------

    def register_device(
        self,
        name: str,
        address: str,
        kind,
        images,
        capabilities=None,
    ):
        record = self.registry.register_device(
            name=name, address=address, kind=kind, capabilities=capabilities, images=images
        )
        self._persist_registry()
        return record

    def remove_device(self, device_id: str):
        record = self.registry.remove_device(device_id)
        self._persist_registry()
        return record

    def _persist_registry(self) -> None:
        with self._registry_write_lock:
            self.registry.persist(self.cfg.registry_path)

    # -- pairing callbacks ---------------------------------------------------

    def _authorize_pairing(self, address: str) -> dict:
        record = self.registry.find_by_address(address)
        if record is None:
            raise UnknownDevice(f"address {address!r} is not registered")
        return {"device_id": record.device_id}

    def _on_paired(self, address: str, session: PairingSession) -> None:
        # prime the state cache off-thread; the session's read loop is not
        # pumping yet when this callback fires
        def prime():
            record = self.registry.find_by_address(address)
            if record is None:
                return
            try:
                self.snapshot(record.device_id)
            except ArconError:
                pass

        threading.Thread(target=prime, daemon=True).start()

    def _on_agent_event(self, address: str, body: dict) -> None:
        record = self.registry.find_by_address(address)
        if record is None:
            return
        try:
            event = Event.from_payload(body)
        except (ArconError, ValueError):
            return
        event = event.with_identity(record.device_id, self.clock())
        if event.kind is EventKind.TELEMETRY:
            with self._states_lock:
                cached = self._states.get(record.device_id)
                if cached is not None:
                    updates = {
                        k: v
                        for k, v in event.payload.items()
                        if k in ("battery_pct", "temperature_c")
                    }
                    if updates:
                        self._states[record.device_id] = replace(cached, **updates)
        self.events.publish(event)

    def _on_session_closed(self, address: str, session: PairingSession) -> None:
        record = self.registry.find_by_address(address)
        device_id = record.device_id if record else address
        self.events.publish(
            Event(
                EventKind.DEVICE_LOST,
                {"reason": session.close_reason, "session_id": session.session_id},
                device_id=device_id,
                at=self.clock(),
            )
        )

    # -- commands ------------------------------------------------------------

    def dispatch(self, device_id: str, cmd: Command) -> CommandResult:
        record = self.registry.get_device(device_id)
        session = self.net.session_for(record.address)
        if session is None or session.state is not SessionState.ACTIVE:
            raise NotPaired(f"device {device_id} has no active session")
        result = self.net.send_command(record.address, cmd.to_payload())
        state = DeviceState.from_payload(result.get("state") or {})
        if not result.get("ok"):
            error = result.get("error") or {}
            raise error_from_code(
                str(error.get("error", "Error")), str(error.get("message", ""))
            )
        with self._states_lock:
            self._states[device_id] = state
        events = []
        for payload in result.get("events", ()):
            try:
                event = Event.from_payload(payload)
            except (ArconError, ValueError):
                continue
            event = event.with_identity(device_id, self.clock())
            events.append(event)
            self.events.publish(event)
        self.command_log.append((device_id, cmd.to_payload()))
        return CommandResult(ok=True, state=state, events=tuple(events))

    def snapshot(self, device_id: str) -> DeviceState:
        return self.dispatch(device_id, Command(CommandKind.GET_STATUS)).state

    # -- transfers -----------------------------------------------------------

    def start_transfer(
        self,
        src_device_id: str,
        dst_device_id: str,
        label: str,
        total_bytes: int,
        chunk_bytes: int = DEFAULT_CHUNK_BYTES,
    ) -> TransferJob:
        if src_device_id == dst_device_id:
            raise SelfTransfer("source and destination are the same device")
        if total_bytes < 1:
            raise InvalidArgument("total_bytes must be at least 1")
        if chunk_bytes < 1:
            raise InvalidArgument("chunk_bytes must be at least 1")
        for device_id in (src_device_id, dst_device_id):
            record = self.registry.get_device(device_id)
            session = self.net.session_for(record.address)
            if session is None or session.state is not SessionState.ACTIVE:
                raise NotPaired(f"device {device_id} has no active session")
        job = TransferJob(
            job_id=str(uuid.uuid4()),
            src_device_id=src_device_id,
            dst_device_id=dst_device_id,
            label=label,
            total_bytes=total_bytes,
            chunk_bytes=chunk_bytes,
        )
        with self._transfers_lock:
            self._transfers[job.job_id] = job
        worker = threading.Thread(target=self._run_transfer, args=(job,), daemon=True)
        worker.start()
        self._threads.append(worker)
        return job.copy()

    def _run_transfer(self, job: TransferJob) -> None:
        index = 0
        while job.sent_bytes < job.total_bytes and not self._stop.is_set():
            size = min(job.chunk_bytes, job.total_bytes - job.sent_bytes)
            cmd = Command(
                CommandKind.RECEIVE_CHUNK,
                {"job_id": job.job_id, "index": index, "size_bytes": size},
            )
            try:
                self.dispatch(job.dst_device_id, cmd)
            except ArconError:
                with self._transfers_lock:
                    job.state = TransferState.FAILED
                return
            with self._transfers_lock:
                job.sent_bytes += size
                if job.sent_bytes == job.total_bytes:
                    job.state = TransferState.DONE
                snapshot = job.copy()
            self.events.publish(
                Event(
                    EventKind.TRANSFER_PROGRESS,
                    {
                        "job_id": snapshot.job_id,
                        "src_device_id": snapshot.src_device_id,
                        "dst_device_id": snapshot.dst_device_id,
                        "label": snapshot.label,
                        "sent_bytes": snapshot.sent_bytes,
                        "total_bytes": snapshot.total_bytes,
                        "state": snapshot.state.value,
                    },
                    device_id=snapshot.dst_device_id,
                    at=self.clock(),
                )
            )
            index += 1

    def get_transfer(self, job_id: str) -> TransferJob:
        with self._transfers_lock:
            job = self._transfers.get(job_id)
            if job is None:
                raise UnknownDevice(f"no transfer {job_id!r}")
            return job.copy()

    def wait_transfer(self, job_id: str, timeout: float = 10.0) -> TransferJob:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            job = self.get_transfer(job_id)
            if job.state is not TransferState.RUNNING:
                return job
            time.sleep(0.02)
        return self.get_transfer(job_id)

    # -- view ----------------------------------------------------------------

    def current_view(self) -> ViewModel:
        """Immutable snapshot: the last scan's output plus live device state."""
        with self._view_lock:
            frame_id = self._frame_id
            epoch = self._scan_epoch
            recognitions = self._recognitions
        with self._states_lock:
            states = dict(self._states)
        sessions: dict[str, str] = {}
        for record in self.registry.list_devices():
            session = self.net.session_for(record.address)
            if session is not None:
                sessions[record.device_id] = session.state.value
        with self._transfers_lock:
            transfers = tuple(
                j.copy()
                for j in self._transfers.values()
                if j.state is TransferState.RUNNING
            )
        return ViewModel(
            frame_id=frame_id,
            scan_epoch=epoch,
            recognitions=recognitions,
            device_states=states,
            sessions=sessions,
            active_transfers=transfers,
        )

    def scan_now(self, frame: GrayFrame | None = None) -> list[Recognition]:
        """Run one scan synchronously; with a frame given, scan that frame."""
        if frame is None:
            current = self.frames.current()
            if current is None:
                return []
            frame_id, frame = current
        else:
            frame_id = "adhoc"
        try:
            recognitions = scan_frame(frame, self.registry.list_devices(), self.cfg.scan)
        except WindowLargerThanFrame:
            recognitions = []
        with self._view_lock:
            self._scan_epoch += 1
            self._frame_id = frame_id
            self._recognitions = tuple(recognitions)
        return recognitions

    def _scan_loop(self) -> None:
        while not self._stop.wait(self.cfg.scan_interval_s):
            try:
                self.scan_now()
            except ArconError:
                continue

    # -- events --------------------------------------------------------------

    def subscribe_events(self, device_id: str | None = None) -> _Subscription:
        return self.events.subscribe(device_id)

    def paired_devices(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for record in self.registry.list_devices():
            session = self.net.session_for(record.address)
            if session is not None and session.state is SessionState.ACTIVE:
                out[record.device_id] = session.state.value
        return out
