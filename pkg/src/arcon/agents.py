"""Virtual slave devices: a speaker and a laptop as pure state machines.

Command application is a pure function from (state, command) to (state,
events), so replaying a command log reproduces the final state exactly.
The Agent class wraps an apply function in a network loop that dials the
master, answers pings, executes commands, and emits scripted telemetry.
"""

from __future__ import annotations

import math
import sys
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

from .canonical import loads
from .devices import (
    Command,
    CommandKind,
    DeviceKind,
    DeviceState,
    Event,
    EventKind,
    Power,
    capabilities_for,
    initial_state,
)
from .errors import (
    ArconError,
    ConfigInvalid,
    DevicePoweredOff,
    InvalidArgument,
    IoFailure,
    UnsupportedCommand,
)
from .pairnet import connect_slave
from .wire import Envelope, MessageSocket, SeqCounter

DEFAULT_TELEMETRY_INTERVAL_S = 5.0
DEFAULT_RETRY_BACKOFF_S = 5.0

# commands that may run while the device is powered off
_POWER_EXEMPT = frozenset({CommandKind.POWER_ON, CommandKind.GET_STATUS})


def apply_command(
    state: DeviceState, cmd: Command, capabilities: frozenset[CommandKind]
) -> tuple[DeviceState, list[Event]]:
    """Shared transition core; checks capability, then power, then args."""
    cmd.validate()
    if cmd.kind not in capabilities:
        raise UnsupportedCommand(f"device cannot execute {cmd.kind.value}")
    if state.power is Power.OFF and cmd.kind not in _POWER_EXEMPT:
        raise DevicePoweredOff(f"{cmd.kind.value} requires power on")

    if cmd.kind is CommandKind.POWER_ON:
        new = replace(state, power=Power.ON)
        return new, [Event(EventKind.POWER_CHANGED, {"power": "on"})]
    if cmd.kind is CommandKind.POWER_OFF:
        new = replace(state, power=Power.OFF, now_playing=None)
        return new, [Event(EventKind.POWER_CHANGED, {"power": "off"})]
    if cmd.kind is CommandKind.GET_STATUS:
        return state, []
    if cmd.kind is CommandKind.SET_VOLUME:
        level = cmd.args["level"]
        if not 0 <= level <= 100:
            raise InvalidArgument(f"volume {level} outside 0..100")
        return replace(state, volume=level), [
            Event(EventKind.VOLUME_CHANGED, {"level": level})
        ]
    if cmd.kind is CommandKind.PLAY_TRACK:
        track = cmd.args["track"]
        if not track:
            raise InvalidArgument("track must be non-empty")
        return replace(state, now_playing=track), [
            Event(EventKind.TRACK_CHANGED, {"track": track})
        ]
    if cmd.kind is CommandKind.STOP_TRACK:
        return replace(state, now_playing=None), [
            Event(EventKind.TRACK_CHANGED, {"track": None})
        ]
    if cmd.kind is CommandKind.MOVE_CURSOR:
        if state.cursor is None or state.screen is None:
            raise InvalidArgument("device has no cursor")
        w, h = state.screen
        x = min(max(state.cursor[0] + cmd.args["dx"], 0), w - 1)
        y = min(max(state.cursor[1] + cmd.args["dy"], 0), h - 1)
        return replace(state, cursor=(x, y)), [
            Event(EventKind.CURSOR_MOVED, {"x": x, "y": y})
        ]
    if cmd.kind is CommandKind.RECEIVE_CHUNK:
        if cmd.args["index"] < 0:
            raise InvalidArgument("chunk index must be non-negative")
        if cmd.args["size_bytes"] < 1:
            raise InvalidArgument("chunk size must be at least 1 byte")
        return state, []
    raise UnsupportedCommand(f"no transition for {cmd.kind.value}")


def speaker_apply(state: DeviceState, cmd: Command) -> tuple[DeviceState, list[Event]]:
    return apply_command(state, cmd, capabilities_for(DeviceKind.SPEAKER))


def laptop_apply(state: DeviceState, cmd: Command) -> tuple[DeviceState, list[Event]]:
    return apply_command(state, cmd, capabilities_for(DeviceKind.LAPTOP))


def generic_apply(state: DeviceState, cmd: Command) -> tuple[DeviceState, list[Event]]:
    return apply_command(state, cmd, capabilities_for(DeviceKind.GENERIC))


def apply_for(kind: DeviceKind) -> Callable[[DeviceState, Command], tuple[DeviceState, list[Event]]]:
    kind = DeviceKind.parse(kind)
    return {
        DeviceKind.SPEAKER: speaker_apply,
        DeviceKind.LAPTOP: laptop_apply,
        DeviceKind.GENERIC: generic_apply,
    }[kind]


def replay(
    state: DeviceState,
    commands: list[Command],
    apply: Callable[[DeviceState, Command], tuple[DeviceState, list[Event]]],
) -> DeviceState:
    """Re-run a command log, skipping commands that errored the first time."""
    for cmd in commands:
        try:
            state, _ = apply(state, cmd)
        except ArconError:
            pass
    return state


# -- telemetry ---------------------------------------------------------------


@dataclass(frozen=True)
class TelemetryStep:
    at_s: float
    battery_pct: int | None = None
    temperature_c: float | None = None


@dataclass(frozen=True)
class TelemetrySchedule:
    """Piecewise-constant value script; later steps override earlier fields."""

    interval_s: float = DEFAULT_TELEMETRY_INTERVAL_S
    steps: tuple[TelemetryStep, ...] = ()

    def validate(self) -> "TelemetrySchedule":
        if not self.interval_s > 0:
            raise ConfigInvalid("telemetry interval must be positive")
        if list(self.steps) != sorted(self.steps, key=lambda s: s.at_s):
            raise ConfigInvalid("telemetry steps must be ordered by time")
        for step in self.steps:
            if step.battery_pct is not None and not 0 <= step.battery_pct <= 100:
                raise ConfigInvalid(f"battery_pct {step.battery_pct} outside 0..100")
            if step.temperature_c is not None and not math.isfinite(step.temperature_c):
                raise ConfigInvalid("temperature_c must be finite")
        return self

    def values_at(self, t_s: float) -> tuple[int | None, float | None]:
        battery: int | None = None
        temperature: float | None = None
        for step in self.steps:
            if step.at_s > t_s:
                break
            if step.battery_pct is not None:
                battery = step.battery_pct
            if step.temperature_c is not None:
                temperature = step.temperature_c
        return battery, temperature

    @classmethod
    def from_payload(cls, payload: dict) -> "TelemetrySchedule":
        steps = tuple(
            TelemetryStep(
                at_s=float(s["at_s"]),
                battery_pct=s.get("battery_pct"),
                temperature_c=s.get("temperature_c"),
            )
            for s in payload.get("steps", ())
        )
        return cls(
            interval_s=float(payload.get("interval_s", DEFAULT_TELEMETRY_INTERVAL_S)),
            steps=steps,
        ).validate()


def telemetry_tick(
    state: DeviceState, now_s: float, schedule: TelemetrySchedule | None = None
) -> tuple[DeviceState, list[Event]]:
    """One scripted telemetry report: an event per populated optional field."""
    if schedule is not None:
        battery, temperature = schedule.values_at(now_s)
        if battery is not None:
            state = replace(state, battery_pct=battery)
        if temperature is not None:
            state = replace(state, temperature_c=temperature)
    events = []
    if state.battery_pct is not None:
        events.append(Event(EventKind.TELEMETRY, {"battery_pct": state.battery_pct}))
    if state.temperature_c is not None:
        events.append(
            Event(EventKind.TELEMETRY, {"temperature_c": state.temperature_c})
        )
    return state, events


# -- runtime -----------------------------------------------------------------


@dataclass(frozen=True)
class AgentConfig:
    kind: DeviceKind
    address: str
    x_m: float = 0.0
    y_m: float = 0.0
    initial: DeviceState | None = None
    telemetry: TelemetrySchedule | None = None
    retry_backoff_s: float = DEFAULT_RETRY_BACKOFF_S
    hub_net: str = "127.0.0.1:7421"

    def validate(self) -> "AgentConfig":
        if not self.address:
            raise ConfigInvalid("agent address must be non-empty")
        if not self.retry_backoff_s > 0:
            raise ConfigInvalid("retry backoff must be positive")
        if self.telemetry is not None:
            self.telemetry.validate()
        return self

    @classmethod
    def from_payload(cls, payload: dict) -> "AgentConfig":
        if not isinstance(payload, dict):
            raise ConfigInvalid("agent config must be an object")
        try:
            kind = DeviceKind.parse(payload["kind"])
            initial = None
            if payload.get("initial_state") is not None:
                initial = DeviceState.from_payload(payload["initial_state"])
            telemetry = None
            if payload.get("telemetry") is not None:
                telemetry = TelemetrySchedule.from_payload(payload["telemetry"])
            return cls(
                kind=kind,
                address=str(payload["address"]),
                x_m=float(payload.get("x_m", 0.0)),
                y_m=float(payload.get("y_m", 0.0)),
                initial=initial,
                telemetry=telemetry,
                retry_backoff_s=float(
                    payload.get("retry_backoff_s", DEFAULT_RETRY_BACKOFF_S)
                ),
                hub_net=str(payload.get("hub_net", "127.0.0.1:7421")),
            ).validate()
        except (KeyError, TypeError, ValueError, InvalidArgument) as exc:
            raise ConfigInvalid(f"bad agent config: {exc}") from exc


def load_agent_config(path: str | Path) -> AgentConfig:
    try:
        doc = loads(Path(path).read_bytes())
    except OSError as exc:
        raise IoFailure(f"cannot read agent config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigInvalid(f"agent config {path} is not valid JSON: {exc}") from exc
    return AgentConfig.from_payload(doc)


class Agent:
    """Network runtime for one virtual device.

    Dials the master, retries rejected or lost pairings on a backoff, and
    serves commands strictly in arrival order. Telemetry ticks are
    interleaved with command handling on the same thread, so state never
    needs a lock.
    """

    def __init__(
        self,
        cfg: AgentConfig,
        hub_host: str,
        hub_port: int,
        clock: Callable[[], float] = time.monotonic,
        log: Callable[[str], None] | None = None,
    ):
        cfg.validate()
        self.cfg = cfg
        self.hub_host = hub_host
        self.hub_port = hub_port
        self.clock = clock
        self.log = log or (lambda line: print(line, file=sys.stderr))
        self.state = cfg.initial if cfg.initial is not None else initial_state(cfg.kind)
        self.received: dict[str, int] = {}  # job_id -> bytes acknowledged
        self.pair_attempts = 0
        self.last_reject: ArconError | None = None
        self.paired = threading.Event()
        self._apply = apply_for(cfg.kind)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._msock: MessageSocket | None = None

    def start(self) -> "Agent":
        self._thread = threading.Thread(
            target=self.run, name=f"agent-{self.cfg.address}", daemon=True
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        msock = self._msock
        if msock is not None:
            msock.close()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def run(self) -> None:
        while not self._stop.is_set():
            self.pair_attempts += 1
            try:
                msock, accept = connect_slave(
                    self.hub_host,
                    self.hub_port,
                    self.cfg.address,
                    position=(self.cfg.x_m, self.cfg.y_m),
                )
            except ArconError as exc:
                self.last_reject = exc
                self.log(f"agent {self.cfg.address}: pairing failed: {exc.code} {exc.message}")
                if self._stop.wait(self.cfg.retry_backoff_s):
                    return
                continue
            self.last_reject = None
            self._msock = msock
            self.paired.set()
            self.log(
                f"agent {self.cfg.address}: paired session {accept.get('session_id')}"
            )
            try:
                self._serve(msock)
            finally:
                self.paired.clear()
                self._msock = None
                msock.close()
            if self._stop.wait(self.cfg.retry_backoff_s):
                return

    def _serve(self, msock: MessageSocket) -> None:
        seq = SeqCounter()
        started = self.clock()
        interval = (
            self.cfg.telemetry.interval_s
            if self.cfg.telemetry is not None
            else DEFAULT_TELEMETRY_INTERVAL_S
        )
        next_tick = started + interval
        while not self._stop.is_set():
            now = self.clock()
            if now >= next_tick:
                self.state, events = telemetry_tick(
                    self.state, now - started, self.cfg.telemetry
                )
                for event in events:
                    try:
                        msock.send(
                            Envelope(t="EVENT", seq=seq.next(), body=event.to_payload())
                        )
                    except ArconError:
                        return
                next_tick += interval
                continue
            try:
                env = msock.recv(timeout=min(0.2, max(next_tick - now, 0.01)))
            except TimeoutError:
                continue
            except ArconError:
                return
            if env is None:
                return
            if env.t == "PING":
                try:
                    msock.send(Envelope(t="PONG", seq=env.seq))
                except ArconError:
                    return
            elif env.t == "CMD":
                try:
                    msock.send(
                        Envelope(t="CMD_RESULT", seq=env.seq, body=self._execute(env.body))
                    )
                except ArconError:
                    return
            elif env.t == "BYE":
                return

    def _execute(self, body: dict | None) -> dict:
        try:
            cmd = Command.from_payload(body or {})
            new_state, events = self._apply(self.state, cmd)
        except ArconError as exc:
            return {
                "ok": False,
                "error": exc.to_payload(),
                "state": self.state.to_payload(),
            }
        self.state = new_state
        if cmd.kind is CommandKind.RECEIVE_CHUNK:
            job = cmd.args["job_id"]
            self.received[job] = self.received.get(job, 0) + cmd.args["size_bytes"]
        return {
            "ok": True,
            "state": new_state.to_payload(),
            "events": [e.to_payload() for e in events],
        }
