"""Device model shared by the registry, the agents and the hub: device kinds,
command vocabulary, per-device state and the event stream schema."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

from .errors import InvalidArgument


class DeviceKind(str, Enum):
    SPEAKER = "speaker"
    LAPTOP = "laptop"
    GENERIC = "generic"

    @classmethod
    def parse(cls, value: "DeviceKind | str") -> "DeviceKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidArgument(f"unknown device kind {value!r}") from None


class CommandKind(str, Enum):
    POWER_ON = "PowerOn"
    POWER_OFF = "PowerOff"
    GET_STATUS = "GetStatus"
    SET_VOLUME = "SetVolume"
    PLAY_TRACK = "PlayTrack"
    STOP_TRACK = "StopTrack"
    MOVE_CURSOR = "MoveCursor"
    RECEIVE_CHUNK = "ReceiveChunk"

    @classmethod
    def parse(cls, value: "CommandKind | str") -> "CommandKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value))
        except ValueError:
            raise InvalidArgument(f"unknown command kind {value!r}") from None


CAPABILITIES = {
    DeviceKind.SPEAKER: frozenset(
        {
            CommandKind.POWER_ON,
            CommandKind.POWER_OFF,
            CommandKind.GET_STATUS,
            CommandKind.SET_VOLUME,
            CommandKind.PLAY_TRACK,
            CommandKind.STOP_TRACK,
            CommandKind.RECEIVE_CHUNK,
        }
    ),
    DeviceKind.LAPTOP: frozenset(
        {
            CommandKind.POWER_ON,
            CommandKind.POWER_OFF,
            CommandKind.GET_STATUS,
            CommandKind.SET_VOLUME,
            CommandKind.MOVE_CURSOR,
            CommandKind.RECEIVE_CHUNK,
        }
    ),
    DeviceKind.GENERIC: frozenset(
        {CommandKind.POWER_ON, CommandKind.POWER_OFF, CommandKind.GET_STATUS}
    ),
}


def capabilities_for(kind: DeviceKind) -> frozenset[CommandKind]:
    return CAPABILITIES[DeviceKind.parse(kind)]


# args schema per command kind: name -> (type, validator)
_ARG_SPECS: dict[CommandKind, dict[str, type]] = {
    CommandKind.POWER_ON: {},
    CommandKind.POWER_OFF: {},
    CommandKind.GET_STATUS: {},
    CommandKind.SET_VOLUME: {"level": int},
    CommandKind.PLAY_TRACK: {"track": str},
    CommandKind.STOP_TRACK: {},
    CommandKind.MOVE_CURSOR: {"dx": int, "dy": int},
    CommandKind.RECEIVE_CHUNK: {"job_id": str, "index": int, "size_bytes": int},
}


@dataclass(frozen=True)
class Command:
    kind: CommandKind
    args: dict = field(default_factory=dict)

    def validate(self) -> "Command":
        spec = _ARG_SPECS[self.kind]
        for name, typ in spec.items():
            if name not in self.args:
                raise InvalidArgument(f"{self.kind.value} requires argument {name!r}")
            value = self.args[name]
            if typ is int and (isinstance(value, bool) or not isinstance(value, int)):
                raise InvalidArgument(f"{self.kind.value}.{name} must be an integer")
            if typ is str and not isinstance(value, str):
                raise InvalidArgument(f"{self.kind.value}.{name} must be a string")
        extra = set(self.args) - set(spec)
        if extra:
            raise InvalidArgument(
                f"{self.kind.value} got unexpected arguments {sorted(extra)}"
            )
        return self

    def to_payload(self) -> dict:
        return {"kind": self.kind.value, "args": dict(self.args)}

    @classmethod
    def from_payload(cls, payload: dict) -> "Command":
        if not isinstance(payload, dict):
            raise InvalidArgument("command payload must be an object")
        kind = CommandKind.parse(payload.get("kind"))
        args = payload.get("args") or {}
        if not isinstance(args, dict):
            raise InvalidArgument("command args must be an object")
        return cls(kind=kind, args=args).validate()


class Power(str, Enum):
    ON = "on"
    OFF = "off"


@dataclass(frozen=True)
class DeviceState:
    power: Power = Power.OFF
    volume: int = 0
    now_playing: str | None = None
    cursor: tuple[int, int] | None = None
    screen: tuple[int, int] | None = None
    battery_pct: int | None = None
    temperature_c: float | None = None

    def to_payload(self) -> dict:
        return {
            "power": self.power.value,
            "volume": self.volume,
            "now_playing": self.now_playing,
            "cursor": list(self.cursor) if self.cursor else None,
            "screen": list(self.screen) if self.screen else None,
            "battery_pct": self.battery_pct,
            "temperature_c": self.temperature_c,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "DeviceState":
        if not isinstance(payload, dict):
            raise InvalidArgument("device state must be an object")
        cursor = payload.get("cursor")
        screen = payload.get("screen")
        return cls(
            power=Power(payload.get("power", "off")),
            volume=int(payload.get("volume", 0)),
            now_playing=payload.get("now_playing"),
            cursor=tuple(cursor) if cursor else None,
            screen=tuple(screen) if screen else None,
            battery_pct=payload.get("battery_pct"),
            temperature_c=payload.get("temperature_c"),
        )


def initial_state(kind: DeviceKind) -> DeviceState:
    kind = DeviceKind.parse(kind)
    if kind is DeviceKind.LAPTOP:
        return DeviceState(
            power=Power.ON, volume=50, cursor=(0, 0), screen=(1366, 768)
        )
    if kind is DeviceKind.SPEAKER:
        return DeviceState(power=Power.ON, volume=50)
    return DeviceState(power=Power.ON)


class EventKind(str, Enum):
    POWER_CHANGED = "PowerChanged"
    VOLUME_CHANGED = "VolumeChanged"
    TRACK_CHANGED = "TrackChanged"
    CURSOR_MOVED = "CursorMoved"
    TELEMETRY = "Telemetry"
    TRANSFER_PROGRESS = "TransferProgress"
    DEVICE_LOST = "DeviceLost"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    payload: dict
    device_id: str | None = None
    at: float = 0.0

    def with_identity(self, device_id: str, at: float) -> "Event":
        return replace(self, device_id=device_id, at=at)

    def to_payload(self) -> dict:
        return {
            "kind": self.kind.value,
            "device_id": self.device_id,
            "payload": dict(self.payload),
            "at": self.at,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Event":
        if not isinstance(payload, dict):
            raise InvalidArgument("event payload must be an object")
        return cls(
            kind=EventKind(payload.get("kind")),
            device_id=payload.get("device_id"),
            payload=payload.get("payload") or {},
            at=float(payload.get("at", 0.0)),
        )
