"""Virtual device state machines and the agent runtime."""
from __future__ import annotations

import dataclasses
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arcon.agents import (
    Agent,
    AgentConfig,
    TelemetrySchedule,
    TelemetryStep,
    apply_for,
    generic_apply,
    laptop_apply,
    replay,
    speaker_apply,
    telemetry_tick,
)
from arcon.devices import (
    Command,
    CommandKind,
    DeviceKind,
    DeviceState,
    EventKind,
    Power,
    initial_state,
)
from arcon.errors import (
    ConfigInvalid,
    DevicePoweredOff,
    InvalidArgument,
    OutOfRange,
    UnsupportedCommand,
)
from arcon.pairnet import Endpoint, NetConfig, Piconet, Role

SPEAKER_ON = initial_state(DeviceKind.SPEAKER)
LAPTOP_ON = initial_state(DeviceKind.LAPTOP)


def cmd(kind: str, **args) -> Command:
    return Command(kind=CommandKind(kind), args=args)


# -- speaker -----------------------------------------------------------------


def test_set_volume_75_emits_one_event():
    state, events = speaker_apply(SPEAKER_ON, cmd("SetVolume", level=75))
    assert state.volume == 75
    assert [(e.kind, e.payload) for e in events] == [(EventKind.VOLUME_CHANGED, {"level": 75})]


def test_set_volume_while_off_is_gated():
    off, _ = speaker_apply(SPEAKER_ON, cmd("PowerOff"))
    with pytest.raises(DevicePoweredOff):
        speaker_apply(off, cmd("SetVolume", level=10))


def test_set_volume_out_of_range_rejected():
    with pytest.raises(InvalidArgument):
        speaker_apply(SPEAKER_ON, cmd("SetVolume", level=150))
    with pytest.raises(InvalidArgument):
        speaker_apply(SPEAKER_ON, cmd("SetVolume", level=-1))


def test_volume_boundaries_are_legal():
    assert speaker_apply(SPEAKER_ON, cmd("SetVolume", level=0))[0].volume == 0
    assert speaker_apply(SPEAKER_ON, cmd("SetVolume", level=100))[0].volume == 100


def test_play_and_stop_track():
    state, events = speaker_apply(SPEAKER_ON, cmd("PlayTrack", track="intro.ogg"))
    assert state.now_playing == "intro.ogg"
    assert events[0].kind is EventKind.TRACK_CHANGED
    state, events = speaker_apply(state, cmd("StopTrack"))
    assert state.now_playing is None
    assert events[0].payload == {"track": None}


def test_play_empty_track_rejected():
    with pytest.raises(InvalidArgument):
        speaker_apply(SPEAKER_ON, cmd("PlayTrack", track=""))


def test_power_off_clears_now_playing():
    playing, _ = speaker_apply(SPEAKER_ON, cmd("PlayTrack", track="x.ogg"))
    off, events = speaker_apply(playing, cmd("PowerOff"))
    assert off.power is Power.OFF
    assert off.now_playing is None
    assert [(e.kind, e.payload) for e in events] == [(EventKind.POWER_CHANGED, {"power": "off"})]


def test_power_on_while_off_is_allowed():
    off, _ = speaker_apply(SPEAKER_ON, cmd("PowerOff"))
    on, events = speaker_apply(off, cmd("PowerOn"))
    assert on.power is Power.ON
    assert events[0].payload == {"power": "on"}


def test_get_status_works_while_off_and_emits_nothing():
    off, _ = speaker_apply(SPEAKER_ON, cmd("PowerOff"))
    state, events = speaker_apply(off, cmd("GetStatus"))
    assert state == off
    assert events == []


def test_speaker_rejects_cursor_commands():
    with pytest.raises(UnsupportedCommand):
        speaker_apply(SPEAKER_ON, cmd("MoveCursor", dx=1, dy=1))


def test_capability_check_precedes_power_gate():
    off, _ = speaker_apply(SPEAKER_ON, cmd("PowerOff"))
    # MoveCursor is not a speaker capability, so that error wins over gating
    with pytest.raises(UnsupportedCommand):
        speaker_apply(off, cmd("MoveCursor", dx=1, dy=1))


def test_receive_chunk_is_stateless_and_silent():
    state, events = speaker_apply(SPEAKER_ON, cmd("ReceiveChunk", job_id="j1", index=0, size_bytes=256))
    assert state == SPEAKER_ON
    assert events == []


def test_receive_chunk_validates_args():
    with pytest.raises(InvalidArgument):
        speaker_apply(SPEAKER_ON, cmd("ReceiveChunk", job_id="j1", index=-1, size_bytes=256))
    with pytest.raises(InvalidArgument):
        speaker_apply(SPEAKER_ON, cmd("ReceiveChunk", job_id="j1", index=0, size_bytes=0))


# -- laptop ------------------------------------------------------------------


def test_move_cursor_interior():
    state, events = laptop_apply(LAPTOP_ON, cmd("MoveCursor", dx=10, dy=5))
    assert state.cursor == (10, 5)
    assert [(e.kind, e.payload) for e in events] == [(EventKind.CURSOR_MOVED, {"x": 10, "y": 5})]


def test_move_cursor_clamps_to_screen():
    near_edge = dataclasses.replace(LAPTOP_ON, cursor=(1360, 760))
    state, events = laptop_apply(near_edge, cmd("MoveCursor", dx=100, dy=100))
    assert state.cursor == (1365, 767)
    assert events[0].payload == {"x": 1365, "y": 767}


def test_move_cursor_clamps_at_origin():
    state, _ = laptop_apply(LAPTOP_ON, cmd("MoveCursor", dx=-50, dy=-50))
    assert state.cursor == (0, 0)


def test_move_cursor_while_off_gated():
    off, _ = laptop_apply(LAPTOP_ON, cmd("PowerOff"))
    with pytest.raises(DevicePoweredOff):
        laptop_apply(off, cmd("MoveCursor", dx=1, dy=1))


def test_laptop_rejects_track_commands():
    with pytest.raises(UnsupportedCommand):
        laptop_apply(LAPTOP_ON, cmd("PlayTrack", track="x.ogg"))


def test_generic_supports_power_and_status_only():
    generic = initial_state(DeviceKind.GENERIC)
    state, _ = generic_apply(generic, cmd("PowerOff"))
    assert state.power is Power.OFF
    with pytest.raises(UnsupportedCommand):
        generic_apply(generic, cmd("SetVolume", level=10))


def test_apply_for_dispatches_by_kind():
    assert apply_for(DeviceKind.SPEAKER) is speaker_apply
    assert apply_for(DeviceKind.LAPTOP) is laptop_apply
    assert apply_for(DeviceKind.GENERIC) is generic_apply


@settings(max_examples=40, deadline=None)
@given(
    moves=st.lists(
        st.tuples(st.integers(-3000, 3000), st.integers(-3000, 3000)), max_size=12
    )
)
def test_cursor_always_inside_screen(moves):
    state = LAPTOP_ON
    for dx, dy in moves:
        state, _ = laptop_apply(state, cmd("MoveCursor", dx=dx, dy=dy))
        x, y = state.cursor
        assert 0 <= x <= 1365
        assert 0 <= y <= 767


def test_replay_reproduces_final_state():
    log = [
        cmd("SetVolume", level=30),
        cmd("PlayTrack", track="a.ogg"),
        cmd("SetVolume", level=80),
        cmd("GetStatus"),
        cmd("PowerOff"),
        cmd("PowerOn"),
    ]
    state = SPEAKER_ON
    for c in log:
        state, _ = speaker_apply(state, c)
    assert replay(SPEAKER_ON, log, speaker_apply) == state
    # a second replay lands on the identical value again
    assert replay(SPEAKER_ON, log, speaker_apply) == state


def test_mutating_commands_emit_exactly_one_event():
    cases = [
        (speaker_apply, SPEAKER_ON, cmd("PowerOff")),
        (speaker_apply, SPEAKER_ON, cmd("SetVolume", level=10)),
        (speaker_apply, SPEAKER_ON, cmd("PlayTrack", track="t.ogg")),
        (speaker_apply, SPEAKER_ON, cmd("StopTrack")),
        (laptop_apply, LAPTOP_ON, cmd("MoveCursor", dx=1, dy=1)),
    ]
    for apply, state, c in cases:
        _, events = apply(state, c)
        assert len(events) == 1, c.kind


# -- telemetry ---------------------------------------------------------------


def test_telemetry_single_populated_field():
    state = dataclasses.replace(SPEAKER_ON, battery_pct=80)
    _, events = telemetry_tick(state, now_s=0.0)
    assert [(e.kind, e.payload) for e in events] == [(EventKind.TELEMETRY, {"battery_pct": 80})]


def test_telemetry_no_fields_no_events():
    _, events = telemetry_tick(SPEAKER_ON, now_s=0.0)
    assert events == []


def test_telemetry_both_fields_two_events():
    state = dataclasses.replace(SPEAKER_ON, battery_pct=64, temperature_c=21.5)
    _, events = telemetry_tick(state, now_s=0.0)
    payloads = sorted(tuple(e.payload) for e in events)
    assert payloads == [("battery_pct",), ("temperature_c",)]


def test_telemetry_schedule_step_applies_at_time():
    schedule = TelemetrySchedule(
        interval_s=5.0, steps=(TelemetryStep(at_s=60.0, temperature_c=35.0),)
    )
    state, events = telemetry_tick(SPEAKER_ON, now_s=59.0, schedule=schedule)
    assert state.temperature_c is None
    assert events == []
    state, events = telemetry_tick(SPEAKER_ON, now_s=60.0, schedule=schedule)
    assert state.temperature_c == 35.0
    assert [e.payload for e in events] == [{"temperature_c": 35.0}]


def test_telemetry_later_steps_override():
    schedule = TelemetrySchedule(
        interval_s=5.0,
        steps=(
            TelemetryStep(at_s=0.0, battery_pct=90),
            TelemetryStep(at_s=10.0, battery_pct=70),
        ),
    )
    state, _ = telemetry_tick(SPEAKER_ON, now_s=4.0, schedule=schedule)
    assert state.battery_pct == 90
    state, _ = telemetry_tick(SPEAKER_ON, now_s=10.0, schedule=schedule)
    assert state.battery_pct == 70


def test_telemetry_schedule_from_payload():
    schedule = TelemetrySchedule.from_payload(
        {"interval_s": 2.0, "steps": [{"at_s": 0, "battery_pct": 88}]}
    )
    assert schedule.interval_s == 2.0
    assert schedule.steps[0].battery_pct == 88


def test_telemetry_schedule_validation():
    with pytest.raises(ConfigInvalid):
        TelemetrySchedule(interval_s=0.0).validate()
    with pytest.raises(ConfigInvalid):
        TelemetrySchedule(
            interval_s=5.0, steps=(TelemetryStep(at_s=0.0, battery_pct=500),)
        ).validate()


# -- agent config ------------------------------------------------------------


def test_agent_config_from_payload():
    cfg = AgentConfig.from_payload(
        {
            "kind": "speaker",
            "address": "sp:01",
            "x_m": 3.0,
            "y_m": 0.0,
            "initial_state": {"power": "on", "volume": 20},
            "telemetry": {"interval_s": 5.0, "steps": []},
            "retry_backoff_s": 1.0,
        }
    )
    assert cfg.kind is DeviceKind.SPEAKER
    assert cfg.initial.volume == 20
    assert cfg.retry_backoff_s == 1.0


def test_agent_config_rejects_unknown_kind():
    with pytest.raises(ConfigInvalid):
        AgentConfig.from_payload({"kind": "toaster", "address": "x"})


# -- agent runtime -----------------------------------------------------------


def test_agent_retries_after_rejection():
    """An agent pre-seeded out of range keeps retrying until the move."""
    master = Endpoint(address="hub", x_m=0.0, y_m=0.0, role=Role.MASTER)
    cfg = NetConfig(heartbeat_interval_s=0.25, heartbeat_timeout_s=0.8)
    net = Piconet("127.0.0.1", 0, cfg, master, tick_interval_s=0.05)
    net.add_endpoint(Endpoint(address="sp:01", x_m=9.0, y_m=0.0))
    net.start()
    agent = Agent(
        AgentConfig(kind=DeviceKind.SPEAKER, address="sp:01", retry_backoff_s=0.15),
        "127.0.0.1",
        net.port,
    )
    agent.start()
    try:
        deadline = time.monotonic() + 5.0
        while agent.last_reject is None and time.monotonic() < deadline:
            time.sleep(0.02)
        assert isinstance(agent.last_reject, OutOfRange)
        assert not agent.paired.is_set()
        net.move_endpoint("sp:01", 2.0, 0.0)
        assert agent.paired.wait(5.0)
        assert net.active_addresses() == ["sp:01"]
    finally:
        agent.stop()
        net.stop()
