"""Pairing network: the pure state machine and the live socket transport."""
from __future__ import annotations

import threading
import time

import pytest

from arcon.errors import (
    AlreadyPaired,
    CapacityExceeded,
    ConfigInvalid,
    OutOfRange,
    SessionClosed,
    Timeout,
    UnknownEndpoint,
)
from arcon.pairnet import (
    Endpoint,
    NetConfig,
    Piconet,
    Role,
    SessionState,
    connect_slave,
    distance_m,
    dump_topology,
    heartbeat_tick,
    load_topology,
    request_pair,
)
from arcon.wire import Envelope, SeqCounter

MASTER = Endpoint(address="hub", x_m=0.0, y_m=0.0, role=Role.MASTER)
CFG = NetConfig()


def slave_at(x: float, y: float = 0.0, address: str = "sp:01") -> Endpoint:
    return Endpoint(address=address, x_m=x, y_m=y)


# -- endpoints and config ----------------------------------------------------


def test_distance_is_euclidean():
    assert distance_m(MASTER, slave_at(3.0, 4.0)) == 5.0


def test_endpoint_position_must_be_finite():
    with pytest.raises(ConfigInvalid):
        Endpoint(address="x", x_m=float("nan"), y_m=0.0).validate()
    with pytest.raises(ConfigInvalid):
        Endpoint(address="", x_m=0.0, y_m=0.0).validate()


def test_net_config_validation():
    with pytest.raises(ConfigInvalid):
        NetConfig(max_slaves=0).validate()
    with pytest.raises(ConfigInvalid):
        NetConfig(max_range_m=0.0).validate()
    with pytest.raises(ConfigInvalid):
        NetConfig(heartbeat_interval_s=2.0, heartbeat_timeout_s=2.0).validate()
    assert NetConfig().validate().max_slaves == 7


def test_topology_round_trip(tmp_path):
    endpoints = [MASTER, slave_at(3.0), slave_at(1.0, 2.0, address="lp:02")]
    path = tmp_path / "topology.json"
    dump_topology(endpoints, path)
    again = load_topology(path)
    assert again == endpoints
    assert again[0].role is Role.MASTER


# -- request_pair ------------------------------------------------------------


def test_pair_nominal_in_range_under_capacity():
    session = request_pair(MASTER, slave_at(3.0), CFG, active_count=0)
    assert session.state is SessionState.ACTIVE
    assert session.slave_addr == "sp:01"


def test_pair_at_nine_meters_is_out_of_range():
    with pytest.raises(OutOfRange) as exc:
        request_pair(MASTER, slave_at(9.0), CFG, active_count=0)
    assert exc.value.reason == "range"


def test_pair_range_boundary_is_inclusive():
    assert request_pair(MASTER, slave_at(8.0), CFG, active_count=0).state is SessionState.ACTIVE
    with pytest.raises(OutOfRange):
        request_pair(MASTER, slave_at(8.01), CFG, active_count=0)


def test_pair_at_capacity_rejected():
    with pytest.raises(CapacityExceeded) as exc:
        request_pair(MASTER, slave_at(1.0), CFG, active_count=7)
    assert exc.value.reason == "capacity"


def test_pair_below_capacity_accepted():
    session = request_pair(MASTER, slave_at(1.0), CFG, active_count=6)
    assert session.state is SessionState.ACTIVE


def test_pair_duplicate_slave_rejected_before_range():
    with pytest.raises(AlreadyPaired):
        request_pair(
            MASTER, slave_at(9.0), CFG, active_count=1, active_slave_addrs=("sp:01",)
        )


def test_session_lifecycle_is_one_way():
    session = request_pair(MASTER, slave_at(2.0), CFG, active_count=0)
    assert session.close("bye") is True
    assert session.state is SessionState.CLOSED
    assert session.close("again") is False  # reason of the first close sticks
    assert session.close_reason == "bye"
    with pytest.raises(SessionClosed):
        session.activate(now=1.0)


# -- heartbeat_tick ----------------------------------------------------------


def fresh_session(now: float = 0.0):
    return request_pair(MASTER, slave_at(2.0), CFG, active_count=0, now=now)


def test_tick_fresh_session_does_nothing():
    session = fresh_session(now=100.0)
    assert heartbeat_tick(session, now=100.0, cfg=CFG) == []
    assert session.state is SessionState.ACTIVE


def test_tick_emits_ping_after_interval():
    session = fresh_session(now=0.0)
    actions = heartbeat_tick(session, now=2.5, cfg=CFG)
    assert [a.kind for a in actions] == ["ping"]
    # the ping timestamp gates re-pinging at the same instant
    assert heartbeat_tick(session, now=2.5, cfg=CFG) == []
    assert heartbeat_tick(session, now=4.6, cfg=CFG)[0].kind == "ping"


def test_tick_closes_after_timeout():
    session = fresh_session(now=0.0)
    actions = heartbeat_tick(session, now=7.0, cfg=CFG)
    assert [a.kind for a in actions] == ["close"]
    assert actions[0].reason == "timeout"
    assert session.state is SessionState.CLOSED


def test_tick_timeout_boundary_is_strict():
    session = fresh_session(now=0.0)
    actions = heartbeat_tick(session, now=6.0, cfg=CFG)
    assert all(a.kind != "close" for a in actions)
    assert session.state is SessionState.ACTIVE


def test_tick_out_of_range_closes():
    session = fresh_session(now=0.0)
    actions = heartbeat_tick(session, now=0.1, cfg=CFG, in_range=False)
    assert [a.kind for a in actions] == ["close"]
    assert actions[0].reason == "range"


def test_tick_closed_session_is_inert():
    session = fresh_session(now=0.0)
    session.close("bye")
    assert heartbeat_tick(session, now=50.0, cfg=CFG) == []


def test_touch_refreshes_last_seen():
    session = fresh_session(now=0.0)
    session.touch(6.0)
    assert heartbeat_tick(session, now=7.0, cfg=CFG) == []
    assert session.state is SessionState.ACTIVE


# -- live transport ----------------------------------------------------------


def fast_cfg(**overrides) -> NetConfig:
    base = dict(heartbeat_interval_s=0.25, heartbeat_timeout_s=0.8)
    base.update(overrides)
    return NetConfig(**base)


class ScriptedSlave:
    """A hand-driven slave endpoint for exercising the master side."""

    def __init__(self, port: int, address: str, position=(1.0, 0.0), on_cmd=None, pong=True):
        self.msock, self.accept_body = connect_slave("127.0.0.1", port, address, position)
        self.on_cmd = on_cmd or (lambda body: {"ok": True, "echo": body})
        self.pong = pong
        self.seq = SeqCounter()
        self.cmd_seqs: list[int] = []
        self.thread = threading.Thread(target=self._loop, daemon=True)
        self.thread.start()

    def _loop(self):
        while True:
            try:
                env = self.msock.recv(timeout=0.1)
            except TimeoutError:
                continue
            except Exception:
                return
            if env is None or env.t == "BYE":
                return
            if env.t == "PING":
                if self.pong:
                    self.msock.send(Envelope(t="PONG", seq=env.seq))
            elif env.t == "CMD":
                self.cmd_seqs.append(env.seq)
                result = self.on_cmd(env.body)
                if result is not None:
                    self.msock.send(Envelope(t="CMD_RESULT", seq=env.seq, body=result))

    def send_event(self, body: dict):
        self.msock.send(Envelope(t="EVENT", seq=self.seq.next(), body=body))

    def close(self):
        self.msock.close()
        self.thread.join(timeout=2.0)


@pytest.fixture
def net_factory():
    nets: list[Piconet] = []
    slaves: list[ScriptedSlave] = []

    def build(cfg: NetConfig | None = None, **kw) -> Piconet:
        net = Piconet(
            "127.0.0.1", 0, cfg or fast_cfg(), MASTER, tick_interval_s=0.05, **kw
        )
        net.start()
        nets.append(net)
        return net

    def attach(net: Piconet, address: str, **kw) -> ScriptedSlave:
        slave = ScriptedSlave(net.port, address, **kw)
        slaves.append(slave)
        return slave

    yield build, attach
    for slave in slaves:
        slave.close()
    for net in nets:
        net.stop()


def wait_until(predicate, timeout: float = 5.0, step: float = 0.02) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(step)
    return False


def test_handshake_accept_body(net_factory):
    build, attach = net_factory
    net = build(authorizer=lambda addr: {"device_id": "dev-" + addr})
    slave = attach(net, "sp:01")
    body = slave.accept_body
    assert body["address"] == "hub"  # the accepting master names itself
    assert body["device_id"] == "dev-sp:01"
    assert body["heartbeat_interval_s"] == 0.25
    assert "session_id" in body
    assert net.active_addresses() == ["sp:01"]


def test_second_connect_same_address_rejected(net_factory):
    build, attach = net_factory
    net = build()
    attach(net, "sp:01")
    with pytest.raises(AlreadyPaired):
        connect_slave("127.0.0.1", net.port, "sp:01", (1.0, 0.0))


def test_out_of_range_handshake_rejected(net_factory):
    build, attach = net_factory
    net = build()
    with pytest.raises(OutOfRange) as exc:
        connect_slave("127.0.0.1", net.port, "sp:far", (9.0, 0.0))
    assert exc.value.reason == "range"
    assert net.active_addresses() == []


def test_capacity_rejection_on_third_slave(net_factory):
    build, attach = net_factory
    net = build(cfg=fast_cfg(max_slaves=2))
    attach(net, "sp:01")
    attach(net, "sp:02", position=(2.0, 0.0))
    with pytest.raises(CapacityExceeded) as exc:
        connect_slave("127.0.0.1", net.port, "sp:03", (1.0, 1.0))
    assert exc.value.reason == "capacity"
    assert len(net.active_addresses()) == 2


def test_send_command_round_trip(net_factory):
    build, attach = net_factory
    net = build()
    slave = attach(net, "sp:01")
    result = net.send_command("sp:01", {"kind": "GetStatus"})
    assert result["ok"] is True
    assert result["echo"] == {"kind": "GetStatus"}


def test_command_seqs_strictly_increase(net_factory):
    build, attach = net_factory
    net = build()
    slave = attach(net, "sp:01")
    for _ in range(5):
        net.send_command("sp:01", {"kind": "GetStatus"})
    assert slave.cmd_seqs == sorted(slave.cmd_seqs)
    assert len(set(slave.cmd_seqs)) == 5


def test_send_command_without_session_raises(net_factory):
    build, _ = net_factory
    net = build()
    with pytest.raises(SessionClosed):
        net.send_command("sp:none", {"kind": "GetStatus"})


def test_silent_slave_times_out_and_closes(net_factory):
    closed = []
    build, attach = net_factory
    net = build(
        cfg=fast_cfg(heartbeat_interval_s=0.2, heartbeat_timeout_s=0.5),
        on_session_closed=lambda addr, session: closed.append((addr, session.close_reason)),
    )
    attach(net, "sp:01", on_cmd=lambda body: None)  # swallows commands
    with pytest.raises(Timeout):
        net.send_command("sp:01", {"kind": "GetStatus"}, timeout=0.4)
    assert wait_until(lambda: ("sp:01", "timeout") in closed)
    assert net.active_addresses() == []


def test_ponging_slave_outlives_the_timeout(net_factory):
    build, attach = net_factory
    net = build(cfg=fast_cfg(heartbeat_interval_s=0.15, heartbeat_timeout_s=0.5))
    attach(net, "sp:01")
    time.sleep(1.2)  # several timeout windows; PONGs keep it alive
    assert net.active_addresses() == ["sp:01"]


def test_move_within_range_keeps_session(net_factory):
    build, attach = net_factory
    net = build()
    attach(net, "sp:01", position=(3.0, 0.0))
    statuses = net.move_endpoint("sp:01", 5.0, 0.0)
    status = next(s for s in statuses if s.address == "sp:01")
    assert status.in_range is True
    time.sleep(0.3)
    assert net.active_addresses() == ["sp:01"]


def test_move_out_of_range_closes_at_next_tick(net_factory):
    closed = []
    build, attach = net_factory
    net = build(on_session_closed=lambda addr, session: closed.append(session.close_reason))
    attach(net, "sp:01", position=(3.0, 0.0))
    net.move_endpoint("sp:01", 10.0, 0.0)
    assert wait_until(lambda: closed == ["range"])
    assert net.session_for("sp:01").state is SessionState.CLOSED


def test_move_unknown_endpoint(net_factory):
    build, _ = net_factory
    net = build()
    with pytest.raises(UnknownEndpoint):
        net.move_endpoint("nope", 1.0, 1.0)


def test_slave_eof_closes_session(net_factory):
    closed = []
    build, attach = net_factory
    net = build(on_session_closed=lambda addr, session: closed.append(session.close_reason))
    slave = attach(net, "sp:01")
    slave.close()
    assert wait_until(lambda: closed == ["eof"])


def test_slave_bye_closes_session(net_factory):
    closed = []
    build, attach = net_factory
    net = build(on_session_closed=lambda addr, session: closed.append(session.close_reason))
    slave = attach(net, "sp:01")
    slave.msock.send(Envelope(t="BYE", seq=slave.seq.next()))
    assert wait_until(lambda: closed == ["bye"])


def test_events_reach_the_master_callback(net_factory):
    events = []
    build, attach = net_factory
    net = build(on_event=lambda addr, body: events.append((addr, body)))
    slave = attach(net, "sp:01")
    slave.send_event({"kind": "Telemetry", "battery_pct": 80})
    assert wait_until(lambda: events == [("sp:01", {"kind": "Telemetry", "battery_pct": 80})])


def test_authorizer_rejection_propagates(net_factory):
    from arcon.errors import UnknownDevice

    def deny(address: str) -> dict:
        raise UnknownDevice(f"{address} is not registered")

    build, _ = net_factory
    net = build(authorizer=deny)
    with pytest.raises(UnknownDevice):
        connect_slave("127.0.0.1", net.port, "sp:01", (1.0, 0.0))


def test_on_paired_callback_fires(net_factory):
    paired = []
    build, attach = net_factory
    net = build(on_paired=lambda addr, session: paired.append(addr))
    attach(net, "sp:01")
    assert wait_until(lambda: paired == ["sp:01"])
