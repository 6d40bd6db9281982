"""Shared fixtures: image builders, frame compositing, and a live hub harness."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from arcon.agents import Agent, AgentConfig, TelemetrySchedule
from arcon.devices import DeviceKind
from arcon.frames import GrayFrame, write_pgm
from arcon.hub import Hub, HubConfig
from arcon.pairnet import NetConfig
from arcon.recognizer import ScanConfig

PAIR_WAIT_S = 8.0


# -- image builders ----------------------------------------------------------


def uniform_image(width: int = 64, height: int = 64, value: int = 128) -> GrayFrame:
    arr = np.full((height, width), value, dtype=np.uint8)
    return GrayFrame.from_array(arr)


def ramp_image(width: int = 64, height: int = 64, descending: bool = False) -> GrayFrame:
    xs = np.arange(width, dtype=np.int64) % 256
    if descending:
        xs = xs[::-1].copy()
    arr = np.tile(xs, (height, 1)).astype(np.uint8)
    return GrayFrame.from_array(arr)


def checkerboard_image(width: int = 64, height: int = 64, block: int = 8) -> GrayFrame:
    ys, xs = np.mgrid[0:height, 0:width]
    arr = np.where(((ys // block) + (xs // block)) % 2 == 0, 0, 255).astype(np.uint8)
    return GrayFrame.from_array(arr)


def noise_image(width: int = 64, height: int = 64, seed: int = 0) -> GrayFrame:
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(height, width), dtype=np.uint8)
    return GrayFrame.from_array(arr)


@dataclass
class Plant:
    """Ground truth for one patch composited into a frame."""

    x: int
    y: int
    width: int
    height: int

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.width, self.height)


def composite(
    canvas: np.ndarray, patch: GrayFrame, x: int, y: int, noise_frac: float = 0.0, seed: int = 0
) -> Plant:
    """Paste ``patch`` into ``canvas`` at (x, y), optionally blended with noise."""
    arr = patch.as_array().astype(np.float64)
    if noise_frac > 0.0:
        rng = np.random.default_rng(seed)
        noise = rng.integers(0, 256, size=arr.shape).astype(np.float64)
        arr = (1.0 - noise_frac) * arr + noise_frac * noise
    h, w = arr.shape
    if y + h > canvas.shape[0] or x + w > canvas.shape[1]:
        raise ValueError("patch does not fit the canvas")
    canvas[y : y + h, x : x + w] = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    return Plant(x=x, y=y, width=w, height=h)


def iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union else 0.0


# -- live hub + agents -------------------------------------------------------


def fast_net(**overrides) -> NetConfig:
    base = dict(max_slaves=7, max_range_m=8.0, heartbeat_interval_s=0.4, heartbeat_timeout_s=1.2)
    base.update(overrides)
    return NetConfig(**base)


@dataclass
class HubEnv:
    """A running hub plus the agents attached to it, torn down as a unit."""

    root: Path
    hub: Hub
    agents: list[Agent] = field(default_factory=list)
    _seq: int = 0

    @property
    def api_addr(self) -> str:
        return "127.0.0.1:%d" % self.hub.api_port

    def register(self, name: str, address: str, kind: str = "speaker", images=None, seed: int | None = None):
        if images is None:
            if seed is None:
                self._seq += 1
                seed = 1000 + self._seq
            images = [noise_image(48, 48, seed=seed)]
        return self.hub.register_device(name=name, address=address, kind=kind, images=images)

    def start_agent(
        self,
        address: str,
        kind: str = "speaker",
        x_m: float = 1.0,
        y_m: float = 0.0,
        retry_backoff_s: float = 0.25,
        telemetry: TelemetrySchedule | None = None,
        wait: bool = True,
    ) -> Agent:
        cfg = AgentConfig(
            kind=DeviceKind(kind),
            address=address,
            x_m=x_m,
            y_m=y_m,
            telemetry=telemetry,
            retry_backoff_s=retry_backoff_s,
        )
        agent = Agent(cfg, "127.0.0.1", self.hub.net.port)
        agent.start()
        self.agents.append(agent)
        if wait:
            assert agent.paired.wait(PAIR_WAIT_S), f"agent {address} did not pair"
        return agent

    def attach(self, name: str, address: str, kind: str = "speaker", **agent_kw):
        """Register a device and bring up its agent; returns (record, agent)."""
        record = self.register(name, address, kind=kind)
        agent = self.start_agent(address, kind=kind, **agent_kw)
        return record, agent

    def stop(self) -> None:
        for agent in self.agents:
            agent.stop()
        self.hub.stop()


@pytest.fixture
def hub_env_factory(tmp_path):
    envs: list[HubEnv] = []

    def build(
        net: NetConfig | None = None,
        scan: ScanConfig | None = None,
        with_api: bool = False,
        frames: list[GrayFrame] | None = None,
        scan_interval_s: float = 0.25,
        event_buffer: int = 256,
    ) -> HubEnv:
        root = tmp_path / f"env{len(envs)}"
        root.mkdir()
        registry_path = root / "registry.json"
        frame_dir = None
        if frames is not None:
            frame_dir = root / "frames"
            frame_dir.mkdir()
            for i, frame in enumerate(frames):
                write_pgm(frame_dir / f"f{i:03d}.pgm", frame)
        cfg = HubConfig(
            registry_path=registry_path,
            frame_source=frame_dir,
            net=net or fast_net(),
            scan=scan or ScanConfig(),
            api_listen="127.0.0.1:0",
            net_listen="127.0.0.1:0",
            scan_interval_s=scan_interval_s,
            event_buffer=event_buffer,
        )
        from arcon.registry import Registry

        Registry().persist(registry_path)
        env = HubEnv(root=root, hub=Hub(cfg))
        env.hub.start(with_api=with_api)
        envs.append(env)
        return env

    yield build
    for env in envs:
        env.stop()


def drain_events(sub, want: int, timeout: float = 5.0) -> list:
    """Pull events from a subscription until ``want`` arrived or time ran out."""
    out: list = []
    stop_at = time.monotonic() + timeout
    while len(out) < want and time.monotonic() < stop_at:
        ev = sub.get(timeout=0.2)
        if ev is not None:
            out.append(ev)
    return out
