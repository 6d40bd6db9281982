"""Command-line operator tool.

Machine output (device listings, scan lines, events) is canonical JSON on
stdout; human diagnostics go to stderr. Exit codes: 0 ok, 1 infrastructure,
2 registration, 3 pairing, 4 argument, 5 device error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .agents import Agent, load_agent_config
from .canonical import dumps_canonical
from .client import HubClient
from .errors import ArconError, IoFailure, exit_code_for
from .frames import decode_pgm, read_pgm
from .registry import Registry

DEFAULT_HUB = "127.0.0.1:7420"


def _default_hub() -> str:
    return os.environ.get("ARCON_HUB", DEFAULT_HUB)


def _print_json(payload) -> None:
    sys.stdout.write(dumps_canonical(payload).decode("utf-8") + "\n")


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def _recognition_line(rec: dict) -> str:
    """One scan line: canonical key order, score fixed to 4 decimals."""
    x, y, w, h = rec["bbox"]
    return (
        f'{{"bbox":[{int(x)},{int(y)},{int(w)},{int(h)}],'
        f'"device_id":{json.dumps(rec["device_id"])},'
        f'"scale":{json.dumps(rec.get("scale", 1.0))},'
        f'"score":{float(rec["score"]):.4f},'
        f'"signature_index":{int(rec.get("signature_index", 0))}}}'
    )


def _state_summary(state: dict) -> str:
    parts = [f"power={state.get('power')}", f"volume={state.get('volume')}"]
    if state.get("now_playing") is not None:
        parts.append(f"now_playing={state['now_playing']}")
    if state.get("cursor") is not None:
        x, y = state["cursor"]
        parts.append(f"cursor={x},{y}")
    if state.get("battery_pct") is not None:
        parts.append(f"battery_pct={state['battery_pct']}")
    if state.get("temperature_c") is not None:
        parts.append(f"temperature_c={state['temperature_c']}")
    return " ".join(parts)


def _read_image(path: str) -> tuple[str, bytes]:
    p = Path(path)
    try:
        return p.name, p.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read image {path}: {exc}") from exc


# -- handlers ----------------------------------------------------------------


def cmd_register(args) -> int:
    client = HubClient(args.hub)
    images = [_read_image(p) for p in args.images]
    record = client.register(
        name=args.name,
        kind=args.kind,
        address=args.address,
        images=images,
        capabilities=args.capabilities.split(",") if args.capabilities else None,
    )
    if args.json:
        _print_json(record)
    else:
        print(record["device_id"])
    return 0


def cmd_devices(args) -> int:
    for record in HubClient(args.hub).devices():
        _print_json(record)
    return 0


def cmd_remove(args) -> int:
    result = HubClient(args.hub).remove(args.device_id)
    if args.json:
        _print_json(result)
    else:
        _say(f"removed {result['removed']}")
    return 0


def cmd_scan(args) -> int:
    client = HubClient(args.hub)
    frame_bytes = None
    if args.frame:
        frame_bytes = Path(args.frame).read_bytes()
        decode_pgm(frame_bytes)  # fail fast with a precise error
    result = client.scan(frame_bytes)
    for rec in result["recognitions"]:
        print(_recognition_line(rec))
    if args.report_dir:
        from . import report

        frame = (
            decode_pgm(frame_bytes)
            if frame_bytes
            else decode_pgm(client.current_frame())
        )
        names = {d["device_id"]: d["name"] for d in client.devices()}
        out = report.render_scan_overlay(
            frame,
            result["recognitions"],
            Path(args.report_dir) / "scan_overlay.png",
            names,
        )
        _say(f"figure written to {out}")
    return 0


def cmd_control(args) -> int:
    client = HubClient(args.hub)
    kind, cmd_args = args.make_command(args)
    result = client.command(args.device_id, kind, cmd_args)
    if args.json:
        _print_json(result)
        return 0
    state = result.get("state", {})
    if kind == "GetStatus":
        print(_state_summary(state))
    elif kind == "SetVolume":
        print(f"ok volume={state.get('volume')}")
    elif kind in ("PowerOn", "PowerOff"):
        print(f"ok power={state.get('power')}")
    elif kind == "PlayTrack":
        print(f"ok now_playing={state.get('now_playing')}")
    elif kind == "StopTrack":
        print("ok now_playing=none")
    elif kind == "MoveCursor":
        x, y = state.get("cursor") or ("?", "?")
        print(f"ok cursor={x},{y}")
    else:
        print("ok")
    return 0


def cmd_transfer(args) -> int:
    client = HubClient(args.hub)
    job = client.transfer(
        args.src, args.dst, args.label, args.total_bytes, args.chunk_bytes
    )
    if not args.wait:
        _print_json(job)
        return 0
    deadline = time.monotonic() + args.wait_timeout
    while time.monotonic() < deadline:
        job = client.get_transfer(job["job_id"])
        if job["state"] != "running":
            break
        time.sleep(0.05)
    _print_json(job)
    return 0 if job["state"] == "done" else 1


def cmd_view(args) -> int:
    _print_json(HubClient(args.hub).view())
    return 0


def cmd_events(args) -> int:
    client = HubClient(args.hub)
    count = 0
    for event in client.events(device_id=args.device, timeout=args.timeout):
        _print_json(event)
        count += 1
        if args.limit and count >= args.limit:
            break
    return 0


def cmd_report(args) -> int:
    from . import report

    client = HubClient(args.hub)
    view = client.view()
    frame = None
    if args.frame:
        frame = read_pgm(args.frame)
    else:
        try:
            frame = decode_pgm(client.current_frame())
        except ArconError:
            frame = None
    names = {d["device_id"]: d["name"] for d in client.devices()}
    for rec in view.get("recognitions", []):
        print(_recognition_line(rec))
    written = report.render_report(view, args.out, frame=frame, names=names)
    for path in written:
        _say(f"figure written to {path}")
    return 0


def cmd_serve(args) -> int:
    from .hub import Hub, load_hub_config

    cfg = load_hub_config(args.config)
    hub = Hub(cfg)
    hub.start()
    _say(f"hub up: api={cfg.api_listen} net={hub.net.host}:{hub.net.port}")
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        _say("shutting down")
        hub.stop()
    return 0


def cmd_agent(args) -> int:
    cfg = load_agent_config(args.config)
    hub_net = args.net or cfg.hub_net
    host, _, port = hub_net.rpartition(":")
    agent = Agent(cfg, host or "127.0.0.1", int(port))
    agent.start()
    _say(f"agent {cfg.address} ({cfg.kind.value}) dialing {hub_net}")
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        _say("stopping agent")
        agent.stop()
    return 0


def cmd_init_registry(args) -> int:
    path = Path(args.path)
    if path.exists() and not args.force:
        raise IoFailure(f"{path} already exists (use --force to overwrite)")
    Registry().persist(path)
    _say(f"empty registry written to {path}")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arcon",
        description="Operate the device controller hub from the command line.",
    )
    parser.add_argument(
        "--hub",
        default=_default_hub(),
        help="hub API address host:port (env ARCON_HUB overrides the default)",
    )
    parser.add_argument(
        "--json", action="store_true", help="always print full JSON payloads"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="register a device from reference images")
    p.add_argument("--name", required=True)
    p.add_argument("--kind", required=True, choices=["speaker", "laptop", "generic"])
    p.add_argument("--address", required=True)
    p.add_argument("--capabilities", help="comma-separated subset of the kind's set")
    p.add_argument("images", nargs="+", help="1-6 PGM reference images")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("devices", help="list registered devices")
    p.set_defaults(func=cmd_devices)

    p = sub.add_parser("remove", help="remove a registered device")
    p.add_argument("device_id")
    p.set_defaults(func=cmd_remove)

    p = sub.add_parser("scan", help="scan a frame for registered devices")
    p.add_argument("frame", nargs="?", help="PGM frame (default: hub's current frame)")
    p.add_argument("--report-dir", help="also render an annotated overlay figure here")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("control", help="send a command to a device")
    p.add_argument("device_id")
    action = p.add_subparsers(dest="action", required=True)

    a = action.add_parser("power-on")
    a.set_defaults(make_command=lambda args: ("PowerOn", {}))
    a = action.add_parser("power-off")
    a.set_defaults(make_command=lambda args: ("PowerOff", {}))
    a = action.add_parser("status")
    a.set_defaults(make_command=lambda args: ("GetStatus", {}))
    a = action.add_parser("set-volume")
    a.add_argument("level", type=int)
    a.set_defaults(make_command=lambda args: ("SetVolume", {"level": args.level}))
    a = action.add_parser("play")
    a.add_argument("track")
    a.set_defaults(make_command=lambda args: ("PlayTrack", {"track": args.track}))
    a = action.add_parser("stop")
    a.set_defaults(make_command=lambda args: ("StopTrack", {}))
    a = action.add_parser("move-cursor")
    a.add_argument("dx", type=int)
    a.add_argument("dy", type=int)
    a.set_defaults(
        make_command=lambda args: ("MoveCursor", {"dx": args.dx, "dy": args.dy})
    )
    a = action.add_parser("send", help="raw command kind with JSON args")
    a.add_argument("kind")
    a.add_argument("args_json", nargs="?", default="{}")
    a.set_defaults(
        make_command=lambda args: (args.kind, json.loads(args.args_json))
    )
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("transfer", help="move bytes from one device to another")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--label", default="document")
    p.add_argument("--total-bytes", type=int, required=True)
    p.add_argument("--chunk-bytes", type=int, default=256)
    p.add_argument("--wait", action="store_true", help="poll until the job settles")
    p.add_argument("--wait-timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("view", help="print the hub's current view snapshot")
    p.set_defaults(func=cmd_view)

    p = sub.add_parser("events", help="stream hub events as JSON lines")
    p.add_argument("--device", help="only events for this device id")
    p.add_argument("--limit", type=int, help="stop after this many events")
    p.add_argument("--timeout", type=float, default=3600.0)
    p.set_defaults(func=cmd_events)

    p = sub.add_parser("report", help="render status figures from the current view")
    p.add_argument("--out", default="report", help="output directory for figures")
    p.add_argument("--frame", help="render the overlay from this local PGM instead")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the hub")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("agent", help="run one virtual device agent")
    p.add_argument("--config", required=True)
    p.add_argument("--net", help="master network address host:port")
    p.set_defaults(func=cmd_agent)

    p = sub.add_parser("init-registry", help="write an empty registry file")
    p.add_argument("path")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_init_registry)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ArconError as exc:
        _say(f"error: {exc.code}: {exc.message}")
        return exit_code_for(exc.code)
    except KeyboardInterrupt:
        return 130
    except OSError as exc:
        _say(f"error: {exc}")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
