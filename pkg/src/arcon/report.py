"""Figure rendering for scans and device status.

Everything draws through the Agg backend and lands in files, so reports
work headless alongside the machine-readable output.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.patches as mpatches  # noqa: E402 - backend must be set first
import matplotlib.pyplot as plt  # noqa: E402

from .frames import GrayFrame  # noqa: E402

_BOX_COLORS = ("#2ecc71", "#3498db", "#e67e22", "#9b59b6", "#e74c3c", "#1abc9c")


def render_scan_overlay(
    frame: GrayFrame,
    recognitions: list[dict],
    path: str | Path,
    names: dict[str, str] | None = None,
) -> Path:
    """Draw the frame with one labeled box per recognition."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(9, 9 * frame.height / max(frame.width, 1)))
    ax.imshow(frame.as_array(), cmap="gray", vmin=0, vmax=255)
    for i, rec in enumerate(recognitions):
        x, y, w, h = rec["bbox"]
        color = _BOX_COLORS[i % len(_BOX_COLORS)]
        ax.add_patch(
            mpatches.Rectangle((x, y), w, h, fill=False, edgecolor=color, linewidth=2)
        )
        device_id = rec.get("device_id", "?")
        label = (names or {}).get(device_id, device_id[:8])
        ax.annotate(
            f"{label} {rec.get('score', 0.0):.4f}",
            (x, max(y - 4, 2)),
            color=color,
            fontsize=9,
            fontweight="bold",
        )
    ax.set_axis_off()
    ax.set_title(f"{len(recognitions)} recognition(s)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_device_panel(view: dict, path: str | Path, names: dict[str, str] | None = None) -> Path:
    """Bar panel of per-device volume and battery from a view payload."""
    path = Path(path)
    states = view.get("device_states", {})
    labels = []
    volumes = []
    batteries = []
    powers = []
    for device_id in sorted(states):
        state = states[device_id]
        labels.append((names or {}).get(device_id, device_id[:8]))
        volumes.append(state.get("volume") or 0)
        batteries.append(state.get("battery_pct"))
        powers.append(state.get("power", "off"))
    fig, (ax_vol, ax_bat) = plt.subplots(1, 2, figsize=(10, 4))
    xs = range(len(labels))
    colors = ["#2ecc71" if p == "on" else "#95a5a6" for p in powers]
    ax_vol.bar(xs, volumes, color=colors)
    ax_vol.set_xticks(list(xs), labels, rotation=30, ha="right")
    ax_vol.set_ylim(0, 100)
    ax_vol.set_ylabel("volume")
    ax_vol.set_title("volume (grey = powered off)")
    known = [(i, b) for i, b in enumerate(batteries) if b is not None]
    if known:
        ax_bat.bar(
            [i for i, _ in known], [b for _, b in known], color="#3498db"
        )
        ax_bat.set_xticks(
            [i for i, _ in known], [labels[i] for i, _ in known], rotation=30, ha="right"
        )
    ax_bat.set_ylim(0, 100)
    ax_bat.set_ylabel("battery %")
    ax_bat.set_title("battery")
    fig.suptitle(f"frame {view.get('frame_id')} epoch {view.get('scan_epoch')}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_transfers(view: dict, path: str | Path) -> Path:
    """Horizontal progress bars for the transfers in a view payload."""
    path = Path(path)
    transfers = view.get("active_transfers", [])
    fig, ax = plt.subplots(figsize=(8, max(1.2, 0.6 * len(transfers) + 0.8)))
    if not transfers:
        ax.text(0.5, 0.5, "no active transfers", ha="center", va="center")
        ax.set_axis_off()
    else:
        labels = [t.get("label") or t.get("job_id", "?")[:8] for t in transfers]
        fractions = [
            t.get("sent_bytes", 0) / max(t.get("total_bytes", 1), 1) for t in transfers
        ]
        ys = range(len(transfers))
        ax.barh(ys, fractions, color="#e67e22")
        ax.set_yticks(list(ys), labels)
        ax.set_xlim(0, 1)
        ax.set_xlabel("fraction sent")
        ax.set_title("transfers")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_report(
    view: dict,
    out_dir: str | Path,
    frame: GrayFrame | None = None,
    names: dict[str, str] | None = None,
) -> list[Path]:
    """Render the full figure set for one view; returns the files written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if frame is not None:
        written.append(
            render_scan_overlay(
                frame, view.get("recognitions", []), out_dir / "scan_overlay.png", names
            )
        )
    written.append(render_device_panel(view, out_dir / "device_panel.png", names))
    written.append(render_transfers(view, out_dir / "transfers.png"))
    return written
