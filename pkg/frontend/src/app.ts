/** DOM wiring for the console: polls the hub's view, streams its events, and
 * renders the scan scene — frame, outlined devices with anchored control
 * clusters, 2D fallback panels, transfer flows, drag-and-drop. All decisions
 * live in the pure modules; this file only draws and forwards. */

import { HubApiError, HubClient, HubUnreachable } from "./hubClient.js";
import { decodePgm, grayToImageData } from "./pgm.js";
import {
  buildClusters,
  type OverlayCluster,
} from "./overlay.js";
import { AbsenceTracker, panelModeFor, type PanelState } from "./panelMode.js";
import { layoutFlow } from "./flow.js";
import { VolumeStore } from "./volume.js";
import { DEFAULT_PAYLOAD, resolveDrop } from "./dragDrop.js";
import {
  bboxCenter,
  type DeviceSummary,
  type HubEvent,
  type Point,
  type TransferProgressPayload,
  type ViewModel,
} from "./types.js";

export interface AppOptions {
  hub?: string;
  pollMs?: number;
}

interface FlowEntry {
  progress: TransferProgressPayload;
  terminalAt: number | null;
}

const DEFAULT_HUB = "127.0.0.1:7420";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

export function createApp(root: HTMLElement, options: AppOptions = {}) {
  const client = new HubClient(options.hub ?? DEFAULT_HUB);
  const pollMs = options.pollMs ?? 1000;

  let view: ViewModel | null = null;
  let clusters: OverlayCluster[] = [];
  const devices = new Map<string, DeviceSummary>();
  const absence = new AbsenceTracker();
  const volumes = new VolumeStore();
  const userPanelChoice = new Set<string>();
  const flows = new Map<string, FlowEntry>();
  const panelErrors = new Map<string, string>();
  let lastFrameId: string | null = null;
  let connected = false;
  let drag: { sourceId: string } | null = null;
  let running = false;
  let pollTimer: ReturnType<typeof setInterval> | null = null;
  let fadeTimer: ReturnType<typeof setInterval> | null = null;
  const streamAbort = new AbortController();

  // -- static skeleton -------------------------------------------------------

  const header = el("header", "console-header");
  const title = el("h1", "", "arcon console");
  const hubLabel = el("span", "hub-address", client.baseUrl);
  const connBadge = el("span", "conn-badge conn-down", "connecting…");
  header.append(title, hubLabel, connBadge);

  const banner = el("div", "banner hidden", "hub unreachable — retrying");

  const scanWrap = el("div", "scan-wrap");
  const frameCanvas = el("canvas", "frame-canvas");
  const overlayLayer = el("div", "overlay-layer");
  const flowCanvas = el("canvas", "flow-canvas");
  scanWrap.append(frameCanvas, overlayLayer, flowCanvas);

  const statusLine = el("div", "status-line");
  const panelArea = el("div", "panel-area");

  root.replaceChildren(header, banner, scanWrap, statusLine, panelArea);

  function setConnected(up: boolean): void {
    connected = up;
    banner.classList.toggle("hidden", up);
    connBadge.textContent = up ? "connected" : "disconnected";
    connBadge.className = `conn-badge ${up ? "conn-up" : "conn-down"}`;
  }

  function say(text: string): void {
    statusLine.textContent = text;
  }

  function describeError(err: unknown): string {
    if (err instanceof HubApiError) return `${err.code}: ${err.message}`;
    if (err instanceof Error) return err.message;
    return String(err);
  }

  // -- scene rendering -------------------------------------------------------

  function paintFrame(bytes: Uint8Array): void {
    const image = decodePgm(bytes);
    frameCanvas.width = image.width;
    frameCanvas.height = image.height;
    flowCanvas.width = image.width;
    flowCanvas.height = image.height;
    scanWrap.style.width = `${image.width}px`;
    scanWrap.style.height = `${image.height}px`;
    frameCanvas.getContext("2d")?.putImageData(grayToImageData(image), 0, 0);
  }

  function panelStateFor(deviceId: string): PanelState {
    const rec = view?.recognitions.find((r) => r.device_id === deviceId);
    return panelModeFor(
      deviceId,
      rec ? rec.bbox[2] : null,
      absence.streakFor(deviceId),
      userPanelChoice.has(deviceId),
    );
  }

  function isOn(deviceId: string): boolean {
    return view?.device_states[deviceId]?.power === "on";
  }

  function isPaired(deviceId: string): boolean {
    return view?.sessions[deviceId] === "active";
  }

  function renderScene(): void {
    if (!view) return;
    clusters = buildClusters(view, devices);
    const shown = clusters.filter(
      (c) => panelStateFor(c.deviceId).mode === "Overlay",
    );
    overlayLayer.replaceChildren(...shown.map(clusterElement));
    renderPanels();
    drawFlows();
  }

  function clusterElement(cluster: OverlayCluster): HTMLElement {
    const [x, y, w, h] = cluster.bbox;
    const box = el("div", "cluster");
    box.style.left = `${x}px`;
    box.style.top = `${y}px`;
    box.style.width = `${w}px`;
    box.style.height = `${h}px`;
    box.style.borderColor = cluster.outlineColor;
    if (cluster.fillColor) {
      box.style.backgroundColor = `${cluster.fillColor}33`; // translucent fill
    }
    box.dataset["deviceId"] = cluster.deviceId;
    box.addEventListener("pointerdown", (ev) => {
      if ((ev.target as HTMLElement).closest(".cluster-controls")) return;
      drag = { sourceId: cluster.deviceId };
      say(`dragging ${DEFAULT_PAYLOAD.label} from ${nameOf(cluster.deviceId)}…`);
      ev.preventDefault();
    });

    const bar = el("div", "cluster-controls");
    bar.style.left = `${cluster.anchor.x - x}px`;
    bar.style.top = `${cluster.anchor.y - y}px`;
    for (const control of cluster.controls) {
      bar.append(controlElement(cluster, control));
    }
    box.append(bar);
    return box;
  }

  function controlElement(cluster: OverlayCluster, control: string): HTMLElement {
    const deviceId = cluster.deviceId;
    if (control === "PowerToggle") {
      const on = cluster.power === "on";
      const btn = el("button", "ctl power", on ? "⏻ on" : "⏻ off");
      btn.addEventListener("click", () => {
        void runCommand(deviceId, on ? "PowerOff" : "PowerOn");
      });
      return btn;
    }
    if (control === "VolumeSlider") {
      return volumeSlider(deviceId);
    }
    const state = view?.device_states[deviceId];
    const bits = [cluster.power ?? "?"];
    if (state?.volume != null) bits.push(`vol ${state.volume}`);
    if (state?.now_playing) bits.push(`▶ ${state.now_playing}`);
    return el("span", "ctl badge", bits.join(" · "));
  }

  function volumeSlider(deviceId: string): HTMLElement {
    const wrap = el("span", "ctl volume");
    const slider = el("input") as HTMLInputElement;
    slider.type = "range";
    slider.min = "0";
    slider.max = "100";
    const displayed = volumes.displayedLevel(deviceId);
    slider.value = String(displayed ?? 0);
    slider.disabled = !isOn(deviceId) || !isPaired(deviceId);
    const readout = el("span", "volume-readout", String(displayed ?? "–"));
    slider.addEventListener("input", () => {
      volumes.beginDrag(deviceId, Number(slider.value));
      readout.textContent = slider.value;
    });
    slider.addEventListener("change", () => {
      void (async () => {
        const ok = await volumes.commit(deviceId, Number(slider.value), client);
        const confirmed = volumes.confirmedLevel(deviceId);
        slider.value = String(confirmed ?? 0);
        readout.textContent = String(confirmed ?? "–");
        if (!ok) {
          say(`volume change failed: ${volumes.errorFor(deviceId) ?? "unknown error"}`);
        }
      })();
    });
    wrap.append(slider, readout);
    return wrap;
  }

  function nameOf(deviceId: string): string {
    return devices.get(deviceId)?.name || deviceId;
  }

  // -- 2D fallback panels ----------------------------------------------------

  function renderPanels(): void {
    if (!view) return;
    const nodes: HTMLElement[] = [];
    for (const deviceId of devices.keys()) {
      const state = panelStateFor(deviceId);
      if (state.mode === "Panel2D") {
        nodes.push(panelElement(deviceId, state));
      } else {
        nodes.push(panelToggle(deviceId));
      }
    }
    panelArea.replaceChildren(...nodes);
  }

  function panelToggle(deviceId: string): HTMLElement {
    const row = el("div", "panel-toggle-row");
    const btn = el("button", "panel-toggle", `2D panel: ${nameOf(deviceId)}`);
    btn.addEventListener("click", () => {
      userPanelChoice.add(deviceId);
      renderScene();
    });
    row.append(btn);
    return row;
  }

  function panelElement(deviceId: string, panel: PanelState): HTMLElement {
    const summary = devices.get(deviceId);
    const state = view?.device_states[deviceId];
    const card = el("section", "panel");
    const head = el("div", "panel-head");
    head.append(
      el("strong", "", nameOf(deviceId)),
      el("span", "panel-reason", panel.reason ?? ""),
    );
    if (panel.reason === "UserChoice") {
      const back = el("button", "panel-toggle", "back to overlay");
      back.addEventListener("click", () => {
        userPanelChoice.delete(deviceId);
        renderScene();
      });
      head.append(back);
    }
    card.append(head);

    const controls = el("div", "panel-controls");
    const caps = summary?.capabilities ?? [];
    if (caps.includes("PowerOn") && caps.includes("PowerOff")) {
      const on = state?.power === "on";
      const btn = el("button", "ctl power", on ? "power off" : "power on");
      btn.addEventListener("click", () => {
        void runCommand(deviceId, on ? "PowerOff" : "PowerOn");
      });
      controls.append(btn);
    }
    if (caps.includes("SetVolume")) {
      controls.append(volumeSlider(deviceId));
    }
    if (caps.includes("PlayTrack")) {
      const track = el("input") as HTMLInputElement;
      track.placeholder = "track name";
      const play = el("button", "ctl", "play");
      play.addEventListener("click", () => {
        void runCommand(deviceId, "PlayTrack", { track: track.value || "track.ogg" });
      });
      controls.append(track, play);
    }
    if (caps.includes("StopTrack")) {
      const stop = el("button", "ctl", "stop");
      stop.addEventListener("click", () => void runCommand(deviceId, "StopTrack"));
      controls.append(stop);
    }
    if (caps.includes("MoveCursor")) {
      const pad = el("span", "cursor-pad");
      for (const [label, dx, dy] of [
        ["←", -10, 0],
        ["→", 10, 0],
        ["↑", 0, -10],
        ["↓", 0, 10],
      ] as const) {
        const btn = el("button", "ctl", label);
        btn.addEventListener("click", () => {
          void runCommand(deviceId, "MoveCursor", { dx, dy });
        });
        pad.append(btn);
      }
      controls.append(pad);
    }
    if (caps.includes("GetStatus")) {
      const refresh = el("button", "ctl", "refresh");
      refresh.addEventListener("click", () => void runCommand(deviceId, "GetStatus"));
      controls.append(refresh);
    }
    if (caps.includes("ReceiveChunk")) {
      controls.append(el("span", "ctl badge", "accepts file drops"));
    }
    card.append(controls);

    const line = el("div", "panel-state");
    if (state) {
      const bits = [`power ${state.power}`, `volume ${state.volume}`];
      if (state.now_playing) bits.push(`playing ${state.now_playing}`);
      if (state.battery_pct != null) bits.push(`battery ${state.battery_pct}%`);
      if (state.temperature_c != null) bits.push(`${state.temperature_c} °C`);
      line.textContent = bits.join(" · ");
    } else {
      line.textContent = "no state yet";
    }
    card.append(line);

    const error = panelErrors.get(deviceId);
    if (error) card.append(el("div", "panel-error", error));
    return card;
  }

  async function runCommand(
    deviceId: string,
    kind: string,
    args: Record<string, unknown> = {},
  ): Promise<void> {
    try {
      await client.sendCommand(deviceId, kind, args);
      panelErrors.delete(deviceId);
      await refresh();
    } catch (err) {
      panelErrors.set(deviceId, describeError(err));
      say(`${kind} on ${nameOf(deviceId)} failed: ${describeError(err)}`);
      renderScene();
    }
  }

  // -- transfer flows --------------------------------------------------------

  function drawFlows(): void {
    const ctx = flowCanvas.getContext("2d");
    if (!ctx || !view) return;
    ctx.clearRect(0, 0, flowCanvas.width, flowCanvas.height);
    const centers = new Map<string, Point>(
      view.recognitions.map((r) => [r.device_id, bboxCenter(r.bbox)]),
    );
    const viewport = { width: flowCanvas.width, height: flowCanvas.height };
    const now = Date.now();
    for (const [jobId, entry] of flows) {
      const since = entry.terminalAt === null ? 0 : now - entry.terminalAt;
      const flow = layoutFlow(entry.progress, centers, viewport, since);
      if (flow.opacity <= 0) {
        flows.delete(jobId);
        continue;
      }
      ctx.globalAlpha = flow.opacity;
      ctx.strokeStyle = "#4da3ff";
      ctx.setLineDash([6, 4]);
      ctx.beginPath();
      ctx.moveTo(flow.from.point.x, flow.from.point.y);
      ctx.lineTo(flow.to.point.x, flow.to.point.y);
      ctx.stroke();
      ctx.setLineDash([]);
      ctx.fillStyle = "#4da3ff";
      ctx.beginPath();
      ctx.arc(flow.marker.x, flow.marker.y, 6, 0, Math.PI * 2);
      ctx.fill();
      ctx.fillStyle = "#ffffff";
      ctx.font = "12px system-ui, sans-serif";
      ctx.fillText(flow.label, flow.marker.x + 10, flow.marker.y - 8);
      for (const end of [flow.from, flow.to]) {
        if (!end.docked) continue;
        ctx.fillStyle = "#4da3ff";
        ctx.fillRect(end.point.x - 5, end.point.y - 5, 10, 10);
      }
      ctx.globalAlpha = 1;
    }
  }

  // -- drag & drop -----------------------------------------------------------

  function framePoint(ev: PointerEvent): Point {
    const rect = frameCanvas.getBoundingClientRect();
    return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
  }

  function onPointerUp(ev: PointerEvent): void {
    if (!drag) return;
    const source = drag.sourceId;
    drag = null;
    const outcome = resolveDrop(source, framePoint(ev), clusters);
    if (outcome.kind === "outside") {
      say("drop cancelled");
      return;
    }
    if (outcome.kind === "self") {
      say(outcome.hint);
      return;
    }
    void (async () => {
      try {
        const job = await client.startTransfer(outcome.request);
        say(`sending ${job.label} to ${nameOf(job.dst_device_id)}…`);
      } catch (err) {
        say(`transfer failed: ${describeError(err)}`);
      }
    })();
  }

  // -- data loops ------------------------------------------------------------

  async function refreshDevices(): Promise<void> {
    for (const summary of await client.getDevices()) {
      devices.set(summary.device_id, summary);
    }
  }

  async function refresh(): Promise<void> {
    try {
      const next = await client.getView();
      const unknown = next.recognitions.some((r) => !devices.has(r.device_id));
      if (devices.size === 0 || unknown) await refreshDevices();
      view = next;
      absence.observe(next, devices.keys());
      for (const [deviceId, state] of Object.entries(next.device_states)) {
        volumes.noteSnapshot(deviceId, state.volume);
      }
      for (const job of next.active_transfers) {
        if (!flows.has(job.job_id)) {
          flows.set(job.job_id, { progress: { ...job }, terminalAt: null });
        }
      }
      if (next.frame_id !== lastFrameId) {
        lastFrameId = next.frame_id;
        if (next.frame_id !== null) {
          const { bytes } = await client.currentFrame();
          paintFrame(bytes);
        }
      }
      setConnected(true);
      renderScene();
    } catch (err) {
      if (err instanceof HubUnreachable) {
        setConnected(false);
      } else {
        say(describeError(err));
      }
    }
  }

  function applyEvent(event: HubEvent): void {
    volumes.applyEvent(event);
    if (event.kind === "TransferProgress") {
      const progress = event.payload as unknown as TransferProgressPayload;
      const terminal = progress.state !== "running";
      flows.set(progress.job_id, {
        progress,
        terminalAt: terminal ? Date.now() : null,
      });
      drawFlows();
      return;
    }
    if (event.kind === "VolumeChanged" || event.kind === "PowerChanged") {
      renderScene();
      return;
    }
    if (event.kind === "DeviceLost") {
      void refresh();
    }
  }

  async function streamLoop(): Promise<void> {
    while (running) {
      try {
        for await (const event of client.streamEvents({ signal: streamAbort.signal })) {
          applyEvent(event);
        }
      } catch {
        setConnected(false);
      }
      if (!running) return;
      await new Promise((resolve) => setTimeout(resolve, 1000));
    }
  }

  return {
    start(): void {
      if (running) return;
      running = true;
      document.addEventListener("pointerup", onPointerUp);
      void refresh();
      pollTimer = setInterval(() => void refresh(), pollMs);
      fadeTimer = setInterval(drawFlows, 150);
      void streamLoop();
    },
    stop(): void {
      running = false;
      document.removeEventListener("pointerup", onPointerUp);
      if (pollTimer) clearInterval(pollTimer);
      if (fadeTimer) clearInterval(fadeTimer);
      streamAbort.abort();
    },
  };
}
