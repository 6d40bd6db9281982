/** Overlay clusters: the controls anchored onto each recognized device.
 *
 * Hard limits, mirrored from the hub's recognition cap and kept locally so a
 * malformed payload can never overdraw the scene: at most 5 clusters on
 * screen, at most 3 controls per cluster.
 */

import type { Bbox, DeviceState, DeviceSummary, Point, Power, ViewModel } from "./types.js";

export type OverlayControl = "PowerToggle" | "VolumeSlider" | "StatusBadge";

export const MAX_CLUSTERS = 5;
export const MAX_CONTROLS_PER_CLUSTER = 3;

/** The control bar floats this far above the bbox top edge (clamped to the
 * frame), so the anchor always stays within 16 px of that edge. */
export const ANCHOR_LIFT_PX = 8;

export interface OverlayCluster {
  deviceId: string;
  bbox: Bbox;
  anchor: Point;
  controls: OverlayControl[];
  visible: boolean;
  outlineColor: string;
  /** Temperature ramp color when the device reports telemetry, else null. */
  fillColor: string | null;
  power: Power | null;
  volume: number | null;
}

/** Ordered pick: power toggle when the device can do both transitions, a
 * volume slider when it accepts SetVolume, and always a status badge. */
export function controlsFor(capabilities: readonly string[]): OverlayControl[] {
  const controls: OverlayControl[] = [];
  if (capabilities.includes("PowerOn") && capabilities.includes("PowerOff")) {
    controls.push("PowerToggle");
  }
  if (capabilities.includes("SetVolume")) {
    controls.push("VolumeSlider");
  }
  controls.push("StatusBadge");
  return controls.slice(0, MAX_CONTROLS_PER_CLUSTER);
}

export function anchorFor(bbox: Bbox): Point {
  return { x: bbox[0], y: Math.max(bbox[1] - ANCHOR_LIFT_PX, 0) };
}

export const OUTLINE_ON = "#2fb56a";
export const OUTLINE_OFF = "#d23f3f";
export const OUTLINE_UNKNOWN = "#e0a33a";

export function outlineColorFor(state: DeviceState | undefined): string {
  if (!state) return OUTLINE_UNKNOWN;
  if (state.power === "on") return OUTLINE_ON;
  if (state.power === "off") return OUTLINE_OFF;
  return OUTLINE_UNKNOWN;
}

/** Five-stop temperature ramp, cool blue at 20 °C through red at 80 °C. */
export const TEMPERATURE_STOPS: ReadonlyArray<readonly [number, string]> = [
  [20, "#2f6fd0"],
  [35, "#2fb56a"],
  [50, "#e0c23a"],
  [65, "#e0832f"],
  [80, "#d23f3f"],
];

function hexToRgb(hex: string): [number, number, number] {
  return [
    parseInt(hex.slice(1, 3), 16),
    parseInt(hex.slice(3, 5), 16),
    parseInt(hex.slice(5, 7), 16),
  ];
}

function rgbToHex(rgb: readonly number[]): string {
  return `#${rgb.map((c) => Math.round(c).toString(16).padStart(2, "0")).join("")}`;
}

/** Piecewise-linear interpolation along the ramp, clamped to its ends. */
export function temperatureColor(tempC: number): string {
  const first = TEMPERATURE_STOPS[0]!;
  const last = TEMPERATURE_STOPS[TEMPERATURE_STOPS.length - 1]!;
  if (tempC <= first[0]) return first[1];
  if (tempC >= last[0]) return last[1];
  for (let i = 1; i < TEMPERATURE_STOPS.length; i += 1) {
    const [hiTemp, hiColor] = TEMPERATURE_STOPS[i]!;
    if (tempC > hiTemp) continue;
    const [loTemp, loColor] = TEMPERATURE_STOPS[i - 1]!;
    const t = (tempC - loTemp) / (hiTemp - loTemp);
    const lo = hexToRgb(loColor);
    const hi = hexToRgb(hiColor);
    return rgbToHex(lo.map((c, k) => c + (hi[k]! - c) * t));
  }
  return last[1];
}

/** One cluster per recognized device, capped at MAX_CLUSTERS. Devices absent
 * from the view get no cluster at all — their overlay is hidden. */
export function buildClusters(
  view: ViewModel,
  devices: ReadonlyMap<string, DeviceSummary>,
): OverlayCluster[] {
  return view.recognitions.slice(0, MAX_CLUSTERS).map((rec) => {
    const state = view.device_states[rec.device_id];
    const summary = devices.get(rec.device_id);
    const temperature = state?.temperature_c;
    return {
      deviceId: rec.device_id,
      bbox: rec.bbox,
      anchor: anchorFor(rec.bbox),
      controls: controlsFor(summary?.capabilities ?? []),
      visible: true,
      outlineColor: outlineColorFor(state),
      fillColor: temperature == null ? null : temperatureColor(temperature),
      power: state?.power ?? null,
      volume: state?.volume ?? null,
    };
  });
}
