/** Overlay vs 2D-panel mode. The rule is a pure function of bbox width,
 * absence streak, and the user's explicit choice, so it is testable without
 * a hub: too narrow to interact with (< 96 px) or gone from the scan for
 * three epochs means the device falls back to a full-width 2D panel. */

import type { ViewModel } from "./types.js";

export type PanelMode = "Overlay" | "Panel2D";
export type PanelReason = "TooSmall" | "OutOfView" | "UserChoice";

export const MIN_OVERLAY_WIDTH_PX = 96;
export const ABSENCE_EPOCHS_FOR_FALLBACK = 3;

export interface PanelState {
  deviceId: string;
  mode: PanelMode;
  reason: PanelReason | null;
}

/** bboxWidth is null when the device is absent from the current frame. */
export function panelModeFor(
  deviceId: string,
  bboxWidth: number | null,
  absenceStreak: number,
  userChoice: boolean,
): PanelState {
  if (userChoice) {
    return { deviceId, mode: "Panel2D", reason: "UserChoice" };
  }
  if (absenceStreak >= ABSENCE_EPOCHS_FOR_FALLBACK) {
    return { deviceId, mode: "Panel2D", reason: "OutOfView" };
  }
  if (bboxWidth !== null && bboxWidth < MIN_OVERLAY_WIDTH_PX) {
    return { deviceId, mode: "Panel2D", reason: "TooSmall" };
  }
  return { deviceId, mode: "Overlay", reason: null };
}

/** Counts consecutive scan epochs each device has been missing. Advances at
 * most once per epoch so re-reading the same view does not inflate streaks. */
export class AbsenceTracker {
  private epoch: number | null = null;
  private streaks = new Map<string, number>();

  observe(view: ViewModel, knownDeviceIds: Iterable<string>): void {
    if (view.scan_epoch === this.epoch) return;
    this.epoch = view.scan_epoch;
    const present = new Set(view.recognitions.map((r) => r.device_id));
    for (const deviceId of knownDeviceIds) {
      const previous = this.streaks.get(deviceId) ?? 0;
      this.streaks.set(deviceId, present.has(deviceId) ? 0 : previous + 1);
    }
  }

  streakFor(deviceId: string): number {
    return this.streaks.get(deviceId) ?? 0;
  }
}
