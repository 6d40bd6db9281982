/** Server-confirmed volume display. The slider may show the drag position
 * while a commit is in flight, but the moment the round-trip ends the
 * displayed value is the last VolumeChanged the hub confirmed — a failed
 * command snaps back to the previous confirmed level. */

import type { CommandResult, HubEvent } from "./types.js";

export interface VolumeClient {
  setVolume(deviceId: string, level: number): Promise<CommandResult>;
}

export class VolumeStore {
  private confirmed = new Map<string, number>();
  private pending = new Map<string, number>();
  private errors = new Map<string, string>();

  /** Level from a hub snapshot (GET /view); counts as server-confirmed. */
  noteSnapshot(deviceId: string, volume: number): void {
    this.confirmed.set(deviceId, volume);
  }

  /** Feed every hub event through here; only VolumeChanged matters. */
  applyEvent(event: HubEvent): void {
    if (event.kind !== "VolumeChanged" || event.device_id == null) return;
    const level = event.payload["level"];
    if (typeof level === "number") {
      this.confirmed.set(event.device_id, level);
    }
  }

  confirmedLevel(deviceId: string): number | null {
    return this.confirmed.get(deviceId) ?? null;
  }

  /** What the slider fill shows right now. */
  displayedLevel(deviceId: string): number | null {
    return this.pending.get(deviceId) ?? this.confirmedLevel(deviceId);
  }

  errorFor(deviceId: string): string | null {
    return this.errors.get(deviceId) ?? null;
  }

  /** Track the handle during a drag, before any request is sent. */
  beginDrag(deviceId: string, level: number): void {
    this.pending.set(deviceId, level);
  }

  cancelDrag(deviceId: string): void {
    this.pending.delete(deviceId);
  }

  /** Send SetVolume on drag release. Resolves true when the hub confirmed;
   * false means the command failed and the display snapped back. */
  async commit(deviceId: string, level: number, client: VolumeClient): Promise<boolean> {
    this.pending.set(deviceId, level);
    try {
      const result = await client.setVolume(deviceId, level);
      for (const event of result.events) this.applyEvent(event);
      this.errors.delete(deviceId);
      return true;
    } catch (err) {
      this.errors.set(deviceId, err instanceof Error ? err.message : String(err));
      return false;
    } finally {
      this.pending.delete(deviceId);
    }
  }
}
