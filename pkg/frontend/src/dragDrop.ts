/** Drag-and-drop transfer resolution: where a drag from one device's bbox
 * ends decides whether a transfer starts, is cancelled, or is a no-op. */

import type { OverlayCluster } from "./overlay.js";
import type { Point, TransferRequest } from "./types.js";
import { bboxContains } from "./types.js";

export interface PayloadChoice {
  label: string;
  totalBytes: number;
  chunkBytes?: number;
}

/** The simulated payload offered by default, a small document. */
export const DEFAULT_PAYLOAD: PayloadChoice = {
  label: "document.pdf",
  totalBytes: 1000,
};

export type DropOutcome =
  | { kind: "self"; hint: string }
  | { kind: "outside" }
  | { kind: "transfer"; request: TransferRequest };

/** Topmost cluster under the point, or null when the drop misses them all. */
export function deviceAt(point: Point, clusters: readonly OverlayCluster[]): string | null {
  for (const cluster of clusters) {
    if (cluster.visible && bboxContains(cluster.bbox, point)) {
      return cluster.deviceId;
    }
  }
  return null;
}

export function resolveDrop(
  sourceDeviceId: string,
  dropPoint: Point,
  clusters: readonly OverlayCluster[],
  payload: PayloadChoice = DEFAULT_PAYLOAD,
): DropOutcome {
  const target = deviceAt(dropPoint, clusters);
  if (target === null) {
    return { kind: "outside" };
  }
  if (target === sourceDeviceId) {
    return { kind: "self", hint: "drop on another device to send" };
  }
  const request: TransferRequest = {
    src_device_id: sourceDeviceId,
    dst_device_id: target,
    label: payload.label,
    total_bytes: payload.totalBytes,
  };
  if (payload.chunkBytes !== undefined) {
    request.chunk_bytes = payload.chunkBytes;
  }
  return { kind: "transfer", request };
}
