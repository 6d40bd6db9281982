/** Transfer flow animation: a marker travels the straight line between the
 * two devices' bbox centers, placed at exactly sent/total of the path. When
 * an endpoint is not recognized in the frame, its end of the path docks at
 * the screen edge (left for the source, right for the destination). */

import type { Point, TransferProgressPayload, TransferState, Viewport } from "./types.js";

export const STALE_FADE_MS = 2000;
export const DOCK_MARGIN_PX = 12;

export interface FlowEndpoint {
  point: Point;
  docked: boolean;
}

export interface FlowRender {
  jobId: string;
  label: string;
  from: FlowEndpoint;
  to: FlowEndpoint;
  marker: Point;
  state: TransferState;
  opacity: number;
}

export function markerPosition(
  from: Point,
  to: Point,
  sentBytes: number,
  totalBytes: number,
): Point {
  const raw = totalBytes > 0 ? sentBytes / totalBytes : 0;
  const t = Math.min(Math.max(raw, 0), 1);
  return { x: from.x + (to.x - from.x) * t, y: from.y + (to.y - from.y) * t };
}

export function dockPoint(
  side: "src" | "dst",
  near: Point | null,
  viewport: Viewport,
): Point {
  const x = side === "src" ? DOCK_MARGIN_PX : viewport.width - DOCK_MARGIN_PX;
  const yRaw = near ? near.y : viewport.height / 2;
  const y = Math.min(
    Math.max(yRaw, DOCK_MARGIN_PX),
    viewport.height - DOCK_MARGIN_PX,
  );
  return { x, y };
}

/** Opacity for a flow given its state: running flows are solid; finished or
 * failed ones fade out linearly over STALE_FADE_MS. */
export function flowOpacity(state: TransferState, msSinceTerminal: number): number {
  if (state === "running") return 1;
  if (msSinceTerminal >= STALE_FADE_MS) return 0;
  return 1 - msSinceTerminal / STALE_FADE_MS;
}

/** Resolves one progress event to drawable geometry. `centers` maps device
 * ids recognized in the current frame to their bbox centers. */
export function layoutFlow(
  progress: TransferProgressPayload,
  centers: ReadonlyMap<string, Point>,
  viewport: Viewport,
  msSinceTerminal = 0,
): FlowRender {
  const srcCenter = centers.get(progress.src_device_id) ?? null;
  const dstCenter = centers.get(progress.dst_device_id) ?? null;
  const from: FlowEndpoint = srcCenter
    ? { point: srcCenter, docked: false }
    : { point: dockPoint("src", dstCenter, viewport), docked: true };
  const to: FlowEndpoint = dstCenter
    ? { point: dstCenter, docked: false }
    : { point: dockPoint("dst", srcCenter, viewport), docked: true };
  return {
    jobId: progress.job_id,
    label: progress.label,
    from,
    to,
    marker: markerPosition(from.point, to.point, progress.sent_bytes, progress.total_bytes),
    state: progress.state,
    opacity: flowOpacity(progress.state, msSinceTerminal),
  };
}
