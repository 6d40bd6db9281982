/** Wire shapes of the hub's HTTP API. Field names mirror the JSON exactly. */

export type Power = "on" | "off";
export type SessionStatus = "pairing" | "active" | "closed";
export type TransferState = "running" | "done" | "failed";

/** x, y, width, height in frame pixels. */
export type Bbox = [x: number, y: number, w: number, h: number];

export interface DeviceState {
  power: Power;
  volume: number;
  now_playing: string | null;
  cursor: [number, number] | null;
  screen: [number, number] | null;
  battery_pct: number | null;
  temperature_c: number | null;
}

export interface Recognition {
  device_id: string;
  bbox: Bbox;
  score: number;
  scale: number;
  signature_index: number;
}

export interface TransferJob {
  job_id: string;
  src_device_id: string;
  dst_device_id: string;
  label: string;
  total_bytes: number;
  sent_bytes: number;
  chunk_bytes: number;
  state: TransferState;
}

export interface ViewModel {
  frame_id: string | null;
  scan_epoch: number;
  recognitions: Recognition[];
  device_states: Record<string, DeviceState>;
  sessions: Record<string, SessionStatus>;
  active_transfers: TransferJob[];
}

export interface HubEvent {
  kind: string;
  device_id: string | null;
  payload: Record<string, unknown>;
  at: number;
}

export interface TransferProgressPayload {
  job_id: string;
  src_device_id: string;
  dst_device_id: string;
  label: string;
  sent_bytes: number;
  total_bytes: number;
  state: TransferState;
}

export interface DeviceSummary {
  device_id: string;
  name: string;
  address: string;
  kind: string;
  capabilities: string[];
  created_at: number;
  signature_count: number;
}

export interface CommandResult {
  ok: boolean;
  state: DeviceState;
  events: HubEvent[];
}

export interface TransferRequest {
  src_device_id: string;
  dst_device_id: string;
  label: string;
  total_bytes: number;
  chunk_bytes?: number;
}

// -- screen geometry ---------------------------------------------------------

export interface Point {
  x: number;
  y: number;
}

export interface Viewport {
  width: number;
  height: number;
}

export function bboxCenter(bbox: Bbox): Point {
  return { x: bbox[0] + bbox[2] / 2, y: bbox[1] + bbox[3] / 2 };
}

export function bboxContains(bbox: Bbox, point: Point): boolean {
  const [x, y, w, h] = bbox;
  return point.x >= x && point.x <= x + w && point.y >= y && point.y <= y + h;
}
