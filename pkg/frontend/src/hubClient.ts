/** Typed fetch client for the hub API: JSON routes, the PGM frame endpoint,
 * and the newline-delimited event stream. */

import type {
  CommandResult,
  DeviceSummary,
  HubEvent,
  TransferJob,
  TransferRequest,
  ViewModel,
} from "./types.js";

/** The hub answered with an error body ({"error": code, "message": ...}). */
export class HubApiError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
    this.name = "HubApiError";
  }
}

/** The hub could not be reached at all (connection refused, stream cut). */
export class HubUnreachable extends Error {
  constructor(message: string) {
    super(message);
    this.name = "HubUnreachable";
  }
}

function isAbort(err: unknown): boolean {
  return err instanceof Error && err.name === "AbortError";
}

export interface EventStreamOptions {
  deviceId?: string;
  signal?: AbortSignal;
}

export class HubClient {
  readonly baseUrl: string;

  /** Accepts "host:port" or a full http(s) URL. */
  constructor(hub: string) {
    const withScheme = /^https?:\/\//.test(hub) ? hub : `http://${hub}`;
    this.baseUrl = withScheme.replace(/\/+$/, "");
  }

  private async request(path: string, init: RequestInit = {}): Promise<Response> {
    let response: Response;
    try {
      response = await fetch(`${this.baseUrl}${path}`, init);
    } catch (err) {
      if (isAbort(err)) throw err;
      throw new HubUnreachable(`cannot reach hub at ${this.baseUrl}: ${String(err)}`);
    }
    if (response.ok) return response;
    const text = await response.text();
    let code = "Internal";
    let message = text || response.statusText;
    try {
      const doc = JSON.parse(text) as { error?: string; message?: string };
      if (doc && typeof doc.error === "string") code = doc.error;
      if (doc && typeof doc.message === "string") message = doc.message;
    } catch {
      // non-JSON error body; keep the raw text
    }
    throw new HubApiError(code, message, response.status);
  }

  private async json<T>(path: string, init: RequestInit = {}): Promise<T> {
    const response = await this.request(path, init);
    return (await response.json()) as T;
  }

  getView(): Promise<ViewModel> {
    return this.json<ViewModel>("/view");
  }

  async getDevices(): Promise<DeviceSummary[]> {
    const doc = await this.json<{ devices: DeviceSummary[] }>("/devices");
    return doc.devices;
  }

  sendCommand(
    deviceId: string,
    kind: string,
    args: Record<string, unknown> = {},
  ): Promise<CommandResult> {
    return this.json<CommandResult>(
      `/devices/${encodeURIComponent(deviceId)}/commands`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ kind, args }),
      },
    );
  }

  setVolume(deviceId: string, level: number): Promise<CommandResult> {
    return this.sendCommand(deviceId, "SetVolume", { level });
  }

  startTransfer(request: TransferRequest): Promise<TransferJob> {
    return this.json<TransferJob>("/transfers", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
  }

  getTransfer(jobId: string): Promise<TransferJob> {
    return this.json<TransferJob>(`/transfers/${encodeURIComponent(jobId)}`);
  }

  /** Fetch the current camera frame as raw PGM bytes. */
  async currentFrame(): Promise<{ frameId: string | null; bytes: Uint8Array }> {
    const response = await this.request("/frame/current");
    const buffer = await response.arrayBuffer();
    return {
      frameId: response.headers.get("X-Frame-Id"),
      bytes: new Uint8Array(buffer),
    };
  }

  /** Yields hub events as they arrive; blank keepalive lines are skipped.
   * Ends cleanly when the signal aborts. */
  async *streamEvents(options: EventStreamOptions = {}): AsyncGenerator<HubEvent> {
    const query = options.deviceId
      ? `?device_id=${encodeURIComponent(options.deviceId)}`
      : "";
    let response: Response;
    try {
      response = await this.request(`/events${query}`, { signal: options.signal });
    } catch (err) {
      if (isAbort(err)) return;
      throw err;
    }
    const body = response.body;
    if (!body) throw new HubUnreachable("event stream has no body");
    const reader = body.getReader();
    const decoder = new TextDecoder();
    let buffered = "";
    try {
      for (;;) {
        let chunk: ReadableStreamReadResult<Uint8Array>;
        try {
          chunk = await reader.read();
        } catch (err) {
          if (isAbort(err)) return;
          throw new HubUnreachable(`event stream dropped: ${String(err)}`);
        }
        if (chunk.done) return;
        buffered += decoder.decode(chunk.value, { stream: true });
        let newline: number;
        while ((newline = buffered.indexOf("\n")) >= 0) {
          const line = buffered.slice(0, newline).trim();
          buffered = buffered.slice(newline + 1);
          if (line) yield JSON.parse(line) as HubEvent;
        }
      }
    } finally {
      reader.releaseLock();
    }
  }
}
