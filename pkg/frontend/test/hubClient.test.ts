import { afterEach, beforeEach, describe, expect, test } from "vitest";

import { HubApiError, HubClient, HubUnreachable } from "../src/hubClient.js";
import type { HubEvent } from "../src/types.js";
import {
  deviceState,
  emptyView,
  startStubHub,
  type StubHub,
} from "./stubHub.js";

let stub: StubHub;
let client: HubClient;

beforeEach(async () => {
  stub = await startStubHub();
  client = new HubClient(stub.url);
});

afterEach(async () => {
  await stub.close();
});

async function waitFor(check: () => boolean, timeoutMs = 2000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!check()) {
    if (Date.now() > deadline) throw new Error("condition never became true");
    await new Promise((resolve) => setTimeout(resolve, 10));
  }
}

describe("HubClient", () => {
  test("normalizes a bare host:port into a base URL", () => {
    expect(new HubClient("127.0.0.1:7420").baseUrl).toBe("http://127.0.0.1:7420");
    expect(new HubClient("http://hub.local:80/").baseUrl).toBe("http://hub.local:80");
  });

  test("fetches the view as-is", async () => {
    stub.view = emptyView({
      scan_epoch: 4,
      device_states: { sp: deviceState({ volume: 30 }) },
      sessions: { sp: "active" },
    });
    const view = await client.getView();
    expect(view.scan_epoch).toBe(4);
    expect(view.device_states["sp"]?.volume).toBe(30);
    expect(view.sessions["sp"]).toBe("active");
  });

  test("lists devices from the wrapper object", async () => {
    stub.devices = [
      {
        device_id: "sp",
        name: "desk speaker",
        address: "sp:01",
        kind: "speaker",
        capabilities: ["GetStatus"],
        created_at: 0,
        signature_count: 2,
      },
    ];
    const devices = await client.getDevices();
    expect(devices).toHaveLength(1);
    expect(devices[0]?.name).toBe("desk speaker");
  });

  test("posts commands and returns the result body", async () => {
    const result = await client.setVolume("sp", 75);
    expect(result.ok).toBe(true);
    expect(result.state.volume).toBe(75);
    expect(result.events[0]?.kind).toBe("VolumeChanged");
    expect(stub.commands).toEqual([
      { deviceId: "sp", kind: "SetVolume", args: { level: 75 } },
    ]);
  });

  test("surfaces hub error bodies as typed errors", async () => {
    stub.respondTo = () => ({
      status: 409,
      error: "NotPaired",
      message: "no active session for sp:01",
    });
    const failure = await client.setVolume("sp", 75).catch((err) => err);
    expect(failure).toBeInstanceOf(HubApiError);
    expect(failure.code).toBe("NotPaired");
    expect(failure.status).toBe(409);
    expect(failure.message).toMatch(/no active session/);
  });

  test("maps unknown routes to a NotFound error", async () => {
    await expect(client.currentFrame()).rejects.toMatchObject({
      code: "NotFound",
      status: 404,
    });
  });

  test("starts and polls transfers", async () => {
    const job = await client.startTransfer({
      src_device_id: "lp",
      dst_device_id: "sp",
      label: "document.pdf",
      total_bytes: 1000,
    });
    expect(job.state).toBe("running");
    expect(stub.transfers).toHaveLength(1);
    const polled = await client.getTransfer(job.job_id);
    expect(polled.job_id).toBe(job.job_id);
  });

  test("streams newline-delimited events and skips keepalives", async () => {
    const got: HubEvent[] = [];
    const abort = new AbortController();
    const consumed = (async () => {
      for await (const event of client.streamEvents({ signal: abort.signal })) {
        got.push(event);
      }
    })();

    await waitFor(() => stub.openStreams() === 1);
    stub.pushEvent({ kind: "VolumeChanged", device_id: "sp", payload: { level: 75 }, at: 1 });
    stub.pushEvent({
      kind: "TransferProgress",
      device_id: "sp",
      payload: { job_id: "job-1", sent_bytes: 256, total_bytes: 1000 },
      at: 2,
    });
    await waitFor(() => got.length === 2);
    abort.abort();
    await consumed; // ends cleanly on abort

    expect(got[0]?.kind).toBe("VolumeChanged");
    expect(got[1]?.payload["sent_bytes"]).toBe(256);
  });

  test("reports an unreachable hub distinctly from API errors", async () => {
    const dead = new HubClient("127.0.0.1:1");
    await expect(dead.getView()).rejects.toBeInstanceOf(HubUnreachable);
  });
});
