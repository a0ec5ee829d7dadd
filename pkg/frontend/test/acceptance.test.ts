/**
 * Dashboard acceptance against a mocked gateway: a live stream renders
 * into chartable series, an injected disturbance flips the anomaly
 * indicator, and applying a what-if config is reflected by the streamed
 * controller state.
 */

import { describe, expect, it } from "vitest";

import { GatewayClient, WebSocketLike } from "../src/gateway.js";
import { DashboardStore, TOPICS, validateBand } from "../src/store.js";
import { BusMessage } from "../src/types.js";

class ScriptedGateway {
  socket: {
    onopen: ((ev?: unknown) => void) | null;
    onclose: ((ev?: unknown) => void) | null;
    onerror: ((ev?: unknown) => void) | null;
    onmessage: ((ev: { data: string }) => void) | null;
    close(): void;
  } | null = null;
  commands: { type: string; payload: Record<string, any> }[] = [];
  controllerConfig = { ll: 35, ul: 40, h: 30, c: 20 };

  wsFactory = (_url: string): WebSocketLike => {
    const self = this;
    const ws = {
      onopen: null, onclose: null, onerror: null, onmessage: null,
      close() { /* no-op */ },
    } as WebSocketLike;
    self.socket = ws;
    queueMicrotask(() => ws.onopen?.());
    return ws;
  };

  fetchFn = async (url: string, init?: RequestInit): Promise<Response> => {
    if (url.endsWith("/api/command")) {
      const body = JSON.parse(init!.body as string);
      this.commands.push(body);
      // the mocked services react over the stream, like the real ones
      if (body.type === "disturbance") {
        this.push(estimatorMsg(900, 37, 50, true));
      } else if (body.type === "controller_config") {
        this.controllerConfig = body.payload;
        this.push({
          topic: TOPICS.controller, ts: 903,
          body: { mode: "cooling", ...body.payload, heater_on: false,
                  suspended: false, ts: 903 },
        });
      }
      return { ok: true, status: 202, json: async () => ({}) } as Response;
    }
    return {
      ok: true, status: 200,
      json: async () => ({ topic: "", count: 0, messages: [] }),
    } as Response;
  };

  push(msg: BusMessage): void {
    this.socket?.onmessage?.({ data: JSON.stringify(msg) });
  }
}

function driverMsg(t: number, avg: number, heater: boolean): BusMessage {
  return { topic: TOPICS.driver, ts: t,
           body: { time: t, t1: avg + 0.5, t2: avg, t3: avg - 0.5,
                   average_temperature: avg, t_room: 21, heater_on: heater,
                   fan_on: true, execution_interval: 3, elapsed: t } };
}

function estimatorMsg(t: number, tb: number, th: number,
                      anomaly: boolean): BusMessage {
  return { topic: TOPICS.estimator, ts: t,
           body: { t_bair_hat: tb, t_heater_hat: th, p: [[1, 0], [0, 1]],
                   innovation: 0.2, s: 0.3, anomaly, ts: t } };
}

describe("dashboard acceptance (mocked gateway)", () => {
  it("renders the stream, flips on anomalies, applies what-if configs",
     async () => {
    const mock = new ScriptedGateway();
    const store = new DashboardStore();
    const client = new GatewayClient("http://gw", {
      wsFactory: mock.wsFactory, fetchFn: mock.fetchFn,
    });
    client.connect((m) => store.ingest(m));
    await Promise.resolve();   // let the socket open

    // a short live run streams in: series fill, indicator stays nominal
    for (let k = 0; k < 20; k++) {
      mock.push(driverMsg(3 * k, 30 + k / 4, k % 3 === 0));
      mock.push(estimatorMsg(3 * k, 30 + k / 4, 40, false));
    }
    expect(store.driver).toHaveLength(20);
    expect(store.latestEstimate!.tHeater).toBe(40);
    expect(store.anomaly).toBe(false);

    // injecting a disturbance makes the (mocked) estimator flag it
    const injected = await client.command("disturbance", {
      kind: "lid_open", magnitude: 2.0, duration: 300,
    });
    expect(injected.ok).toBe(true);
    expect(store.anomaly).toBe(true);

    // a valid what-if config applies and comes back on the stream
    const band = { ll: 34, ul: 39, h: 15, c: 10 };
    expect(validateBand(band.ll, band.ul, band.h, band.c)).toBeNull();
    const applied = await client.command("controller_config", band);
    expect(applied.ok).toBe(true);
    expect(store.controller).toMatchObject(band);

    // the command envelopes match the gateway contract
    expect(mock.commands.map((c) => c.type)).toEqual(
      ["disturbance", "controller_config"]);
  });

  it("blocks applying an invalid band before any request is made", () => {
    expect(validateBand(45, 40, 30, 20)).not.toBeNull();
  });
});
