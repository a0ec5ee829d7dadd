import { describe, expect, it } from "vitest";

import { DashboardStore, TOPICS, validateBand } from "../src/store.js";
import { BusMessage } from "../src/types.js";

function driverMsg(t: number, avg: number, heater = false): BusMessage {
  return {
    topic: TOPICS.driver,
    ts: t,
    body: {
      time: t, t1: avg + 0.5, t2: avg, t3: avg - 0.5,
      average_temperature: avg, t_room: 21.0, heater_on: heater,
      fan_on: true, execution_interval: 3.0, elapsed: t,
    },
  };
}

function estimatorMsg(t: number, tb: number, th: number,
                      anomaly = false): BusMessage {
  return {
    topic: TOPICS.estimator,
    ts: t,
    body: {
      t_bair_hat: tb, t_heater_hat: th, p: [[1, 0], [0, 1]],
      innovation: 0.1, s: 0.3, anomaly, ts: t,
    },
  };
}

describe("DashboardStore", () => {
  it("every displayed number originates from a message (thin client)", () => {
    const store = new DashboardStore();
    store.ingest(driverMsg(3.0, 36.25, true));
    store.ingest(estimatorMsg(3.0, 36.5, 52.125));
    const d = store.driver[0];
    expect(d.average).toBe(36.25);
    expect(d.t1).toBe(36.75);
    expect(d.heaterOn).toBe(true);
    const e = store.latestEstimate!;
    expect(e.tBair).toBe(36.5);
    expect(e.tHeater).toBe(52.125);
  });

  it("keeps a rolling window", () => {
    const store = new DashboardStore(60);   // one minute
    for (let k = 0; k <= 40; k++) store.ingest(driverMsg(3 * k, 30));
    expect(store.driver[0].t).toBeGreaterThanOrEqual(120 - 60);
    expect(store.driver[store.driver.length - 1].t).toBe(120);
  });

  it("anomaly flag follows the estimator stream", () => {
    const store = new DashboardStore();
    store.ingest(estimatorMsg(0, 30, 30, false));
    expect(store.anomaly).toBe(false);
    store.ingest(estimatorMsg(3, 30, 30, true));
    expect(store.anomaly).toBe(true);
    store.ingest(estimatorMsg(6, 30, 30, false));
    expect(store.anomaly).toBe(false);
  });

  it("ignores request bodies on shared state topics", () => {
    const store = new DashboardStore();
    store.ingest({ topic: TOPICS.controller, ts: 0,
                   body: { set: { ll: 1, ul: 2, h: 3, c: 4 } } });
    expect(store.controller).toBeNull();
    store.ingest({ topic: TOPICS.controller, ts: 0,
                   body: { mode: "heating", ll: 35, ul: 40, h: 30, c: 20,
                           heater_on: true, suspended: false, ts: 0 } });
    expect(store.controller!.mode).toBe("heating");
  });

  it("captures service results and orchestrator proposals", () => {
    const store = new DashboardStore();
    store.ingest({ topic: TOPICS.calibrationResult, ts: 0,
                   body: { status: "ok", theta: { c_air: 490.0 },
                           converged: true } });
    expect(store.lastCalibration!.theta!.c_air).toBe(490.0);

    store.ingest({ topic: TOPICS.whatifResult, ts: 0,
                   body: { status: "ok", objective: 12.5, energy_used: 9000,
                           band_violation: 3.5 } });
    expect(store.lastWhatif!.objective).toBe(12.5);

    store.ingest({ topic: TOPICS.orchestrator, ts: 0,
                   body: { state: "applying", since: 0, propose: true,
                           proposal: { ll: 35, ul: 40, h: 10, c: 20 },
                           last_result: {} } });
    expect(store.orchestrator!.proposal!.h).toBe(10);
  });

  it("notifies listeners on ingest", () => {
    const store = new DashboardStore();
    let calls = 0;
    store.onChange(() => calls++);
    store.ingest(driverMsg(0, 30));
    store.ingest({ topic: "incubator.unknown.topic", ts: 0, body: {} });
    expect(calls).toBe(1);
  });

  it("preloads history in order", () => {
    const store = new DashboardStore();
    store.ingestHistory([driverMsg(0, 30), driverMsg(3, 31)]);
    expect(store.driver.map((d) => d.average)).toEqual([30, 31]);
  });
});

describe("validateBand", () => {
  it("accepts a sane band", () => {
    expect(validateBand(35, 40, 30, 20)).toBeNull();
  });
  it("rejects ll >= ul with a message", () => {
    expect(validateBand(45, 40, 30, 20)).toMatch(/lower limit/);
    expect(validateBand(40, 40, 30, 20)).not.toBeNull();
  });
  it("rejects non-positive heating and negative waits", () => {
    expect(validateBand(35, 40, 0, 20)).not.toBeNull();
    expect(validateBand(35, 40, 30, -1)).not.toBeNull();
    expect(validateBand(NaN, 40, 30, 20)).not.toBeNull();
  });
});
