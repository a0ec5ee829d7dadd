/**
 * Dashboard state derived purely from gateway messages.
 *
 * The store performs no model computation of its own: every number it
 * holds was carried by a message (the thin-client rule). It keeps a
 * rolling window of driver and estimator samples and the latest state
 * of each service.
 */

import {
  BusMessage,
  CalibrationResult,
  ControllerState,
  DriverSample,
  EstimateSample,
  OrchestratorState,
  WhatifResult,
} from "./types.js";

export const TOPICS = {
  driver: "incubator.driver.state",
  controller: "incubator.controller.state",
  estimator: "incubator.estimator.state",
  orchestrator: "incubator.orchestrator.state",
  disturbance: "incubator.plant.disturbance",
  calibrationResult: "incubator.calibration.result",
  whatifResult: "incubator.whatif.result",
};

const REQUEST_KEYS = ["set", "suspend", "resume", "set_params", "set_mode",
  "confirm"];

function isRequest(body: Record<string, any>): boolean {
  return REQUEST_KEYS.some((k) => k in body);
}

export class DashboardStore {
  windowSeconds: number;
  driver: DriverSample[] = [];
  estimates: EstimateSample[] = [];
  controller: ControllerState | null = null;
  orchestrator: OrchestratorState | null = null;
  lastCalibration: CalibrationResult | null = null;
  lastWhatif: WhatifResult | null = null;
  lastDisturbance: Record<string, any> | null = null;
  anomaly = false;
  private listeners: (() => void)[] = [];

  constructor(windowSeconds = 1800) {
    this.windowSeconds = windowSeconds;
  }

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  get latestTime(): number | null {
    return this.driver.length ? this.driver[this.driver.length - 1].t : null;
  }

  get latestEstimate(): EstimateSample | null {
    return this.estimates.length
      ? this.estimates[this.estimates.length - 1]
      : null;
  }

  ingest(msg: BusMessage): void {
    const body = msg.body ?? {};
    switch (msg.topic) {
      case TOPICS.driver:
        if (typeof body.average_temperature !== "number") return;
        this.driver.push({
          t: body.time,
          t1: body.t1,
          t2: body.t2,
          t3: body.t3,
          average: body.average_temperature,
          tRoom: body.t_room,
          heaterOn: !!body.heater_on,
        });
        this.trim();
        break;
      case TOPICS.estimator:
        if (isRequest(body) || typeof body.t_bair_hat !== "number") return;
        this.estimates.push({
          t: body.ts,
          tBair: body.t_bair_hat,
          tHeater: body.t_heater_hat,
          innovation: body.innovation ?? null,
          s: body.s,
          anomaly: !!body.anomaly,
        });
        this.anomaly = !!body.anomaly;
        this.trim();
        break;
      case TOPICS.controller:
        if (isRequest(body) || typeof body.mode !== "string") return;
        this.controller = {
          mode: body.mode,
          ll: body.ll,
          ul: body.ul,
          h: body.h,
          c: body.c,
          heaterOn: !!body.heater_on,
          suspended: !!body.suspended,
          ts: body.ts,
        };
        break;
      case TOPICS.orchestrator:
        if (isRequest(body) || typeof body.state !== "string") return;
        this.orchestrator = {
          state: body.state,
          since: body.since,
          propose: !!body.propose,
          proposal: body.proposal ?? null,
          lastResult: body.last_result ?? {},
        };
        break;
      case TOPICS.calibrationResult:
        this.lastCalibration = body as CalibrationResult;
        break;
      case TOPICS.whatifResult:
        this.lastWhatif = body as WhatifResult;
        break;
      case TOPICS.disturbance:
        if (typeof body.status === "string") this.lastDisturbance = body;
        break;
      default:
        return;
    }
    this.notify();
  }

  ingestHistory(messages: BusMessage[]): void {
    for (const msg of messages) this.ingest(msg);
  }

  private trim(): void {
    const now = this.latestTime;
    if (now === null) return;
    const cutoff = now - this.windowSeconds;
    while (this.driver.length && this.driver[0].t < cutoff) this.driver.shift();
    while (this.estimates.length && this.estimates[0].t < cutoff) {
      this.estimates.shift();
    }
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }
}

/** Band validation shared by the what-if panel; null means valid. */
export function validateBand(ll: number, ul: number, h: number,
                             c: number): string | null {
  if ([ll, ul, h, c].some((v) => !Number.isFinite(v))) {
    return "all four parameters must be numbers";
  }
  if (!(ll < ul)) return "lower limit must be below the upper limit";
  if (!(h > 0)) return "heating duration must be positive";
  if (!(c >= 0)) return "waiting duration cannot be negative";
  return null;
}
