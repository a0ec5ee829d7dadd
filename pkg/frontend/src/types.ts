/** Message and state shapes exchanged with the gateway. */

export interface BusMessage {
  topic: string;
  ts: number;
  body: Record<string, any>;
}

export interface DriverSample {
  t: number;
  t1: number;
  t2: number;
  t3: number;
  average: number;
  tRoom: number;
  heaterOn: boolean;
}

export interface EstimateSample {
  t: number;
  tBair: number;
  tHeater: number;
  innovation: number | null;
  s: number;
  anomaly: boolean;
}

export interface ControllerState {
  mode: string;
  ll: number;
  ul: number;
  h: number;
  c: number;
  heaterOn: boolean;
  suspended: boolean;
  ts: number;
}

export interface OrchestratorState {
  state: string;
  since: number;
  propose: boolean;
  proposal: BandConfig | null;
  lastResult: Record<string, any>;
}

export interface BandConfig {
  ll: number;
  ul: number;
  h: number;
  c: number;
}

export interface WhatifResult {
  status: string;
  reason?: string;
  objective?: number;
  energy_used?: number;
  band_violation?: number;
  trajectory?: { t: number; t_bair: number; t_heater: number }[];
  best?: BandConfig;
  id?: string;
}

export interface CalibrationResult {
  status: string;
  reason?: string;
  theta?: Record<string, number>;
  cost?: number;
  converged?: boolean;
  id?: string;
}

export type ConnectionStatus = "connecting" | "connected" | "disconnected";
