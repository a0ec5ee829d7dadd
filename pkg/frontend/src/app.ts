/** Operator dashboard: live charts, disturbance injection, on-demand
 * calibration, what-if exploration, and orchestrator confirmation.
 * Everything shown here came over the gateway; the page computes no
 * physics of its own. */

import { drawChart, drawHeaterStrip, Series } from "./charts.js";
import { GatewayClient } from "./gateway.js";
import { DashboardStore, TOPICS, validateBand } from "./store.js";
import { ConnectionStatus } from "./types.js";

const store = new DashboardStore(1800);
const gateway = new GatewayClient(window.location.origin);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

let redrawPending = false;

function scheduleRedraw(): void {
  if (redrawPending) return;
  redrawPending = true;
  requestAnimationFrame(() => {
    redrawPending = false;
    render();
  });
}

function render(): void {
  renderLiveChart();
  renderStatus();
  renderWhatif();
  renderOrchestrator();
  renderCalibration();
}

function renderLiveChart(): void {
  const canvas = el<HTMLCanvasElement>("live-chart");
  const strip = el<HTMLCanvasElement>("heater-strip");
  const controller = store.controller;
  const series: Series[] = [
    { label: "t1", color: "#5b7b9f",
      points: store.driver.map((d) => ({ x: d.t, y: d.t1 })) },
    { label: "t2", color: "#4f6d8a",
      points: store.driver.map((d) => ({ x: d.t, y: d.t2 })) },
    { label: "t3", color: "#43607a",
      points: store.driver.map((d) => ({ x: d.t, y: d.t3 })) },
    { label: "average", color: "#e8eef7",
      points: store.driver.map((d) => ({ x: d.t, y: d.average })) },
    { label: "air estimate", color: "#58d6a9", dashed: true,
      points: store.estimates.map((e) => ({ x: e.t, y: e.tBair })) },
    { label: "heatbed estimate", color: "#ff8c42", dashed: true,
      points: store.estimates.map((e) => ({ x: e.t, y: e.tHeater })) },
  ];
  const bands = controller
    ? [{ from: controller.ll, to: controller.ul,
         color: "rgba(88, 166, 255, 0.10)" }]
    : [];
  drawChart(canvas, series, bands);
  drawHeaterStrip(strip,
                  store.driver.map((d) => ({ x: d.t, on: d.heaterOn })));
}

function renderStatus(): void {
  const anomaly = el("anomaly-indicator");
  anomaly.className = store.anomaly ? "indicator alert" : "indicator ok";
  anomaly.textContent = store.anomaly ? "ANOMALY" : "nominal";

  const ctrl = store.controller;
  el("controller-state").textContent = ctrl
    ? `${ctrl.mode}${ctrl.suspended ? " (suspended)" : ""} · `
      + `LL ${ctrl.ll} UL ${ctrl.ul} H ${ctrl.h}s C ${ctrl.c}s`
    : "–";
  const est = store.latestEstimate;
  el("estimate-state").textContent = est
    ? `air ${est.tBair.toFixed(2)} °C · heatbed ${est.tHeater.toFixed(2)} °C`
    : "–";
  const drv = store.driver[store.driver.length - 1];
  el("driver-state").textContent = drv
    ? `avg ${drv.average.toFixed(2)} °C · room ${drv.tRoom.toFixed(1)} °C `
      + `· heater ${drv.heaterOn ? "on" : "off"} · t=${drv.t.toFixed(0)}s`
    : "–";
}

function renderWhatif(): void {
  const result = store.lastWhatif;
  const summary = el("whatif-summary");
  if (!result) {
    summary.textContent = "no prediction yet";
  } else if (result.status !== "ok") {
    summary.textContent = `error: ${result.reason ?? "unknown"}`;
  } else {
    const parts = [];
    if (result.energy_used !== undefined) {
      parts.push(`energy ${(result.energy_used / 1000).toFixed(1)} kJ`);
    }
    if (result.band_violation !== undefined) {
      parts.push(`violation ${result.band_violation.toFixed(1)} K²s`);
    }
    if (result.objective !== undefined) {
      parts.push(`objective ${result.objective.toFixed(2)}`);
    }
    summary.textContent = parts.join(" · ") || "ok";
  }
  const canvas = el<HTMLCanvasElement>("whatif-chart");
  const traj = result?.trajectory ?? [];
  const ll = num("whatif-ll");
  const ul = num("whatif-ul");
  drawChart(canvas, [
    { label: "predicted air", color: "#58d6a9",
      points: traj.map((p) => ({ x: p.t, y: p.t_bair })) },
  ], Number.isFinite(ll) && Number.isFinite(ul) && ll < ul
    ? [{ from: ll, to: ul, color: "rgba(88, 166, 255, 0.10)" }] : []);
}

function renderOrchestrator(): void {
  const orch = store.orchestrator;
  el("orchestrator-state").textContent = orch
    ? `${orch.state}${orch.propose ? " · propose mode" : ""}`
    : "–";
  const confirm = el<HTMLButtonElement>("confirm-button");
  const proposal = orch?.proposal;
  confirm.disabled = !proposal;
  el("proposal").textContent = proposal
    ? `proposal: LL ${proposal.ll} UL ${proposal.ul} H ${proposal.h}s `
      + `C ${proposal.c}s`
    : "";
}

function renderCalibration(): void {
  const result = store.lastCalibration;
  const node = el("calibration-result");
  if (!result) {
    node.textContent = "no calibration yet";
  } else if (result.status !== "ok") {
    node.textContent = `error: ${result.reason ?? "unknown"}`;
  } else {
    const theta = result.theta ?? {};
    node.textContent = Object.entries(theta)
      .map(([k, v]) => `${k}=${(v as number).toFixed(3)}`)
      .join("  ")
      + (result.converged ? "" : "  (not converged)");
  }
}

// ---------------------------------------------------------------------------
// controls
// ---------------------------------------------------------------------------

function num(id: string): number {
  return parseFloat(el<HTMLInputElement>(id).value);
}

function flash(id: string, text: string): void {
  const node = el(id);
  node.textContent = text;
  setTimeout(() => {
    if (node.textContent === text) node.textContent = "";
  }, 4000);
}

function wireControls(): void {
  el<HTMLButtonElement>("inject-button").onclick = async () => {
    const kind = el<HTMLSelectElement>("disturbance-kind").value;
    const result = await gateway.command("disturbance", {
      kind,
      magnitude: num("disturbance-magnitude"),
      duration: num("disturbance-duration"),
    });
    flash("disturbance-note",
          result.ok ? "sent" : `rejected: ${result.detail}`);
  };

  el<HTMLButtonElement>("calibrate-button").onclick = async () => {
    const now = store.latestTime;
    if (now === null) {
      flash("calibration-note", "no data yet");
      return;
    }
    const minutes = num("calibration-window");
    const result = await gateway.command("calibrate", {
      model: "b",
      from_ts: now - minutes * 60,
      to_ts: now,
      id: `ui-${Date.now()}`,
    });
    flash("calibration-note",
          result.ok ? "requested" : `rejected: ${result.detail}`);
  };

  const sliders = ["whatif-ll", "whatif-ul", "whatif-h", "whatif-c"];
  const revalidate = () => {
    const error = validateBand(num("whatif-ll"), num("whatif-ul"),
                               num("whatif-h"), num("whatif-c"));
    el("whatif-validation").textContent = error ?? "";
    el<HTMLButtonElement>("whatif-run").disabled = error !== null;
    el<HTMLButtonElement>("whatif-apply").disabled = error !== null;
    for (const id of sliders) {
      el(`${id}-value`).textContent = el<HTMLInputElement>(id).value;
    }
  };
  for (const id of sliders) el<HTMLInputElement>(id).oninput = revalidate;
  revalidate();

  el<HTMLButtonElement>("whatif-run").onclick = async () => {
    const payload: Record<string, unknown> = {
      scenario: {
        controller: { ll: num("whatif-ll"), ul: num("whatif-ul"),
                      h: num("whatif-h"), c: num("whatif-c") },
        horizon: 4000.0,
      },
      id: `ui-${Date.now()}`,
    };
    const result = await gateway.command("whatif", payload);
    flash("whatif-note", result.ok ? "running…" : `rejected: ${result.detail}`);
  };

  el<HTMLButtonElement>("whatif-apply").onclick = async () => {
    const result = await gateway.command("controller_config", {
      ll: num("whatif-ll"), ul: num("whatif-ul"),
      h: num("whatif-h"), c: num("whatif-c"),
    });
    flash("whatif-note", result.ok ? "applied" : `rejected: ${result.detail}`);
  };

  el<HTMLInputElement>("propose-toggle").onchange = async (ev) => {
    const on = (ev.target as HTMLInputElement).checked;
    await gateway.command("orchestrator_mode",
                          { set_mode: on ? "propose" : "auto" });
  };

  el<HTMLButtonElement>("confirm-button").onclick = async () => {
    await gateway.command("orchestrator_mode", { confirm: true });
  };
}

// ---------------------------------------------------------------------------
// startup
// ---------------------------------------------------------------------------

function setConnection(status: ConnectionStatus): void {
  const banner = el("connection-banner");
  banner.className = `banner ${status}`;
  banner.textContent = status === "connected"
    ? "live"
    : status === "connecting" ? "connecting…" : "disconnected – retrying";
}

async function preloadHistory(): Promise<void> {
  for (const topic of [TOPICS.driver, TOPICS.estimator, TOPICS.controller,
                       TOPICS.orchestrator]) {
    try {
      store.ingestHistory(await gateway.history(topic, 0, 1e15));
    } catch {
      // no recording yet is fine
    }
  }
}

async function start(): Promise<void> {
  wireControls();
  store.onChange(scheduleRedraw);
  await preloadHistory();
  gateway.connect((msg) => store.ingest(msg), setConnection);
  render();
}

start();
