/** Side panels: pointing gauges, response sparkline, broker health grid,
 * recording/RTK badges, and the command buttons. */

import type { ApiClient } from "./api.js";
import type { Store } from "./store.js";

const COMMANDS: Array<{ action: string; label: string; doc: Record<string, unknown> }> = [
  { action: "start_recording", label: "Start recording", doc: { target: "rx", action: "start_recording" } },
  { action: "stop_recording", label: "Stop recording", doc: { target: "rx", action: "stop_recording" } },
  { action: "set_gain_0", label: "Gain 0 dB", doc: { target: "rx", action: "set_gain", gain_db: 0 } },
  { action: "set_gain_76", label: "Gain 76 dB", doc: { target: "rx", action: "set_gain", gain_db: 76 } },
  { action: "recalibrate", label: "Recalibrate", doc: { target: "rx", action: "recalibrate" } },
];

export function formatGauge(label: string, value: number | null, unit: string): string {
  return value === null ? `${label}: —` : `${label}: ${value.toFixed(2)} ${unit}`;
}

/** Normalized sparkline path points for an SVG polyline. */
export function sparklinePoints(values: number[], width: number, height: number): string {
  if (values.length < 2) return "";
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  return values
    .map((v, i) => {
      const x = (i / (values.length - 1)) * width;
      const y = height - ((v - lo) / span) * height;
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}

export class Panels {
  constructor(
    private readonly root: HTMLElement,
    private readonly store: Store,
    private readonly api: ApiClient,
  ) {}

  render(): void {
    const s = this.store.state;
    const snap = s.snapshot;
    const rx = snap?.nodes["rx"];
    const err = snap?.pointing_error_deg ?? null;
    const conn =
      s.connection === "live"
        ? `<span class="badge ok">live</span>`
        : `<span class="badge stale">${s.connection}</span>`;
    const gauges = [
      formatGauge("TX error", err ? err.tx : null, "°"),
      formatGauge("RX error", err ? err.rx : null, "°"),
      formatGauge("Total", err ? Math.max(err.tx, err.rx) : null, "°"),
      formatGauge("RX power", snap?.rx_power_dbm ?? null, "dBm"),
    ]
      .map((g) => `<div class="gauge">${g}</div>`)
      .join("");
    const brokers = Object.entries(s.brokerAlive)
      .map(
        ([id, alive]) =>
          `<div class="broker ${alive ? "ok" : "failed"}" data-broker="${id}">${id}</div>`,
      )
      .join("");
    const buttons = COMMANDS.map(
      (c) =>
        `<button data-action="${c.action}" ${this.store.canDispatch(c.action) ? "" : "disabled"}>${c.label}</button>`,
    ).join("");
    const spark = sparklinePoints(s.responseMs, 220, 40);
    this.root.innerHTML = `
      <div class="row">status: ${s.status} ${conn} t=${(snap?.t_s ?? 0).toFixed(1)}s</div>
      <div class="row gauges">${gauges}</div>
      <div class="row">response (ms)
        <svg width="220" height="40"><polyline points="${spark}" fill="none" stroke="#6cf" /></svg>
      </div>
      <div class="row">brokers <div class="grid">${brokers}</div></div>
      <div class="row">
        <span class="badge ${rx?.recording ? "ok" : ""}">recording ${rx?.recording ? "on" : "off"}</span>
        <span class="badge ${rx?.fix?.rtk ? "ok" : "stale"}">RTK ${rx?.fix?.rtk ? "on" : "off"}</span>
        <span class="badge">segments ${s.segmentsRecorded}</span>
        <span class="badge">gain ${rx?.gain_db ?? 0} dB</span>
      </div>
      <div class="row commands">${buttons}</div>
      ${s.lastError ? `<div class="row toast">${s.lastError}</div>` : ""}
    `;
    for (const btn of this.root.querySelectorAll<HTMLButtonElement>("button[data-action]")) {
      btn.onclick = () => void this.dispatch(btn.dataset.action!);
    }
  }

  async dispatch(action: string): Promise<void> {
    if (!this.store.canDispatch(action)) return; // one command per ack cycle
    const cmd = COMMANDS.find((c) => c.action === action);
    if (!cmd) return;
    this.store.commandSent(action);
    const reply = await this.api.sendCommand(cmd.doc);
    this.store.commandResolved(action, reply);
  }
}
