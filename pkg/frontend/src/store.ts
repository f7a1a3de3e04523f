/** Single UI store: every rendered value comes from an API snapshot or a
 * stream event — the client performs no physics of its own. */

import type {
  CommandReply,
  StateSnapshot,
  StreamEvent,
  TelemetryDoc,
  TrailMetric,
  TrailPoint,
} from "./types.js";

export interface StoreState {
  connection: "connecting" | "live" | "stale";
  status: string;
  snapshot: StateSnapshot | null;
  trail: TrailPoint[];
  txFix: { lat: number; lon: number } | null;
  responseMs: number[]; // rolling window for the sparkline
  brokerAlive: Record<string, boolean>;
  segmentsRecorded: number;
  trailMetric: TrailMetric;
  /** command actions awaiting acknowledgement; buttons disable while set */
  pendingCommands: Set<string>;
  lastError: string | null;
}

const SPARKLINE_WINDOW = 120;
const TRAIL_LIMIT = 10_000;

export class Store {
  readonly state: StoreState = {
    connection: "connecting",
    status: "unknown",
    snapshot: null,
    trail: [],
    txFix: null,
    responseMs: [],
    brokerAlive: {},
    segmentsRecorded: 0,
    trailMetric: "rx_power",
    pendingCommands: new Set(),
    lastError: null,
  };

  private listeners: Array<() => void> = [];

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  setConnection(conn: StoreState["connection"]): void {
    this.state.connection = conn;
    this.emit();
  }

  setTrailMetric(metric: TrailMetric): void {
    this.state.trailMetric = metric;
    this.emit();
  }

  applySnapshot(snap: StateSnapshot): void {
    this.state.snapshot = snap;
    this.state.status = snap.status;
    this.state.brokerAlive = Object.fromEntries(
      Object.entries(snap.brokers).map(([id, b]) => [id, b.alive]),
    );
    this.state.segmentsRecorded = snap.segments_recorded;
    const tx = snap.nodes["tx"];
    if (tx?.fix) this.state.txFix = { lat: tx.fix.lat_deg, lon: tx.fix.lon_deg };
    this.emit();
  }

  applyEvent(ev: StreamEvent): void {
    switch (ev.type) {
      case "telemetry": {
        const doc = ev.data as unknown as TelemetryDoc;
        if (doc.node_id === "rx") {
          this.state.trail.push({
            lat: doc.lat_deg,
            lon: doc.lon_deg,
            metric: this.currentMetricValue(),
          });
          if (this.state.trail.length > TRAIL_LIMIT) this.state.trail.shift();
        } else if (this.state.txFix === null) {
          this.state.txFix = { lat: doc.lat_deg, lon: doc.lon_deg };
        }
        break;
      }
      case "interaction": {
        const ms = (ev.data as { response_ms?: number }).response_ms;
        if (typeof ms === "number") {
          this.state.responseMs.push(ms);
          if (this.state.responseMs.length > SPARKLINE_WINDOW) this.state.responseMs.shift();
        }
        break;
      }
      case "broker_health": {
        const { broker, action } = ev.data as { broker: string; action: string };
        this.state.brokerAlive[broker] = action !== "fail_broker";
        break;
      }
      case "segment_recorded":
        this.state.segmentsRecorded += 1;
        break;
      case "run_complete":
        this.state.status = "done";
        break;
    }
    this.emit();
  }

  /** Latest value of the selected trail metric, straight from the snapshot. */
  currentMetricValue(): number | null {
    const snap = this.state.snapshot;
    if (!snap) return null;
    if (this.state.trailMetric === "rx_power") return snap.rx_power_dbm;
    const err = snap.pointing_error_deg;
    return err ? Math.max(err.tx, err.rx) : null;
  }

  commandSent(action: string): void {
    this.state.pendingCommands.add(action);
    this.emit();
  }

  commandResolved(action: string, reply: CommandReply): void {
    this.state.pendingCommands.delete(action);
    this.state.lastError = reply.accepted ? null : (reply.error ?? "command rejected");
    this.emit();
  }

  /** A button may fire only when its action has no acknowledgement pending. */
  canDispatch(action: string): boolean {
    return !this.state.pendingCommands.has(action);
  }
}
