import { describe, expect, it } from "vitest";

import { Store } from "../src/store.js";
import type { StateSnapshot } from "../src/types.js";

function snapshot(overrides: Partial<StateSnapshot> = {}): StateSnapshot {
  return {
    status: "running",
    t_s: 1.5,
    nodes: {
      tx: {
        lease: true,
        fix: { lat_deg: 40.766, lon_deg: -111.846, alt_m: 1402, rtk: true },
        recording: false,
        gain_db: 0,
        interactions: 10,
      },
      rx: {
        lease: true,
        fix: { lat_deg: 40.7665, lon_deg: -111.845, alt_m: 1400, rtk: true },
        recording: true,
        gain_db: 76,
        interactions: 10,
      },
    },
    pointing_error_deg: { tx: 0.4, rx: 0.9 },
    rx_power_dbm: -58.2,
    brokers: { b0: { alive: true }, b1: { alive: true }, b2: { alive: true }, b3: { alive: true } },
    segments_recorded: 2,
    ...overrides,
  };
}

function telemetry(node: string, seq: number) {
  return {
    type: "telemetry",
    data: {
      node_id: node,
      seq,
      t_ns: seq * 100_000_000,
      lat_deg: 40.766 + seq * 1e-5,
      lon_deg: -111.846,
      alt_m: 1400,
      yaw_deg: 0,
      pitch_deg: 0,
      rtk: true,
      recalibrated: false,
    },
  };
}

describe("trail", () => {
  it("grows by one point per rx telemetry event and ignores tx", () => {
    const store = new Store();
    store.applySnapshot(snapshot());
    for (let i = 0; i < 10; i++) store.applyEvent(telemetry("rx", i));
    store.applyEvent(telemetry("tx", 99));
    expect(store.state.trail).toHaveLength(10);
  });

  it("tags points with the selected metric from the snapshot", () => {
    const store = new Store();
    store.applySnapshot(snapshot());
    store.applyEvent(telemetry("rx", 0));
    expect(store.state.trail[0].metric).toBeCloseTo(-58.2);
    store.setTrailMetric("pointing_error");
    store.applyEvent(telemetry("rx", 1));
    expect(store.state.trail[1].metric).toBeCloseTo(0.9); // max of tx/rx error
  });

  it("records null metric before any snapshot arrives (no client physics)", () => {
    const store = new Store();
    store.applyEvent(telemetry("rx", 0));
    expect(store.state.trail[0].metric).toBeNull();
  });
});

describe("broker health", () => {
  it("mirrors the snapshot and updates on broker_health events", () => {
    const store = new Store();
    store.applySnapshot(snapshot());
    expect(store.state.brokerAlive).toEqual({ b0: true, b1: true, b2: true, b3: true });
    store.applyEvent({ type: "broker_health", data: { broker: "b2", action: "fail_broker" } });
    expect(store.state.brokerAlive.b2).toBe(false);
    store.applyEvent({ type: "broker_health", data: { broker: "b2", action: "restore_broker" } });
    expect(store.state.brokerAlive.b2).toBe(true);
  });

  it("keeps extending the trail while a broker is down", () => {
    const store = new Store();
    store.applySnapshot(snapshot());
    store.applyEvent({ type: "broker_health", data: { broker: "b0", action: "fail_broker" } });
    store.applyEvent(telemetry("rx", 0));
    store.applyEvent(telemetry("rx", 1));
    expect(store.state.trail).toHaveLength(2);
    expect(store.state.brokerAlive.b0).toBe(false);
  });
});

describe("command lifecycle", () => {
  it("blocks duplicate dispatch until the acknowledgement resolves", () => {
    const store = new Store();
    expect(store.canDispatch("recalibrate")).toBe(true);
    store.commandSent("recalibrate");
    expect(store.canDispatch("recalibrate")).toBe(false);
    store.commandResolved("recalibrate", { accepted: true, cmd_id: "c1" });
    expect(store.canDispatch("recalibrate")).toBe(true);
    expect(store.state.lastError).toBeNull();
  });

  it("stores a rejection reason for the toast", () => {
    const store = new Store();
    store.commandSent("set_gain_0");
    store.commandResolved("set_gain_0", { accepted: false, error: "replay is read-only" });
    expect(store.state.lastError).toBe("replay is read-only");
  });
});

describe("stream bookkeeping", () => {
  it("bounds the response sparkline window", () => {
    const store = new Store();
    for (let i = 0; i < 500; i++) {
      store.applyEvent({ type: "interaction", data: { node: "tx", peer_seq: i, response_ms: 29 } });
    }
    expect(store.state.responseMs.length).toBeLessThanOrEqual(120);
  });

  it("counts recorded segments and flags completion", () => {
    const store = new Store();
    store.applyEvent({ type: "segment_recorded", data: { seq: 0 } });
    store.applyEvent({ type: "segment_recorded", data: { seq: 1 } });
    store.applyEvent({ type: "run_complete", data: {} });
    expect(store.state.segmentsRecorded).toBe(2);
    expect(store.state.status).toBe("done");
  });

  it("notifies subscribers on every change", () => {
    const store = new Store();
    let calls = 0;
    store.onChange(() => calls++);
    store.setConnection("live");
    store.applyEvent(telemetry("rx", 0));
    expect(calls).toBe(2);
  });
});
