/** Shapes of the operator API payloads this dashboard consumes. */

export interface TelemetryDoc {
  node_id: string;
  seq: number;
  t_ns: number;
  lat_deg: number;
  lon_deg: number;
  alt_m: number;
  yaw_deg: number;
  pitch_deg: number;
  rtk: boolean;
  recalibrated: boolean;
}

export interface InteractionDoc {
  node: string;
  peer_seq: number;
  response_ms: number;
}

export interface StreamEvent {
  type: string;
  data: Record<string, unknown>;
}

export interface NodeState {
  lease: boolean;
  fix: { lat_deg: number; lon_deg: number; alt_m: number; rtk: boolean } | null;
  recording: boolean;
  gain_db: number;
  interactions: number;
}

export interface StateSnapshot {
  status: string;
  t_s: number;
  nodes: Record<string, NodeState>;
  pointing_error_deg: { tx: number; rx: number } | null;
  rx_power_dbm: number | null;
  brokers: Record<string, { alive: boolean }>;
  segments_recorded: number;
}

export interface CommandReply {
  accepted: boolean;
  cmd_id?: string;
  error?: string;
}

export type TrailMetric = "rx_power" | "pointing_error";

export interface TrailPoint {
  lat: number;
  lon: number;
  /** value of the selected metric when the point arrived, or null if unknown */
  metric: number | null;
}
