/** Operator-API client: state polling, command dispatch, and the event
 * stream with auto-reconnect + stale marking. */

import { Backoff } from "./backoff.js";
import type { CommandReply, StateSnapshot, StreamEvent } from "./types.js";

export interface ApiHandlers {
  onSnapshot(snap: StateSnapshot): void;
  onEvent(ev: StreamEvent): void;
  onConnection(state: "connecting" | "live" | "stale"): void;
}

export class ApiClient {
  private ws: WebSocket | null = null;
  private backoff = new Backoff();
  private closed = false;
  private pollTimer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly handlers: ApiHandlers,
    private readonly pollIntervalMs = 500,
  ) {}

  start(): void {
    this.closed = false;
    this.handlers.onConnection("connecting");
    void this.pollState();
    this.pollTimer = setInterval(() => void this.pollState(), this.pollIntervalMs);
    this.connectStream();
  }

  stop(): void {
    this.closed = true;
    if (this.pollTimer !== null) clearInterval(this.pollTimer);
    this.ws?.close();
  }

  private async pollState(): Promise<void> {
    try {
      const res = await fetch(`${this.baseUrl}/api/state`);
      if (!res.ok) throw new Error(`state: HTTP ${res.status}`);
      this.handlers.onSnapshot((await res.json()) as StateSnapshot);
    } catch {
      this.handlers.onConnection("stale");
    }
  }

  async sendCommand(doc: Record<string, unknown>): Promise<CommandReply> {
    const res = await fetch(`${this.baseUrl}/api/command`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(doc),
    });
    if (!res.ok) return { accepted: false, error: `HTTP ${res.status}` };
    return (await res.json()) as CommandReply;
  }

  private connectStream(): void {
    if (this.closed) return;
    const wsUrl = this.baseUrl.replace(/^http/, "ws") + "/api/stream";
    const ws = new WebSocket(wsUrl);
    this.ws = ws;
    ws.onopen = () => {
      this.backoff.reset();
      this.handlers.onConnection("live");
    };
    ws.onmessage = (msg: MessageEvent) => {
      for (const line of String(msg.data).split("\n")) {
        if (!line.trim()) continue;
        this.handlers.onEvent(JSON.parse(line) as StreamEvent);
      }
    };
    ws.onclose = () => {
      if (this.closed) return;
      this.handlers.onConnection("stale");
      setTimeout(() => this.connectStream(), this.backoff.next());
    };
    ws.onerror = () => ws.close();
  }
}
