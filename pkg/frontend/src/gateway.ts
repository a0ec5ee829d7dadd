/**
 * Gateway client: one WebSocket for the live stream (with automatic
 * reconnection) plus fetch helpers for history and commands. The
 * WebSocket constructor and fetch are injectable for tests.
 */

import { BusMessage, ConnectionStatus } from "./types.js";

export interface WebSocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  close(): void;
}

export interface GatewayOptions {
  wsFactory?: (url: string) => WebSocketLike;
  fetchFn?: (url: string, init?: RequestInit) => Promise<Response>;
  reconnectDelayMs?: number;
}

export class GatewayClient {
  readonly baseUrl: string;
  private wsFactory: (url: string) => WebSocketLike;
  private fetchFn: (url: string, init?: RequestInit) => Promise<Response>;
  private reconnectDelayMs: number;
  private ws: WebSocketLike | null = null;
  private closed = false;
  private onMessage: ((msg: BusMessage) => void) | null = null;
  private onStatus: ((status: ConnectionStatus) => void) | null = null;

  constructor(baseUrl: string, options: GatewayOptions = {}) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.wsFactory = options.wsFactory
      ?? ((url) => new WebSocket(url) as unknown as WebSocketLike);
    this.fetchFn = options.fetchFn ?? ((url, init) => fetch(url, init));
    this.reconnectDelayMs = options.reconnectDelayMs ?? 1000;
  }

  get wsUrl(): string {
    return this.baseUrl.replace(/^http/, "ws") + "/ws";
  }

  connect(onMessage: (msg: BusMessage) => void,
          onStatus?: (status: ConnectionStatus) => void): void {
    this.onMessage = onMessage;
    this.onStatus = onStatus ?? null;
    this.open();
  }

  private open(): void {
    if (this.closed) return;
    this.onStatus?.("connecting");
    const ws = this.wsFactory(this.wsUrl);
    this.ws = ws;
    ws.onopen = () => this.onStatus?.("connected");
    ws.onmessage = (ev) => {
      try {
        this.onMessage?.(JSON.parse(ev.data) as BusMessage);
      } catch {
        // tolerate junk frames
      }
    };
    ws.onclose = () => this.scheduleReconnect();
    ws.onerror = () => {
      // onclose follows; nothing extra to do
    };
  }

  private scheduleReconnect(): void {
    if (this.closed) return;
    this.onStatus?.("disconnected");
    setTimeout(() => this.open(), this.reconnectDelayMs);
  }

  disconnect(): void {
    this.closed = true;
    this.ws?.close();
  }

  async history(topic: string, fromTs: number,
                toTs: number): Promise<BusMessage[]> {
    const url = `${this.baseUrl}/api/history?topic=${encodeURIComponent(topic)}`
      + `&from=${fromTs}&to=${toTs}`;
    const resp = await this.fetchFn(url);
    if (!resp.ok) return [];
    const data = await resp.json();
    return data.messages as BusMessage[];
  }

  async command(type: string,
                payload: Record<string, unknown>): Promise<{ ok: boolean; detail?: string }> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/command`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ type, payload }),
    });
    if (resp.ok) return { ok: true };
    let detail = `HTTP ${resp.status}`;
    try {
      const data = await resp.json();
      if (data.detail) detail = String(data.detail);
    } catch {
      // leave the status text
    }
    return { ok: false, detail };
  }
}
