/**
 * WebSocket session stream with automatic reconnect.
 *
 * The server replays its full message history (snapshot) to every new
 * connection; the FeedStore's seq dedupe turns snapshot + live into a
 * gap-free feed across reconnects. The socket constructor is injectable so
 * tests can drive scripted sockets.
 */

import type { FeedStore } from "./feed.js";
import type { StreamMessage } from "./types.js";

export type ConnectionState = "connecting" | "open" | "closed" | "reconnecting";

export interface SocketLike {
  onmessage: ((event: { data: unknown }) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onerror: ((err: unknown) => void) | null;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface SessionStreamOptions {
  reconnect?: boolean;
  reconnectDelayMs?: number;
  maxReconnectDelayMs?: number;
  onState?: (state: ConnectionState) => void;
}

export class SessionStream {
  private socket: SocketLike | null = null;
  private closedByUser = false;
  private delayMs: number;
  private readonly baseDelayMs: number;
  private readonly maxDelayMs: number;

  constructor(
    private readonly url: string,
    private readonly feed: FeedStore,
    private readonly socketFactory: SocketFactory,
    private readonly options: SessionStreamOptions = {},
  ) {
    this.baseDelayMs = options.reconnectDelayMs ?? 250;
    this.maxDelayMs = options.maxReconnectDelayMs ?? 5000;
    this.delayMs = this.baseDelayMs;
  }

  connect(): void {
    this.closedByUser = false;
    this.options.onState?.("connecting");
    const socket = this.socketFactory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.delayMs = this.baseDelayMs;
      this.options.onState?.("open");
    };
    socket.onmessage = (event) => {
      const message = JSON.parse(String(event.data)) as StreamMessage;
      this.feed.ingest(message);
    };
    socket.onerror = () => {
      // close handler owns the reconnect
    };
    socket.onclose = () => {
      if (this.closedByUser || this.options.reconnect === false) {
        this.options.onState?.("closed");
        return;
      }
      this.options.onState?.("reconnecting");
      const delay = this.delayMs;
      this.delayMs = Math.min(this.delayMs * 2, this.maxDelayMs);
      setTimeout(() => {
        if (!this.closedByUser) {
          this.connect();
        }
      }, delay);
    };
  }

  close(): void {
    this.closedByUser = true;
    this.socket?.close();
    this.options.onState?.("closed");
  }
}
