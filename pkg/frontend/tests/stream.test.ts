import { describe, expect, it, vi } from "vitest";

import { FeedStore } from "../src/feed.js";
import { SessionStream, type SocketLike } from "../src/stream.js";
import type { StreamMessage } from "../src/types.js";

function msg(seq: number): StreamMessage {
  return { seq, kind: "heartbeat", t: seq * 0.2, payload: { note: "alive" } };
}

class FakeSocket implements SocketLike {
  onmessage: ((event: { data: unknown }) => void) | null = null;
  onopen: (() => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: ((err: unknown) => void) | null = null;
  closed = false;

  open(): void {
    this.onopen?.();
  }

  push(message: StreamMessage): void {
    this.onmessage?.({ data: JSON.stringify(message) });
  }

  drop(): void {
    this.onclose?.();
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }
}

describe("SessionStream", () => {
  it("feeds snapshot then live messages into the store", () => {
    const feed = new FeedStore();
    const sockets: FakeSocket[] = [];
    const stream = new SessionStream("ws://x", feed, () => {
      const socket = new FakeSocket();
      sockets.push(socket);
      return socket;
    });
    stream.connect();
    sockets[0].open();
    for (const m of [msg(0), msg(1), msg(2)]) sockets[0].push(m);
    expect(feed.all().length).toBe(3);
    stream.close();
  });

  it("reconnects after a drop and dedupes the snapshot replay", async () => {
    vi.useFakeTimers();
    const feed = new FeedStore();
    const sockets: FakeSocket[] = [];
    const states: string[] = [];
    const stream = new SessionStream(
      "ws://x",
      feed,
      () => {
        const socket = new FakeSocket();
        sockets.push(socket);
        return socket;
      },
      { reconnectDelayMs: 10, onState: (s) => states.push(s) },
    );
    stream.connect();
    sockets[0].open();
    sockets[0].push(msg(0));
    sockets[0].push(msg(1));
    sockets[0].drop();

    await vi.advanceTimersByTimeAsync(20);
    expect(sockets.length).toBe(2);
    sockets[1].open();
    // server replays history (snapshot) then continues
    for (const m of [msg(0), msg(1), msg(2), msg(3)]) sockets[1].push(m);

    expect(feed.all().map((m) => m.seq)).toEqual([0, 1, 2, 3]);
    expect(feed.gapCount).toBe(0);
    expect(states).toContain("reconnecting");
    stream.close();
    vi.useRealTimers();
  });

  it("does not reconnect after an explicit close", async () => {
    vi.useFakeTimers();
    const sockets: FakeSocket[] = [];
    const stream = new SessionStream("ws://x", new FeedStore(), () => {
      const socket = new FakeSocket();
      sockets.push(socket);
      return socket;
    });
    stream.connect();
    sockets[0].open();
    stream.close();
    await vi.advanceTimersByTimeAsync(1000);
    expect(sockets.length).toBe(1);
    vi.useRealTimers();
  });

  it("backs off between consecutive reconnects", async () => {
    vi.useFakeTimers();
    const sockets: FakeSocket[] = [];
    const stream = new SessionStream(
      "ws://x",
      new FeedStore(),
      () => {
        const socket = new FakeSocket();
        sockets.push(socket);
        return socket;
      },
      { reconnectDelayMs: 100 },
    );
    stream.connect();
    sockets[0].drop();
    await vi.advanceTimersByTimeAsync(100);
    expect(sockets.length).toBe(2);
    sockets[1].drop();
    await vi.advanceTimersByTimeAsync(100);
    expect(sockets.length).toBe(2); // doubled delay not yet elapsed
    await vi.advanceTimersByTimeAsync(100);
    expect(sockets.length).toBe(3);
    stream.close();
    vi.useRealTimers();
  });
});
