import { describe, expect, it } from "vitest";

import { FeedStore, isAlertWorthy } from "../src/feed.js";
import type { StreamMessage } from "../src/types.js";

function msg(seq: number, kind: StreamMessage["kind"] = "heartbeat", payload: Record<string, unknown> = {}): StreamMessage {
  return { seq, kind, t: seq * 0.2, payload };
}

function narration(seq: number, text: string, mode = "alert"): StreamMessage {
  return msg(seq, "narration", { index: seq, event_index: seq, mode, text, created_at: seq * 0.2, degraded: false });
}

describe("FeedStore", () => {
  it("accepts contiguous messages and exposes them in order", () => {
    const feed = new FeedStore();
    expect(feed.ingest(msg(0))).toBe(true);
    expect(feed.ingest(msg(1))).toBe(true);
    expect(feed.all().map((m) => m.seq)).toEqual([0, 1]);
  });

  it("drops duplicates from snapshot replays", () => {
    const feed = new FeedStore();
    for (const m of [msg(0), msg(1), msg(2)]) feed.ingest(m);
    // reconnect: server resends everything plus one new message
    const results = [msg(0), msg(1), msg(2), msg(3)].map((m) => feed.ingest(m));
    expect(results).toEqual([false, false, false, true]);
    expect(feed.all().map((m) => m.seq)).toEqual([0, 1, 2, 3]);
  });

  it("refuses gaps and counts them", () => {
    const feed = new FeedStore();
    feed.ingest(msg(0));
    expect(feed.ingest(msg(2))).toBe(false);
    expect(feed.gapCount).toBe(1);
    expect(feed.lastSeq).toBe(0);
    // the missing message can still arrive later (e.g. via snapshot)
    expect(feed.ingest(msg(1))).toBe(true);
    expect(feed.ingest(msg(2))).toBe(true);
  });

  it("notifies listeners only for new messages", () => {
    const feed = new FeedStore();
    const seen: number[] = [];
    feed.onMessage((m) => seen.push(m.seq));
    feed.ingest(msg(0));
    feed.ingest(msg(0));
    feed.ingest(msg(1));
    expect(seen).toEqual([0, 1]);
  });

  it("suppresses empty alerts from the display list but keeps indices", () => {
    const feed = new FeedStore();
    feed.ingest(narration(0, "watch out", "alert"));
    feed.ingest(narration(1, "[NO-ALERT]", "alert"));
    feed.ingest(narration(2, "arm stuck", "alert"));
    expect(feed.narrations().map((n) => n.payload.text)).toEqual(["watch out", "arm stuck"]);
    expect(feed.narrationsRaw().map((n) => n.index)).toEqual([0, 1, 2]);
  });

  it("derives the current planner state from transitions", () => {
    const feed = new FeedStore();
    feed.ingest(msg(0, "state_transition", { from_state: "start", to_state: "nav", outcome: "entered" }));
    feed.ingest(msg(1, "state_transition", { from_state: "nav", to_state: "pick", outcome: "success" }));
    expect(feed.currentState()).toBe("pick");
  });
});

describe("isAlertWorthy", () => {
  it("flags failures and non-empty alert narrations only", () => {
    expect(isAlertWorthy(msg(0, "failure_label", { reason: "stuck" }))).toBe(true);
    expect(isAlertWorthy(narration(1, "problem!", "alert"))).toBe(true);
    expect(isAlertWorthy(narration(2, "[NO-ALERT]", "alert"))).toBe(false);
    expect(isAlertWorthy(narration(3, "all well", "info"))).toBe(false);
    expect(isAlertWorthy(msg(4, "heartbeat"))).toBe(false);
  });
});
