/**
 * Seq-ordered message store behind the narration feed and timeline.
 *
 * Reconnects replay the server-side snapshot from seq 0; ingest() drops
 * anything already seen, so the visible feed stays gap-free and
 * duplicate-free no matter how often the socket drops. Empty alert-mode
 * narrations keep their index internally but are hidden from the display
 * list.
 */

import {
  EMPTY_ALERT,
  type FailurePayload,
  type KeyEventPayload,
  type MessageKind,
  type NarrationPayload,
  type StreamMessage,
  type TransitionPayload,
} from "./types.js";

export type FeedListener = (message: StreamMessage) => void;

export class FeedStore {
  private messages: StreamMessage[] = [];
  private listeners = new Set<FeedListener>();
  private gaps = 0;

  get lastSeq(): number {
    return this.messages.length - 1;
  }

  get gapCount(): number {
    return this.gaps;
  }

  all(): readonly StreamMessage[] {
    return this.messages;
  }

  /** Returns true when the message advanced the feed (not a duplicate). */
  ingest(message: StreamMessage): boolean {
    if (message.seq <= this.lastSeq) {
      return false; // snapshot overlap after a reconnect
    }
    if (message.seq !== this.lastSeq + 1) {
      this.gaps += 1; // caller should resync; counted for diagnostics
      return false;
    }
    this.messages.push(message);
    for (const listener of this.listeners) {
      listener(message);
    }
    return true;
  }

  onMessage(listener: FeedListener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private ofKind(kind: MessageKind): StreamMessage[] {
    return this.messages.filter((m) => m.kind === kind);
  }

  /** Narrations for display: empty alerts are suppressed, order preserved. */
  narrations(): { t: number; payload: NarrationPayload }[] {
    return this.ofKind("narration")
      .map((m) => ({ t: m.t, payload: m.payload as unknown as NarrationPayload }))
      .filter((n) => n.payload.text !== EMPTY_ALERT);
  }

  /** Every narration including suppressed ones; indices stay contiguous. */
  narrationsRaw(): NarrationPayload[] {
    return this.ofKind("narration").map((m) => m.payload as unknown as NarrationPayload);
  }

  keyEvents(): { t: number; payload: KeyEventPayload }[] {
    return this.ofKind("key_event").map((m) => ({ t: m.t, payload: m.payload as unknown as KeyEventPayload }));
  }

  transitions(): { t: number; payload: TransitionPayload }[] {
    return this.ofKind("state_transition").map((m) => ({
      t: m.t,
      payload: m.payload as unknown as TransitionPayload,
    }));
  }

  failures(): { t: number; payload: FailurePayload }[] {
    return this.ofKind("failure_label").map((m) => ({ t: m.t, payload: m.payload as unknown as FailurePayload }));
  }

  currentState(): string | null {
    const transitions = this.transitions();
    return transitions.length ? transitions[transitions.length - 1].payload.to_state : null;
  }
}

export function isAlertWorthy(message: StreamMessage): boolean {
  if (message.kind === "failure_label") {
    return true;
  }
  if (message.kind === "narration") {
    const payload = message.payload as unknown as NarrationPayload;
    return payload.mode === "alert" && payload.text !== EMPTY_ALERT;
  }
  return false;
}
