/**
 * Mutating controls: mode selector and intervention buttons.
 *
 * Each control allows one in-flight request, so a double-click cannot fire
 * twice; intervention buttons stay disabled until the acknowledging planner
 * transition shows up on the stream (or a timeout re-arms them).
 */

import type { ApiClient } from "./api.js";
import type { FeedStore } from "./feed.js";
import type { InterventionAction, TransitionPayload } from "./types.js";

const ACK_TIMEOUT_MS = 15_000;

function acknowledges(action: InterventionAction, transition: TransitionPayload): boolean {
  if (action === "teleop_ack") {
    return transition.to_state.endsWith(":teleoperation");
  }
  if (action === "abort") {
    return transition.to_state === "aborted";
  }
  // retry: the machine re-enters an action state from a recovery state
  return transition.from_state.includes(":") && !transition.to_state.includes(":");
}

export class InterventionController {
  private inflight: InterventionAction | null = null;
  private unsubscribe: (() => void) | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly sessionId: string,
    private readonly feed: FeedStore,
    private readonly onStateChange?: (inflight: InterventionAction | null) => void,
  ) {}

  get pending(): InterventionAction | null {
    return this.inflight;
  }

  /** Returns false when another intervention is still awaiting its ack. */
  async send(action: InterventionAction): Promise<boolean> {
    if (this.inflight !== null) {
      return false;
    }
    this.inflight = action;
    this.onStateChange?.(action);
    this.unsubscribe = this.feed.onMessage((message) => {
      if (message.kind !== "state_transition") {
        return;
      }
      if (acknowledges(action, message.payload as unknown as TransitionPayload)) {
        this.settle();
      }
    });
    this.timer = setTimeout(() => this.settle(), ACK_TIMEOUT_MS);
    try {
      await this.api.intervene(this.sessionId, action);
    } catch (err) {
      this.settle();
      throw err;
    }
    return true;
  }

  private settle(): void {
    this.unsubscribe?.();
    this.unsubscribe = null;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.inflight = null;
    this.onStateChange?.(null);
  }
}

export class ModeSelector {
  private inflight = false;

  constructor(
    private readonly api: ApiClient,
    private readonly sessionId: string,
    private current: string,
    private readonly onModeChange?: (mode: string) => void,
  ) {}

  get mode(): string {
    return this.current;
  }

  async set(mode: string): Promise<boolean> {
    if (this.inflight || mode === this.current) {
      return false;
    }
    this.inflight = true;
    try {
      const response = await this.api.setMode(this.sessionId, mode);
      this.current = response.mode;
      this.onModeChange?.(this.current);
      return true;
    } finally {
      this.inflight = false;
    }
  }
}
