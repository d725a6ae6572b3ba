/**
 * Console entry point. Hash routes:
 *   #/              episode list
 *   #/browse/<id>   offline mode for one episode
 *   #/live/<task>   online mode: live session against the simulator
 */

import { ApiClient } from "./api.js";
import { InterventionController, ModeSelector } from "./controls.js";
import { FeedStore } from "./feed.js";
import { SessionStream, type SocketLike } from "./stream.js";
import type { InterventionAction, NarrationPayload, StreamMessage } from "./types.js";
import {
  appendFeedMessage,
  el,
  renderKeyFrameStrip,
  renderRawPanel,
  renderTimeline,
  syncToTimestamp,
} from "./view.js";

const api = new ApiClient("");
const root = document.getElementById("app")!;

function wsUrl(sessionId: string): string {
  const scheme = location.protocol === "https:" ? "wss" : "ws";
  return `${scheme}://${location.host}/sessions/${sessionId}/stream`;
}

function imageUrl(episodeId: string): (path: string) => string | null {
  return (path) => {
    const name = path.split("/").pop();
    return name ? `/episodes/${encodeURIComponent(episodeId)}/image/${name}` : null;
  };
}

async function showEpisodeList(): Promise<void> {
  root.replaceChildren(el("h1", "", "episodes"));
  const list = el("div", "episode-list");
  root.appendChild(list);
  const episodes = await api.listEpisodes();
  for (const episode of episodes) {
    const card = el("div", "episode-card");
    card.appendChild(el("h3", "", episode.episode_id));
    card.appendChild(
      el(
        "p",
        "",
        `${episode.task_name} | ${(episode.t_end - episode.t_start).toFixed(0)}s | ` +
          `${episode.n_failures} failure${episode.n_failures === 1 ? "" : "s"}`,
      ),
    );
    card.addEventListener("click", () => {
      location.hash = `#/browse/${episode.id}`;
    });
    list.appendChild(card);
  }
  const live = el("div", "live-launcher");
  live.appendChild(el("h2", "", "live run"));
  for (const task of ["put_cup", "microwave_food", "hang_hat", "collect_clothes"]) {
    const button = el("button", "live-button", task);
    button.addEventListener("click", () => {
      location.hash = `#/live/${task}`;
    });
    live.appendChild(button);
  }
  root.appendChild(live);
}

function consoleSkeleton(title: string) {
  root.replaceChildren();
  const header = el("header", "console-header");
  header.appendChild(el("h1", "", title));
  const status = el("span", "conn-status", "loading");
  header.appendChild(status);
  root.appendChild(header);

  const columns = el("div", "console-columns");
  const left = el("div", "console-left");
  const strip = el("div", "keyframe-strip");
  left.appendChild(el("h2", "", "key frames"));
  left.appendChild(strip);
  const rawToggle = el("button", "raw-toggle", "raw signals");
  const raw = el("div", "raw-panel collapsed");
  rawToggle.addEventListener("click", () => raw.classList.toggle("collapsed"));
  left.appendChild(rawToggle);
  left.appendChild(raw);
  columns.appendChild(left);

  const right = el("div", "console-right");
  right.appendChild(el("h2", "", "narration"));
  const feed = el("div", "narration-feed");
  right.appendChild(feed);
  columns.appendChild(right);
  root.appendChild(columns);

  root.appendChild(el("h2", "", "state timeline"));
  const timeline = el("div", "timeline");
  root.appendChild(timeline);

  return { header, status, strip, raw, feed, timeline };
}

async function showBrowse(episodeId: string): Promise<void> {
  const ui = consoleSkeleton(`offline: ${episodeId}`);
  ui.status.textContent = "offline replay";
  const [events, narrations, timeline, frames] = await Promise.all([
    api.episodeEvents(episodeId),
    api.episodeNarrations(episodeId),
    api.episodeTimeline(episodeId),
    api.episodeFrames(episodeId),
  ]);

  const select = (t: number) => syncToTimestamp({ timeline: ui.timeline, strip: ui.strip, feed: ui.feed }, t);
  const tEnd = timeline.planner.length ? Math.max(...timeline.planner.map((entry) => entry.t)) + 5 : 1;
  renderTimeline(ui.timeline, timeline.planner, timeline.failure_labels, tEnd, select);
  renderKeyFrameStrip(
    ui.strip,
    events.map((event) => ({ t: event["t"] as number, payload: event as never })),
    imageUrl(episodeId),
    select,
  )
  for (const narration of narrations) {
    const payload = narration as unknown as NarrationPayload;
    const message: StreamMessage = {
      seq: payload.index,
      kind: "narration",
      t: payload.created_at,
      payload: narration,
    };
    appendFeedMessage(ui.feed, message);
  }
  for (const marker of timeline.failure_labels) {
    appendFeedMessage(ui.feed, {
      seq: -1,
      kind: "failure_label",
      t: marker.t,
      payload: marker as never,
    });
  }
  renderRawPanel(ui.raw, frames);
}

async function showLive(task: string): Promise<void> {
  const ui = consoleSkeleton(`live: ${task}`);
  const session = await api.createSession({ live_task: task }, "alert");
  const feedStore = new FeedStore();

  const modeBar = el("div", "mode-bar");
  const selector = new ModeSelector(api, session.session_id, "alert", (mode) => {
    modeBar.querySelectorAll("button").forEach((button) => {
      button.classList.toggle("active", button.textContent === mode);
    });
  });
  for (const mode of ["alert", "info", "debug"]) {
    const button = el("button", mode === "alert" ? "active" : "", mode);
    button.addEventListener("click", () => void selector.set(mode));
    modeBar.appendChild(button);
  }
  ui.header.appendChild(modeBar);

  const panel = el("div", "intervention-panel");
  const buttons = new Map<InterventionAction, HTMLButtonElement>();
  const controller = new InterventionController(api, session.session_id, feedStore, (inflight) => {
    for (const [action, button] of buttons) {
      button.disabled = inflight !== null;
      button.classList.toggle("waiting", inflight === action);
    }
  });
  for (const action of ["teleop_ack", "retry", "abort"] as InterventionAction[]) {
    const button = el("button", "intervene-button", action);
    button.addEventListener("click", () => void controller.send(action));
    buttons.set(action, button);
    panel.appendChild(button);
  }
  ui.header.appendChild(panel);

  feedStore.onMessage((message) => {
    appendFeedMessage(ui.feed, message);
    if (message.kind === "state_transition") {
      const payload = message.payload as { to_state: string };
      const waiting = payload.to_state.endsWith(":query_user");
      panel.classList.toggle("active", waiting);
    }
    if (message.kind === "key_event") {
      renderKeyFrameStrip(ui.strip, feedStore.keyEvents(), () => null, (t) =>
        syncToTimestamp({ timeline: ui.timeline, strip: ui.strip, feed: ui.feed }, t),
      );
    }
    if (message.kind === "state_transition" || message.kind === "failure_label") {
      const transitions = feedStore.transitions().map((entry) => ({
        t: entry.t,
        from_state: entry.payload.from_state,
        to_state: entry.payload.to_state,
        outcome: entry.payload.outcome,
      }));
      const markers = feedStore.failures().map((entry) => ({
        t: entry.t,
        reason: entry.payload.reason,
        recovery: entry.payload.recovery,
      }));
      const tEnd = message.t + 10;
      renderTimeline(ui.timeline, transitions, markers, tEnd, (t) =>
        syncToTimestamp({ timeline: ui.timeline, strip: ui.strip, feed: ui.feed }, t),
      );
    }
  });

  const stream = new SessionStream(wsUrl(session.session_id), feedStore, (url) => new WebSocket(url) as unknown as SocketLike, {
    onState: (state) => {
      ui.status.textContent = state;
      ui.status.className = `conn-status conn-${state}`;
    },
  });
  stream.connect();
}

async function route(): Promise<void> {
  const hash = location.hash || "#/";
  try {
    if (hash.startsWith("#/browse/")) {
      await showBrowse(decodeURIComponent(hash.slice("#/browse/".length)));
    } else if (hash.startsWith("#/live/")) {
      await showLive(decodeURIComponent(hash.slice("#/live/".length)));
    } else {
      await showEpisodeList();
    }
  } catch (err) {
    const banner = el("div", "error-banner", `service error: ${String(err)}`);
    root.prepend(banner); // non-blocking: the rest of the view stays usable
  }
}

window.addEventListener("hashchange", () => void route());
void route();
