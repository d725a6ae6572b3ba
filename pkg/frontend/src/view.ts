/**
 * DOM rendering: state timeline, key-frame strip, narration feed, raw panel.
 *
 * Layout: media strip on the left, narration feed on the right, timeline
 * across the bottom. Selecting a key frame highlights the matching timeline
 * slot and scrolls the feed to the same timestamp (three-way sync).
 */

import { isAlertWorthy } from "./feed.js";
import type {
  FailureMarker,
  FrameSample,
  KeyEventPayload,
  NarrationPayload,
  StreamMessage,
  TimelineEntry,
} from "./types.js";

const STATE_CLASSES: [RegExp, string][] = [
  [/:query_user$/, "state-query"],
  [/:teleoperation$/, "state-teleop"],
  [/^task-complete$/, "state-complete"],
  [/^aborted$/, "state-aborted"],
  [/navigate|nav/, "state-nav"],
  [/look|detect|classify|find|search/, "state-detect"],
];

export function stateClass(state: string): string {
  for (const [pattern, cls] of STATE_CLASSES) {
    if (pattern.test(state)) {
      return cls;
    }
  }
  return "state-manip";
}

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text) {
    node.textContent = text;
  }
  return node;
}

export interface SyncTargets {
  timeline: HTMLElement;
  strip: HTMLElement;
  feed: HTMLElement;
}

/** Highlight and scroll every panel to the slot nearest `t`. */
export function syncToTimestamp(targets: SyncTargets, t: number): void {
  for (const panel of [targets.timeline, targets.strip, targets.feed]) {
    let best: HTMLElement | null = null;
    let bestGap = Infinity;
    panel.querySelectorAll<HTMLElement>("[data-t]").forEach((node) => {
      const gap = Math.abs(Number(node.dataset.t) - t);
      if (gap < bestGap) {
        best = node;
        bestGap = gap;
      }
    });
    panel.querySelectorAll(".selected").forEach((node) => node.classList.remove("selected"));
    if (best !== null) {
      (best as HTMLElement).classList.add("selected");
      (best as HTMLElement).scrollIntoView({ block: "nearest", inline: "nearest" });
    }
  }
}

export function renderTimeline(
  container: HTMLElement,
  entries: TimelineEntry[],
  markers: FailureMarker[],
  tEnd: number,
  onSelect: (t: number) => void,
): void {
  container.replaceChildren();
  const total = Math.max(tEnd, 1e-9);
  for (let i = 0; i < entries.length; i++) {
    const entry = entries[i];
    const next = i + 1 < entries.length ? entries[i + 1].t : tEnd;
    const slot = el("div", `timeline-slot ${stateClass(entry.to_state)}`);
    slot.dataset.t = String(entry.t);
    slot.style.width = `${(100 * (next - entry.t)) / total}%`;
    slot.title = `${entry.to_state} (t=${entry.t.toFixed(1)}s)`;
    slot.addEventListener("click", () => onSelect(entry.t));
    container.appendChild(slot);
  }
  for (const marker of markers) {
    const flag = el("div", "failure-marker");
    flag.dataset.t = String(marker.t);
    flag.style.left = `${(100 * marker.t) / total}%`;
    flag.title = `failure t=${marker.t.toFixed(1)}s: ${marker.reason}`;
    flag.addEventListener("click", () => onSelect(marker.t));
    container.appendChild(flag);
  }
}

export function renderKeyFrameStrip(
  container: HTMLElement,
  events: { t: number; payload: KeyEventPayload }[],
  imageUrl: (imagePath: string) => string | null,
  onSelect: (t: number) => void,
): void {
  container.replaceChildren();
  for (const event of events) {
    const card = el("div", "keyframe-card");
    card.dataset.t = String(event.t);
    const url = event.payload.image ? imageUrl(event.payload.image) : null;
    if (url) {
      const img = el("img", "keyframe-img");
      img.src = url;
      img.loading = "lazy";
      card.appendChild(img);
    } else {
      card.appendChild(el("div", "keyframe-placeholder", event.payload.trigger));
    }
    card.appendChild(el("div", "keyframe-caption", `t=${event.t.toFixed(1)}s ${event.payload.planner_state}`));
    card.addEventListener("click", () => onSelect(event.t));
    container.appendChild(card);
  }
}

export function narrationItem(t: number, narration: NarrationPayload): HTMLElement {
  const item = el("div", `feed-item mode-${narration.mode}${narration.degraded ? " degraded" : ""}`);
  item.dataset.t = String(t);
  item.appendChild(el("span", "feed-time", `t=${t.toFixed(1)}s`));
  item.appendChild(el("span", `feed-badge badge-${narration.mode}`, narration.mode));
  item.appendChild(el("p", "feed-text", narration.text));
  return item;
}

export function alertItem(message: StreamMessage): HTMLElement {
  const item = el("div", "feed-item feed-alert");
  item.dataset.t = String(message.t);
  const payload = message.payload as { reason?: string; text?: string };
  item.appendChild(el("span", "feed-time", `t=${message.t.toFixed(1)}s`));
  item.appendChild(el("span", "feed-badge badge-failure", "failure"));
  item.appendChild(el("p", "feed-text", payload.reason ?? payload.text ?? ""));
  return item;
}

export function appendFeedMessage(container: HTMLElement, message: StreamMessage): void {
  if (message.kind === "narration") {
    const narration = message.payload as unknown as NarrationPayload;
    if (narration.text === "[NO-ALERT]") {
      return; // suppressed: keeps no feed slot
    }
    container.appendChild(narrationItem(message.t, narration));
  } else if (message.kind === "failure_label") {
    container.appendChild(alertItem(message));
  } else if (message.kind === "state_transition") {
    const transition = message.payload as { to_state: string };
    const item = el("div", `feed-item feed-transition ${stateClass(transition.to_state)}`);
    item.dataset.t = String(message.t);
    item.textContent = `t=${message.t.toFixed(1)}s -> ${transition.to_state}`;
    container.appendChild(item);
  } else {
    return;
  }
  if (isAlertWorthy(message)) {
    container.lastElementChild?.classList.add("highlight");
  }
  container.scrollTop = container.scrollHeight;
}

/** Collapsible raw-signal panel: one sparkline per joint plus base speed. */
export function renderRawPanel(container: HTMLElement, frames: FrameSample[]): void {
  container.replaceChildren();
  if (!frames.length) {
    container.appendChild(el("p", "raw-empty", "no frame data"));
    return;
  }
  const names = Object.keys(frames[0].joint_values).sort();
  const series: [string, number[]][] = names.map((name) => [
    name,
    frames.map((frame) => frame.joint_values[name] ?? 0),
  ]);
  series.push(["flow", frames.map((frame) => frame.flow_magnitude ?? 0)]);
  for (const [name, values] of series) {
    const row = el("div", "raw-row");
    row.appendChild(el("span", "raw-label", name));
    row.appendChild(sparkline(values));
    container.appendChild(row);
  }
}

function sparkline(values: number[], width = 420, height = 26): HTMLCanvasElement {
  const canvas = el("canvas", "raw-spark");
  canvas.width = width;
  canvas.height = height;
  const context = canvas.getContext("2d");
  if (!context || values.length < 2) {
    return canvas;
  }
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  context.strokeStyle = "#4d8dd4";
  context.beginPath();
  values.forEach((value, i) => {
    const x = (i / (values.length - 1)) * width;
    const y = height - 2 - ((value - lo) / span) * (height - 4);
    if (i === 0) {
      context.moveTo(x, y);
    } else {
      context.lineTo(x, y);
    }
  });
  context.stroke();
  return canvas;
}
