/**
 * Thin REST client over the service endpoints.
 */

import type { EpisodeDescriptor, FrameSample, InterventionAction, TimelineEntry } from "./types.js";

export class ApiClient {
  constructor(private readonly base: string = "") {}

  private async get<T>(path: string): Promise<T> {
    const response = await fetch(this.base + path);
    if (!response.ok) {
      throw new Error(`GET ${path} -> ${response.status}`);
    }
    return (await response.json()) as T;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await fetch(this.base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) {
      throw new Error(`POST ${path} -> ${response.status}`);
    }
    return (await response.json()) as T;
  }

  listEpisodes(): Promise<EpisodeDescriptor[]> {
    return this.get("/episodes");
  }

  episodeEvents(id: string): Promise<Record<string, unknown>[]> {
    return this.get(`/episodes/${encodeURIComponent(id)}/events`);
  }

  episodeNarrations(id: string): Promise<Record<string, unknown>[]> {
    return this.get(`/episodes/${encodeURIComponent(id)}/narrations`);
  }

  episodeTimeline(id: string): Promise<{ planner: TimelineEntry[]; failure_labels: { t: number; reason: string; recovery: string }[] }> {
    return this.get(`/episodes/${encodeURIComponent(id)}/timeline`);
  }

  episodeFrames(id: string, stride = 5): Promise<FrameSample[]> {
    return this.get(`/episodes/${encodeURIComponent(id)}/frames?stride=${stride}`);
  }

  createSession(source: { episode_id?: string; live_task?: string }, mode: string): Promise<{ session_id: string }> {
    return this.post("/sessions", { ...source, mode });
  }

  setMode(sessionId: string, mode: string): Promise<{ mode: string }> {
    return this.post(`/sessions/${encodeURIComponent(sessionId)}/mode`, { mode });
  }

  intervene(sessionId: string, action: InterventionAction): Promise<{ queued: string; sim_t: number }> {
    return this.post(`/sessions/${encodeURIComponent(sessionId)}/intervene`, { action });
  }
}
