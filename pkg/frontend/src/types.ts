/**
 * Wire types mirroring the service's REST and WebSocket contract.
 */

export type MessageKind =
  | "key_event"
  | "summary_ready"
  | "narration"
  | "state_transition"
  | "failure_label"
  | "heartbeat";

export interface StreamMessage {
  seq: number;
  kind: MessageKind;
  t: number;
  payload: Record<string, unknown>;
}

export interface NarrationPayload {
  index: number;
  event_index: number;
  mode: "alert" | "info" | "debug";
  text: string;
  created_at: number;
  degraded: boolean;
}

export interface KeyEventPayload {
  frame_index: number;
  t: number;
  trigger: "threshold" | "planner";
  accumulated: number;
  movement_category: string;
  planner_state: string;
  image: string | null;
}

export interface TransitionPayload {
  from_state: string;
  to_state: string;
  outcome: string;
}

export interface FailurePayload {
  reason: string;
  recovery: string;
}

export interface EpisodeDescriptor {
  id: string;
  episode_id: string;
  task_name: string;
  t_start: number;
  t_end: number;
  n_failures: number;
  n_planner_events: number;
}

export interface TimelineEntry {
  t: number;
  from_state: string;
  to_state: string;
  outcome: string;
}

export interface FailureMarker {
  t: number;
  reason: string;
  recovery: string;
}

export interface FrameSample {
  t: number;
  base_pose: [number, number, number] | null;
  joint_values: Record<string, number>;
  flow_magnitude: number | null;
  planner_state: string;
  head_image: string | null;
}

export type InterventionAction = "retry" | "abort" | "teleop_ack";

// Alert-mode narrations answering "nothing needs attention".
export const EMPTY_ALERT = "[NO-ALERT]";
