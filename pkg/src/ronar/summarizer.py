"""Per-event experience summaries: environment, internal, planning.

Each sub-summary has a deterministic digest computed from the event alone;
provider prose is layered on top and never replaces a digest. A failed
provider call degrades the summary (prose marked unavailable) but leaves
every deterministic field intact.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import prompts, scene_graph
from .episode_log import EpisodeLog, MultimodalFrame, PlannerTransition, RobotConfig
from .errors import RonarError
from .key_event import KeyEvent
from .provider import ProviderRequest, TextProvider

NEAR_LIMIT_FRACTION = 0.05  # of the part's full range
DEFAULT_DETECTION_WINDOW = 1.0  # seconds

UNITS_BY_PART_TYPE = {
    "prismatic": "m",
    "revolute": "rad",
    "base": "m",
    "camera": "rad",
    "gripper": "",
    "other": "",
}


class UnknownJointName(RonarError):
    pass


class UnknownState(RonarError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    name: str
    description: str
    subgoals: tuple[str, ...]


@dataclass(frozen=True)
class PartLine:
    name: str
    value: float
    units: str
    limit: tuple[float, float]
    delta: float
    near_limit: bool

    def text(self) -> str:
        state = "unchanged" if self.delta == 0.0 else f"changed {self.delta:+.4f}"
        units = f" {self.units}" if self.units else ""
        line = (
            f"{self.name} = {self.value:.4f}{units}"
            f" (limit {self.limit[0]:g}..{self.limit[1]:g}, {state})"
        )
        if self.near_limit:
            line += " NEAR LIMIT"
        return line


@dataclass
class InternalSummary:
    lines: list[PartLine]
    base_line: str | None
    digest: str
    prose: str | None = None


@dataclass
class EnvironmentSummary:
    graph: scene_graph.SceneGraph
    digest: str
    prose: str | None = None


@dataclass(frozen=True)
class SubgoalRecord:
    subgoal: str
    outcome: str  # success | failure | aborted | in-progress
    t_start: float
    t_end: float


@dataclass
class PlanningDigest:
    task_name: str
    description: str
    subgoals: tuple[str, ...]
    current_subgoal: str
    history: list[SubgoalRecord]

    def text(self) -> str:
        lines = [
            f"task: {self.task_name} -- {self.description}",
            "subgoals: " + " -> ".join(self.subgoals),
            f"current: {self.current_subgoal}",
            "history:",
        ]
        if not self.history:
            lines.append("- (none)")
        for rec in self.history:
            lines.append(f"- {rec.subgoal}: {rec.outcome} (t {rec.t_start:.1f}..{rec.t_end:.1f})")
        return "\n".join(lines)


@dataclass(frozen=True)
class PromptRecord:
    purpose: str
    template: str
    template_sha: str
    request_id: str
    prompt_sha: str
    provider: str

    def to_dict(self) -> dict:
        return {
            "purpose": self.purpose,
            "template": self.template,
            "template_sha": self.template_sha,
            "request_id": self.request_id,
            "prompt_sha": self.prompt_sha,
            "provider": self.provider,
        }


@dataclass
class ExperienceSummary:
    event_index: int
    timestamp: float
    environment: EnvironmentSummary
    internal: InternalSummary
    planning: PlanningDigest
    provenance: list[PromptRecord] = field(default_factory=list)
    degraded: bool = False

    def text(self) -> str:
        parts = ["environment:", self.environment.digest]
        if self.environment.prose:
            parts.append(self.environment.prose)
        parts += ["internal:", self.internal.digest]
        if self.internal.prose:
            parts.append(self.internal.prose)
        parts += ["planning:", self.planning.text()]
        return "\n".join(parts)

    def to_record(self) -> dict:
        return {
            "event_index": self.event_index,
            "t": self.timestamp,
            "environment": {
                "digest": self.environment.digest,
                "prose": self.environment.prose,
                "objects": [o.to_dict() for o in self.environment.graph.objects],
                "triplets": [
                    [t.subject_id, t.relation, t.object_id, t.gap] for t in self.environment.graph.triplets
                ],
            },
            "internal": {"digest": self.internal.digest, "prose": self.internal.prose},
            "planning": {
                "task": self.planning.task_name,
                "current": self.planning.current_subgoal,
                "history": [
                    [r.subgoal, r.outcome, r.t_start, r.t_end] for r in self.planning.history
                ],
                "text": self.planning.text(),
            },
            "provenance": [p.to_dict() for p in self.provenance],
            "degraded": self.degraded,
        }


def _prompt_sha(system: str, user: str) -> str:
    return hashlib.sha256((system + "\n" + user).encode("utf-8")).hexdigest()[:12]


def deterministic_request_id(purpose: str, event_index: int, prompt_sha: str) -> str:
    return f"{purpose}:{event_index}:{prompt_sha}"


def _near_limit(value: float, limit: tuple[float, float]) -> bool:
    margin = NEAR_LIMIT_FRACTION * (limit[1] - limit[0])
    return value > limit[1] - margin or value < limit[0] + margin


def internal_digest(
    frame: MultimodalFrame,
    prev_frame: MultimodalFrame | None,
    config: RobotConfig,
) -> tuple[list[PartLine], str | None, str]:
    """Deterministic part-state lines; one line per joint value in the frame."""
    lines: list[PartLine] = []
    for name in sorted(frame.joint_values):
        part = config.part(name)
        if part is None:
            raise UnknownJointName(f"joint {name!r} not in the robot config")
        value = frame.joint_values[name]
        delta = 0.0
        if prev_frame is not None and name in prev_frame.joint_values:
            delta = value - prev_frame.joint_values[name]
        lines.append(
            PartLine(
                name=name,
                value=value,
                units=UNITS_BY_PART_TYPE[part.part_type],
                limit=part.limit,
                delta=delta,
                near_limit=_near_limit(value, part.limit),
            )
        )

    base_line = None
    if frame.base_pose is not None:
        x, y, yaw = frame.base_pose
        base_line = f"base at x={x:.3f} m, y={y:.3f} m, yaw={yaw:.3f} rad"
        if prev_frame is not None and prev_frame.base_pose is not None:
            moved = math.hypot(x - prev_frame.base_pose[0], y - prev_frame.base_pose[1])
            base_line += f" (moved {moved:.3f} m since last event)"

    text_lines = ([base_line] if base_line else []) + [ln.text() for ln in lines]
    return lines, base_line, "\n".join(text_lines) if text_lines else "no internal state recorded"


def summarize_internal(
    event: KeyEvent,
    prev: KeyEvent | None,
    config: RobotConfig,
    provider: TextProvider | None = None,
) -> tuple[InternalSummary, PromptRecord | None, bool]:
    """Internal summary for one event; returns (summary, provenance, degraded)."""
    lines, base_line, digest = internal_digest(event.frame, prev.frame if prev else None, config)
    summary = InternalSummary(lines=lines, base_line=base_line, digest=digest)
    if provider is None:
        return summary, None, False
    user = prompts.render("internal_prose", digest=digest)
    sha = _prompt_sha("", user)
    request = ProviderRequest(
        system_prompt="",
        user_prompt=user,
        request_id=deterministic_request_id("internal", event.frame_index, sha),
    )
    record = PromptRecord(
        purpose="internal",
        template="internal_prose",
        template_sha=prompts.template_sha("internal_prose"),
        request_id=request.request_id,
        prompt_sha=sha,
        provider=provider.name,
    )
    try:
        summary.prose = provider.complete(request).text
        return summary, record, False
    except RonarError:
        return summary, record, True


RECOVERY_SUFFIXES = (":query_user", ":teleoperation")
TERMINAL_STATES = ("task-complete", "aborted")
START_STATE = "start"


def _known_state(state: str, subgoals: tuple[str, ...]) -> bool:
    if state in subgoals or state in TERMINAL_STATES or state == START_STATE:
        return True
    for suffix in RECOVERY_SUFFIXES:
        if state.endswith(suffix) and state[: -len(suffix)] in subgoals:
            return True
    return False


def summarize_planning(
    planner_events: list[PlannerTransition],
    now: float,
    task_spec: TaskSpec,
) -> PlanningDigest:
    """Reconstruct subgoal history and outcomes from planner transitions.

    Fully deterministic; failures of earlier subgoals stay in the history so
    cross-subgoal correlations remain visible.
    """
    history: list[SubgoalRecord] = []
    current = task_spec.subgoals[0] if task_spec.subgoals else ""
    entry_t: float | None = None
    seen_any = False
    for e in planner_events:
        if e.t > now:
            break
        if not _known_state(e.to_state, task_spec.subgoals):
            raise UnknownState(f"transition to unknown state {e.to_state!r}")
        if e.from_state != START_STATE and seen_any:
            history.append(
                SubgoalRecord(
                    subgoal=e.from_state,
                    outcome=e.outcome or "success",
                    t_start=entry_t if entry_t is not None else e.t,
                    t_end=e.t,
                )
            )
        current = e.to_state
        entry_t = e.t
        seen_any = True
    if seen_any and current not in TERMINAL_STATES:
        history.append(
            SubgoalRecord(
                subgoal=current,
                outcome="in-progress",
                t_start=entry_t if entry_t is not None else now,
                t_end=now,
            )
        )
    return PlanningDigest(
        task_name=task_spec.name,
        description=task_spec.description,
        subgoals=task_spec.subgoals,
        current_subgoal=current,
        history=history,
    )


@dataclass
class SummaryContext:
    """Everything summarize_event needs besides the event itself."""

    episode: EpisodeLog
    task_spec: TaskSpec
    provider: TextProvider | None = None
    prev_event: KeyEvent | None = None
    distance_cutoff: float = scene_graph.DEFAULT_DISTANCE_CUTOFF
    margins: scene_graph.Margins = field(default_factory=scene_graph.Margins)
    detection_window: float = DEFAULT_DETECTION_WINDOW


def _detections_near(episode: EpisodeLog, t: float, window: float):
    best = None
    for rec in episode.detections:
        if abs(rec.t - t) <= window and (best is None or abs(rec.t - t) < abs(best.t - t)):
            best = rec
    return best


def summarize_event(event: KeyEvent, ctx: SummaryContext) -> ExperienceSummary:
    """Compose the three-part summary for one key event.

    The two prose calls (environment, internal) run concurrently; planning
    needs no provider. Provider failures leave digests untouched and mark
    the summary degraded.
    """
    anchor_t = event.sharpest.timestamp if event.sharpest is not None else event.timestamp
    detection = _detections_near(ctx.episode, anchor_t, ctx.detection_window)
    objects = scene_graph.filter_objects(list(detection.objects), ctx.distance_cutoff) if detection else []
    graph = scene_graph.relations(objects, ctx.margins)
    env = EnvironmentSummary(graph=graph, digest=scene_graph.environment_digest(graph))

    planning = summarize_planning(ctx.episode.planner_events, event.timestamp, ctx.task_spec)

    provenance: list[PromptRecord] = []
    degraded = False

    if ctx.provider is None:
        internal, _, _ = summarize_internal(event, ctx.prev_event, ctx.episode.robot_config)
    else:
        env_user = prompts.render("environment_prose", digest=env.digest)
        env_sha = _prompt_sha("", env_user)
        env_request = ProviderRequest(
            system_prompt="",
            user_prompt=env_user,
            request_id=deterministic_request_id("environment", event.frame_index, env_sha),
        )

        def call_env():
            return ctx.provider.complete(env_request)

        def call_internal():
            return summarize_internal(event, ctx.prev_event, ctx.episode.robot_config, ctx.provider)

        with ThreadPoolExecutor(max_workers=2) as pool:
            env_future = pool.submit(call_env)
            internal_future = pool.submit(call_internal)
            internal, internal_record, internal_degraded = internal_future.result()
            try:
                env.prose = env_future.result().text
                env_degraded = False
            except RonarError:
                env_degraded = True
        provenance.append(
            PromptRecord(
                purpose="environment",
                template="environment_prose",
                template_sha=prompts.template_sha("environment_prose"),
                request_id=env_request.request_id,
                prompt_sha=env_sha,
                provider=ctx.provider.name,
            )
        )
        if internal_record is not None:
            provenance.append(internal_record)
        degraded = env_degraded or internal_degraded

    return ExperienceSummary(
        event_index=event.frame_index,
        timestamp=event.timestamp,
        environment=env,
        internal=internal,
        planning=planning,
        provenance=provenance,
        degraded=degraded,
    )
