"""End-to-end glue: episode file -> frames -> events -> summaries -> narration.

Shared by the CLI and the service so both run the identical pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import episode_log, key_event, vision
from .episode_log import EpisodeLog, MultimodalFrame
from .key_event import KeyEvent, NormalizationStats
from .narrator import NarrationInstance, Narrator
from .provider import TextProvider
from .summarizer import ExperienceSummary, SummaryContext, TaskSpec, summarize_event
from .task_sim import TASKS


@dataclass
class PipelineConfig:
    interval: float = episode_log.DEFAULT_INTERVAL
    threshold: float = key_event.DEFAULT_THRESHOLD
    modalities: frozenset[str] = frozenset(key_event.MODALITIES)
    adjacent_window: float = vision.DEFAULT_ADJACENT_WINDOW
    flow_block_size: int = vision.DEFAULT_BLOCK_SIZE
    flow_search_radius: int = vision.DEFAULT_SEARCH_RADIUS
    compute_flow_from_images: bool = True


@dataclass
class PipelineResult:
    episode: EpisodeLog
    frames: list[MultimodalFrame]
    stats: NormalizationStats
    events: list[KeyEvent]
    summaries: list[ExperienceSummary] = field(default_factory=list)
    narrations: list[NarrationInstance] = field(default_factory=list)


def task_spec_for(episode: EpisodeLog) -> TaskSpec:
    task = TASKS.get(episode.task_name)
    if task is not None:
        return task.spec()
    # Unknown task: reconstruct the subgoal sequence from the planner events.
    subgoals: list[str] = []
    for e in episode.planner_events:
        for state in (e.from_state, e.to_state):
            base = state.split(":")[0]
            if base not in ("start", "task-complete", "aborted") and base not in subgoals:
                subgoals.append(base)
    return TaskSpec(name=episode.task_name, description=episode.task_name, subgoals=tuple(subgoals))


def extract_events(episode: EpisodeLog, config: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Align, normalize, and classify; attaches sharpest adjacent images."""
    frames = episode_log.align(episode, config.interval)
    if config.compute_flow_from_images:
        vision.compute_flow_magnitudes(
            frames, block_size=config.flow_block_size, search_radius=config.flow_search_radius
        )
    stats = key_event.compute_stats(frames)
    events = key_event.classify(frames, stats, config.threshold, config.modalities)
    key_event.attach_sharpest(events, frames, config.adjacent_window)
    return PipelineResult(episode=episode, frames=frames, stats=stats, events=events)


def summarize_events(
    result: PipelineResult,
    provider: TextProvider | None,
) -> list[ExperienceSummary]:
    """Experience summary per key event, in order."""
    spec = task_spec_for(result.episode)
    summaries = []
    prev = None
    for event in result.events:
        ctx = SummaryContext(
            episode=result.episode,
            task_spec=spec,
            provider=provider,
            prev_event=prev,
        )
        summaries.append(summarize_event(event, ctx))
        prev = event
    result.summaries = summaries
    return summaries


def narrate_episode(
    result: PipelineResult,
    provider: TextProvider,
    mode: str = "info",
) -> list[NarrationInstance]:
    """Progressively narrate every key event of an already-summarized run."""
    if not result.summaries:
        summarize_events(result, provider)
    narrator = Narrator(provider, result.episode.robot_config)
    for summary in result.summaries:
        narrator.narrate(summary, mode)
    result.narrations = list(narrator.history.instances)
    return result.narrations


def run(
    path: str,
    provider: TextProvider,
    mode: str = "info",
    config: PipelineConfig = PipelineConfig(),
) -> PipelineResult:
    episode = episode_log.load_episode(path)
    result = extract_events(episode, config)
    summarize_events(result, provider)
    narrate_episode(result, provider, mode)
    return result
