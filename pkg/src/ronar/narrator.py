"""Progressive narration over the narration history.

Every narration prompt carries the full text of all prior narrations, the
current experience summary, and a mode directive; that containment is the
mechanism behind non-repetitive, smooth output and is what the tests assert.
Also hosts trajectory/system summarization and the four failure-analysis
tasks (risk estimation, localization, explanation, recovery).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import prompts
from .episode_log import RobotConfig
from .errors import RonarError
from .provider import ProviderRequest, TextProvider
from .summarizer import ExperienceSummary, PromptRecord, _prompt_sha, deterministic_request_id

MODES = ("alert", "info", "debug")
EMPTY_ALERT = "[NO-ALERT]"
DEGRADED_TEXT = "[NARRATION-UNAVAILABLE]"

FAILURE_TASKS = ("pred", "loc", "exp", "rec")
DEFAULT_OVERVIEW_QUERY = "failures, recoveries and improvement recommendations"

_LOC_RE = re.compile(r"failure_time_s=([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)")


class OutOfOrderEvent(RonarError):
    pass


class EmptyHistory(RonarError):
    pass


class EmptyInput(RonarError):
    pass


class MalformedProviderAnswer(RonarError):
    pass


class EmptyEvidence(RonarError):
    pass


@dataclass
class NarrationInstance:
    index: int
    event_index: int
    mode: str
    text: str
    created_at: float  # episode time of the key event, keeps runs reproducible
    prompt_provenance: PromptRecord | None = None
    degraded: bool = False

    def to_record(self) -> dict:
        return {
            "index": self.index,
            "event_index": self.event_index,
            "mode": self.mode,
            "text": self.text,
            "created_at": self.created_at,
            "provenance": self.prompt_provenance.to_dict() if self.prompt_provenance else None,
            "degraded": self.degraded,
        }


@dataclass
class NarrationHistory:
    instances: list[NarrationInstance] = field(default_factory=list)

    def append(self, instance: NarrationInstance) -> None:
        if instance.index != len(self.instances):
            raise OutOfOrderEvent(f"expected index {len(self.instances)}, got {instance.index}")
        self.instances.append(instance)

    def __len__(self) -> int:
        return len(self.instances)

    def last_event_index(self) -> int | None:
        return self.instances[-1].event_index if self.instances else None

    def texts(self) -> list[str]:
        return [i.text for i in self.instances]


def _items(texts: list[str]) -> str:
    if not texts:
        return "(none)"
    return "\n".join(f"[{i}] {t}" for i, t in enumerate(texts))


def _config_text(config: RobotConfig) -> str:
    return "\n".join(
        f"- {p.name} ({p.part_type}): {p.description}; limit {p.limit[0]:g}..{p.limit[1]:g}"
        for p in config.parts
    )


def build_narration_prompt(
    history: NarrationHistory,
    summary: ExperienceSummary,
    mode: str,
    config: RobotConfig,
) -> tuple[str, str]:
    """System and user prompt for one narration call.

    The history and summary sections are mode-independent; only the
    directive section varies with the mode.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    system = prompts.render("narrator_system", robot_config=_config_text(config))
    user = prompts.render(
        "narration_user",
        history=_items(history.texts()),
        summary=summary.text(),
        mode=mode,
        directive=prompts.render(f"directive_{mode}").rstrip("\n"),
    )
    return system, user


class Narrator:
    """Owns one episode's narration stream; strictly sequential per episode.

    history_window, when set, caps how many prior narrations enter the
    prompt verbatim: older ones are replaced by a trajectory summary that is
    pinned the first time truncation kicks in. Default is the full history.
    """

    def __init__(self, provider: TextProvider, config: RobotConfig, history_window: int | None = None):
        self.provider = provider
        self.config = config
        self.history = NarrationHistory()
        self.history_window = history_window
        self._pinned_summary: str | None = None

    def _prompt_history(self) -> NarrationHistory:
        window = self.history_window
        if window is None or len(self.history) <= window:
            return self.history
        if self._pinned_summary is None:
            self._pinned_summary = trajectory_summary(self.history, self.provider)
        tail = self.history.instances[-window:]
        prefix = NarrationInstance(
            index=tail[0].index,  # placeholder slot; text carries the summary
            event_index=tail[0].event_index,
            mode=tail[0].mode,
            text=f"(earlier narrations summarized) {self._pinned_summary}",
            created_at=tail[0].created_at,
        )
        view = NarrationHistory()
        view.instances = [prefix] + list(tail)
        return view

    def narrate(self, summary: ExperienceSummary, mode: str) -> NarrationInstance:
        """Generate the next narration and append it to the history."""
        last = self.history.last_event_index()
        if last is not None and summary.event_index <= last:
            raise OutOfOrderEvent(
                f"event {summary.event_index} not after last narrated event {last}"
            )
        system, user = build_narration_prompt(self._prompt_history(), summary, mode, self.config)
        sha = _prompt_sha(system, user)
        request = ProviderRequest(
            system_prompt=system,
            user_prompt=user,
            request_id=deterministic_request_id(f"narrate-{mode}", summary.event_index, sha),
        )
        record = PromptRecord(
            purpose="narration",
            template="narration_user",
            template_sha=prompts.template_sha("narration_user"),
            request_id=request.request_id,
            prompt_sha=sha,
            provider=self.provider.name,
        )
        degraded = False
        try:
            text = self.provider.complete(request).text
        except RonarError:
            text = DEGRADED_TEXT
            degraded = True
        instance = NarrationInstance(
            index=len(self.history),
            event_index=summary.event_index,
            mode=mode,
            text=text,
            created_at=summary.timestamp,
            prompt_provenance=record,
            degraded=degraded,
        )
        self.history.append(instance)
        return instance

    def trajectory_summary(self) -> str:
        return trajectory_summary(self.history, self.provider)

    def analyze_failure(self, task, summaries, **kwargs):
        return analyze_failure(task, summaries, self.history, self.provider, **kwargs)


def trajectory_summary(history: NarrationHistory, provider: TextProvider) -> str:
    """Episode-level summary over the full narration history."""
    if len(history) == 0:
        raise EmptyHistory("cannot summarize an empty narration history")
    user = prompts.render("trajectory_summary", history=_items(history.texts()))
    request = ProviderRequest(
        system_prompt="",
        user_prompt=user,
        request_id=deterministic_request_id("trajectory", len(history), _prompt_sha("", user)),
    )
    return provider.complete(request).text


def system_overview(
    trajectory_summaries: list[str],
    query: str,
    provider: TextProvider,
) -> str:
    """Collection-level summary over many trajectory summaries."""
    if not trajectory_summaries:
        raise EmptyInput("need at least one trajectory summary")
    if not query:
        query = DEFAULT_OVERVIEW_QUERY
    user = prompts.render("system_overview", history=_items(trajectory_summaries), query=query)
    request = ProviderRequest(
        system_prompt="",
        user_prompt=user,
        request_id=deterministic_request_id("overview", len(trajectory_summaries), _prompt_sha("", user)),
    )
    return provider.complete(request).text


def parse_loc_timestamp(text: str) -> float:
    match = _LOC_RE.search(text)
    if match is None:
        raise MalformedProviderAnswer("no failure_time_s=<seconds> token in the answer")
    return float(match.group(1))


@dataclass
class FailureAnalysis:
    task: str
    answer: str
    cited_events: list[int]
    confidence: str
    timestamp: float | None = None

    def to_record(self) -> dict:
        return {
            "task": self.task,
            "answer": self.answer,
            "cited_events": self.cited_events,
            "confidence": self.confidence,
            "timestamp": self.timestamp,
        }


def _event_items(summaries: list[ExperienceSummary]) -> str:
    if not summaries:
        return "(none)"
    blocks = []
    for i, s in enumerate(summaries):
        body = s.text().replace("\n", "\n    ")
        blocks.append(f"[{i}] t={s.timestamp:.2f}\n    {body}")
    return "\n".join(blocks)


def window_summaries(
    task: str,
    summaries: list[ExperienceSummary],
    query_t: float | None,
) -> list[ExperienceSummary]:
    """Evidence window per failure-analysis task.

    Pred sees only events strictly before the query point; Exp/Rec see
    events up to and including the failure event; Loc sees everything.
    """
    if task == "loc":
        return list(summaries)
    if query_t is None:
        raise ValueError(f"task {task!r} needs a query timestamp")
    if task == "pred":
        return [s for s in summaries if s.timestamp < query_t]
    return [s for s in summaries if s.timestamp <= query_t]


def analyze_failure(
    task: str,
    summaries: list[ExperienceSummary],
    history: NarrationHistory,
    provider: TextProvider,
    query_t: float | None = None,
    episode_range: tuple[float, float] | None = None,
) -> FailureAnalysis:
    task = task.lower()
    if task not in FAILURE_TASKS:
        raise ValueError(f"unknown failure-analysis task {task!r}")
    window = window_summaries(task, summaries, query_t)
    if not window:
        raise EmptyEvidence(f"no events in the {task} evidence window")

    user = prompts.render(f"failure_{task}", events=_event_items(window))
    sha = _prompt_sha("", user)
    request = ProviderRequest(
        system_prompt="",
        user_prompt=user,
        request_id=deterministic_request_id(f"failure-{task}", len(window), sha),
    )
    answer = provider.complete(request).text

    timestamp = None
    if task == "loc":
        timestamp = parse_loc_timestamp(answer)
        if episode_range is not None and not (episode_range[0] <= timestamp <= episode_range[1]):
            raise MalformedProviderAnswer(
                f"timestamp {timestamp} outside episode range {episode_range}"
            )
    return FailureAnalysis(
        task=task,
        answer=answer,
        cited_events=[s.event_index for s in window],
        confidence=f"evidence: {len(window)} events via {provider.name}",
        timestamp=timestamp,
    )
