"""Multimodal key-event selection.

Per-frame heuristic values (flow magnitude and joint deltas) are z-scored
against per-task statistics, clamped at zero, and accumulated; an event
fires when the running sum exceeds the threshold or, with the TaskPlanning
modality enabled, whenever the planner state changes. Both triggers reset
the shared accumulator, whose window restarts at the last event's frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .episode_log import MotionDeltas, MultimodalFrame
from .errors import RonarError

AXES = ("pos", "rot", "cam", "arm")
MODALITIES = ("E", "I", "TP")

DEFAULT_THRESHOLD = 80.0
DEFAULT_CAPTURE_TOLERANCE = 1.5  # seconds
ONLINE_FREEZE_FRAMES = 100

TRIGGER_THRESHOLD = "threshold"
TRIGGER_PLANNER = "planner"


class TooFewFrames(RonarError):
    pass


class StatsMismatch(RonarError):
    pass


class InvalidModalitySet(RonarError):
    pass


def parse_modalities(spec: str) -> frozenset[str]:
    """Parse a comma-separated modality list like "E,I,TP"."""
    flags = frozenset(part.strip() for part in spec.split(",") if part.strip())
    return validate_modalities(flags)


def validate_modalities(flags) -> frozenset[str]:
    flags = frozenset(flags)
    if not flags:
        raise InvalidModalitySet("modality set must be non-empty")
    unknown = flags - set(MODALITIES)
    if unknown:
        raise InvalidModalitySet(f"unknown modalities {sorted(unknown)}")
    return flags


def format_modalities(flags) -> str:
    return ",".join(m for m in MODALITIES if m in flags)


@dataclass(frozen=True)
class Epsilons:
    """Per-axis activity thresholds for movement categorization."""

    pos: float = 0.005  # m
    rot: float = 0.01  # rad
    cam: float = 0.01  # rad
    arm: float = 0.005  # m

    def axis(self, name: str) -> float:
        return getattr(self, name)


def movement_category(deltas: MotionDeltas, epsilon: Epsilons = Epsilons()) -> str:
    """Dominant motion axis: largest epsilon-normalized delta above epsilon.

    Returns "none" when every axis is at or below its epsilon. Ties go to
    the first axis in (pos, rot, cam, arm) order.
    """
    best, best_ratio = "none", 0.0
    for axis in AXES:
        value = deltas.axis(axis)
        eps = epsilon.axis(axis)
        if value > eps:
            ratio = value / eps
            if ratio > best_ratio:
                best, best_ratio = axis, ratio
    return best


@dataclass(frozen=True)
class ParamStats:
    mean: float = 0.0
    std: float = 0.0
    count: int = 0

    @property
    def degenerate(self) -> bool:
        return self.count == 0 or self.std == 0.0

    def z_positive(self, value: float) -> float:
        """Clamped z-score; degenerate parameters contribute nothing."""
        if self.degenerate:
            return 0.0
        return max(0.0, (value - self.mean) / self.std)


def _population_stats(values: list[float]) -> ParamStats:
    n = len(values)
    if n == 0:
        return ParamStats()
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    std = math.sqrt(var)
    # Constant series pick up ~1e-16 float noise; snap those to exactly 0 so
    # they are flagged degenerate instead of z-scoring the rounding error.
    if std <= 1e-12 * max(1.0, abs(mean)):
        std = 0.0
    return ParamStats(mean=mean, std=std, count=n)


@dataclass(frozen=True)
class NormalizationStats:
    """Per-task mean/std for each joint axis and per-category flow."""

    joint: dict[str, ParamStats]
    flow: dict[str, ParamStats]  # keyed by movement category
    flow_pooled: ParamStats
    epsilons: Epsilons = Epsilons()
    n_frames: int = 0

    def degenerate_parameters(self) -> list[str]:
        out = [f"x^{a}" for a in AXES if self.joint[a].degenerate]
        out += [f"lambda^{a}" for a in AXES if self.flow[a].degenerate]
        return out


def compute_stats(frames, epsilons: Epsilons = Epsilons()) -> NormalizationStats:
    """Exact two-pass population statistics over a task's aligned frames.

    Accepts one frame sequence or several (multiple episodes of the same
    task are pooled).
    """
    groups = _as_groups(frames)
    pooled: list[MultimodalFrame] = [f for g in groups for f in g]
    if len(pooled) < 2:
        raise TooFewFrames(f"need at least 2 frames, got {len(pooled)}")

    joint = {a: _population_stats([f.deltas.axis(a) for f in pooled]) for a in AXES}
    flow_by_cat: dict[str, list[float]] = {a: [] for a in AXES}
    flow_all: list[float] = []
    for f in pooled:
        if f.flow_magnitude is None:
            continue
        flow_all.append(f.flow_magnitude)
        cat = movement_category(f.deltas, epsilons)
        if cat != "none":
            flow_by_cat[cat].append(f.flow_magnitude)
    flow = {a: _population_stats(flow_by_cat[a]) for a in AXES}
    return NormalizationStats(
        joint=joint,
        flow=flow,
        flow_pooled=_population_stats(flow_all),
        epsilons=epsilons,
        n_frames=len(pooled),
    )


def _as_groups(frames):
    seq = list(frames)
    if seq and isinstance(seq[0], MultimodalFrame):
        return [seq]
    return [list(g) for g in seq]


class RunningStats:
    """Welford accumulator; online stand-in for the two-pass statistics."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self._m2 = 0.0

    def update(self, value: float) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (value - self.mean)

    def snapshot(self) -> ParamStats:
        if self.count == 0:
            return ParamStats()
        return ParamStats(mean=self.mean, std=math.sqrt(self._m2 / self.count), count=self.count)


class OnlineNormalization:
    """Streaming statistics that freeze once enough frames were observed.

    Live sessions cannot compute task statistics post hoc, so the running
    estimates are frozen after ONLINE_FREEZE_FRAMES frames and reused for
    the rest of the run.
    """

    def __init__(self, epsilons: Epsilons = Epsilons(), freeze_after: int = ONLINE_FREEZE_FRAMES):
        self.epsilons = epsilons
        self.freeze_after = freeze_after
        self._joint = {a: RunningStats() for a in AXES}
        self._flow = {a: RunningStats() for a in AXES}
        self._flow_pooled = RunningStats()
        self._seen = 0
        self._frozen: NormalizationStats | None = None

    def observe(self, frame: MultimodalFrame) -> None:
        if self._frozen is not None:
            return
        self._seen += 1
        for a in AXES:
            self._joint[a].update(frame.deltas.axis(a))
        if frame.flow_magnitude is not None:
            self._flow_pooled.update(frame.flow_magnitude)
            cat = movement_category(frame.deltas, self.epsilons)
            if cat != "none":
                self._flow[cat].update(frame.flow_magnitude)
        if self._seen >= self.freeze_after:
            self._frozen = self.current()

    def current(self) -> NormalizationStats:
        if self._frozen is not None:
            return self._frozen
        return NormalizationStats(
            joint={a: self._joint[a].snapshot() for a in AXES},
            flow={a: self._flow[a].snapshot() for a in AXES},
            flow_pooled=self._flow_pooled.snapshot(),
            epsilons=self.epsilons,
            n_frames=self._seen,
        )


@dataclass
class KeyEvent:
    frame_index: int
    timestamp: float
    trigger: str  # TRIGGER_THRESHOLD or TRIGGER_PLANNER
    accumulated: float
    movement_category: str
    frame: MultimodalFrame
    sharpest: MultimodalFrame | None = None

    @property
    def sharpest_image(self) -> str | None:
        return self.sharpest.head_image if self.sharpest is not None else None

    def to_record(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "t": self.timestamp,
            "trigger": self.trigger,
            "accumulated": self.accumulated,
            "movement_category": self.movement_category,
            "planner_state": self.frame.planner_state,
            "image": self.sharpest_image,
        }


def frame_contribution(frame: MultimodalFrame, stats: NormalizationStats, modalities: frozenset[str]) -> float:
    """Summed positive z-scores of the frame's enabled heuristic parameters."""
    total = 0.0
    if "E" in modalities and frame.flow_magnitude is not None:
        if stats.flow_pooled.count == 0:
            raise StatsMismatch("frames carry flow magnitudes but stats saw none")
        cat = movement_category(frame.deltas, stats.epsilons)
        flow_stats = stats.flow_pooled if cat == "none" else stats.flow[cat]
        if flow_stats.count == 0:
            flow_stats = stats.flow_pooled
        total += flow_stats.z_positive(frame.flow_magnitude)
    if "I" in modalities:
        for a in AXES:
            total += stats.joint[a].z_positive(frame.deltas.axis(a))
    return total


def classify(
    frames,
    stats: NormalizationStats,
    threshold: float = DEFAULT_THRESHOLD,
    modalities: frozenset[str] = frozenset(MODALITIES),
) -> list[KeyEvent]:
    """Run the accumulate-and-reset key-event classifier over aligned frames.

    The accumulator window starts at the last key event's frame (that
    frame's contribution carries over into the next window). A planner
    transition dominates when both triggers coincide on one frame.
    """
    modalities = validate_modalities(modalities)
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    events: list[KeyEvent] = []
    acc = 0.0
    prev_state: str | None = None
    for frame in frames:
        acc += frame_contribution(frame, stats, modalities)
        fired = None
        if "TP" in modalities and prev_state is not None and frame.planner_state != prev_state:
            fired = TRIGGER_PLANNER
        elif acc > threshold and ("E" in modalities or "I" in modalities):
            fired = TRIGGER_THRESHOLD
        if fired is not None:
            events.append(
                KeyEvent(
                    frame_index=frame.index,
                    timestamp=frame.timestamp,
                    trigger=fired,
                    accumulated=acc,
                    movement_category=movement_category(frame.deltas, stats.epsilons),
                    frame=frame,
                )
            )
            # Eq. window restarts at the event frame: its contribution stays.
            acc = frame_contribution(frame, stats, modalities)
        prev_state = frame.planner_state
    return events


class OnlineClassifier:
    """Incremental classifier for live sessions; one frame at a time."""

    def __init__(
        self,
        threshold: float = DEFAULT_THRESHOLD,
        modalities: frozenset[str] = frozenset(MODALITIES),
        normalization: OnlineNormalization | None = None,
    ):
        self.threshold = threshold
        self.modalities = validate_modalities(modalities)
        self.normalization = normalization or OnlineNormalization()
        self._acc = 0.0
        self._prev_state: str | None = None

    def push(self, frame: MultimodalFrame) -> KeyEvent | None:
        self.normalization.observe(frame)
        stats = self.normalization.current()
        self._acc += frame_contribution(frame, stats, self.modalities)
        fired = None
        if "TP" in self.modalities and self._prev_state is not None and frame.planner_state != self._prev_state:
            fired = TRIGGER_PLANNER
        elif self._acc > self.threshold and ("E" in self.modalities or "I" in self.modalities):
            fired = TRIGGER_THRESHOLD
        self._prev_state = frame.planner_state
        if fired is None:
            return None
        event = KeyEvent(
            frame_index=frame.index,
            timestamp=frame.timestamp,
            trigger=fired,
            accumulated=self._acc,
            movement_category=movement_category(frame.deltas, stats.epsilons),
            frame=frame,
        )
        self._acc = frame_contribution(frame, stats, self.modalities)
        return event


def attach_sharpest(events: list[KeyEvent], frames, window: float = 1.0) -> list[KeyEvent]:
    """Pick each event's sharpest adjacent image (no-op without images)."""
    from . import vision

    for event in events:
        try:
            event.sharpest = vision.select_sharpest(frames, event.timestamp, window)
        except vision.NoImageInWindow:
            event.sharpest = None
    return events


def capture_rate(events: list[KeyEvent], failures: list[float], tolerance: float = DEFAULT_CAPTURE_TOLERANCE) -> float:
    """Fraction of failure timestamps with an event within +-tolerance.

    No failures means nothing was missed, so the rate is 1.0.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    if not failures:
        return 1.0
    times = [e.timestamp for e in events]
    hit = sum(1 for f in failures if any(abs(t - f) <= tolerance for t in times))
    return hit / len(failures)
