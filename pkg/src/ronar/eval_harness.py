"""Threshold x modality sweep over episode sets.

Normalization statistics are pooled per task; every (modality set,
threshold) cell classifies each episode and reports the average event count
and the mean per-episode failure capture rate. Reports are a CSV, a text
table, and matplotlib figures rendered next to the CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from . import episode_log, key_event, vision
from .episode_log import EpisodeLog
from .key_event import format_modalities

DEFAULT_THRESHOLDS = (0.0, 5.0, 10.0, 20.0, 40.0, 80.0, 160.0)
DEFAULT_MODALITY_SETS = (
    frozenset({"E"}),
    frozenset({"I"}),
    frozenset({"TP"}),
    frozenset({"E", "I"}),
    frozenset({"E", "TP"}),
    frozenset({"I", "TP"}),
    frozenset({"E", "I", "TP"}),
)


@dataclass(frozen=True)
class SweepCell:
    modalities: frozenset[str]
    threshold: float
    avg_frames: float
    capture_rate: float
    n_episodes: int
    per_episode: tuple[tuple[str, int, float], ...]  # (episode_id, events, capture)

    @property
    def modalities_label(self) -> str:
        return format_modalities(self.modalities)


@dataclass
class SweepResult:
    thresholds: tuple[float, ...]
    modality_sets: tuple[frozenset[str], ...]
    tolerance: float
    cells: dict[tuple[frozenset[str], float], SweepCell] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    def cell(self, modalities: frozenset[str], threshold: float) -> SweepCell:
        return self.cells[(frozenset(modalities), threshold)]

    def row(self, modalities: frozenset[str]) -> list[SweepCell]:
        return [self.cells[(frozenset(modalities), t)] for t in self.thresholds]


def sweep(
    episodes: list[EpisodeLog],
    thresholds=DEFAULT_THRESHOLDS,
    modality_sets=DEFAULT_MODALITY_SETS,
    tolerance: float = key_event.DEFAULT_CAPTURE_TOLERANCE,
    interval: float = episode_log.DEFAULT_INTERVAL,
    compute_flow_from_images: bool = False,
) -> SweepResult:
    """Run every (modality set, threshold) cell over the episode set.

    Statistics are computed once per task from all of that task's episodes;
    cells then reuse the aligned frames, so a failing cell cannot poison the
    others (its error is recorded and the sweep continues).
    """
    thresholds = tuple(sorted(float(t) for t in thresholds))
    modality_sets = tuple(frozenset(m) for m in modality_sets)
    result = SweepResult(thresholds=thresholds, modality_sets=modality_sets, tolerance=tolerance)

    by_task: dict[str, list[EpisodeLog]] = {}
    for ep in episodes:
        by_task.setdefault(ep.task_name, []).append(ep)

    prepared = []  # (episode, frames, stats)
    for task, eps in sorted(by_task.items()):
        frame_sets = []
        for ep in eps:
            frames = episode_log.align(ep, interval)
            if compute_flow_from_images:
                vision.compute_flow_magnitudes(frames)
            frame_sets.append(frames)
        stats = key_event.compute_stats(frame_sets)
        for ep, frames in zip(eps, frame_sets):
            prepared.append((ep, frames, stats))

    for modalities in modality_sets:
        for threshold in thresholds:
            rows = []
            for ep, frames, stats in prepared:
                try:
                    events = key_event.classify(frames, stats, threshold, modalities)
                    rate = key_event.capture_rate(
                        events, [f.t for f in ep.failure_labels], tolerance
                    )
                    rows.append((ep.episode_id, len(events), rate))
                except Exception as exc:  # keep sweeping the other cells
                    result.errors.append(
                        f"{format_modalities(modalities)}@{threshold:g}/{ep.episode_id}: {exc}"
                    )
            n = len(rows)
            result.cells[(modalities, threshold)] = SweepCell(
                modalities=modalities,
                threshold=threshold,
                avg_frames=sum(r[1] for r in rows) / n if n else 0.0,
                capture_rate=sum(r[2] for r in rows) / n if n else 0.0,
                n_episodes=n,
                per_episode=tuple(rows),
            )
    return result


def write_csv(result: SweepResult, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["modalities", "threshold", "avg_frames", "capture_rate", "n_episodes"])
        for modalities in result.modality_sets:
            for cell in result.row(modalities):
                writer.writerow(
                    [
                        cell.modalities_label,
                        f"{cell.threshold:g}",
                        f"{cell.avg_frames:.2f}",
                        f"{cell.capture_rate:.2f}",
                        cell.n_episodes,
                    ]
                )


def format_table(result: SweepResult) -> str:
    """Fixed-width table: frame counts block, then capture rates."""
    head = "thresh".rjust(10) + "".join(f"{t:>10g}" for t in result.thresholds)
    lines = ["average frame count", head]
    for modalities in result.modality_sets:
        label = format_modalities(modalities).rjust(10)
        lines.append(label + "".join(f"{c.avg_frames:>10.2f}" for c in result.row(modalities)))
    lines += ["", "capture rate", head]
    for modalities in result.modality_sets:
        label = format_modalities(modalities).rjust(10)
        lines.append(label + "".join(f"{c.capture_rate:>10.2f}" for c in result.row(modalities)))
    return "\n".join(lines)


def render_figures(result: SweepResult, out_prefix: str) -> list[str]:
    """Frame-count and capture-rate curves as PNGs next to the CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    specs = [
        ("avg_frames", "average key events per episode", f"{out_prefix}_frames.png", "log"),
        ("capture_rate", "failure capture rate", f"{out_prefix}_capture.png", "linear"),
    ]
    for attr, ylabel, path, yscale in specs:
        fig, ax = plt.subplots(figsize=(7.0, 4.2))
        for modalities in result.modality_sets:
            cells = result.row(modalities)
            ax.plot(
                result.thresholds,
                [getattr(c, attr) for c in cells],
                marker="o",
                label=format_modalities(modalities),
            )
        ax.set_xlabel("threshold")
        ax.set_ylabel(ylabel)
        if yscale == "log":
            ax.set_yscale("symlog")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths
