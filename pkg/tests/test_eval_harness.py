import csv
import os

import pytest

from ronar import episode_log, eval_harness, key_event
from ronar.eval_harness import DEFAULT_MODALITY_SETS, DEFAULT_THRESHOLDS, format_table, render_figures, sweep, write_csv

E = frozenset({"E"})
I = frozenset({"I"})
TP = frozenset({"TP"})
ALL = frozenset({"E", "I", "TP"})


@pytest.fixture(scope="module")
def result(suite_episodes):
    return sweep(suite_episodes)


class TestSweep:
    def test_tp_row_constant_across_thresholds(self, result):
        cells = result.row(TP)
        assert len({c.avg_frames for c in cells}) == 1
        assert len({c.capture_rate for c in cells}) == 1

    def test_threshold_zero_capture_is_one_with_e_or_i(self, result):
        for modalities in DEFAULT_MODALITY_SETS:
            if modalities & {"E", "I"}:
                assert result.cell(modalities, 0.0).capture_rate == 1.0

    def test_frame_counts_non_increasing_per_row(self, result):
        for modalities in DEFAULT_MODALITY_SETS:
            frames = [c.avg_frames for c in result.row(modalities)]
            assert all(b <= a + 1e-12 for a, b in zip(frames, frames[1:]))

    def test_adding_tp_never_decreases_capture(self, result):
        for base in (E, I, frozenset({"E", "I"})):
            with_tp = frozenset(base | {"TP"})
            for threshold in DEFAULT_THRESHOLDS:
                assert (
                    result.cell(with_tp, threshold).capture_rate
                    >= result.cell(base, threshold).capture_rate - 1e-12
                )

    def test_full_set_beats_tp_only(self, result):
        for threshold in DEFAULT_THRESHOLDS:
            assert result.cell(ALL, threshold).capture_rate >= result.cell(TP, threshold).capture_rate

    def test_cells_match_per_episode_recompute_oracle(self, result, suite_episodes):
        # Recompute one cell per modality set straight from classify.
        by_task = {}
        for ep in suite_episodes:
            by_task.setdefault(ep.task_name, []).append(ep)
        stats_by_task = {
            task: key_event.compute_stats([episode_log.align(ep) for ep in eps])
            for task, eps in by_task.items()
        }
        for modalities in (E, TP, ALL):
            threshold = 40.0
            counts, rates = [], []
            for ep in suite_episodes:
                frames = episode_log.align(ep)
                events = key_event.classify(frames, stats_by_task[ep.task_name], threshold, modalities)
                counts.append(len(events))
                rates.append(key_event.capture_rate(events, [f.t for f in ep.failure_labels], 1.5))
            cell = result.cell(modalities, threshold)
            assert cell.avg_frames == pytest.approx(sum(counts) / len(counts), abs=1e-12)
            assert cell.capture_rate == pytest.approx(sum(rates) / len(rates), abs=1e-12)
            assert cell.n_episodes == 12

    def test_thresholds_sorted_and_deterministic(self, suite_episodes):
        a = sweep(suite_episodes, thresholds=(80, 0, 40), modality_sets=(TP, I))
        assert a.thresholds == (0.0, 40.0, 80.0)
        b = sweep(suite_episodes, thresholds=(80, 0, 40), modality_sets=(TP, I))
        assert {k: (c.avg_frames, c.capture_rate) for k, c in a.cells.items()} == {
            k: (c.avg_frames, c.capture_rate) for k, c in b.cells.items()
        }


class TestReports:
    def test_csv_columns(self, result, tmp_path):
        path = tmp_path / "sweep.csv"
        write_csv(result, str(path))
        rows = list(csv.DictReader(open(path)))
        assert set(rows[0]) == {"modalities", "threshold", "avg_frames", "capture_rate", "n_episodes"}
        assert len(rows) == len(DEFAULT_MODALITY_SETS) * len(DEFAULT_THRESHOLDS)

    def test_table_mentions_all_rows(self, result):
        table = format_table(result)
        for label in ("E,I,TP", "TP", "capture rate", "average frame count"):
            assert label in table

    def test_figures_rendered(self, result, tmp_path):
        paths = render_figures(result, str(tmp_path / "sweep"))
        assert len(paths) == 2
        assert all(os.path.getsize(p) > 1000 for p in paths)
