import math

import numpy as np
import pytest

from ronar.episode_log import MotionDeltas, MultimodalFrame
from ronar.key_event import (
    AXES,
    Epsilons,
    InvalidModalitySet,
    KeyEvent,
    OnlineClassifier,
    OnlineNormalization,
    StatsMismatch,
    TooFewFrames,
    capture_rate,
    classify,
    compute_stats,
    frame_contribution,
    movement_category,
    parse_modalities,
)

ALL = frozenset({"E", "I", "TP"})


def make_frame(index, deltas=None, flow=None, state="s0"):
    return MultimodalFrame(
        index=index,
        timestamp=index * 0.2,
        deltas=deltas or MotionDeltas(),
        flow_magnitude=flow,
        planner_state=state,
    )


def random_frames(rng, n, states=("a",), flow=True):
    frames = []
    for i in range(n):
        deltas = MotionDeltas(
            d_pos=float(abs(rng.normal(0.02, 0.02))),
            d_rot=float(abs(rng.normal(0.01, 0.01))),
            d_cam=float(abs(rng.normal(0.02, 0.03))),
            d_arm=float(abs(rng.normal(0.005, 0.01))),
        )
        frames.append(
            make_frame(
                i,
                deltas=deltas,
                flow=float(abs(rng.normal(1.0, 0.8))) if flow else None,
                state=states[min(len(states) - 1, i * len(states) // n)],
            )
        )
    return frames


# -- independent Eq.-style oracle: fresh z-scoring + window re-summation -----


def oracle_contribution(frame, stats, modalities):
    total = 0.0
    if "E" in modalities and frame.flow_magnitude is not None:
        cat = oracle_category(frame.deltas, stats.epsilons)
        fs = stats.flow_pooled if cat == "none" else stats.flow[cat]
        if fs.count == 0:
            fs = stats.flow_pooled
        if fs.count > 0 and fs.std > 0:
            z = (frame.flow_magnitude - fs.mean) / fs.std
            if z > 0:
                total += z
    if "I" in modalities:
        for axis in AXES:
            ps = stats.joint[axis]
            if ps.count > 0 and ps.std > 0:
                z = (frame.deltas.axis(axis) - ps.mean) / ps.std
                if z > 0:
                    total += z
    return total


def oracle_category(deltas, eps):
    candidates = []
    for axis in AXES:
        v, e = deltas.axis(axis), eps.axis(axis)
        if v > e:
            candidates.append((v / e, axis))
    if not candidates:
        return "none"
    best = max(candidates, key=lambda c: c[0])
    # first axis in order wins ties
    for axis in AXES:
        for ratio, cand in candidates:
            if cand == axis and ratio == best[0]:
                return axis
    return best[1]


def oracle_classify(frames, stats, threshold, modalities):
    """Literal re-summation over the window starting at the last key event."""
    events = []
    c = 0
    prev_state = None
    for i, frame in enumerate(frames):
        fired = None
        acc = 0.0
        for k in range(c, i + 1):
            acc += oracle_contribution(frames[k], stats, modalities)
        if "TP" in modalities and prev_state is not None and frame.planner_state != prev_state:
            fired = "planner"
        elif acc > threshold and ("E" in modalities or "I" in modalities):
            fired = "threshold"
        if fired:
            events.append((i, fired, acc))
            c = i
        prev_state = frame.planner_state
    return events


class TestMovementCategory:
    def test_all_zero_is_none(self):
        assert movement_category(MotionDeltas()) == "none"

    def test_single_active_axis(self):
        assert movement_category(MotionDeltas(d_pos=0.1), Epsilons(pos=0.01)) == "pos"

    def test_matches_rule_oracle_on_random_tuples(self):
        rng = np.random.default_rng(42)
        eps = Epsilons()
        for _ in range(1000):
            deltas = MotionDeltas(*(float(abs(rng.normal(0.0, 0.02))) for _ in range(4)))
            assert movement_category(deltas, eps) == oracle_category(deltas, eps)


class TestComputeStats:
    def test_constant_series_degenerate(self):
        frames = [make_frame(i, MotionDeltas(d_pos=0.5)) for i in range(5)]
        stats = compute_stats(frames)
        assert stats.joint["pos"].mean == 0.5
        assert stats.joint["pos"].std == 0.0
        assert stats.joint["pos"].degenerate
        assert "x^pos" in stats.degenerate_parameters()

    def test_two_point_series(self):
        frames = [make_frame(0, MotionDeltas(d_pos=0.0)), make_frame(1, MotionDeltas(d_pos=2.0))]
        stats = compute_stats(frames)
        assert stats.joint["pos"].mean == 1.0
        assert stats.joint["pos"].std == 1.0

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(0)
        groups = [random_frames(rng, 40), random_frames(rng, 25)]
        stats = compute_stats(groups)
        pooled = groups[0] + groups[1]
        for axis in AXES:
            values = np.array([f.deltas.axis(axis) for f in pooled])
            assert stats.joint[axis].mean == pytest.approx(values.mean(), abs=1e-9)
            assert stats.joint[axis].std == pytest.approx(values.std(), abs=1e-9)
        flows = np.array([f.flow_magnitude for f in pooled])
        assert stats.flow_pooled.mean == pytest.approx(flows.mean(), abs=1e-9)
        assert stats.flow_pooled.std == pytest.approx(flows.std(), abs=1e-9)

    def test_too_few_frames(self):
        with pytest.raises(TooFewFrames):
            compute_stats([make_frame(0)])


class TestClassify:
    def test_threshold_zero_fires_every_positive_frame(self):
        rng = np.random.default_rng(1)
        frames = random_frames(rng, 60)
        stats = compute_stats(frames)
        modalities = frozenset({"I"})
        events = classify(frames, stats, 0.0, modalities)
        fired = {e.frame_index for e in events}
        contribs = {f.index: frame_contribution(f, stats, modalities) for f in frames}
        for frame in frames:
            if contribs[frame.index] > 0:
                assert frame.index in fired
        # A zero-contribution frame can still fire: the accumulation window
        # starts at the previous key event's frame, whose value carries over.
        for event in events:
            if contribs[event.frame_index] == 0:
                prior = [e for e in events if e.frame_index < event.frame_index]
                assert prior and contribs[prior[-1].frame_index] > 0

    def test_tp_only_events_are_exactly_transitions(self):
        rng = np.random.default_rng(2)
        frames = random_frames(rng, 60, states=("a", "b", "c"))
        stats = compute_stats(frames)
        transitions = {f.index for prev, f in zip(frames, frames[1:]) if f.planner_state != prev.planner_state}
        for threshold in (0.0, 5.0, 80.0):
            events = classify(frames, stats, threshold, frozenset({"TP"}))
            assert {e.frame_index for e in events} == transitions
            assert all(e.trigger == "planner" for e in events)

    def test_matches_recurrence_oracle_hand_sequence(self):
        # 20-frame sequence with hand-chosen deltas driving the z-scores.
        values = [0.0, 0.1, 0.3, 0.0, 0.5, 0.2, 0.0, 0.0, 0.9, 0.1,
                  0.0, 0.4, 0.4, 0.1, 0.0, 0.7, 0.0, 0.2, 0.6, 0.0]
        frames = [make_frame(i, MotionDeltas(d_pos=v)) for i, v in enumerate(values)]
        stats = compute_stats(frames)
        events = classify(frames, stats, 1.5, frozenset({"I"}))
        expected = oracle_classify(frames, stats, 1.5, frozenset({"I"}))
        assert [(e.frame_index, e.trigger) for e in events] == [(i, t) for i, t, _ in expected]
        assert [e.accumulated for e in events] == [a for _, _, a in expected]

    def test_planner_transition_dominates_threshold(self):
        frames = [
            make_frame(0, MotionDeltas(d_pos=0.0), state="a"),
            make_frame(1, MotionDeltas(d_pos=5.0), state="b"),
            make_frame(2, MotionDeltas(d_pos=0.1), state="b"),
        ]
        stats = compute_stats(frames)
        events = classify(frames, stats, 0.0, ALL)
        assert events[0].frame_index == 1 and events[0].trigger == "planner"

    def test_thresholdfire_count_monotone_in_threshold(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            frames = random_frames(rng, 80, states=("a", "b"))
            stats = compute_stats(frames)
            for modalities in (frozenset({"E"}), frozenset({"I"}), ALL):
                counts = []
                for threshold in (0, 5, 10, 20, 40, 80, 160):
                    events = classify(frames, stats, threshold, modalities)
                    counts.append(sum(1 for e in events if e.trigger == "threshold"))
                assert all(b <= a for a, b in zip(counts, counts[1:]))

    def test_degenerate_parameters_contribute_zero(self):
        frames = [make_frame(i, MotionDeltas(d_pos=0.3)) for i in range(10)]
        stats = compute_stats(frames)  # std 0 everywhere
        assert classify(frames, stats, 0.0, frozenset({"I"})) == []

    def test_accumulated_positive_when_threshold_fired(self):
        rng = np.random.default_rng(4)
        frames = random_frames(rng, 100)
        stats = compute_stats(frames)
        for event in classify(frames, stats, 10.0, ALL):
            if event.trigger == "threshold":
                assert event.accumulated > 10.0

    def test_stats_mismatch(self):
        frames_no_flow = [make_frame(i, MotionDeltas(d_pos=0.1 * i)) for i in range(10)]
        stats = compute_stats(frames_no_flow)
        frames_flow = [make_frame(i, MotionDeltas(d_pos=0.1 * i), flow=1.0) for i in range(10)]
        with pytest.raises(StatsMismatch):
            classify(frames_flow, stats, 10.0, frozenset({"E"}))

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        frames = random_frames(rng, 60)
        stats = compute_stats(frames)
        a = classify(frames, stats, 12.0, ALL)
        b = classify(frames, stats, 12.0, ALL)
        assert [(e.frame_index, e.trigger, e.accumulated) for e in a] == [
            (e.frame_index, e.trigger, e.accumulated) for e in b
        ]

    def test_matches_oracle_on_random_sequences(self):
        rng = np.random.default_rng(6)
        for trial in range(50):
            frames = random_frames(rng, 50, states=("a", "b"))
            stats = compute_stats(frames)
            threshold = float(rng.choice([0.5, 1, 2, 5, 10]))
            modalities = [frozenset({"E"}), frozenset({"I"}), ALL][trial % 3]
            got = classify(frames, stats, threshold, modalities)
            expected = oracle_classify(frames, stats, threshold, modalities)
            assert [(e.frame_index, e.trigger) for e in got] == [(i, t) for i, t, _ in expected]


class TestOnline:
    def test_welford_matches_two_pass(self):
        rng = np.random.default_rng(7)
        frames = random_frames(rng, 90)
        online = OnlineNormalization(freeze_after=10_000)
        for frame in frames:
            online.observe(frame)
        exact = compute_stats(frames)
        current = online.current()
        for axis in AXES:
            assert current.joint[axis].mean == pytest.approx(exact.joint[axis].mean, abs=1e-9)
            assert current.joint[axis].std == pytest.approx(exact.joint[axis].std, abs=1e-9)

    def test_freezes_after_n_frames(self):
        rng = np.random.default_rng(8)
        frames = random_frames(rng, 150)
        online = OnlineNormalization(freeze_after=100)
        for frame in frames:
            online.observe(frame)
        frozen = online.current()
        assert frozen.n_frames == 100

    def test_online_classifier_emits_events(self):
        rng = np.random.default_rng(9)
        frames = random_frames(rng, 200, states=("a", "b"))
        clf = OnlineClassifier(threshold=5.0, modalities=ALL)
        events = [e for f in frames if (e := clf.push(f)) is not None]
        assert events
        assert any(e.trigger == "planner" for e in events)


class TestCaptureRate:
    def event_at(self, t):
        return KeyEvent(
            frame_index=0, timestamp=t, trigger="threshold", accumulated=1.0,
            movement_category="none", frame=make_frame(0),
        )

    def test_no_failures_vacuous(self):
        assert capture_rate([self.event_at(1.0)], [], 1.5) == 1.0
        assert capture_rate([], [], 1.5) == 1.0

    def test_boundary_arithmetic(self):
        assert capture_rate([self.event_at(11.4)], [10.0], 1.5) == 1.0
        assert capture_rate([self.event_at(11.6)], [10.0], 1.5) == 0.0

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(1000):
            events = [self.event_at(float(t)) for t in rng.uniform(0, 60, size=rng.integers(0, 12))]
            failures = [float(t) for t in rng.uniform(0, 60, size=rng.integers(1, 6))]
            tolerance = float(rng.uniform(0.1, 3.0))
            expected = np.mean(
                [1.0 if any(abs(e.timestamp - f) <= tolerance for e in events) else 0.0 for f in failures]
            )
            assert capture_rate(events, failures, tolerance) == pytest.approx(float(expected), abs=1e-12)


class TestModalities:
    def test_parse(self):
        assert parse_modalities("E,I,TP") == ALL
        assert parse_modalities("TP") == frozenset({"TP"})

    def test_rejects_empty_and_unknown(self):
        with pytest.raises(InvalidModalitySet):
            parse_modalities("")
        with pytest.raises(InvalidModalitySet):
            parse_modalities("E,X")
