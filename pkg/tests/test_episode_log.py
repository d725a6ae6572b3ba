import json
import math

import pytest

from ronar import episode_log
from ronar.episode_log import (
    EmptyEpisode,
    MalformedRecord,
    MissingRequiredStream,
    NonMonotonicTimestamps,
    align,
    load_episode,
    wrap_angle,
)

MINIMAL_CONFIG = {
    "parts": [
        {"name": "arm_extension", "description": "arm", "limit": [0.0, 0.52], "part_type": "prismatic"},
        {"name": "head_pan", "description": "pan", "limit": [-3.9, 1.5], "part_type": "camera"},
    ]
}


def write_episode(path, records, episode_id="ep1", task_name="put_cup", config=None):
    meta = {
        "kind": "meta",
        "episode_id": episode_id,
        "task_name": task_name,
        "robot_config": config or MINIMAL_CONFIG,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(meta) + "\n")
        for record in records:
            fh.write(json.dumps(record) + "\n")
    return str(path)


def sample(stream, t, value, category="Internal"):
    return {"kind": "sample", "stream": stream, "category": category, "t": t, "value": value}


def planner(t, a, b, outcome="success"):
    return {"kind": "planner", "t": t, "from_state": a, "to_state": b, "outcome": outcome}


def test_minimal_episode_loads(tmp_path):
    path = write_episode(
        tmp_path / "ep.jsonl",
        [
            sample("joint/arm_extension", 0.0, [0.1]),
            sample("joint/arm_extension", 1.0, [0.2]),
            planner(0.0, "start", "navigate-to-table", "entered"),
        ],
    )
    episode = load_episode(path)
    assert len(episode.streams) == 1
    assert len(episode.planner_events) == 1
    assert episode.t_start == 0.0 and episode.t_end == 1.0


def test_non_monotonic_timestamps_rejected(tmp_path):
    path = write_episode(
        tmp_path / "ep.jsonl",
        [sample("joint/arm_extension", 1.0, [0.1]), sample("joint/arm_extension", 0.5, [0.2])],
    )
    with pytest.raises(NonMonotonicTimestamps) as err:
        load_episode(path)
    assert "joint/arm_extension" in str(err.value)


def test_missing_meta_rejected(tmp_path):
    path = tmp_path / "ep.jsonl"
    path.write_text(json.dumps(sample("joint/arm_extension", 0.0, [0.1])) + "\n")
    with pytest.raises(MalformedRecord):
        load_episode(str(path))


def test_missing_internal_stream_rejected(tmp_path):
    path = write_episode(
        tmp_path / "ep.jsonl",
        [sample("flow_magnitude", 0.0, [0.5], category="Environment"),
         sample("flow_magnitude", 0.5, [0.6], category="Environment")],
    )
    with pytest.raises(MissingRequiredStream) as err:
        load_episode(path)
    assert err.value.category == "Internal"


def test_bad_records_carry_line_numbers(tmp_path):
    path = write_episode(tmp_path / "ep.jsonl", [{"kind": "sample", "stream": "x"}])
    with pytest.raises(MalformedRecord) as err:
        load_episode(path)
    assert err.value.line_no == 2


def test_empty_planner_state_rejected(tmp_path):
    path = write_episode(
        tmp_path / "ep.jsonl",
        [sample("joint/arm_extension", 0.0, [0.1]), planner(0.0, "", "navigate")],
    )
    with pytest.raises(MalformedRecord):
        load_episode(path)


def test_packaged_sample_matches_manifest(packaged_sample_path, packaged_manifest):
    episode = load_episode(packaged_sample_path)
    for stream, count in packaged_manifest["streams"].items():
        assert len(episode.streams[stream].samples) == count
    assert len(episode.planner_events) == packaged_manifest["kinds"]["planner"]
    assert len(episode.detections) == packaged_manifest["kinds"]["detection"]
    assert len(episode.failure_labels) == packaged_manifest["kinds"]["failure_label"]

    # Independent line-count oracle straight over the JSONL text.
    counted: dict[str, int] = {}
    kinds: dict[str, int] = {}
    with open(packaged_sample_path) as fh:
        for line in fh:
            record = json.loads(line)
            kinds[record["kind"]] = kinds.get(record["kind"], 0) + 1
            if record["kind"] == "sample":
                counted[record["stream"]] = counted.get(record["stream"], 0) + 1
    assert counted == packaged_manifest["streams"]
    assert kinds == packaged_manifest["kinds"]


def test_align_identity_when_sampled_at_interval(tmp_path):
    records = [sample("joint/arm_extension", round(i * 0.2, 6), [0.1 + i * 0.01]) for i in range(11)]
    episode = load_episode(write_episode(tmp_path / "ep.jsonl", records))
    frames = align(episode, 0.2)
    assert len(frames) == 11
    for i, frame in enumerate(frames):
        assert frame.joint_values["arm_extension"] == pytest.approx(0.1 + i * 0.01, abs=0)


def test_align_nearest_against_bruteforce_oracle(tmp_path):
    import numpy as np

    rng = np.random.default_rng(3)
    ts = sorted(float(t) for t in rng.uniform(0.0, 10.0, size=101))
    values = [[float(rng.normal())] for _ in ts]
    records = [sample("joint/arm_extension", t, v) for t, v in zip(ts, values)]
    episode = load_episode(write_episode(tmp_path / "ep.jsonl", records))
    frames = align(episode, 0.2)

    for frame in frames:
        # Exhaustive nearest-timestamp search; earlier sample on ties.
        best = min(zip(ts, values), key=lambda s: (abs(s[0] - frame.timestamp), s[0]))
        assert frame.joint_values["arm_extension"] == best[1][0]


def test_align_frame_count_formula(tmp_path):
    records = [sample("joint/arm_extension", t, [1.0]) for t in (0.0, 0.55)]
    episode = load_episode(write_episode(tmp_path / "ep.jsonl", records))
    assert len(align(episode, 0.2)) == math.floor(0.55 / 0.2) + 1  # frames at 0.0, 0.2, 0.4


def test_align_tie_takes_earlier_sample(tmp_path):
    records = [sample("joint/arm_extension", 0.0, [1.0]), sample("joint/arm_extension", 0.2, [2.0])]
    episode = load_episode(write_episode(tmp_path / "ep.jsonl", records))
    frames = align(episode, 0.1)
    # Frame at t=0.1 is equidistant from both samples: earlier one wins.
    assert frames[1].joint_values["arm_extension"] == 1.0


def test_default_interval_is_200ms():
    assert episode_log.DEFAULT_INTERVAL == 0.2


def test_deltas_zero_on_first_frame_and_wrap(tmp_path):
    records = [
        sample("odometry", 0.0, [0.0, 0.0, 3.1]),
        sample("odometry", 0.2, [0.0, 0.0, -3.1]),
    ]
    episode = load_episode(write_episode(tmp_path / "ep.jsonl", records))
    frames = align(episode, 0.2)
    assert frames[0].deltas.d_rot == 0.0
    # Crossing the pi boundary is a small rotation, not ~2 pi.
    assert frames[1].deltas.d_rot == pytest.approx(2 * math.pi - 6.2, abs=1e-9)


def test_wrap_angle_range():
    for a in (-10.0, -math.pi, 0.0, math.pi, 10.0, 123.456):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-12)


def test_path_length_bounds_net_displacement(suite_episodes):
    episode = suite_episodes[0]
    frames = align(episode)
    total = sum(f.deltas.d_pos for f in frames)
    first = next(f.base_pose for f in frames if f.base_pose)
    last = next(f.base_pose for f in reversed(frames) if f.base_pose)
    net = math.hypot(last[0] - first[0], last[1] - first[1])
    assert total >= net - 1e-9


def test_alignment_idempotent(suite_episodes):
    episode = suite_episodes[0]
    frames = align(episode)
    replayed = align(episode_log.episode_from_frames(frames, episode), 0.2)
    assert len(replayed) == len(frames)
    for a, b in zip(frames, replayed):
        assert a.timestamp == b.timestamp
        assert a.joint_values == b.joint_values
        assert a.base_pose == b.base_pose
        assert a.planner_state == b.planner_state
        assert a.flow_magnitude == b.flow_magnitude
        assert a.deltas == b.deltas


def test_absent_streams_tolerated(tmp_path):
    records = [sample("joint/arm_extension", t, [0.1]) for t in (0.0, 0.4)]
    episode = load_episode(write_episode(tmp_path / "ep.jsonl", records))
    frames = align(episode, 0.2)
    assert all(f.base_pose is None and f.head_image is None and f.flow_magnitude is None for f in frames)
    assert all(f.deltas.d_pos == 0.0 for f in frames)


def test_empty_episode_error():
    episode = episode_log.EpisodeLog(
        episode_id="x",
        task_name="put_cup",
        streams={},
        planner_events=[],
        detections=[],
        failure_labels=[],
        robot_config=episode_log.RobotConfig.from_dict(MINIMAL_CONFIG),
    )
    with pytest.raises(EmptyEpisode):
        align(episode, 0.2)


def test_write_frames_roundtrips_records(tmp_path):
    records = [sample("joint/arm_extension", t, [0.1 + t]) for t in (0.0, 0.2, 0.4)]
    episode = load_episode(write_episode(tmp_path / "ep.jsonl", records))
    frames = align(episode, 0.2)
    out = tmp_path / "frames.jsonl"
    episode_log.write_frames(frames, str(out))
    lines = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(lines) == len(frames)
    assert lines[1]["joint_values"]["arm_extension"] == frames[1].joint_values["arm_extension"]
