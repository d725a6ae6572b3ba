"""Episode data model, JSONL ingestion, and mixed-rate stream alignment.

An episode file is JSONL with one record per line. The first line must be a
"meta" record; the remaining lines are "sample", "planner", "detection" and
"failure_label" records in any order (samples of one stream must be in
timestamp order). See the README for the full schema.
"""

from __future__ import annotations

import json
import math
import os
from bisect import bisect_left
from dataclasses import dataclass, field, replace

from .errors import RonarError
from .scene_graph import DetectedObject

CATEGORIES = ("Environment", "Internal", "TaskPlanning")
PART_TYPES = ("prismatic", "revolute", "base", "camera", "gripper", "other")

DEFAULT_INTERVAL = 0.2  # seconds between aligned frames


class MalformedRecord(RonarError):
    def __init__(self, line_no: int, field_name: str, detail: str = ""):
        self.line_no = line_no
        self.field_name = field_name
        msg = f"line {line_no}: bad field {field_name!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonMonotonicTimestamps(RonarError):
    def __init__(self, stream_name: str):
        self.stream_name = stream_name
        super().__init__(f"stream {stream_name!r} has non-increasing timestamps")


class MissingRequiredStream(RonarError):
    def __init__(self, category: str):
        self.category = category
        super().__init__(f"no stream of required category {category!r}")


class EmptyEpisode(RonarError):
    pass


@dataclass(frozen=True)
class MotionDeltas:
    """Absolute per-frame changes; angles are wrapped before differencing."""

    d_pos: float = 0.0
    d_rot: float = 0.0
    d_cam: float = 0.0
    d_arm: float = 0.0

    def axis(self, name: str) -> float:
        return getattr(self, f"d_{name}")


@dataclass(frozen=True)
class RobotPart:
    name: str
    description: str
    limit: tuple[float, float]
    part_type: str

    def __post_init__(self):
        if self.part_type not in PART_TYPES:
            raise ValueError(f"unknown part_type {self.part_type!r}")
        if not self.limit[0] < self.limit[1]:
            raise ValueError(f"part {self.name!r}: limit min must be < max")


@dataclass(frozen=True)
class RobotConfig:
    parts: tuple[RobotPart, ...]

    def __post_init__(self):
        names = [p.name for p in self.parts]
        if len(set(names)) != len(names):
            raise ValueError("part names must be unique")

    def part(self, name: str) -> RobotPart | None:
        for p in self.parts:
            if p.name == name:
                return p
        return None

    def parts_of_type(self, part_type: str) -> list[RobotPart]:
        return [p for p in self.parts if p.part_type == part_type]

    @classmethod
    def from_dict(cls, d: dict) -> "RobotConfig":
        parts = tuple(
            RobotPart(
                name=p["name"],
                description=p.get("description", ""),
                limit=(float(p["limit"][0]), float(p["limit"][1])),
                part_type=p["part_type"],
            )
            for p in d["parts"]
        )
        return cls(parts=parts)

    def to_dict(self) -> dict:
        return {
            "parts": [
                {
                    "name": p.name,
                    "description": p.description,
                    "limit": [p.limit[0], p.limit[1]],
                    "part_type": p.part_type,
                }
                for p in self.parts
            ]
        }


@dataclass(frozen=True)
class PlannerTransition:
    t: float
    from_state: str
    to_state: str
    outcome: str = ""


@dataclass(frozen=True)
class DetectionRecord:
    t: float
    image: str
    objects: tuple[DetectedObject, ...]


@dataclass(frozen=True)
class FailureLabel:
    t: float
    reason: str
    recovery: str


@dataclass
class SensorStream:
    """One sensor's samples; values are float lists or image path strings."""

    name: str
    category: str
    samples: list[tuple[float, object]] = field(default_factory=list)

    def timestamps(self) -> list[float]:
        return [t for t, _ in self.samples]


@dataclass
class EpisodeLog:
    episode_id: str
    task_name: str
    streams: dict[str, SensorStream]
    planner_events: list[PlannerTransition]
    detections: list[DetectionRecord]
    failure_labels: list[FailureLabel]
    robot_config: RobotConfig
    base_dir: str = "."

    @property
    def t_start(self) -> float:
        return min(self._all_timestamps())

    @property
    def t_end(self) -> float:
        return max(self._all_timestamps())

    def _all_timestamps(self) -> list[float]:
        ts = [t for s in self.streams.values() for t, _ in s.samples]
        ts += [e.t for e in self.planner_events]
        if not ts:
            raise EmptyEpisode(f"episode {self.episode_id!r} has no samples")
        return ts

    def resolve(self, rel_path: str) -> str:
        return os.path.normpath(os.path.join(self.base_dir, rel_path))


@dataclass
class MultimodalFrame:
    """One aligned sample across all streams.

    Frames form an arithmetic timestamp sequence; every stream-backed field
    holds the sample nearest in time to the frame timestamp (earlier sample
    on exact ties).
    """

    index: int
    timestamp: float
    head_image: str | None = None
    depth_image: str | None = None
    base_pose: tuple[float, float, float] | None = None
    joint_values: dict[str, float] = field(default_factory=dict)
    planner_state: str = ""
    deltas: MotionDeltas = field(default_factory=MotionDeltas)
    flow_magnitude: float | None = None


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def _require(record: dict, key: str, line_no: int):
    if key not in record:
        raise MalformedRecord(line_no, key, "missing")
    return record[key]


def _parse_sample_value(raw, line_no: int):
    if isinstance(raw, dict):
        if "image" not in raw or not isinstance(raw["image"], str):
            raise MalformedRecord(line_no, "value", "image object needs a path")
        return raw["image"]
    if isinstance(raw, list):
        try:
            return [float(v) for v in raw]
        except (TypeError, ValueError):
            raise MalformedRecord(line_no, "value", "non-numeric array") from None
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return [float(raw)]
    raise MalformedRecord(line_no, "value", f"unsupported type {type(raw).__name__}")


def _parse_detection_objects(raw, line_no: int) -> tuple[DetectedObject, ...]:
    if not isinstance(raw, list):
        raise MalformedRecord(line_no, "objects", "must be an array")
    out = []
    for obj in raw:
        try:
            box = obj["box"]
            out.append(
                DetectedObject(
                    object_id=str(obj["id"]),
                    label=str(obj["label"]),
                    box=(float(box[0]), float(box[1]), float(box[2]), float(box[3])),
                    distance=None if obj.get("distance_m") is None else float(obj["distance_m"]),
                )
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedRecord(line_no, "objects", str(exc)) from None
    return tuple(out)


def load_episode(path: str) -> EpisodeLog:
    """Read and validate one JSONL episode file."""
    streams: dict[str, SensorStream] = {}
    planner: list[PlannerTransition] = []
    detections: list[DetectionRecord] = []
    failures: list[FailureLabel] = []
    meta: dict | None = None

    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, "json", exc.msg) from None
            if not isinstance(record, dict):
                raise MalformedRecord(line_no, "json", "record must be an object")
            kind = _require(record, "kind", line_no)
            if kind == "meta":
                if line_no != 1:
                    raise MalformedRecord(line_no, "kind", "meta must be the first line")
                try:
                    config = RobotConfig.from_dict(_require(record, "robot_config", line_no))
                except (KeyError, TypeError, ValueError) as exc:
                    raise MalformedRecord(line_no, "robot_config", str(exc)) from None
                meta = {
                    "episode_id": str(_require(record, "episode_id", line_no)),
                    "task_name": str(_require(record, "task_name", line_no)),
                    "robot_config": config,
                }
            elif kind == "sample":
                name = str(_require(record, "stream", line_no))
                category = str(_require(record, "category", line_no))
                if category not in CATEGORIES:
                    raise MalformedRecord(line_no, "category", f"unknown {category!r}")
                t = float(_require(record, "t", line_no))
                value = _parse_sample_value(_require(record, "value", line_no), line_no)
                stream = streams.get(name)
                if stream is None:
                    stream = streams[name] = SensorStream(name=name, category=category)
                elif stream.category != category:
                    raise MalformedRecord(line_no, "category", "category changed mid-stream")
                stream.samples.append((t, value))
            elif kind == "planner":
                to_state = str(_require(record, "to_state", line_no))
                from_state = str(_require(record, "from_state", line_no))
                if not to_state or not from_state:
                    raise MalformedRecord(line_no, "to_state", "state names must be non-empty")
                planner.append(
                    PlannerTransition(
                        t=float(_require(record, "t", line_no)),
                        from_state=from_state,
                        to_state=to_state,
                        outcome=str(record.get("outcome", "")),
                    )
                )
            elif kind == "detection":
                detections.append(
                    DetectionRecord(
                        t=float(_require(record, "t", line_no)),
                        image=str(_require(record, "image", line_no)),
                        objects=_parse_detection_objects(_require(record, "objects", line_no), line_no),
                    )
                )
            elif kind == "failure_label":
                failures.append(
                    FailureLabel(
                        t=float(_require(record, "t", line_no)),
                        reason=str(_require(record, "reason", line_no)),
                        recovery=str(_require(record, "recovery", line_no)),
                    )
                )
            else:
                raise MalformedRecord(line_no, "kind", f"unknown {kind!r}")

    if meta is None:
        raise MalformedRecord(1, "kind", "first line must be a meta record")

    for stream in streams.values():
        ts = stream.timestamps()
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise NonMonotonicTimestamps(stream.name)
    if not any(s.category == "Internal" for s in streams.values()):
        raise MissingRequiredStream("Internal")

    prev_t = -math.inf
    for e in planner:
        if e.t < prev_t:
            raise MalformedRecord(0, "planner.t", "planner timestamps must be non-decreasing")
        prev_t = e.t

    episode = EpisodeLog(
        episode_id=meta["episode_id"],
        task_name=meta["task_name"],
        streams=streams,
        planner_events=planner,
        detections=sorted(detections, key=lambda d: d.t),
        failure_labels=sorted(failures, key=lambda f: f.t),
        robot_config=meta["robot_config"],
        base_dir=os.path.dirname(os.path.abspath(path)),
    )

    t0, t1 = episode.t_start, episode.t_end
    for stream in streams.values():
        for t, _ in stream.samples:
            if not (t0 <= t <= t1):
                raise NonMonotonicTimestamps(stream.name)  # unreachable by construction
    for rec in episode.detections + list(episode.failure_labels):
        if not (t0 - 1e-9 <= rec.t <= t1 + 1e-9):
            raise MalformedRecord(0, "t", f"timestamp {rec.t} outside episode range")
    return episode


def nearest_sample(samples: list[tuple[float, object]], t: float):
    """Sample closest in time to t; the earlier one wins exact ties."""
    ts = [s[0] for s in samples]
    i = bisect_left(ts, t)
    if i == 0:
        return samples[0]
    if i == len(samples):
        return samples[-1]
    before, after = samples[i - 1], samples[i]
    if t - before[0] <= after[0] - t:
        return before
    return after


def _state_at(planner: list[PlannerTransition], t: float) -> str:
    if not planner:
        return ""
    state = planner[0].from_state
    for e in planner:
        if e.t <= t:
            state = e.to_state
        else:
            break
    return state


def align(episode: EpisodeLog, interval: float = DEFAULT_INTERVAL) -> list[MultimodalFrame]:
    """Resample every stream to a fixed-interval frame sequence.

    Frame count is floor((t_end - t_start)/interval) + 1. Per-frame deltas
    are absolute changes between consecutive frames; frame 0 has zero deltas.
    """
    if interval <= 0:
        raise ValueError("interval must be positive")
    if not any(s.samples for s in episode.streams.values()):
        raise EmptyEpisode(f"episode {episode.episode_id!r} has no samples")

    t0, t1 = episode.t_start, episode.t_end
    n_frames = int(math.floor((t1 - t0) / interval + 1e-9)) + 1

    config = episode.robot_config
    cam_parts = [p.name for p in config.parts_of_type("camera")]
    arm_parts = [p.name for p in config.parts_of_type("prismatic")]

    head = episode.streams.get("head_image")
    depth = episode.streams.get("depth_image")
    odom = episode.streams.get("odometry")
    flow = episode.streams.get("flow_magnitude")
    joint_streams = {
        name[len("joint/"):]: s
        for name, s in episode.streams.items()
        if name.startswith("joint/") and s.samples
    }

    frames: list[MultimodalFrame] = []
    for i in range(n_frames):
        t = t0 + i * interval
        frame = MultimodalFrame(index=i, timestamp=t)
        if head is not None and head.samples:
            frame.head_image = episode.resolve(str(nearest_sample(head.samples, t)[1]))
        if depth is not None and depth.samples:
            frame.depth_image = episode.resolve(str(nearest_sample(depth.samples, t)[1]))
        if odom is not None and odom.samples:
            v = nearest_sample(odom.samples, t)[1]
            frame.base_pose = (v[0], v[1], v[2])
        if flow is not None and flow.samples:
            frame.flow_magnitude = float(nearest_sample(flow.samples, t)[1][0])
        for joint, stream in joint_streams.items():
            frame.joint_values[joint] = float(nearest_sample(stream.samples, t)[1][0])
        frame.planner_state = _state_at(episode.planner_events, t)
        frames.append(frame)

    for prev, curr in zip(frames, frames[1:]):
        d_pos = d_rot = 0.0
        if prev.base_pose is not None and curr.base_pose is not None:
            d_pos = math.hypot(curr.base_pose[0] - prev.base_pose[0], curr.base_pose[1] - prev.base_pose[1])
            d_rot = abs(wrap_angle(curr.base_pose[2] - prev.base_pose[2]))
        d_cam = sum(
            abs(wrap_angle(curr.joint_values[j] - prev.joint_values[j]))
            for j in cam_parts
            if j in curr.joint_values and j in prev.joint_values
        )
        d_arm = sum(
            abs(curr.joint_values[j] - prev.joint_values[j])
            for j in arm_parts
            if j in curr.joint_values and j in prev.joint_values
        )
        curr.deltas = MotionDeltas(d_pos=d_pos, d_rot=d_rot, d_cam=d_cam, d_arm=d_arm)
    return frames


def frame_to_record(frame: MultimodalFrame) -> dict:
    return {
        "index": frame.index,
        "t": frame.timestamp,
        "head_image": frame.head_image,
        "depth_image": frame.depth_image,
        "base_pose": None if frame.base_pose is None else list(frame.base_pose),
        "joint_values": frame.joint_values,
        "planner_state": frame.planner_state,
        "deltas": {
            "d_pos": frame.deltas.d_pos,
            "d_rot": frame.deltas.d_rot,
            "d_cam": frame.deltas.d_cam,
            "d_arm": frame.deltas.d_arm,
        },
        "flow_magnitude": frame.flow_magnitude,
    }


def write_frames(frames: list[MultimodalFrame], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            fh.write(json.dumps(frame_to_record(frame)) + "\n")


def episode_from_frames(frames: list[MultimodalFrame], like: EpisodeLog) -> EpisodeLog:
    """Re-serialize aligned frames as an episode with one sample per frame.

    Used for alignment round-trips: aligning the result at the same interval
    must reproduce the frame values.
    """
    streams: dict[str, SensorStream] = {}

    def put(name: str, category: str, t: float, value):
        stream = streams.get(name)
        if stream is None:
            stream = streams[name] = SensorStream(name=name, category=category)
        stream.samples.append((t, value))

    planner: list[PlannerTransition] = []
    prev_state: str | None = None
    for f in frames:
        if f.head_image is not None:
            put("head_image", "Environment", f.timestamp, f.head_image)
        if f.depth_image is not None:
            put("depth_image", "Environment", f.timestamp, f.depth_image)
        if f.base_pose is not None:
            put("odometry", "Internal", f.timestamp, list(f.base_pose))
        if f.flow_magnitude is not None:
            put("flow_magnitude", "Environment", f.timestamp, [f.flow_magnitude])
        for joint, value in f.joint_values.items():
            put(f"joint/{joint}", "Internal", f.timestamp, [value])
        if f.planner_state and f.planner_state != prev_state:
            planner.append(
                PlannerTransition(t=f.timestamp, from_state=prev_state or f.planner_state, to_state=f.planner_state)
            )
        prev_state = f.planner_state

    return EpisodeLog(
        episode_id=like.episode_id,
        task_name=like.task_name,
        streams=streams,
        planner_events=planner,
        detections=like.detections,
        failure_labels=like.failure_labels,
        robot_config=like.robot_config,
        base_dir="/",  # frame image paths are already resolved
    )
