"""Synthetic task execution: state machines, trajectories, failures.

Linear task definitions are expanded into state machines where every action
state gets query-user and teleoperation companion states. A seeded stepper
walks the machine producing smooth per-state trajectories, parametric
detections, procedurally rendered head images, and injected failures with
exact ground-truth labels. The same stepper backs both offline episode
generation (auto-resolved interventions) and the live service session
(operator-resolved interventions).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .episode_log import (
    DetectionRecord,
    FailureLabel,
    MotionDeltas,
    MultimodalFrame,
    PlannerTransition,
    RobotConfig,
    RobotPart,
    wrap_angle,
)
from .errors import RonarError
from .scene_graph import DetectedObject
from .summarizer import TaskSpec

TERMINAL_COMPLETE = "task-complete"
TERMINAL_ABORTED = "aborted"
START_STATE = "start"

QUERY_SUFFIX = ":query_user"
TELEOP_SUFFIX = ":teleoperation"

FAILURE_KINDS = ("navigation", "detection", "manipulation")
MAX_FAILURES_PER_EPISODE = 3

INTERVENTIONS = ("retry", "abort", "teleop_ack")


class DuplicateStateName(RonarError):
    pass


class EmptyStateList(RonarError):
    pass


class InvalidFailureSpec(RonarError):
    pass


@dataclass(frozen=True)
class Transition:
    from_state: str
    on: str
    to_state: str


@dataclass(frozen=True)
class StateMachine:
    action_states: tuple[str, ...]
    transitions: tuple[Transition, ...]

    @property
    def initial(self) -> str:
        return self.action_states[0]

    @property
    def states(self) -> tuple[str, ...]:
        companions = []
        for s in self.action_states:
            companions += [s + QUERY_SUFFIX, s + TELEOP_SUFFIX]
        return self.action_states + tuple(companions) + (TERMINAL_COMPLETE, TERMINAL_ABORTED)

    def next_state(self, current: str, on: str) -> str | None:
        for t in self.transitions:
            if t.from_state == current and t.on == on:
                return t.to_state
        return None

    def to_json(self) -> dict:
        return {
            "action_states": list(self.action_states),
            "transitions": [[t.from_state, t.on, t.to_state] for t in self.transitions],
            "terminals": [TERMINAL_COMPLETE, TERMINAL_ABORTED],
        }

    @classmethod
    def from_json(cls, d: dict) -> "StateMachine":
        return cls(
            action_states=tuple(d["action_states"]),
            transitions=tuple(Transition(*t) for t in d["transitions"]),
        )


def synthesize_machine(states: list[str]) -> StateMachine:
    """Expand a linear state list into a machine with recovery companions.

    Each action state gets a query-user and a teleoperation state; failures
    route action -> query_user -> (teleoperation -> retry | retry | abort).
    """
    if not states:
        raise EmptyStateList("need at least one action state")
    if len(set(states)) != len(states):
        raise DuplicateStateName("action state names must be unique")
    transitions: list[Transition] = []
    for i, s in enumerate(states):
        on_success = states[i + 1] if i + 1 < len(states) else TERMINAL_COMPLETE
        qu, tp = s + QUERY_SUFFIX, s + TELEOP_SUFFIX
        transitions += [
            Transition(s, "success", on_success),
            Transition(s, "failure", qu),
            Transition(qu, "teleop_ack", tp),
            Transition(qu, "retry", s),
            Transition(qu, "abort", TERMINAL_ABORTED),
            Transition(tp, "retry", s),
            Transition(tp, "abort", TERMINAL_ABORTED),
        ]
    return StateMachine(action_states=tuple(states), transitions=tuple(transitions))


def state_kind(name: str) -> str:
    base = name
    for suffix in (QUERY_SUFFIX, TELEOP_SUFFIX):
        if base.endswith(suffix):
            return "query_user" if suffix == QUERY_SUFFIX else "teleoperation"
    tokens = base.replace("_", "-").split("-")
    if "navigate" in tokens or tokens[0] == "nav":
        return "navigation"
    if any(t in ("look", "detect", "classify", "find", "search") for t in tokens):
        return "detection"
    return "manipulation"


_FILLER_TOKENS = {"for", "to", "up", "in", "at", "back", "again", "the", "dirty"}


def _state_target_label(name: str) -> str:
    tokens = [t for t in name.replace("_", "-").split("-") if t and t not in _FILLER_TOKENS]
    return tokens[-1] if tokens else "object"


@dataclass(frozen=True)
class FailureSpec:
    target_state: str
    failure_time_offset: float  # seconds into the state's visit
    kind: str  # navigation | detection | manipulation
    recoverable: bool = True
    reason: str = ""
    recovery: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "FailureSpec":
        return cls(
            target_state=d["target_state"],
            failure_time_offset=float(d.get("failure_time_offset", d.get("offset_s", 2.0))),
            kind=d["kind"],
            recoverable=bool(d.get("recoverable", True)),
            reason=d.get("reason", ""),
            recovery=d.get("recovery", ""),
        )


_DEFAULT_REASONS = {
    "navigation": (
        "base stopped making progress while the goal was still ahead during {state}",
        "teleoperate the base around the obstruction and resume navigation",
    ),
    "detection": (
        "target object was never detected during {state}",
        "reposition the camera or clear the view, then rerun detection",
    ),
    "manipulation": (
        "arm saturated at its extension limit during {state}",
        "retract the arm, move the base closer to the target, and retry",
    ),
}


def validate_failures(machine: StateMachine, failures: list[FailureSpec]) -> None:
    if len(failures) > MAX_FAILURES_PER_EPISODE:
        raise InvalidFailureSpec(f"at most {MAX_FAILURES_PER_EPISODE} failures per episode")
    for spec in failures:
        if spec.target_state not in machine.action_states:
            raise InvalidFailureSpec(f"unknown target state {spec.target_state!r}")
        if spec.kind not in FAILURE_KINDS:
            raise InvalidFailureSpec(f"unknown failure kind {spec.kind!r}")
        if spec.kind != state_kind(spec.target_state):
            raise InvalidFailureSpec(
                f"{spec.kind} failure cannot target {state_kind(spec.target_state)} state"
                f" {spec.target_state!r}"
            )
        if spec.failure_time_offset < 0:
            raise InvalidFailureSpec("failure offset must be >= 0")


DEFAULT_ROBOT_CONFIG = RobotConfig(
    parts=(
        RobotPart("base", "differential-drive mobile base", (-10.0, 10.0), "base"),
        RobotPart("arm_extension", "telescoping arm extension", (0.0, 0.52), "prismatic"),
        RobotPart("lift", "vertical travel of the arm along the mast", (0.0, 1.1), "prismatic"),
        RobotPart("head_pan", "head camera pan", (-3.9, 1.5), "camera"),
        RobotPart("head_tilt", "head camera tilt", (-1.53, 0.79), "camera"),
        RobotPart("wrist_yaw", "wrist rotation", (-1.75, 4.0), "revolute"),
        RobotPart("gripper", "gripper aperture, 0 closed to 1 open", (0.0, 1.0), "gripper"),
    )
)

JOINT_NAMES = ("arm_extension", "lift", "head_pan", "head_tilt", "wrist_yaw", "gripper")
IDLE_JOINTS = {
    "arm_extension": 0.1,
    "lift": 0.6,
    "head_pan": 0.0,
    "head_tilt": -0.3,
    "wrist_yaw": 0.0,
    "gripper": 0.5,
}


@dataclass(frozen=True)
class TaskDef:
    name: str
    description: str
    states: tuple[str, ...]

    def spec(self) -> TaskSpec:
        return TaskSpec(name=self.name, description=self.description, subgoals=self.states)


TASKS: dict[str, TaskDef] = {
    "put_cup": TaskDef(
        "put_cup",
        "pick a dirty cup from the table and put it in the sink",
        (
            "navigate-to-table",
            "look-for-cup",
            "pick-cup",
            "navigate-to-sink",
            "look-for-sink",
            "place-in-sink",
        ),
    ),
    "microwave_food": TaskDef(
        "microwave_food",
        "fetch food and heat it in the microwave",
        (
            "navigate-to-microwave",
            "look-for-microwave",
            "open-microwave-door",
            "navigate-to-food",
            "look-for-food",
            "pick-up-food",
            "navigate-back-to-microwave",
            "look-for-microwave-again",
            "place-food-in-microwave",
            "close-microwave-door",
        ),
    ),
    "hang_hat": TaskDef(
        "hang_hat",
        "take a hat from a person and hang it on a hook",
        (
            "navigate-to-human",
            "receive-hat",
            "navigate-to-hook",
            "look-for-hook",
            "hang-hat",
        ),
    ),
    "collect_clothes": TaskDef(
        "collect_clothes",
        "collect dirty clothes into the laundry basket",
        (
            "navigate-to-clothes",
            "look-for-clothes",
            "classify-dirty-clothes",
            "pick-up-clothes",
            "navigate-to-basket",
            "look-for-basket",
            "place-in-basket",
        ),
    ),
}


@dataclass(frozen=True)
class SimParams:
    interval: float = 0.2  # live frame cadence, seconds
    odo_rate: float = 10.0
    joint_rate: float = 10.0
    image_rate: float = 5.0
    detection_rate: float = 2.0
    image_size: tuple[int, int] = (320, 240)  # (w, h)
    render_images: bool = True
    failure_reaction: float = 1.0  # seconds from failure onset to the planner reacting
    dwell: dict = field(
        default_factory=lambda: {
            "navigation": (6.0, 9.0),
            "detection": (2.5, 4.5),
            "manipulation": (4.0, 7.0),
            "query_user": (1.0, 2.0),
            "teleoperation": (3.0, 5.0),
        }
    )


# Pixels of apparent image motion per unit of robot motion.
_PX_PER_M_PATH = 40.0
_PX_PER_RAD_YAW = 80.0
_PX_PER_RAD_PAN = 120.0
_PX_PER_RAD_TILT = 120.0
_PX_PER_M_LIFT = 60.0
_PX_PER_M_ARM = 300.0


def _smoothstep(u: float) -> float:
    u = min(1.0, max(0.0, u))
    return u * u * (3.0 - 2.0 * u)


@dataclass
class _Visit:
    """One stay in one state, with frozen trajectory parameters."""

    state: str
    kind: str
    entry_t: float
    dwell: float
    entry_pose: tuple[float, float, float]
    entry_joints: dict[str, float]
    entry_path_len: float
    target_pose: tuple[float, float, float]
    target_joints: dict[str, float]
    failure: FailureSpec | None = None
    t_fail: float | None = None
    failed: bool = False

    @property
    def exit_t(self) -> float:
        if self.t_fail is not None:
            return self.t_fail  # reaction time is added by the stepper
        return self.entry_t + self.dwell


class TaskSimulator:
    """Deterministic stepwise executor of a synthesized state machine.

    step() advances simulated time by one frame interval and returns the raw
    samples, planner transitions, detections, failure labels, and the aligned
    frame for that slice. With auto_intervene=True failures resolve
    themselves (teleop when recoverable, abort otherwise); otherwise the
    machine waits in a query-user state for intervene().
    """

    def __init__(
        self,
        machine: StateMachine,
        seed: int,
        failures: list[FailureSpec] | None = None,
        params: SimParams = SimParams(),
        task: TaskDef | None = None,
        auto_intervene: bool = True,
        image_dir: str | None = None,
    ):
        failures = list(failures or [])
        validate_failures(machine, failures)
        self.machine = machine
        self.params = params
        self.task = task
        self.auto_intervene = auto_intervene
        self.image_dir = image_dir
        self.rng = np.random.default_rng(seed)
        self._texture = self._make_texture(seed)

        self.t = 0.0
        self.frame_index = 0
        self.pose = (0.0, 0.0, 0.0)
        self.joints = dict(IDLE_JOINTS)
        self.path_len = 0.0
        self.done = False
        self.state = machine.initial
        self._pending_failures = failures
        self._labels_emitted: list[FailureLabel] = []
        self._pending_interventions: list[str] = []
        self._grid_counts = {"odo": 0, "joint": 0, "image": 0, "det": 0}
        self._last_image_offsets: tuple[float, float] | None = None
        self._prev_frame: MultimodalFrame | None = None
        self._initial_transition = PlannerTransition(
            t=0.0, from_state=START_STATE, to_state=self.state, outcome="entered"
        )
        self._visit = self._enter(self.state, 0.0)
        self._reaction_deadline: float | None = None

    # -- machine progression -------------------------------------------------

    def _enter(self, state: str, t: float) -> _Visit:
        kind = state_kind(state)
        lo, hi = self.params.dwell[kind] if kind in self.params.dwell else self.params.dwell["manipulation"]
        dwell = float(self.rng.uniform(lo, hi))
        failure = None
        if kind in FAILURE_KINDS:
            for spec in self._pending_failures:
                if spec.target_state == state:
                    failure = spec
                    break
        t_fail = None
        if failure is not None:
            self._pending_failures.remove(failure)
            rate = self.params.joint_rate
            t_fail = math.ceil((t + failure.failure_time_offset) * rate - 1e-9) / rate
            dwell = max(dwell, (t_fail - t) + self.params.failure_reaction + 0.2)

        target_pose, target_joints = self._draw_targets(state, kind, failure, t, t_fail)
        return _Visit(
            state=state,
            kind=kind,
            entry_t=t,
            dwell=dwell,
            entry_pose=self.pose,
            entry_joints=dict(self.joints),
            entry_path_len=self.path_len,
            target_pose=target_pose,
            target_joints=target_joints,
            failure=failure,
            t_fail=t_fail,
        )

    def _draw_targets(self, state, kind, failure, entry_t, t_fail):
        x, y, yaw = self.pose
        joints = dict(self.joints)
        target_joints = dict(joints)
        if kind == "navigation":
            heading = yaw + float(self.rng.uniform(-0.8, 0.8))
            dist = float(self.rng.uniform(1.8, 3.2))
            target_pose = (x + dist * math.cos(heading), y + dist * math.sin(heading), heading)
        else:
            target_pose = self.pose
        if kind == "detection":
            target_joints["head_pan"] = joints["head_pan"] + float(self.rng.uniform(0.5, 0.9))
            target_joints["head_tilt"] = -0.5
        elif kind == "manipulation":
            if failure is not None and failure.kind == "manipulation":
                limit = DEFAULT_ROBOT_CONFIG.part("arm_extension").limit[1]
                target_joints["arm_extension"] = limit
            else:
                target_joints["arm_extension"] = float(self.rng.uniform(0.35, 0.48))
            target_joints["lift"] = float(self.rng.uniform(0.4, 0.9))
            target_joints["gripper"] = 0.1 if joints["gripper"] > 0.3 else 0.9
            target_joints["wrist_yaw"] = float(self.rng.uniform(-0.4, 0.6))
        elif kind == "teleoperation":
            target_joints["arm_extension"] = 0.3
            target_joints["lift"] = 0.6
        return target_pose, target_joints

    def intervene(self, action: str) -> bool:
        """Queue an operator action; applied at the next simulation step.

        An action arriving while the machine sits in a query-user state cuts
        the remaining dwell so the transition lands in the very next step.
        """
        if action not in INTERVENTIONS:
            raise ValueError(f"unknown intervention {action!r}")
        self._pending_interventions.append(action)
        if self._visit.kind == "query_user":
            elapsed = self.t + self.params.interval - self._visit.entry_t
            if 0 < elapsed < self._visit.dwell:
                self._visit.dwell = elapsed
        return True

    # -- continuous signals ----------------------------------------------------

    def _progress(self, tau: float) -> float:
        v = self._visit
        if v.t_fail is not None:
            tau = min(tau, v.t_fail)
        return _smoothstep((tau - v.entry_t) / v.dwell if v.dwell > 0 else 1.0)

    def _pose_at(self, tau: float) -> tuple[float, float, float]:
        v = self._visit
        if v.kind != "navigation":
            return v.entry_pose
        s = self._progress(tau)
        ex, ey, eyaw = v.entry_pose
        tx, ty, tyaw = v.target_pose
        return (ex + (tx - ex) * s, ey + (ty - ey) * s, eyaw + wrap_angle(tyaw - eyaw) * s)

    def _path_len_at(self, tau: float) -> float:
        v = self._visit
        if v.kind != "navigation":
            return v.entry_path_len
        seg = math.hypot(v.target_pose[0] - v.entry_pose[0], v.target_pose[1] - v.entry_pose[1])
        return v.entry_path_len + seg * self._progress(tau)

    def _joints_at(self, tau: float) -> dict[str, float]:
        v = self._visit
        out = {}
        pinned_arm = (
            v.failure is not None
            and v.failure.kind == "manipulation"
            and v.t_fail is not None
            and tau >= v.t_fail - 1e-9
        )
        if v.kind == "detection":
            u = (tau - v.entry_t) / v.dwell if v.dwell > 0 else 1.0
            sweep = 0.35 * math.sin(2.0 * math.pi * 1.25 * min(u, 1.0))
            for name in JOINT_NAMES:
                out[name] = v.entry_joints[name]
            out["head_pan"] = v.entry_joints["head_pan"] + sweep + (
                (v.target_joints["head_pan"] - v.entry_joints["head_pan"]) * _smoothstep(u)
            )
            out["head_tilt"] = v.entry_joints["head_tilt"] + (
                (v.target_joints["head_tilt"] - v.entry_joints["head_tilt"]) * _smoothstep(u)
            )
            return out
        if v.failure is not None and v.failure.kind == "manipulation" and v.t_fail is not None:
            # Arm ramps linearly into the limit, reaching it exactly at t_fail.
            ramp_len = max(v.t_fail - v.entry_t, 1e-9)
            u_arm = min(1.0, max(0.0, (tau - v.entry_t) / ramp_len))
            s = _smoothstep((tau - v.entry_t) / v.dwell if v.dwell > 0 else 1.0)
            for name in JOINT_NAMES:
                out[name] = v.entry_joints[name] + (v.target_joints[name] - v.entry_joints[name]) * s
            limit = v.target_joints["arm_extension"]
            out["arm_extension"] = v.entry_joints["arm_extension"] + (limit - v.entry_joints["arm_extension"]) * u_arm
            if pinned_arm:
                out["arm_extension"] = limit
            return out
        s = self._progress(tau)
        for name in JOINT_NAMES:
            out[name] = v.entry_joints[name] + (v.target_joints[name] - v.entry_joints[name]) * s
        return out

    def _frozen_nav(self, tau: float) -> bool:
        v = self._visit
        return (
            v.failure is not None
            and v.failure.kind == "navigation"
            and v.t_fail is not None
            and tau >= v.t_fail
        )

    def _image_offsets(self, tau: float) -> tuple[float, float]:
        pose = self._pose_at(tau)
        joints = self._joints_at(tau)
        ox = (
            _PX_PER_M_PATH * self._path_len_at(tau)
            + _PX_PER_RAD_YAW * pose[2]
            + _PX_PER_RAD_PAN * joints["head_pan"]
            + _PX_PER_M_ARM * 0.15 * joints["arm_extension"]
        )
        oy = _PX_PER_RAD_TILT * joints["head_tilt"] + _PX_PER_M_LIFT * joints["lift"]
        # Contact failures (arm or base hitting something) shake the camera
        # while the robot struggles against the obstruction.
        v = self._visit
        if (
            v.failure is not None
            and v.t_fail is not None
            and v.failure.kind in ("manipulation", "navigation")
            and v.t_fail <= tau <= v.t_fail + self.params.failure_reaction
        ):
            phase = tau - v.t_fail
            ox += 6.0 * math.sin(2.0 * math.pi * 3.0 * phase)
            oy += 4.0 * math.sin(2.0 * math.pi * 3.7 * phase + 1.0)
        return ox, oy

    # -- imagery ---------------------------------------------------------------

    def _make_texture(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed ^ 0x5EED1)
        tex = rng.integers(0, 256, size=(768, 1024)).astype(np.float64)
        for _ in range(3):  # box blur for block-matchable, compressible texture
            tex = (
                tex
                + np.roll(tex, 1, 0)
                + np.roll(tex, -1, 0)
                + np.roll(tex, 1, 1)
                + np.roll(tex, -1, 1)
            ) / 5.0
        tex = (tex - tex.min()) / (tex.max() - tex.min())
        return (tex * 255.0).astype(np.uint8)

    def _render_image(self, tau: float, path: str) -> None:
        from PIL import Image

        w, h = self.params.image_size
        ox, oy = self._image_offsets(tau)
        ix = int(round(ox)) % (self._texture.shape[1] - w)
        iy = int(round(oy)) % (self._texture.shape[0] - h)
        view = self._texture[iy : iy + h, ix : ix + w].astype(np.float64)

        # Motion blur proportional to apparent speed keeps a clarity gradient.
        if self._last_image_offsets is not None:
            speed = math.hypot(ox - self._last_image_offsets[0], oy - self._last_image_offsets[1])
        else:
            speed = 0.0
        blur = min(9, 1 + 2 * int(round(speed / 6.0)))
        if blur > 1:
            kernel = np.ones(blur) / blur
            view = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="same"), 1, view)
        noise = np.random.default_rng(int(tau * 1000) ^ 0xA11CE).normal(0.0, 2.0, size=view.shape)
        out = np.clip(view + noise, 0, 255).astype(np.uint8)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        Image.fromarray(out, mode="L").save(path)

    def _detections_at(self, tau: float, image_name: str) -> DetectionRecord | None:
        v = self._visit
        if v.kind not in ("detection", "manipulation"):
            return None
        if v.failure is not None and v.failure.kind == "detection":
            return DetectionRecord(t=tau, image=image_name, objects=())
        label = _state_target_label(v.state)
        u = (tau - v.entry_t) / v.dwell if v.dwell > 0 else 1.0
        dist = max(0.4, 1.6 - 0.8 * u)
        ox, _ = self._image_offsets(tau)
        w, h = self.params.image_size
        cx = (w / 2 + 30 * math.sin(ox / 50.0)) % (w - 80)
        box = (cx, h * 0.35, cx + 64.0, h * 0.35 + 56.0)
        objects = [
            DetectedObject(object_id=f"{label}_1", label=label, box=box, distance=round(dist, 3)),
            DetectedObject(
                object_id="surface_1",
                label="table" if v.kind == "manipulation" else "shelf",
                box=(10.0, h * 0.55, w - 10.0, h - 10.0),
                distance=round(dist + 0.35, 3),
            ),
        ]
        return DetectionRecord(t=tau, image=image_name, objects=tuple(objects))

    # -- stepping ----------------------------------------------------------------

    def step(self) -> "SimStep":
        """Advance one frame interval; returns everything that slice produced."""
        if self.done:
            raise RonarError("simulation already finished")
        p = self.params
        t0, t1 = self.t, self.t + p.interval
        samples: list[tuple[str, str, float, object]] = []
        transitions: list[PlannerTransition] = []
        labels: list[FailureLabel] = []
        detections: list[DetectionRecord] = []
        if self.frame_index == 0:
            transitions.append(self._initial_transition)

        remaining = t1
        while True:
            v = self._visit
            # Failure onset inside this slice.
            if v.failure is not None and not v.failed and v.t_fail is not None and v.t_fail <= remaining:
                v.failed = True
                spec = v.failure
                reason, recovery = _DEFAULT_REASONS[spec.kind]
                labels.append(
                    FailureLabel(
                        t=v.t_fail,
                        reason=spec.reason or reason.format(state=v.state),
                        recovery=spec.recovery or recovery.format(state=v.state),
                    )
                )
                self._labels_emitted.append(labels[-1])
            exit_t = v.exit_t + (p.failure_reaction if v.t_fail is not None else 0.0)
            if exit_t > remaining:
                break
            # Leave the current visit.
            self._emit_samples(samples, detections, t0, exit_t)
            t0 = exit_t
            self.pose = self._pose_at(exit_t)
            self.joints = self._joints_at(exit_t)
            self.path_len = self._path_len_at(exit_t)
            nxt, outcome = self._route(v)
            if nxt is None:
                break  # waiting for an intervention in query_user
            transitions.append(
                PlannerTransition(t=exit_t, from_state=v.state, to_state=nxt, outcome=outcome)
            )
            if nxt in (TERMINAL_COMPLETE, TERMINAL_ABORTED):
                self.state = nxt
                self.done = True
                break
            self.state = nxt
            self._visit = self._enter(nxt, exit_t)

        # Tail samples keep streaming (static pose) so the final transition
        # is covered by at least one aligned frame.
        self._emit_samples(samples, detections, t0, t1)

        frame = self._frame_at(t1)
        self.t = t1
        self.frame_index += 1
        return SimStep(
            t=self.t,
            frame=frame,
            samples=samples,
            transitions=transitions,
            failure_labels=labels,
            detections=detections,
            done=self.done,
            state=self.state,
        )

    def emit_tail(self, n_intervals: int = 2) -> list[tuple[str, str, float, object]]:
        """Static samples after termination so the final planner transition
        is covered by at least one aligned frame."""
        samples: list[tuple[str, str, float, object]] = []
        detections: list[DetectionRecord] = []
        t0, t1 = self.t, self.t + n_intervals * self.params.interval
        self._emit_samples(samples, detections, t0, t1)
        self.t = t1
        return samples

    def _route(self, visit: _Visit) -> tuple[str | None, str]:
        """Pick the outgoing transition when a visit ends."""
        if visit.kind == "query_user":
            action = None
            if self._pending_interventions:
                action = self._pending_interventions.pop(0)
            elif self.auto_intervene:
                action = "teleop_ack" if self._recoverable() else "abort"
            if action is None:
                visit.dwell += self.params.interval  # keep waiting
                return None, ""
            return self.machine.next_state(visit.state, action), "success" if action != "abort" else "aborted"
        if visit.kind == "teleoperation":
            return self.machine.next_state(visit.state, "retry"), "success"
        if visit.failed:
            self._last_failed_recoverable = visit.failure.recoverable
            return self.machine.next_state(visit.state, "failure"), "failure"
        return self.machine.next_state(visit.state, "success"), "success"

    def _recoverable(self) -> bool:
        return getattr(self, "_last_failed_recoverable", True)

    def _emit_samples(self, samples, detections, t0: float, t1: float) -> None:
        """Emit all grid samples with timestamps in [t0, t1)."""
        p = self.params
        for tau in _grid_points(t0, t1, p.odo_rate, self._grid_counts, "odo"):
            x, y, yaw = self._pose_at(tau)
            if not self._frozen_nav(tau):
                x += float(self.rng.normal(0.0, 0.001))
                y += float(self.rng.normal(0.0, 0.001))
                yaw += float(self.rng.normal(0.0, 0.002))
            samples.append(("odometry", "Internal", tau, [round(x, 6), round(y, 6), round(yaw, 6)]))
        for tau in _grid_points(t0, t1, p.joint_rate, self._grid_counts, "joint"):
            joints = self._joints_at(tau)
            pinned = (
                self._visit.failure is not None
                and self._visit.failure.kind == "manipulation"
                and self._visit.t_fail is not None
                and tau >= self._visit.t_fail - 1e-9
            )
            for name in JOINT_NAMES:
                value = joints[name]
                if not (pinned and name == "arm_extension"):
                    value += float(self.rng.normal(0.0, 0.0008))
                samples.append((f"joint/{name}", "Internal", tau, [round(value, 6)]))
        for tau in _grid_points(t0, t1, p.image_rate, self._grid_counts, "image"):
            k = round(tau * p.image_rate)
            name = f"images/head_{int(k):05d}.png"
            ox, oy = self._image_offsets(tau)
            if self.params.render_images and self.image_dir is not None:
                self._render_image(tau, os.path.join(self.image_dir, name))
                samples.append(("head_image", "Environment", tau, name))
            flow_px = 0.0
            if self._last_image_offsets is not None:
                flow_px = math.hypot(ox - self._last_image_offsets[0], oy - self._last_image_offsets[1])
            self._last_image_offsets = (ox, oy)
            flow = flow_px / 8.0 + abs(float(self.rng.normal(0.0, 0.03)))
            samples.append(("flow_magnitude", "Environment", tau, [round(flow, 6)]))
        for tau in _grid_points(t0, t1, p.detection_rate, self._grid_counts, "det"):
            k = round(tau * p.image_rate)
            image_name = f"images/head_{int(k):05d}.png"
            rec = self._detections_at(tau, image_name)
            if rec is not None:
                detections.append(rec)

    def _frame_at(self, tau: float) -> MultimodalFrame:
        pose = self._pose_at(tau)
        joints = self._joints_at(tau)
        prev = self._prev_frame
        deltas = MotionDeltas()
        flow = None
        if prev is not None:
            d_pos = math.hypot(pose[0] - prev.base_pose[0], pose[1] - prev.base_pose[1])
            d_rot = abs(wrap_angle(pose[2] - prev.base_pose[2]))
            d_cam = abs(wrap_angle(joints["head_pan"] - prev.joint_values["head_pan"])) + abs(
                wrap_angle(joints["head_tilt"] - prev.joint_values["head_tilt"])
            )
            d_arm = abs(joints["arm_extension"] - prev.joint_values["arm_extension"]) + abs(
                joints["lift"] - prev.joint_values["lift"]
            )
            deltas = MotionDeltas(d_pos=d_pos, d_rot=d_rot, d_cam=d_cam, d_arm=d_arm)
            po = self._image_offsets(prev.timestamp)
            co = self._image_offsets(tau)
            flow = math.hypot(co[0] - po[0], co[1] - po[1]) / 8.0
        frame = MultimodalFrame(
            index=self.frame_index,
            timestamp=tau,
            base_pose=pose,
            joint_values=joints,
            planner_state=self.state,
            deltas=deltas,
            flow_magnitude=flow,
        )
        self._prev_frame = frame
        return frame


def _grid_points(t0: float, t1: float, rate: float, counts: dict, key: str):
    """Yield grid timestamps k/rate with t0 <= k/rate < t1, statefully."""
    out = []
    k = counts[key]
    while k / rate < t1 - 1e-12:
        tau = k / rate
        if tau >= t0 - 1e-12:
            out.append(round(tau, 6))
        k += 1
    counts[key] = k
    return out


@dataclass
class SimStep:
    t: float
    frame: MultimodalFrame
    samples: list
    transitions: list[PlannerTransition]
    failure_labels: list[FailureLabel]
    detections: list[DetectionRecord]
    done: bool
    state: str


@dataclass
class GroundTruth:
    failure_times: list[float]
    reasons: list[str]
    recoveries: list[str]
    planner_path: list[str]


def generate_episode(
    machine: StateMachine,
    seed: int,
    failures: list[FailureSpec],
    out_dir: str,
    task: TaskDef,
    episode_id: str | None = None,
    params: SimParams = SimParams(),
    robot_config: RobotConfig = DEFAULT_ROBOT_CONFIG,
) -> tuple[str, GroundTruth]:
    """Run the simulator to completion and write a schema-valid episode.

    Returns (episode.jsonl path, ground truth). Byte-identical output for
    identical (machine, seed, failures, params).
    """
    episode_id = episode_id or f"{task.name}_seed{seed}"
    episode_dir = os.path.join(out_dir, episode_id)
    os.makedirs(episode_dir, exist_ok=True)
    sim = TaskSimulator(
        machine,
        seed=seed,
        failures=failures,
        params=params,
        task=task,
        auto_intervene=True,
        image_dir=episode_dir,
    )
    records: list[tuple[float, int, str, dict]] = []
    truth = GroundTruth(failure_times=[], reasons=[], recoveries=[], planner_path=[machine.initial])
    guard = 0
    while not sim.done:
        step = sim.step()
        guard += 1
        if guard > 30000:
            raise RonarError("simulation did not terminate")
        for tr in step.transitions:
            records.append(
                (tr.t, 0, "planner", {"kind": "planner", "t": round(tr.t, 6), "from_state": tr.from_state, "to_state": tr.to_state, "outcome": tr.outcome})
            )
            if tr.to_state != truth.planner_path[-1]:
                truth.planner_path.append(tr.to_state)
        for stream, category, tau, value in step.samples:
            wire = {"image": value} if isinstance(value, str) else value
            records.append(
                (tau, 1, stream, {"kind": "sample", "stream": stream, "category": category, "t": tau, "value": wire})
            )
        for det in step.detections:
            records.append(
                (
                    det.t,
                    2,
                    "detection",
                    {
                        "kind": "detection",
                        "t": round(det.t, 6),
                        "image": det.image,
                        "objects": [o.to_dict() for o in det.objects],
                    },
                )
            )
        for label in step.failure_labels:
            records.append(
                (
                    label.t,
                    3,
                    "failure",
                    {"kind": "failure_label", "t": round(label.t, 6), "reason": label.reason, "recovery": label.recovery},
                )
            )
            truth.failure_times.append(label.t)
            truth.reasons.append(label.reason)
            truth.recoveries.append(label.recovery)

    for stream, category, tau, value in sim.emit_tail():
        wire = {"image": value} if isinstance(value, str) else value
        records.append(
            (tau, 1, stream, {"kind": "sample", "stream": stream, "category": category, "t": tau, "value": wire})
        )

    records.sort(key=lambda r: (r[0], r[1], r[2]))
    path = os.path.join(episode_dir, "episode.jsonl")
    meta = {
        "kind": "meta",
        "episode_id": episode_id,
        "task_name": task.name,
        "robot_config": robot_config.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta) + "\n")
        for _, _, _, record in records:
            fh.write(json.dumps(record) + "\n")
    return path, truth


SUITE_FAILURES: dict[str, dict[int, list[FailureSpec]]] = {
    "put_cup": {
        0: [],
        1: [FailureSpec("pick-cup", 2.0, "manipulation")],
        3: [
            FailureSpec("navigate-to-table", 3.0, "navigation"),
            FailureSpec("look-for-cup", 1.5, "detection"),
            FailureSpec("place-in-sink", 2.0, "manipulation"),
        ],
    },
    "microwave_food": {
        0: [],
        1: [FailureSpec("open-microwave-door", 2.0, "manipulation")],
        3: [
            FailureSpec("navigate-to-food", 3.0, "navigation"),
            FailureSpec("look-for-food", 1.5, "detection"),
            FailureSpec("place-food-in-microwave", 2.0, "manipulation"),
        ],
    },
    "hang_hat": {
        0: [],
        1: [FailureSpec("hang-hat", 2.0, "manipulation")],
        3: [
            FailureSpec("navigate-to-human", 3.0, "navigation"),
            FailureSpec("look-for-hook", 1.5, "detection"),
            FailureSpec("receive-hat", 2.0, "manipulation"),
        ],
    },
    "collect_clothes": {
        0: [],
        1: [FailureSpec("look-for-clothes", 1.5, "detection")],
        3: [
            FailureSpec("navigate-to-clothes", 3.0, "navigation"),
            FailureSpec("classify-dirty-clothes", 1.5, "detection"),
            FailureSpec("pick-up-clothes", 2.0, "manipulation"),
        ],
    },
}


def generate_suite(out_dir: str, render_images: bool = False, base_seed: int = 100) -> list[str]:
    """Materialize the 12 packaged episodes (4 tasks x 0/1/3 failures)."""
    paths = []
    for ti, (task_name, by_count) in enumerate(sorted(SUITE_FAILURES.items())):
        task = TASKS[task_name]
        machine = synthesize_machine(list(task.states))
        for ci, (count, failures) in enumerate(sorted(by_count.items())):
            seed = base_seed + 10 * ti + ci
            params = SimParams(render_images=render_images)
            episode_id = f"{task_name}_{count}f"
            path, _ = generate_episode(
                machine,
                seed=seed,
                failures=list(failures),
                out_dir=out_dir,
                task=task,
                episode_id=episode_id,
                params=params,
            )
            paths.append(path)
    return paths
