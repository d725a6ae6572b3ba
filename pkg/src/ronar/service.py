"""HTTP + WebSocket service for the operator console.

Offline sessions replay an episode file through the full pipeline at a
configurable speed multiplier; live sessions drive the task simulator
step-by-step as the stand-in robot (the adapter seam a real robot bridge
would fill). Every session keeps a seq-numbered message history; a client
joining late receives that snapshot and then live messages with no gap or
duplicate.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import os
from dataclasses import dataclass, field as dataclass_field

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from pydantic import BaseModel

from . import episode_log, key_event, pipeline
from .episode_log import EpisodeLog
from .errors import RonarError
from .narrator import Narrator
from .provider import load_provider
from .summarizer import SummaryContext, summarize_event
from .task_sim import (
    DEFAULT_ROBOT_CONFIG,
    INTERVENTIONS,
    SimParams,
    TASKS,
    TaskSimulator,
    synthesize_machine,
)

MESSAGE_KINDS = (
    "key_event",
    "summary_ready",
    "narration",
    "state_transition",
    "failure_label",
    "heartbeat",
)

CLIENT_BUFFER = 512  # messages; slower clients are disconnected
HEARTBEAT_SIM_SECONDS = 5.0


class PortInUse(RonarError):
    pass


class BadConfig(RonarError):
    pass


class SessionNotFound(RonarError):
    pass


@dataclass
class ServiceConfig:
    episodes_dir: str = "."
    provider_config: dict = dataclass_field(default_factory=lambda: {"provider": "mock"})
    replay_speed: float = 10.0  # x real time; <= 0 replays as fast as possible
    default_mode: str = "info"
    threshold: float = key_event.DEFAULT_THRESHOLD
    modalities: frozenset[str] = frozenset(key_event.MODALITIES)
    interval: float = episode_log.DEFAULT_INTERVAL
    ui_dir: str | None = None
    live_seed: int = 7

    @classmethod
    def load(cls, path: str | None = None, env: dict | None = None) -> "ServiceConfig":
        """Config file plus RONAR_* environment-variable overrides.

        File keys mirror the field names; recognized env vars are
        RONAR_EPISODES_DIR, RONAR_REPLAY_SPEED, RONAR_THRESHOLD,
        RONAR_MODALITIES, RONAR_INTERVAL, RONAR_UI_DIR, RONAR_PROVIDER
        (a provider-config JSON path or "mock") and RONAR_DEFAULT_MODE.
        """
        env = os.environ if env is None else env
        raw: dict = {}
        if path is not None:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        config = cls(
            episodes_dir=raw.get("episodes_dir", cls.episodes_dir),
            provider_config=raw.get("provider_config", {"provider": "mock"}),
            replay_speed=float(raw.get("replay_speed", cls.replay_speed)),
            default_mode=raw.get("default_mode", cls.default_mode),
            threshold=float(raw.get("threshold", cls.threshold)),
            modalities=key_event.parse_modalities(raw.get("modalities", "E,I,TP")),
            interval=float(raw.get("interval", cls.interval)),
            ui_dir=raw.get("ui_dir"),
            live_seed=int(raw.get("live_seed", cls.live_seed)),
        )
        if "RONAR_EPISODES_DIR" in env:
            config.episodes_dir = env["RONAR_EPISODES_DIR"]
        if "RONAR_REPLAY_SPEED" in env:
            config.replay_speed = float(env["RONAR_REPLAY_SPEED"])
        if "RONAR_THRESHOLD" in env:
            config.threshold = float(env["RONAR_THRESHOLD"])
        if "RONAR_MODALITIES" in env:
            config.modalities = key_event.parse_modalities(env["RONAR_MODALITIES"])
        if "RONAR_INTERVAL" in env:
            config.interval = float(env["RONAR_INTERVAL"])
        if "RONAR_UI_DIR" in env:
            config.ui_dir = env["RONAR_UI_DIR"]
        if "RONAR_DEFAULT_MODE" in env:
            config.default_mode = env["RONAR_DEFAULT_MODE"]
        if "RONAR_PROVIDER" in env:
            value = env["RONAR_PROVIDER"]
            config.provider_config = {"provider": "mock"} if value == "mock" else value
        return config


class CreateSession(BaseModel):
    episode_id: str | None = None
    live_task: str | None = None
    mode: str = "info"


class SetMode(BaseModel):
    mode: str


class Intervene(BaseModel):
    action: str


class _Subscriber:
    def __init__(self):
        self.queue: asyncio.Queue = asyncio.Queue(maxsize=CLIENT_BUFFER)
        self.dead = False


class Session:
    """One replay or live run; all messages pass through publish()."""

    def __init__(self, session_id: str, mode: str, source: str):
        self.session_id = session_id
        self.mode = mode
        self.source = source
        self.history: list[dict] = []
        self.subscribers: list[_Subscriber] = []
        self.finished = False
        self.task: asyncio.Task | None = None
        self.sim: TaskSimulator | None = None
        self.client_count = 0

    def publish(self, kind: str, t: float, payload: dict) -> None:
        # No awaits here: append + fan-out is atomic under the event loop,
        # which is what makes snapshot-then-live gap-free.
        message = {"seq": len(self.history), "kind": kind, "t": round(t, 6), "payload": payload}
        self.history.append(message)
        for sub in self.subscribers:
            if sub.dead:
                continue
            try:
                sub.queue.put_nowait(message)
            except asyncio.QueueFull:
                sub.dead = True  # documented backpressure rule

    def subscribe(self) -> tuple[list[dict], _Subscriber]:
        snapshot = list(self.history)
        sub = _Subscriber()
        self.subscribers.append(sub)
        return snapshot, sub

    def unsubscribe(self, sub: _Subscriber) -> None:
        if sub in self.subscribers:
            self.subscribers.remove(sub)


def _scan_episodes(directory: str) -> dict[str, str]:
    found: dict[str, str] = {}
    if not os.path.isdir(directory):
        return found
    for entry in sorted(os.listdir(directory)):
        full = os.path.join(directory, entry)
        if os.path.isdir(full) and os.path.isfile(os.path.join(full, "episode.jsonl")):
            found[entry] = os.path.join(full, "episode.jsonl")
        elif entry.endswith(".jsonl"):
            found[entry[: -len(".jsonl")]] = full
    return found


async def _pace(dt: float, speed: float) -> None:
    await asyncio.sleep(dt / speed if speed > 0 else 0)


def create_app(config: ServiceConfig) -> FastAPI:
    if not os.path.isdir(config.episodes_dir):
        raise BadConfig(f"episodes dir {config.episodes_dir!r} does not exist")
    provider = load_provider(config.provider_config)
    app = FastAPI(title="ronar")
    episodes = _scan_episodes(config.episodes_dir)
    sessions: dict[str, Session] = {}
    session_ids = itertools.count(1)
    pipeline_cache: dict[str, pipeline.PipelineResult] = {}

    pipe_config = pipeline.PipelineConfig(
        interval=config.interval,
        threshold=config.threshold,
        modalities=config.modalities,
    )

    def _episode_path(episode_id: str) -> str:
        if episode_id not in episodes:
            raise HTTPException(status_code=404, detail=f"unknown episode {episode_id!r}")
        return episodes[episode_id]

    def _pipeline_for(episode_id: str) -> pipeline.PipelineResult:
        if episode_id not in pipeline_cache:
            episode = episode_log.load_episode(_episode_path(episode_id))
            result = pipeline.extract_events(episode, pipe_config)
            pipeline.summarize_events(result, provider)
            pipeline_cache[episode_id] = result
        return pipeline_cache[episode_id]

    def _get_session(session_id: str) -> Session:
        if session_id not in sessions:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return sessions[session_id]

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": len(sessions), "episodes": len(episodes)}

    @app.get("/episodes")
    def list_episodes():
        out = []
        for episode_id, path in episodes.items():
            episode = episode_log.load_episode(path)
            out.append(
                {
                    "episode_id": episode.episode_id,
                    "task_name": episode.task_name,
                    "id": episode_id,
                    "t_start": episode.t_start,
                    "t_end": episode.t_end,
                    "n_failures": len(episode.failure_labels),
                    "n_planner_events": len(episode.planner_events),
                }
            )
        return out

    @app.get("/episodes/{episode_id}/events")
    def episode_events(episode_id: str):
        result = _pipeline_for(episode_id)
        return [e.to_record() for e in result.events]

    @app.get("/episodes/{episode_id}/narrations")
    def episode_narrations(episode_id: str):
        result = _pipeline_for(episode_id)
        if not result.narrations:
            pipeline.narrate_episode(result, provider, config.default_mode)
        return [n.to_record() for n in result.narrations]

    @app.get("/episodes/{episode_id}/timeline")
    def episode_timeline(episode_id: str):
        episode = episode_log.load_episode(_episode_path(episode_id))
        return {
            "planner": [
                {"t": e.t, "from_state": e.from_state, "to_state": e.to_state, "outcome": e.outcome}
                for e in episode.planner_events
            ],
            "failure_labels": [
                {"t": f.t, "reason": f.reason, "recovery": f.recovery} for f in episode.failure_labels
            ],
        }

    @app.get("/episodes/{episode_id}/image/{name}")
    def episode_image(episode_id: str, name: str):
        from fastapi.responses import FileResponse

        directory = os.path.dirname(_episode_path(episode_id))
        path = os.path.join(directory, "images", os.path.basename(name))
        if not os.path.isfile(path):
            raise HTTPException(status_code=404, detail="no such image")
        return FileResponse(path, media_type="image/png")

    @app.get("/episodes/{episode_id}/frames")
    def episode_frames(episode_id: str, stride: int = 5):
        """Decimated aligned frames for the console's raw-signal panel."""
        result = _pipeline_for(episode_id)
        out = []
        for frame in result.frames[:: max(1, stride)]:
            out.append(
                {
                    "t": frame.timestamp,
                    "base_pose": frame.base_pose,
                    "joint_values": frame.joint_values,
                    "flow_magnitude": frame.flow_magnitude,
                    "planner_state": frame.planner_state,
                    "head_image": frame.head_image,
                }
            )
        return out

    @app.post("/sessions")
    async def create_session(body: CreateSession):
        if body.mode not in ("alert", "info", "debug"):
            raise HTTPException(status_code=422, detail=f"unknown mode {body.mode!r}")
        if (body.episode_id is None) == (body.live_task is None):
            raise HTTPException(status_code=422, detail="give exactly one of episode_id or live_task")
        session_id = f"s{next(session_ids)}"
        if body.episode_id is not None:
            path = _episode_path(body.episode_id)
            session = Session(session_id, body.mode, source=body.episode_id)
            session.task = asyncio.create_task(_run_offline(session, path))
        else:
            if body.live_task not in TASKS:
                raise HTTPException(status_code=422, detail=f"unknown task {body.live_task!r}")
            session = Session(session_id, body.mode, source=body.live_task)
            session.task = asyncio.create_task(_run_live(session, body.live_task))
        sessions[session_id] = session
        return {"session_id": session_id, "mode": session.mode, "source": session.source}

    @app.post("/sessions/{session_id}/mode")
    def set_mode(session_id: str, body: SetMode):
        if body.mode not in ("alert", "info", "debug"):
            raise HTTPException(status_code=422, detail=f"unknown mode {body.mode!r}")
        session = _get_session(session_id)
        session.mode = body.mode
        return {"session_id": session_id, "mode": session.mode}

    @app.post("/sessions/{session_id}/intervene")
    def intervene(session_id: str, body: Intervene):
        if body.action not in INTERVENTIONS:
            raise HTTPException(status_code=422, detail=f"unknown action {body.action!r}")
        session = _get_session(session_id)
        if session.sim is None:
            raise HTTPException(status_code=409, detail="session is not a live run")
        session.sim.intervene(body.action)
        return {"session_id": session_id, "queued": body.action, "sim_t": session.sim.t}

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str):
        if session_id not in sessions:
            await websocket.close(code=4004, reason="unknown session")
            return
        session = sessions[session_id]
        await websocket.accept()
        session.client_count += 1
        snapshot, sub = session.subscribe()
        try:
            for message in snapshot:
                await websocket.send_text(json.dumps(message))
            while True:
                if sub.dead:
                    break
                if session.finished and sub.queue.empty():
                    break
                try:
                    message = await asyncio.wait_for(sub.queue.get(), timeout=0.2)
                except asyncio.TimeoutError:
                    continue
                await websocket.send_text(json.dumps(message))
        except WebSocketDisconnect:
            pass
        finally:
            session.client_count -= 1
            session.unsubscribe(sub)
            try:
                await websocket.close()
            except Exception:
                pass

    async def _run_offline(session: Session, path: str) -> None:
        episode = episode_log.load_episode(path)
        result = pipeline.extract_events(episode, pipe_config)
        spec = pipeline.task_spec_for(episode)
        narrator = Narrator(provider, episode.robot_config)

        timeline: list[tuple[float, int, str, object]] = []
        for e in episode.planner_events:
            timeline.append((e.t, 0, "state_transition", e))
        for f in episode.failure_labels:
            timeline.append((f.t, 1, "failure_label", f))
        for ev in result.events:
            timeline.append((ev.timestamp, 2, "key_event", ev))
        timeline.sort(key=lambda item: (item[0], item[1]))

        t0 = episode.t_start
        session.publish("heartbeat", t0, {"note": "session started", "source": session.source})
        clock = t0
        next_beat = t0 + HEARTBEAT_SIM_SECONDS
        prev_event = None
        for t, _, kind, item in timeline:
            await _pace(max(0.0, t - clock), config.replay_speed)
            clock = t
            while clock >= next_beat:
                session.publish("heartbeat", next_beat, {"note": "alive"})
                next_beat += HEARTBEAT_SIM_SECONDS
            if kind == "state_transition":
                session.publish(
                    "state_transition",
                    t,
                    {"from_state": item.from_state, "to_state": item.to_state, "outcome": item.outcome},
                )
            elif kind == "failure_label":
                session.publish("failure_label", t, {"reason": item.reason, "recovery": item.recovery})
            else:
                session.publish("key_event", t, item.to_record())
                ctx = SummaryContext(
                    episode=episode, task_spec=spec, provider=provider, prev_event=prev_event
                )
                summary = summarize_event(item, ctx)
                prev_event = item
                session.publish("summary_ready", t, summary.to_record())
                instance = narrator.narrate(summary, session.mode)
                session.publish("narration", t, instance.to_record())
        session.publish("heartbeat", clock, {"note": "session finished"})
        session.finished = True

    async def _run_live(session: Session, task_name: str) -> None:
        task = TASKS[task_name]
        machine = synthesize_machine(list(task.states))
        failures = _default_live_failures(task_name)
        sim = TaskSimulator(
            machine,
            seed=config.live_seed,
            failures=failures,
            params=SimParams(render_images=False),
            task=task,
            auto_intervene=False,
        )
        session.sim = sim
        live_episode = EpisodeLog(
            episode_id=f"live-{session.session_id}",
            task_name=task_name,
            streams={},
            planner_events=[],
            detections=[],
            failure_labels=[],
            robot_config=DEFAULT_ROBOT_CONFIG,
        )
        classifier = key_event.OnlineClassifier(
            threshold=config.threshold, modalities=config.modalities
        )
        narrator = Narrator(provider, DEFAULT_ROBOT_CONFIG)
        prev_event = None
        steps = 0
        session.publish("heartbeat", 0.0, {"note": "live session started", "task": task_name})
        while not sim.done:
            step = sim.step()
            steps += 1
            live_episode.planner_events.extend(step.transitions)
            live_episode.detections.extend(step.detections)
            for tr in step.transitions:
                session.publish(
                    "state_transition",
                    tr.t,
                    {"from_state": tr.from_state, "to_state": tr.to_state, "outcome": tr.outcome},
                )
            for label in step.failure_labels:
                live_episode.failure_labels.append(label)
                session.publish("failure_label", label.t, {"reason": label.reason, "recovery": label.recovery})
            event = classifier.push(step.frame)
            if event is not None:
                session.publish("key_event", event.timestamp, event.to_record())
                ctx = SummaryContext(
                    episode=live_episode, task_spec=task.spec(), provider=provider, prev_event=prev_event
                )
                summary = summarize_event(event, ctx)
                prev_event = event
                session.publish("summary_ready", event.timestamp, summary.to_record())
                instance = narrator.narrate(summary, session.mode)
                session.publish("narration", event.timestamp, instance.to_record())
            if steps % int(HEARTBEAT_SIM_SECONDS / config.interval) == 0:
                session.publish("heartbeat", step.t, {"note": "alive", "state": step.state})
            await _pace(config.interval, config.replay_speed)
        session.publish("heartbeat", sim.t, {"note": "live session finished", "state": sim.state})
        session.finished = True

    if config.ui_dir and os.path.isdir(config.ui_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=config.ui_dir, html=True), name="ui")

    app.state.config = config
    app.state.sessions = sessions
    return app


def _default_live_failures(task_name: str):
    """Live demo runs inject the task's single-failure variant."""
    from .task_sim import SUITE_FAILURES

    variants = SUITE_FAILURES.get(task_name, {})
    return list(variants.get(1, []))


def serve(config: ServiceConfig, host: str = "127.0.0.1", port: int = 8080) -> None:
    import uvicorn

    app = create_app(config)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except OSError as exc:
        if exc.errno in (48, 98):
            raise PortInUse(f"port {port} already in use") from exc
        raise
