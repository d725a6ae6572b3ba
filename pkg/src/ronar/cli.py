"""Command-line interface. Run `ronar <command> --help` for details."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import episode_log, eval_harness, key_event, narrator, pipeline, scene_graph, vision
from .errors import RonarError
from .provider import load_provider
from .task_sim import FailureSpec, SimParams, TASKS, generate_episode, generate_suite, synthesize_machine


def _provider_from_arg(spec: str):
    if spec == "mock":
        return load_provider({"provider": "mock"})
    return load_provider(spec)


def _add_pipeline_args(sub, with_provider: bool = False):
    sub.add_argument("--interval", type=float, default=episode_log.DEFAULT_INTERVAL)
    sub.add_argument("--threshold", type=float, default=key_event.DEFAULT_THRESHOLD)
    sub.add_argument("--modalities", default="E,I,TP", help="comma-separated subset of E,I,TP")
    if with_provider:
        sub.add_argument("--provider", default="mock", help="'mock' or a provider config JSON path")


def _pipe_config(args) -> pipeline.PipelineConfig:
    return pipeline.PipelineConfig(
        interval=args.interval,
        threshold=args.threshold,
        modalities=key_event.parse_modalities(args.modalities),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ronar", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("validate", help="validate an episode JSONL file")
    p.add_argument("episode")

    p = commands.add_parser("align", help="align an episode to fixed-interval frames")
    p.add_argument("episode")
    p.add_argument("--interval", type=float, default=episode_log.DEFAULT_INTERVAL)
    p.add_argument("--out", default="frames.jsonl")

    p = commands.add_parser("clarity", help="print an image's clarity score")
    p.add_argument("image")

    p = commands.add_parser("flow", help="print mean flow magnitude between two images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--block", type=int, default=vision.DEFAULT_BLOCK_SIZE)
    p.add_argument("--radius", type=int, default=vision.DEFAULT_SEARCH_RADIUS)

    p = commands.add_parser("keyframes", help="select key events from an episode")
    p.add_argument("episode")
    _add_pipeline_args(p)
    p.add_argument("--out", default="events.jsonl")

    p = commands.add_parser("scene", help="print the scene digest at a key event")
    p.add_argument("episode")
    p.add_argument("--event", type=int, required=True, help="key event position (0-based)")
    _add_pipeline_args(p)

    p = commands.add_parser("summarize", help="print the experience summary at a key event")
    p.add_argument("episode")
    p.add_argument("--event", type=int, required=True)
    _add_pipeline_args(p, with_provider=True)

    p = commands.add_parser("narrate", help="narrate every key event of an episode")
    p.add_argument("episode")
    p.add_argument("--mode", default="info", choices=list(narrator.MODES))
    _add_pipeline_args(p, with_provider=True)
    p.add_argument("--out", default="narration.jsonl")

    p = commands.add_parser("analyze", help="run one failure-analysis task over an episode")
    p.add_argument("episode")
    p.add_argument("--task", required=True, choices=list(narrator.FAILURE_TASKS))
    _add_pipeline_args(p, with_provider=True)
    p.add_argument("--query-t", type=float, default=None, help="defaults to the first failure label")
    p.add_argument("--out", default=None, help="write the analysis record as JSON")

    p = commands.add_parser("simulate", help="generate synthetic episodes")
    p.add_argument("--task", choices=sorted(TASKS), default="put_cup")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--failures", default=None, help="JSON file with failure specs")
    p.add_argument("--out", default="episodes")
    p.add_argument("--episode-id", default=None)
    p.add_argument("--no-images", action="store_true")
    p.add_argument("--suite", action="store_true", help="emit the 12 packaged episodes instead")
    p.add_argument("--machine-out", default=None, help="also write the state-machine description JSON")

    p = commands.add_parser("sweep", help="threshold x modality sweep over an episode directory")
    p.add_argument("episode_dir")
    p.add_argument("--thresholds", default="0,5,10,20,40,80,160")
    p.add_argument(
        "--modalities",
        default="E;I;TP;E,I;E,TP;I,TP;E,I,TP",
        help="semicolon-separated modality sets",
    )
    p.add_argument("--tolerance", type=float, default=key_event.DEFAULT_CAPTURE_TOLERANCE)
    p.add_argument("--interval", type=float, default=episode_log.DEFAULT_INTERVAL)
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--no-figures", action="store_true")

    p = commands.add_parser("serve", help="run the HTTP/WebSocket service")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--config", default=None, help="service config JSON (RONAR_* env vars override it)")
    p.add_argument("--episodes", default=None, help="episode directory (overrides config file)")
    p.add_argument("--provider", default=None, help="'mock' or a provider config JSON path")
    p.add_argument("--speed", type=float, default=None, help="replay speed multiplier")
    p.add_argument("--ui", default=None, help="directory of built console assets")
    return parser


def _load_episodes_dir(directory: str):
    episodes = []
    for entry in sorted(os.listdir(directory)):
        full = os.path.join(directory, entry)
        if os.path.isdir(full) and os.path.isfile(os.path.join(full, "episode.jsonl")):
            episodes.append(episode_log.load_episode(os.path.join(full, "episode.jsonl")))
        elif entry.endswith(".jsonl"):
            episodes.append(episode_log.load_episode(full))
    if not episodes:
        raise RonarError(f"no episodes found under {directory!r}")
    return episodes


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except RonarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "validate":
        episode = episode_log.load_episode(args.episode)
        n_samples = sum(len(s.samples) for s in episode.streams.values())
        print(
            f"{episode.episode_id}: valid ({len(episode.streams)} streams, {n_samples} samples, "
            f"{len(episode.planner_events)} planner events, {len(episode.failure_labels)} failure labels)"
        )
        return 0

    if args.command == "align":
        episode = episode_log.load_episode(args.episode)
        frames = episode_log.align(episode, args.interval)
        episode_log.write_frames(frames, args.out)
        print(f"{len(frames)} frames -> {args.out}")
        return 0

    if args.command == "clarity":
        print(f"{vision.clarity_score(vision.load_image(args.image)):.6f}")
        return 0

    if args.command == "flow":
        flow = vision.dense_flow(
            vision.load_image(args.image_a),
            vision.load_image(args.image_b),
            block_size=args.block,
            search_radius=args.radius,
        )
        print(f"{vision.mean_flow_magnitude(flow):.6f}")
        return 0

    if args.command == "keyframes":
        episode = episode_log.load_episode(args.episode)
        result = pipeline.extract_events(episode, _pipe_config(args))
        with open(args.out, "w", encoding="utf-8") as fh:
            for event in result.events:
                fh.write(json.dumps(event.to_record()) + "\n")
        print(f"{len(result.events)} key events -> {args.out}")
        return 0

    if args.command == "scene":
        episode = episode_log.load_episode(args.episode)
        result = pipeline.extract_events(episode, _pipe_config(args))
        summaries = pipeline.summarize_events(result, provider=None)
        if not 0 <= args.event < len(summaries):
            raise RonarError(f"event index {args.event} out of range (0..{len(summaries) - 1})")
        print(summaries[args.event].environment.digest)
        return 0

    if args.command == "summarize":
        episode = episode_log.load_episode(args.episode)
        result = pipeline.extract_events(episode, _pipe_config(args))
        summaries = pipeline.summarize_events(result, _provider_from_arg(args.provider))
        if not 0 <= args.event < len(summaries):
            raise RonarError(f"event index {args.event} out of range (0..{len(summaries) - 1})")
        print(summaries[args.event].text())
        return 0

    if args.command == "narrate":
        episode = episode_log.load_episode(args.episode)
        result = pipeline.extract_events(episode, _pipe_config(args))
        provider = _provider_from_arg(args.provider)
        pipeline.summarize_events(result, provider)
        pipeline.narrate_episode(result, provider, args.mode)
        with open(args.out, "w", encoding="utf-8") as fh:
            for instance in result.narrations:
                fh.write(json.dumps(instance.to_record()) + "\n")
        print(f"{len(result.narrations)} narrations -> {args.out}")
        return 0

    if args.command == "analyze":
        episode = episode_log.load_episode(args.episode)
        result = pipeline.extract_events(episode, _pipe_config(args))
        provider = _provider_from_arg(args.provider)
        pipeline.summarize_events(result, provider)
        pipeline.narrate_episode(result, provider, "info")
        query_t = args.query_t
        if query_t is None and episode.failure_labels:
            query_t = episode.failure_labels[0].t
        history = narrator.NarrationHistory(result.narrations)
        analysis = narrator.analyze_failure(
            args.task,
            result.summaries,
            history,
            provider,
            query_t=query_t,
            episode_range=(episode.t_start, episode.t_end),
        )
        record = analysis.to_record()
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                json.dump(record, fh, indent=2)
        print(json.dumps(record, indent=2))
        return 0

    if args.command == "simulate":
        if args.suite:
            paths = generate_suite(args.out, render_images=not args.no_images)
            print(f"{len(paths)} episodes -> {args.out}")
            return 0
        task = TASKS[args.task]
        machine = synthesize_machine(list(task.states))
        if args.machine_out:
            with open(args.machine_out, "w", encoding="utf-8") as fh:
                json.dump(machine.to_json(), fh, indent=2)
        failures = []
        if args.failures:
            with open(args.failures, "r", encoding="utf-8") as fh:
                failures = [FailureSpec.from_dict(d) for d in json.load(fh)]
        params = SimParams(render_images=not args.no_images)
        path, truth = generate_episode(
            machine,
            seed=args.seed,
            failures=failures,
            out_dir=args.out,
            task=task,
            episode_id=args.episode_id,
            params=params,
        )
        print(f"episode -> {path}")
        for t, reason in zip(truth.failure_times, truth.reasons):
            print(f"  failure at t={t:.2f}: {reason}")
        return 0

    if args.command == "sweep":
        episodes = _load_episodes_dir(args.episode_dir)
        thresholds = [float(v) for v in args.thresholds.split(",") if v.strip()]
        modality_sets = [key_event.parse_modalities(part) for part in args.modalities.split(";") if part.strip()]
        result = eval_harness.sweep(
            episodes,
            thresholds=thresholds,
            modality_sets=modality_sets,
            tolerance=args.tolerance,
            interval=args.interval,
        )
        eval_harness.write_csv(result, args.out)
        print(eval_harness.format_table(result))
        outputs = [args.out]
        if not args.no_figures:
            outputs += eval_harness.render_figures(result, os.path.splitext(args.out)[0])
        print("wrote: " + ", ".join(outputs))
        for err in result.errors:
            print(f"cell error: {err}", file=sys.stderr)
        return 0

    if args.command == "serve":
        from .service import ServiceConfig, serve

        config = ServiceConfig.load(args.config)
        if args.episodes is not None:
            config.episodes_dir = args.episodes
        if args.provider is not None:
            config.provider_config = {"provider": "mock"} if args.provider == "mock" else args.provider
        if args.speed is not None:
            config.replay_speed = args.speed
        if args.ui is not None:
            config.ui_dir = args.ui
        if config.episodes_dir == "." and args.episodes is None and args.config is None:
            config.episodes_dir = "./episodes"
        serve(config, host=args.host, port=args.port)
        return 0

    raise RonarError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
