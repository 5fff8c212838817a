"""Command-line front end: render, label, run, and bench subcommands.

All outputs are deterministic under (args, seed): no timestamps, sorted JSON
keys, fixed-precision tables.  Exit codes: 0 success (or a cleared scene),
2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import ast
import dataclasses
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import json

import numpy as np

from ._pgm import encode_pgm
from .camera import DEFAULT_INTRINSICS, render
from .filter import FilterParams, NoCandidates
from .geom import EulerZXY, Pose3
from .gripper_quality import DEFAULT_GRIPPER, directional_quality_maps
from .scene import InvariantError, ParseError, Scene, load_events, load_scene
from .sim import (
    R_DOWN,
    EpisodeConfig,
    Timeout,
    run_benchmark,
    run_episode,
    trace_to_jsonl,
)

log = logging.getLogger(__name__)

_BENCH_MODES = ("closed_loop", "open_loop", "sampling_ol", "top_down")

_FILTER_KEYS = {f.name for f in dataclasses.fields(FilterParams)}
_EPISODE_KEYS = {f.name for f in dataclasses.fields(EpisodeConfig)} - {
    "scene", "events", "mode", "seed", "filter_params",
    "gripper", "reach_model", "intrinsics",
}


class CliError(Exception):
    """Configuration-level failure; maps to exit code 2."""


def _setup_logging() -> None:
    name = os.environ.get("GRASP_PF_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _parse_value(text: str):
    try:
        value = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text
    if isinstance(value, list):
        return tuple(value)
    return value


def _collect_params(pairs: Optional[Sequence[str]]) -> dict:
    out: dict = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise CliError(f"--params expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        out[key.strip()] = _parse_value(value.strip())
    return out


def _load_scene_file(path: str) -> tuple[Scene, tuple]:
    try:
        text = Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read scene file {path!r}: {exc}") from exc
    try:
        return load_scene(text), load_events(text)
    except (ParseError, InvariantError) as exc:
        raise CliError(f"bad scene file {path!r}: {exc}") from exc


def _down_observation(scene: Scene, distance: float, resolution: int):
    if scene.objects:
        xy = np.mean([obj.pose.t[:2] for obj in scene.objects], axis=0)
    else:
        xy = np.zeros(2)
    pos = np.array([xy[0], xy[1], scene.table_height + distance])
    return render(scene, Pose3(R_DOWN, pos), DEFAULT_INTRINSICS, resolution=resolution)


def _check_extra(params: dict, allowed: set) -> None:
    extra = sorted(set(params) - allowed)
    if extra:
        raise CliError(f"unknown --params keys: {', '.join(extra)}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _episode_config(args) -> EpisodeConfig:
    scene, events = _load_scene_file(args.scene)
    params = _collect_params(args.params)
    _check_extra(params, _FILTER_KEYS | _EPISODE_KEYS)
    try:
        fp = FilterParams(**{k: v for k, v in params.items() if k in _FILTER_KEYS})
        return EpisodeConfig(
            scene=scene,
            events=events,
            mode=args.mode,
            seed=args.seed,
            filter_params=fp,
            **{k: v for k, v in params.items() if k in _EPISODE_KEYS},
        )
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad configuration: {exc}") from exc


def _grasp_blob(g) -> dict:
    return {
        "p": [float(v) for v in g.p],
        "r": [[float(v) for v in row] for row in g.r],
        "d": float(g.d),
        "w_bin": int(g.w_bin),
    }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_render(args) -> int:
    scene, _ = _load_scene_file(args.scene)
    params = _collect_params(args.params)
    _check_extra(params, {"distance", "resolution"})
    distance = float(params.get("distance", 0.55))
    resolution = int(params.get("resolution", 32))
    if distance <= 0.0:
        raise CliError("distance must be > 0")
    obs = _down_observation(scene, distance, resolution)
    depth_mm = np.clip(np.round(obs.depth * 1000.0), 0, 65535).astype(np.uint16)
    # ids shifted by +2 so table (-2) and background (-1) stay representable
    ids = np.clip(obs.object_id.astype(np.int64) + 2, 0, 65535).astype(np.uint16)
    out = _out_dir(args)
    (out / "depth.pgm").write_bytes(encode_pgm(depth_mm))
    (out / "object_id.pgm").write_bytes(encode_pgm(ids))
    print(f"wrote {out / 'depth.pgm'} and {out / 'object_id.pgm'}")
    return 0


_LABEL_NAMES = (
    "q_level_1", "q_level_2", "q_level_3",
    "object_mask", "collision_free_narrow", "collision_free_wide",
)


def cmd_label(args) -> int:
    scene, _ = _load_scene_file(args.scene)
    params = _collect_params(args.params)
    _check_extra(params, {"distance", "resolution", "alpha", "beta", "gamma", "d"})
    distance = float(params.get("distance", 0.55))
    resolution = int(params.get("resolution", 32))
    alpha = float(params.get("alpha", 0.0))
    beta = float(params.get("beta", 0.0))
    gamma = float(params.get("gamma", 0.0))
    d = float(params.get("d", 0.02))
    if not (-math.pi < alpha <= math.pi):
        raise CliError("alpha must lie in (-pi, pi]")
    if abs(beta) > math.pi / 4 or abs(gamma) > math.pi / 4:
        raise CliError("beta and gamma must lie in [-pi/4, pi/4]")
    lo, hi = DEFAULT_GRIPPER.depth_range
    if not (lo <= d <= hi):
        raise CliError(f"d must lie in [{lo}, {hi}]")
    obs = _down_observation(scene, distance, resolution)
    maps = directional_quality_maps(
        obs, scene, EulerZXY(alpha, beta, gamma), d, resolution=resolution
    )
    channels = (
        maps.q_level[0], maps.q_level[1], maps.q_level[2],
        maps.object_mask, maps.collision_free[0], maps.collision_free[1],
    )
    out = _out_dir(args)
    for name, channel in zip(_LABEL_NAMES, channels):
        img = (np.asarray(channel) > 0.5).astype(np.uint8) * 255
        (out / f"{name}.pgm").write_bytes(encode_pgm(img))
    print(f"wrote 6 label images to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _episode_config(args)
    out = _out_dir(args)
    try:
        res = run_episode(cfg)
    except NoCandidates:
        payload = {"mode": cfg.mode, "seed": cfg.seed, "cleared": True}
        (out / "result.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        print("cleared")
        return 0
    (out / "trace.jsonl").write_text(trace_to_jsonl(res.trace))
    payload = {
        "mode": res.mode,
        "seed": res.seed,
        "cleared": False,
        "success": bool(res.success),
        "steps": int(res.steps),
        "distance": float(res.distance),
        "grasp": _grasp_blob(res.grasp),
        "executed": _grasp_blob(res.executed),
    }
    (out / "result.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    print(f"success={res.success} steps={res.steps} seed={res.seed}")
    return 0


def cmd_bench(args) -> int:
    scene, events = _load_scene_file(args.scene)
    params = _collect_params(args.params)
    _check_extra(params, _FILTER_KEYS | _EPISODE_KEYS)
    modes = args.mode.split(",") if args.mode else list(_BENCH_MODES)
    try:
        fp = FilterParams(**{k: v for k, v in params.items() if k in _FILTER_KEYS})
        suite = [
            EpisodeConfig(
                scene=scene,
                events=events,
                mode=m,
                seed=args.seed,
                filter_params=fp,
                **{k: v for k, v in params.items() if k in _EPISODE_KEYS},
            )
            for m in modes
        ]
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad configuration: {exc}") from exc
    summary = run_benchmark(suite, args.episodes, jobs=args.jobs)
    out = _out_dir(args)
    (out / "summary.csv").write_text(summary.to_csv())
    (out / "summary.txt").write_text(summary.to_text())
    (out / "records.jsonl").write_text(summary.records_jsonl())
    print(summary.to_text(), end="")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grasppf",
        description="Depth-stream grasp tracking: render scenes, label grasp "
        "quality, run episodes, benchmark modes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--scene", required=True, help="scene file path")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0, help="base RNG seed")
        p.add_argument(
            "--params",
            action="append",
            metavar="KEY=VALUE",
            help="override a filter/episode/camera parameter (repeatable)",
        )

    p = sub.add_parser("render", help="depth and object-id images")
    common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("label", help="6-channel grasp quality label images")
    common(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("run", help="run one episode")
    common(p)
    p.add_argument("--mode", default="closed_loop")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="run the mode-ablation benchmark")
    common(p)
    p.add_argument("--mode", default=None, help="comma-separated mode list")
    p.add_argument("--episodes", type=int, default=20, help="episodes per mode")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Timeout as exc:
        print(f"timeout: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
