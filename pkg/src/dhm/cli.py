"""Command-line front end: ``dhm run | query | render | eval | simulate | bench``.

Exit codes: 0 success, 2 bad input (arguments, frame/config/snapshot files,
empty frame files), 3 query time outside the map's history, 4 invalid render
grid.  Every failure prints one line starting with ``dhm-error:`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from .dynamic_map import DynamicHilbertMap, GridError, HistoryError
from .evaluation import evaluation_points, run_protocol
from .formats import (SCENE_PRESETS, ConfigError, FrameFormatError, RunSettings, parse_region,
                      read_config, read_frames, write_frames, write_pgm, write_ppm)
from .sim import SceneSpec, simulate
from .snapshot import SnapshotError

__all__ = ["main"]

EXIT_INPUT = 2
EXIT_HISTORY = 3
EXIT_GRID = 4
STAGES = ("cluster", "segment", "icp", "kf", "incorporate", "train", "query")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {message}")


# -- helpers ---------------------------------------------------------------------
def _settings(path: Optional[str]) -> RunSettings:
    return read_config(path) if path else RunSettings()


def _frames(path: str):
    frames = read_frames(path)
    if not frames:
        raise CliError("no frames")
    return frames


def _floats(text: str, n, what: str) -> List[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise CliError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if len(vals) not in n or not all(np.isfinite(vals)):
        raise CliError(f"{what}: expected {' or '.join(map(str, n))} finite values, got {text!r}")
    return vals


def _load(path: str) -> DynamicHilbertMap:
    return DynamicHilbertMap.load(path)


def _scene(arg: str) -> SceneSpec:
    """A preset name, a JSON scene file or a config file with a ``[scene]`` section."""
    if arg in SCENE_PRESETS:
        return SCENE_PRESETS[arg]()
    path = Path(arg)
    if path.suffix.lower() == ".json":
        try:
            return SceneSpec.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except (OSError, KeyError, TypeError, ValueError) as exc:
            raise CliError(f"cannot read scene {arg}: {exc}") from None
    scene = read_config(path).scene
    if scene is None:
        raise CliError(f"{arg} has no [scene] section")
    return scene


def _frame_bounds(frames, margin: float = 1.0):
    pts = np.vstack([f.hits for f in frames if len(f)])
    lo, hi = pts[:, :2].min(axis=0) - margin, pts[:, :2].max(axis=0) + margin
    return (lo[0], lo[1], hi[0], hi[1])


def _write_image(grid, path, color: bool):
    (write_ppm if color else write_pgm)(grid, path)


# -- commands ----------------------------------------------------------------------
def cmd_run(args) -> int:
    settings = _settings(args.config)
    frames = _frames(args.frames)
    dhm = DynamicHilbertMap(settings.config)
    if args.render_every:
        if not args.out_dir:
            raise CliError("--render-every needs --out-dir")
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        bounds = _floats(args.bounds, (4,), "--bounds") if args.bounds else _frame_bounds(frames)
        res = args.res if args.res else settings.config.resolution / 2
    for k, f in enumerate(frames, 1):
        dhm.step(f)
        if args.render_every and k % args.render_every == 0:
            grid = dhm.render_grid(None, bounds, res)
            _write_image(grid, out_dir / f"frame_{f.timestamp:05d}.pgm", False)
    if args.save:
        dhm.save(args.save)
    print(f"steps: {len(frames)}")
    return 0


def cmd_query(args) -> int:
    dhm = _load(args.load)
    x = _floats(args.at, (2, 3), "--at")
    if dhm.is_initialized and len(x) != dhm.dim_:
        raise CliError(f"--at has {len(x)} coordinates but the map is {dhm.dim_}D")
    p = dhm.query(x, args.time)
    print(f"{p:.6f}")
    return 0


def cmd_render(args) -> int:
    dhm = _load(args.load)
    bounds = _floats(args.bounds, (4,), "--bounds")
    if not args.res > 0:
        raise CliError("--res must be > 0", EXIT_GRID)
    grid = dhm.render_grid(args.time, bounds, args.res, args.z)
    _write_image(grid, args.out, args.ppm)
    print(f"wrote {args.out} ({grid.shape[1]}x{grid.shape[0]})")
    return 0


def cmd_eval(args) -> int:
    settings = _settings(args.config)
    ev = settings.eval
    if args.frames:
        frames = _frames(args.frames)
        frames_for_seed = lambda i: frames  # noqa: E731
        dim = frames[0].dim
    else:
        scene = _scene(args.scene) if args.scene else settings.scene
        if scene is None:
            raise CliError("eval needs --frames, --scene or a [scene] config section")
        frames_for_seed = lambda i: simulate(scene.replace(seed=scene.seed + i)).frames  # noqa: E731
        dim = scene.dim
    train = args.train_frames if args.train_frames is not None else ev.train_frames
    horizons = [int(h) for h in args.horizons.split(",")] if args.horizons else list(ev.horizons)
    seeds = args.seeds if args.seeds is not None else ev.seeds
    region = parse_region(args.region, dim) if args.region is not None else ev.region
    if train < 1 or seeds < 1 or any(h < 0 for h in horizons):
        raise CliError("--train-frames and --seeds must be >= 1 and horizons >= 0")
    report = run_protocol(frames_for_seed, settings.config, train, horizons, seeds, region)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_table())
    return 0


def cmd_simulate(args) -> int:
    scene = _scene(args.scene)
    if args.seed is not None:
        scene = scene.replace(seed=args.seed)
    frames = simulate(scene).frames
    write_frames(frames, args.out)
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def cmd_bench(args) -> int:
    settings = _settings(args.config)
    frames = _frames(args.frames)
    dhm = DynamicHilbertMap(settings.config)
    totals, stages = [], {s: [] for s in STAGES}
    for f in frames:
        t0 = time.perf_counter()
        dhm.step(f)
        t1 = time.perf_counter()
        X, _ = evaluation_points(f, settings.config.free_spacing)
        if len(X):
            dhm.predict_proba(X)
        t2 = time.perf_counter()
        totals.append(1000 * (t2 - t0))
        for s in STAGES:
            stages[s].append(1000 * (t2 - t1) if s == "query" else 1000 * dhm.timings_.get(s, 0.0))
    report = {"steps": len(frames), "step_ms_mean": float(np.mean(totals)),
              "step_ms_p95": float(np.percentile(totals, 95)),
              "stages_ms_mean": {s: float(np.mean(v)) for s, v in stages.items()}}
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(f"steps {report['steps']}  mean {report['step_ms_mean']:.1f} ms  "
              f"p95 {report['step_ms_p95']:.1f} ms")
        for s, v in report["stages_ms_mean"].items():
            print(f"  {s:<12} {v:8.2f} ms")
    return 0


# -- entry point -----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dhm", description="Dynamic Hilbert maps from LIDAR frame files.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="step the map over a frame file")
    run.add_argument("--frames", required=True)
    run.add_argument("--config")
    run.add_argument("--save", help="snapshot path (.npz binary, otherwise JSON)")
    run.add_argument("--render-every", type=int, default=0, metavar="N")
    run.add_argument("--out-dir")
    run.add_argument("--bounds", help="x0,y0,x1,y1 for periodic renders (default: data extent)")
    run.add_argument("--res", type=float, help="render cell size (default: resolution / 2)")
    run.set_defaults(func=cmd_run)

    q = sub.add_parser("query", help="occupancy probability at one point and time")
    q.add_argument("--load", required=True)
    q.add_argument("--at", required=True, help="x,y[,z]")
    q.add_argument("--time", type=int, help="frame index (default: last ingested frame)")
    q.set_defaults(func=cmd_query)

    r = sub.add_parser("render", help="render a probability grid to PGM (or PPM)")
    r.add_argument("--load", required=True)
    r.add_argument("--time", type=int)
    r.add_argument("--bounds", required=True, help="x0,y0,x1,y1")
    r.add_argument("--res", type=float, required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--z", type=float, default=0.0, help="slice height for 3D maps")
    r.add_argument("--ppm", action="store_true", help="colour output, blue (free) to red (occupied)")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="prediction-horizon protocol, DHM against a static map")
    src = e.add_mutually_exclusive_group()
    src.add_argument("--frames")
    src.add_argument("--scene", help="preset, scene JSON or config file; re-simulated per seed")
    e.add_argument("--config")
    e.add_argument("--train-frames", type=int)
    e.add_argument("--horizons", help="comma-separated list")
    e.add_argument("--seeds", type=int)
    e.add_argument("--region", help="x0,y0,x1,y1, 'default' or 'none'")
    e.add_argument("--out", help="JSON report path")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("simulate", help="ray-cast a scene into a frame file")
    s.add_argument("--scene", required=True, help="preset, scene JSON or config file")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="per-step and per-stage timing")
    b.add_argument("--frames", required=True)
    b.add_argument("--config")
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_bench)
    return p


_VALUE_FLAGS = ("--at", "--bounds", "--region", "--horizons")


def _attach_values(argv: List[str]) -> List[str]:
    """Join list-valued flags to their values so ``--at -3,1`` is not read as an option."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] in _VALUE_FLAGS and i + 1 < len(argv):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_attach_values(argv))
        return args.func(args)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except HistoryError as exc:
        code, msg = EXIT_HISTORY, str(exc)
    except GridError as exc:
        code, msg = EXIT_GRID, str(exc)
    except (FrameFormatError, ConfigError, SnapshotError) as exc:
        code, msg = EXIT_INPUT, str(exc)
    except (OSError, ValueError) as exc:
        code, msg = EXIT_INPUT, str(exc)
    print(f"dhm-error: {' '.join(msg.split())}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
