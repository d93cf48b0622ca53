"""File formats used by the command line: frame files, config files and images.

Frame file::

    dhm-frames v1 dim=2
    t ox oy hx hy maxrange        (one record per beam, t nondecreasing)

Blank lines and lines starting with ``#`` are ignored; a ``.gz`` suffix
selects gzip.  Timestamps without records become empty sweeps so the
frame sequence stays consecutive.

Config file: INI ``key = value`` sections ``[pipeline]``, ``[train]``,
``[scene]`` and ``[eval]``.  Scene values are JSON.
"""

from __future__ import annotations

import configparser
import gzip
import json
import math
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import Config, Frame
from .sim import SceneSpec, default_region, default_scene, default_scene_3d, exit_scene

__all__ = [
    "ConfigError",
    "EvalSettings",
    "FrameFormatError",
    "RunSettings",
    "parse_region",
    "probability_bytes",
    "read_config",
    "read_frames",
    "write_config",
    "write_frames",
    "write_pgm",
    "write_ppm",
]

FRAME_HEADER = "dhm-frames v1"
TRAIN_KEYS = ("l2", "l1", "learning_rate", "epochs", "batch_size", "bias", "feature_cutoff", "loss")
SCENE_PRESETS = {"default": default_scene, "default_3d": default_scene_3d, "exit": exit_scene}


class FrameFormatError(ValueError):
    """A frame file is malformed; the message starts with the line number."""


class ConfigError(ValueError):
    """A config file is malformed or holds invalid values."""


def _open_text(path: Path, mode: str):
    if path.suffix.lower() == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


# -- frames ----------------------------------------------------------------------
def write_frames(frames: Sequence[Frame], path) -> Path:
    """Write frames as text; floats use their shortest exact representation."""
    path = Path(path)
    frames = list(frames)
    if not frames:
        raise ValueError("no frames to write")
    dim = frames[0].dim
    with _open_text(path, "w") as fh:
        fh.write(f"{FRAME_HEADER} dim={dim}\n")
        for f in frames:
            if f.dim != dim:
                raise ValueError("frames differ in dimension")
            for o, h, m in zip(f.origins, f.hits, f.max_range):
                fh.write(" ".join([str(f.timestamp), *map(repr, o.tolist()), *map(repr, h.tolist()),
                                   "1" if m else "0"]) + "\n")
    return path


def _parse_header(line: str, lineno: int) -> int:
    parts = line.split()
    if len(parts) != 3 or " ".join(parts[:2]) != FRAME_HEADER or parts[2] not in ("dim=2", "dim=3"):
        raise FrameFormatError(f"line {lineno}: expected header '{FRAME_HEADER} dim=<2|3>'")
    return int(parts[2][4:])


def read_frames(path) -> List[Frame]:
    """Parse a frame file into consecutive frames.

    Raises :class:`FrameFormatError` naming the offending line.
    """
    path = Path(path)
    dim = None
    width = 0
    times, rows, flags = [], [], []
    try:
        with _open_text(path, "r") as fh:
            for lineno, line in enumerate(fh, 1):
                text = line.strip()
                if not text or text.startswith("#"):
                    continue
                if dim is None:
                    dim = _parse_header(text, lineno)
                    width = 2 * dim + 2
                    continue
                parts = text.split()
                if len(parts) != width:
                    raise FrameFormatError(f"line {lineno}: expected {width} fields for dim={dim}, "
                                           f"got {len(parts)}")
                try:
                    t = int(parts[0])
                    values = [float(v) for v in parts[1:-1]]
                except ValueError:
                    raise FrameFormatError(f"line {lineno}: fields must be numbers") from None
                if t < 0:
                    raise FrameFormatError(f"line {lineno}: timestamp must be a nonnegative integer")
                if times and t < times[-1]:
                    raise FrameFormatError(f"line {lineno}: timestamp {t} decreases (previous {times[-1]})")
                if not all(math.isfinite(v) for v in values):
                    raise FrameFormatError(f"line {lineno}: coordinates must be finite")
                if parts[-1] not in ("0", "1"):
                    raise FrameFormatError(f"line {lineno}: maxrange flag must be 0 or 1")
                times.append(t)
                rows.append(values)
                flags.append(parts[-1] == "1")
    except (OSError, UnicodeDecodeError, EOFError, gzip.BadGzipFile) as exc:
        raise FrameFormatError(f"line 0: cannot read {path}: {exc}") from exc
    if dim is None or not times:
        return []
    t_arr = np.asarray(times)
    data = np.asarray(rows, dtype=float)
    mr = np.asarray(flags, dtype=bool)
    frames = []
    for t in range(int(t_arr[0]), int(t_arr[-1]) + 1):
        lo, hi = np.searchsorted(t_arr, [t, t + 1])
        frames.append(Frame(t, data[lo:hi, :dim], data[lo:hi, dim:], mr[lo:hi]))
    return frames


# -- config ----------------------------------------------------------------------
@dataclass(frozen=True)
class EvalSettings:
    train_frames: int = 5
    horizons: Tuple[int, ...] = (0, 1, 3, 5, 8, 10)
    seeds: int = 10
    region: Optional[Tuple[float, float, float, float]] = None


@dataclass(frozen=True)
class RunSettings:
    """Everything a config file can hold."""

    config: Config = field(default_factory=Config)
    scene: Optional[SceneSpec] = None
    eval: EvalSettings = field(default_factory=EvalSettings)


def _config_types() -> dict:
    hints = typing.get_type_hints(Config)
    return {f.name: hints[f.name] for f in fields(Config)}


def _parse_value(name: str, kind, raw: str):
    raw = raw.strip()
    optional = typing.get_origin(kind) is typing.Union
    if optional:
        if raw.lower() in ("", "none", "null"):
            return None
        kind = next(a for a in typing.get_args(kind) if a is not type(None))
    try:
        if kind is bool:
            low = raw.lower()
            if low not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(raw)
            return configparser.ConfigParser.BOOLEAN_STATES[low]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None


def _int_list(name: str, raw: str) -> Tuple[int, ...]:
    try:
        return tuple(int(v) for v in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{name}: expected a list of integers, got {raw!r}") from None


def parse_region(raw: str, dim: int = 2):
    """``none``, ``default`` or ``x0,y0,x1,y1``."""
    low = raw.strip().lower()
    if low in ("", "none"):
        return None
    if low == "default":
        return default_region(dim)
    try:
        vals = tuple(float(v) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"region: cannot parse {raw!r}") from None
    if len(vals) != 4 or not (vals[2] > vals[0] and vals[3] > vals[1]):
        raise ConfigError("region must be x0,y0,x1,y1 with x1 > x0 and y1 > y0")
    return vals


def _scene_from_section(section) -> SceneSpec:
    items = dict(section)
    preset = items.pop("preset", None)
    if preset is not None:
        if preset not in SCENE_PRESETS:
            raise ConfigError(f"scene preset must be one of {sorted(SCENE_PRESETS)}, got {preset!r}")
        base = SCENE_PRESETS[preset]().to_dict()
    else:
        base = {}
    for key, raw in items.items():
        if key not in ("sensor", "frames", "noise_sigma", "seed", "static", "dynamic"):
            raise ConfigError(f"unknown key {key!r} in [scene]")
        try:
            base[key] = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scene {key}: invalid JSON ({exc.msg})") from None
    if "sensor" not in base:
        raise ConfigError("[scene] needs a preset or a sensor")
    try:
        return SceneSpec.from_dict(base)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scene: {exc}") from None


def read_config(path) -> RunSettings:
    """Parse an INI config file; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    unknown = set(parser.sections()) - {"pipeline", "train", "scene", "eval"}
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}")
    types = _config_types()
    values = {}
    for section in ("pipeline", "train"):
        if not parser.has_section(section):
            continue
        for key, raw in parser.items(section):
            allowed = key in TRAIN_KEYS if section == "train" else key in types and key not in TRAIN_KEYS
            if not allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _parse_value(key, types[key], raw)
    try:
        config = Config(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    scene = _scene_from_section(parser["scene"]) if parser.has_section("scene") else None
    ev = EvalSettings()
    if parser.has_section("eval"):
        opts = dict(parser["eval"])
        extra = sorted(set(opts) - {"train_frames", "horizons", "seeds", "region"})
        if extra:
            raise ConfigError(f"unknown key {extra[0]!r} in [eval]")
        dim = scene.dim if scene is not None else 2
        try:
            ev = EvalSettings(
                train_frames=int(opts.get("train_frames", ev.train_frames)),
                horizons=_int_list("horizons", opts["horizons"]) if "horizons" in opts else ev.horizons,
                seeds=int(opts.get("seeds", ev.seeds)),
                region=parse_region(opts["region"], dim) if "region" in opts else None)
        except ValueError as exc:
            raise ConfigError(f"[eval]: {exc}") from None
    return RunSettings(config, scene, ev)


def write_config(settings: RunSettings, path) -> Path:
    """Write a config file that :func:`read_config` reads back to equal settings."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    cfg = settings.config
    parser["pipeline"] = {f.name: _fmt(getattr(cfg, f.name)) for f in fields(Config)
                          if f.name not in TRAIN_KEYS}
    parser["train"] = {k: _fmt(getattr(cfg, k)) for k in TRAIN_KEYS}
    if settings.scene is not None:
        parser["scene"] = {k: json.dumps(v) for k, v in settings.scene.to_dict().items()}
    ev = settings.eval
    parser["eval"] = {"train_frames": str(ev.train_frames),
                      "horizons": ",".join(str(h) for h in ev.horizons),
                      "seeds": str(ev.seeds),
                      "region": "none" if ev.region is None else ",".join(repr(float(v)) for v in ev.region)}
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
    return path


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# -- images ----------------------------------------------------------------------
def probability_bytes(grid) -> np.ndarray:
    """``round(255 p)`` with halves rounded up, as uint8; probabilities are clipped to [0, 1]."""
    p = np.clip(np.asarray(grid, dtype=float), 0.0, 1.0)
    return np.floor(255.0 * p + 0.5).astype(np.uint8)


def write_pgm(grid, path) -> Path:
    """8-bit binary PGM of a probability grid.

    ``grid[i]`` is the row at the i-th smallest y, so rows are flipped to put
    the largest y at the top of the image.
    """
    data = probability_bytes(grid)
    if data.ndim != 2:
        raise ValueError("grid must be two dimensional")
    h, w = data.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data[::-1]).tobytes())
    return path


def write_ppm(grid, path) -> Path:
    """Binary PPM shading free (0) blue through occupied (1) red."""
    v = probability_bytes(grid)
    if v.ndim != 2:
        raise ValueError("grid must be two dimensional")
    h, w = v.shape
    rgb = np.stack([v, np.zeros_like(v), 255 - v], axis=-1)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb[::-1]).tobytes())
    return path
