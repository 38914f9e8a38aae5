"""JSONL file formats: schemas, validated readers and deterministic writers.

Every reader reports problems as :class:`InputError` entries carrying the
1-based line number, so malformed input never surfaces as a traceback.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, TypeVar, Union

from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from .promptgen import ExprSchemaError, PromptLabel, depth, from_prefix
from .simworld import Scene
from .tracker.pairs import PairSubmission

T = TypeVar("T")
PathLike = Union[str, Path]

MAX_EXPR_DEPTH = 32
REPORT_SCHEMA_VERSION = 1

_num = {"type": "number"}
_frame_key = "^(0|[1-9][0-9]*)$"
_box = {"type": "array", "items": _num, "minItems": 7, "maxItems": 7}

SCENE_SCHEMA = {
    "type": "object",
    "required": ["scene_id", "frames", "ego", "rig", "tracks", "element_map"],
    "properties": {
        "scene_id": {"type": "string", "minLength": 1},
        "frames": {"type": "array", "items": _num},
        "ego": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 7, "maxItems": 7}},
        "rig": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "intrinsic", "extrinsic", "image_size"],
                "properties": {
                    "name": {"type": "string"},
                    "intrinsic": {"type": "array", "minItems": 3, "maxItems": 3,
                                  "items": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}},
                    "extrinsic": {"type": "array", "items": _num, "minItems": 7, "maxItems": 7},
                    "image_size": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                   "minItems": 2, "maxItems": 2},
                },
            },
        },
        "tracks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["track_id", "category", "color", "first_frame", "boxes", "velocities"],
                "properties": {
                    "track_id": {"type": "integer", "minimum": 1},
                    "category": {"type": "string"},
                    "color": {"type": "string"},
                    "archetype": {"type": "string"},
                    "first_frame": {"type": "integer", "minimum": 0},
                    "boxes": {"type": "array", "items": _box, "minItems": 1},
                    "velocities": {"type": "array",
                                   "items": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}},
                },
            },
        },
        "element_map": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "propertyNames": {"pattern": _frame_key},
                "additionalProperties": {"type": "array", "items": {"type": "integer"}},
            },
        },
    },
}

PROMPT_SCHEMA = {
    "type": "object",
    "required": ["prompt_id", "scene_id", "expr", "text", "referred"],
    "properties": {
        "prompt_id": {"type": "string", "minLength": 1},
        "scene_id": {"type": "string", "minLength": 1},
        "expr": {"type": ["string", "array"]},
        "text": {"type": "string", "minLength": 1},
        "referred": {
            "type": "object",
            "propertyNames": {"pattern": _frame_key},
            "additionalProperties": {"type": "array", "items": {"type": "integer"}},
        },
        "stats": {"type": "object"},
    },
}

PREDICTION_SCHEMA = {
    "type": "object",
    "required": ["scene_id", "prompt_id", "tracklets"],
    "properties": {
        "scene_id": {"type": "string", "minLength": 1},
        "prompt_id": {"type": "string", "minLength": 1},
        "tracklets": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["pred_id", "boxes", "conf"],
                "properties": {
                    "pred_id": {"type": "integer"},
                    "boxes": {"type": "object", "propertyNames": {"pattern": _frame_key},
                              "additionalProperties": _box},
                    "conf": {"type": "object", "propertyNames": {"pattern": _frame_key},
                             "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1}},
                },
            },
        },
    },
}

_VALIDATORS = {name: Draft202012Validator(s) for name, s in
               (("scene", SCENE_SCHEMA), ("prompt", PROMPT_SCHEMA), ("prediction", PREDICTION_SCHEMA))}


@dataclass(frozen=True)
class LineError:
    path: str
    line: int
    message: str

    def __str__(self) -> str:
        return f"{self.path}:{self.line}: {self.message}"


class InputError(Exception):
    """One or more problems in user-supplied input; ``errors`` name their lines."""

    def __init__(self, errors: list[LineError]):
        self.errors = errors
        super().__init__("\n".join(str(e) for e in errors[:20])
                         + (f"\n... and {len(errors) - 20} more" if len(errors) > 20 else ""))


class _Invalid(ValueError):
    pass


def _finite(values, what: str) -> None:
    for v in values:
        if isinstance(v, bool) or not math.isfinite(v):
            raise _Invalid(f"{what} must contain finite numbers")


def _check_box(values, what: str) -> None:
    _finite(values, what)
    if min(values[3:6]) <= 0:
        raise _Invalid(f"{what} has a non-positive size")


def _schema_error(obj, kind: str) -> Optional[str]:
    err = best_match(_VALIDATORS[kind].iter_errors(obj))
    if err is None:
        return None
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    msg = err.message if len(err.message) <= 200 else err.message[:200] + "..."
    return f"schema violation at {where}: {msg}"


def _nesting(obj, limit: int) -> bool:
    stack = [(obj, 0)]
    while stack:
        x, d = stack.pop()
        if d > limit:
            return False
        if isinstance(x, list):
            stack.extend((y, d + 1) for y in x)
        elif isinstance(x, dict):
            stack.extend((y, d + 1) for y in x.values())
    return True


def _semantic_scene(d: dict) -> Scene:
    n = len(d["frames"])
    _finite(d["frames"], "frames")
    if any(b <= a for a, b in zip(d["frames"], d["frames"][1:])):
        raise _Invalid("frame timestamps must be strictly increasing")
    for cam in d["rig"]:
        _finite([v for row in cam["intrinsic"] for v in row] + cam["extrinsic"], f"camera {cam['name']!r}")
    if len(d["ego"]) != n:
        raise _Invalid(f"ego has {len(d['ego'])} poses for {n} frames")
    for i, p in enumerate(d["ego"]):
        _finite(p, f"ego[{i}]")
    ids = [t["track_id"] for t in d["tracks"]]
    if len(set(ids)) != len(ids):
        raise _Invalid("duplicate track_id")
    spans = {}
    for t in d["tracks"]:
        tid = t["track_id"]
        if len(t["velocities"]) != len(t["boxes"]):
            raise _Invalid(f"track {tid}: {len(t['velocities'])} velocities for {len(t['boxes'])} boxes")
        if t["first_frame"] + len(t["boxes"]) > n:
            raise _Invalid(f"track {tid} extends past the last frame")
        for k, b in enumerate(t["boxes"]):
            _check_box(b, f"track {tid} box {k}")
        for v in t["velocities"]:
            _finite(v, f"track {tid} velocity")
        spans[tid] = range(t["first_frame"], t["first_frame"] + len(t["boxes"]))
    for tag, per in d["element_map"].items():
        for f, members in per.items():
            for tid in members:
                if tid not in spans or int(f) not in spans[tid]:
                    raise _Invalid(f"element {tag!r} lists track {tid} at frame {f} where it is absent")
    try:
        return Scene.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise _Invalid(str(exc)) from exc


def _semantic_prompt(d: dict) -> PromptLabel:
    if not _nesting(d["expr"], MAX_EXPR_DEPTH):
        raise _Invalid(f"expression nested deeper than {MAX_EXPR_DEPTH}")
    try:
        expr = from_prefix(d["expr"])
    except ExprSchemaError as exc:
        raise _Invalid(f"bad expression: {exc}") from exc
    depth(expr)
    return PromptLabel.from_dict(d)


def _semantic_prediction(d: dict) -> PairSubmission:
    seen = set()
    for t in d["tracklets"]:
        if t["pred_id"] in seen:
            raise _Invalid(f"duplicate pred_id {t['pred_id']}")
        seen.add(t["pred_id"])
        if set(t["boxes"]) != set(t["conf"]):
            raise _Invalid(f"tracklet {t['pred_id']}: boxes and conf cover different frames")
        for f, b in t["boxes"].items():
            _check_box(b, f"tracklet {t['pred_id']} frame {f}")
        _finite(t["conf"].values(), f"tracklet {t['pred_id']} conf")
    try:
        return PairSubmission.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise _Invalid(str(exc)) from exc


_PARSERS: dict[str, Callable[[dict], object]] = {
    "scene": _semantic_scene,
    "prompt": _semantic_prompt,
    "prediction": _semantic_prediction,
}


def parse_line(text: str, kind: str):
    """Parse one JSONL line of ``kind``; raises ValueError with a reason."""
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise _Invalid(f"invalid JSON: {exc}") from None
    if not _nesting(obj, 64):
        raise _Invalid("JSON nested too deeply")
    problem = _schema_error(obj, kind)
    if problem:
        raise _Invalid(problem)
    return _PARSERS[kind](obj)


def iter_jsonl(path: PathLike, kind: str, errors: list[LineError]) -> Iterator[tuple[int, object]]:
    """Yield ``(line number, record)`` for valid lines; invalid ones go to ``errors``."""
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        errors.append(LineError(str(p), 0, f"cannot read file: {exc.strerror or exc}"))
        return
    for n, line in enumerate(raw.split(b"\n"), start=1):
        if not line.strip():
            continue
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError:
            errors.append(LineError(str(p), n, "line is not valid UTF-8"))
            continue
        try:
            yield n, parse_line(text, kind)
        except (ValueError, KeyError, TypeError, RecursionError) as exc:
            errors.append(LineError(str(p), n, str(exc) or type(exc).__name__))


def read_numbered(path: PathLike, kind: str) -> list[tuple[int, object]]:
    """``(line number, record)`` for every record, or InputError listing every bad line."""
    errors: list[LineError] = []
    records = list(iter_jsonl(path, kind, errors))
    if errors:
        raise InputError(errors)
    return records


def read_jsonl(path: PathLike, kind: str) -> list:
    return [rec for _, rec in read_numbered(path, kind)]


def read_scenes(path: PathLike) -> list[Scene]:
    return _unique(path, read_numbered(path, "scene"), lambda s: s.scene_id, "scene_id")


def read_prompts_numbered(path: PathLike) -> list[tuple[int, PromptLabel]]:
    records = read_numbered(path, "prompt")
    _unique(path, records, lambda l: (l.scene_id, l.prompt_id), "prompt key")
    return records


def read_prompts(path: PathLike) -> list[PromptLabel]:
    return [rec for _, rec in read_prompts_numbered(path)]


def read_predictions_numbered(path: PathLike) -> list[tuple[int, PairSubmission]]:
    records = read_numbered(path, "prediction")
    _unique(path, records, lambda s: s.key, "pair")
    return records


def read_predictions(path: PathLike) -> list[PairSubmission]:
    return [rec for _, rec in read_predictions_numbered(path)]


def _unique(path, records: list[tuple[int, T]], key: Callable[[T], object], what: str) -> list[T]:
    seen, errors = {}, []
    for n, r in records:
        k = key(r)
        if k in seen:
            errors.append(LineError(str(path), n, f"duplicate {what} {k!r} (first on line {seen[k]})"))
        else:
            seen[k] = n
    if errors:
        raise InputError(errors)
    return [r for _, r in records]


def dumps_line(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def write_jsonl(path: PathLike, records: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(dumps_line(r) + "\n")
            n += 1
    return n
