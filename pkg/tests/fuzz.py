"""Deterministic corpus of malformed JSONL lines for scenes, prompts and predictions.

Every produced line must be rejected. Lines marked ``needs_context`` parse on
their own and are only wrong relative to the other files (unknown scene,
absent track, frame out of range), so only the CLI can reject them.
"""

from __future__ import annotations

import copy
import json
import random
from dataclasses import dataclass

from langtrack.promptgen import PromptConfig, build_prompt_labels
from langtrack.simworld import SceneConfig, generate_scene
from langtrack.tracker import gt_submission

LINES_PER_KIND = 100


@dataclass(frozen=True)
class BadLine:
    kind: str
    family: str
    data: bytes
    needs_context: bool = False


def base_records():
    scene = generate_scene(SceneConfig(seed=0, n_tracks=4, duration_frames=8))
    labels = build_prompt_labels(scene, PromptConfig(seed=0, min_boxes=2, max_prompts=4))
    preds = [gt_submission(scene, l) for l in labels]
    return scene, labels, preds


def _dump(obj) -> bytes:
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def _paths(obj, prefix=()):
    """Every (path, value) below ``obj``."""
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield prefix + (k,), v
            yield from _paths(v, prefix + (k,))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield prefix + (i,), v
            yield from _paths(v, prefix + (i,))


def _set(obj, path, value):
    for p in path[:-1]:
        obj = obj[p]
    obj[path[-1]] = value


def _delete(obj, path):
    for p in path[:-1]:
        obj = obj[p]
    del obj[path[-1]]


REQUIRED = {
    "scene": ("scene_id", "frames", "ego", "rig", "tracks", "element_map", "track_id", "category", "color",
              "first_frame", "boxes", "velocities", "name", "intrinsic", "extrinsic", "image_size"),
    "prompt": ("prompt_id", "scene_id", "expr", "text", "referred"),
    "prediction": ("scene_id", "prompt_id", "tracklets", "pred_id", "boxes", "conf"),
}

# keys whose numbers must be finite; a NaN elsewhere (e.g. in stats) would be harmless
NUMERIC = {"scene": ("frames", "ego", "boxes", "velocities", "intrinsic", "extrinsic"),
           "prediction": ("boxes", "conf")}


def _wrong_type(value):
    if isinstance(value, bool):
        return "yes"
    if isinstance(value, (int, float)):
        return "seven"
    if isinstance(value, str):
        return 7
    if isinstance(value, list):
        return {"not": "a list"}
    return [1, 2]


def _generic(rng: random.Random, kind: str, rec: dict) -> tuple[str, bytes]:
    family = rng.choice(["truncate", "drop_key", "wrong_type", "nonfinite", "deep", "bad_utf8", "top_level",
                         "garbage", "trailing"])
    text = _dump(rec)
    d = copy.deepcopy(rec)
    if family == "truncate":
        return family, text[: rng.randrange(1, len(text) - 1)]
    if family == "drop_key":
        keys = [p for p, _ in _paths(d) if isinstance(p[-1], str) and p[-1] in REQUIRED[kind]]
        _delete(d, rng.choice(keys))
        return family, _dump(d)
    if family == "wrong_type":
        keys = [(p, v) for p, v in _paths(d) if isinstance(p[-1], str) and p[-1] in REQUIRED[kind]
                and not (p[-1] == "expr" and isinstance(v, list))]
        p, v = rng.choice(keys)
        _set(d, p, _wrong_type(v))
        return family, _dump(d)
    if family == "nonfinite" and kind in NUMERIC:
        nums = [p for p, v in _paths(d) if isinstance(v, float) and any(k in p for k in NUMERIC[kind])]
        _set(d, rng.choice(nums), rng.choice([float("nan"), float("inf"), float("-inf")]))
        return family, json.dumps(d).encode("utf-8")
    if family in ("nonfinite", "deep"):
        depth = rng.choice([70, 200, 100_000])
        return "deep", ('{"scene_id":' + "[" * depth + "]" * depth + "}").encode()
    if family == "bad_utf8":
        cut = rng.randrange(1, len(text))
        return family, text[:cut] + rng.choice([b"\xff", b"\xc3\x28", b"\xed\xa0\x80"]) + text[cut:]
    if family == "top_level":
        return family, rng.choice([b"[]", b"null", b"42", b'"scene"', b"true", b"[{}]"])
    if family == "trailing":
        return family, text + rng.choice([b",", b"}", b" x", b"{}"])
    junk = "".join(rng.choice("{}[]:,\"'abc123 \\") for _ in range(rng.randrange(1, 40)))
    return "garbage", ("@" + junk).encode()


def _scene_specific(rng, rec):
    d = copy.deepcopy(rec)
    family = rng.choice(["negative_size", "dup_track", "short_ego", "absent_member", "velocity_count",
                         "timestamps", "zero_quat"])
    if family == "negative_size":
        t = rng.choice(d["tracks"])
        t["boxes"][rng.randrange(len(t["boxes"]))][3 + rng.randrange(3)] = -rng.random()
    elif family == "dup_track":
        d["tracks"].append(copy.deepcopy(d["tracks"][0]))
    elif family == "short_ego":
        d["ego"].pop()
    elif family == "absent_member":
        tag = rng.choice(sorted(d["element_map"]))
        d["element_map"][tag]["0"] = [999]
    elif family == "velocity_count":
        d["tracks"][0]["velocities"].pop()
    elif family == "timestamps":
        d["frames"][1] = d["frames"][0]
    else:
        d["ego"][0][3:] = [0.0, 0.0, 0.0, 0.0]
    return family, _dump(d), False


def _prompt_specific(rng, rec):
    d = copy.deepcopy(rec)
    family = rng.choice(["bad_expr", "frame_key", "unknown_scene", "absent_track", "late_frame", "deep_expr"])
    context = family in ("unknown_scene", "absent_track", "late_frame")
    if family == "bad_expr":
        d["expr"] = rng.choice([["XOR", "car", "red"], ["AND", "car"], ["NOT"], [], ["car"], [["car"]], ""])
    elif family == "frame_key":
        d["referred"][rng.choice(["x1", "-1", "01", "1.5"])] = [1]
    elif family == "unknown_scene":
        d["scene_id"] = "no-such-scene"
    elif family == "absent_track":
        d["referred"]["0"] = [999]
    elif family == "late_frame":
        d["referred"]["500"] = [1]
    else:
        expr = "car"
        for _ in range(40):
            expr = ["NOT", expr]
        d["expr"] = expr
    return family, _dump(d), context


def _prediction_specific(rng, rec):
    d = copy.deepcopy(rec)
    family = rng.choice(["conf_range", "dup_pred", "frame_mismatch", "unknown_pair", "late_frame", "zero_size"])
    context = family in ("unknown_pair", "late_frame")
    t = d["tracklets"][0]
    f0 = sorted(t["conf"])[0]
    if family == "conf_range":
        t["conf"][f0] = rng.choice([1.5, -0.2, 7])
    elif family == "dup_pred":
        d["tracklets"].append(copy.deepcopy(t))
    elif family == "frame_mismatch":
        del t["conf"][f0]
    elif family == "unknown_pair":
        d["prompt_id"] = "no-such-prompt"
    elif family == "late_frame":
        t["boxes"]["500"] = t["boxes"][f0]
        t["conf"]["500"] = 0.5
    else:
        t["boxes"][f0][3] = 0.0
    return family, _dump(d), context


def corpus(seed: int = 0) -> list[BadLine]:
    """300 malformed lines, 100 per record kind."""
    rng = random.Random(seed)
    scene, labels, preds = base_records()
    records = {"scene": [scene.to_dict()], "prompt": [l.to_dict() for l in labels],
               "prediction": [p.to_dict() for p in preds if p.tracklets]}
    specific = {"scene": _scene_specific, "prompt": _prompt_specific, "prediction": _prediction_specific}
    out = []
    for kind in ("scene", "prompt", "prediction"):
        for _ in range(LINES_PER_KIND):
            rec = rng.choice(records[kind])
            if rng.random() < 0.5:
                family, data = _generic(rng, kind, rec)
                out.append(BadLine(kind, family, data))
            else:
                family, data, context = specific[kind](rng, rec)
                out.append(BadLine(kind, family, data, context))
    return out


CONSUMERS = {
    "scene": ("prompts", "train", "track", "eval", "sweep"),
    "prompt": ("train", "track", "eval", "sweep"),
    "prediction": ("eval",),
}


def _argv(command: str, files: dict) -> list[str]:
    s, p, r = str(files["scene"]), str(files["prompt"]), str(files["prediction"])
    out = str(files["dir"] / f"{command}.out")
    return {
        "prompts": ["prompts", "--scenes", s, "--out", out],
        "train": ["train", "--scenes", s, "--prompts", p, "--out", out, "--steps", "1"],
        "track": ["track", "--scenes", s, "--prompts", p, "--out", out, "--overwrite"],
        "eval": ["eval", "--scenes", s, "--prompts", p, "--predictions", r, "--report", out],
        "sweep": ["sweep", "--scenes", s, "--prompts", p, "--pass-all"],
    }[command]


def run_fuzz(workdir, capture) -> list[str]:
    """Feed every corpus line to every command that reads its kind.

    ``capture(argv)`` runs the CLI and returns ``(exit code, stderr)``.
    Returns a description of each failure: an exit code other than 2, an
    internal error, or an error message that does not name the bad line.
    """
    from pathlib import Path

    workdir = Path(workdir)
    scene, labels, preds = base_records()
    valid = {"scene": [_dump(scene.to_dict())], "prompt": [_dump(l.to_dict()) for l in labels],
             "prediction": [_dump(p.to_dict()) for p in preds]}
    failures = []
    for i, bad in enumerate(corpus()):
        files = {"dir": workdir}
        for kind, lines in valid.items():
            path = workdir / f"{kind}.jsonl"
            body = list(lines)
            if kind == bad.kind:
                body += [b""] * (i % 3)  # vary the bad line's position
                body.append(bad.data)
                line_no = len(body)
            path.write_bytes(b"\n".join(body) + b"\n")
            files[kind] = path
        where = f"{files[bad.kind]}:{line_no}:"
        for command in CONSUMERS[bad.kind]:
            code, err = capture(_argv(command, files))
            if code != 2 or "internal error" in err or where not in err:
                failures.append(f"{bad.kind}/{bad.family} line {i} via {command}: exit {code}: {err.strip()[:200]}")
            elif any(l.startswith(str(workdir)) and not _names_line(l) for l in err.splitlines()):
                failures.append(f"{bad.kind}/{bad.family} line {i} via {command}: unnumbered error in {err!r}")
    return failures


def _names_line(message: str) -> bool:
    parts = message.split(":")
    return len(parts) >= 3 and parts[1].isdigit()
