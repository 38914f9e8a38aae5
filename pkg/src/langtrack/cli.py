"""``langtrack`` command line: gen, prompts, train, track, eval and sweep.

Settings come from built-in defaults, then an optional INI file (``--config``),
then command-line flags; flags win. Exit codes: 0 ok, 2 input error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from .io import (InputError, LineError, dumps_line, iter_jsonl, read_predictions_numbered, read_prompts_numbered,
                 read_scenes, write_jsonl)
from .neurocore import CheckpointError
from .promptgen import PromptConfig, PromptLabel, build_prompt_labels, format_stats, summarize_promptset
from .simworld import Scene, SceneConfig, generate_scenes
from .trackeval import aggregate_benchmark, render_sweep_table, render_table
from .tracker import (NoiseConfig, PassAllHead, PastParams, PromptHead, TrackerConfig, TrainConfig,
                      build_training_pairs, evaluate_pairs, head_separation, load_head, referred_box_count,
                      run_greedy_baseline, run_query_tracker, save_head, train_prompt_head)

log = logging.getLogger("langtrack")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3


class UsageError(Exception):
    """Bad flags, config values or paths; maps to exit code 2."""


class InvariantViolation(Exception):
    """An internal consistency check failed; maps to exit code 3."""


# --------------------------------------------------------------------------
# settings


@dataclass(frozen=True)
class Option:
    flag: str
    section: str
    key: str
    kind: Callable[[str], Any]
    default: Any
    help: str


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


NOISE_OPTIONS = [
    Option("--sigma-pos", "noise", "sigma_pos", float, 0.2, "detector position noise (m)"),
    Option("--p-drop", "noise", "p_drop", float, 0.05, "detection drop probability"),
    Option("--p-clutter", "noise", "p_clutter", float, 0.05, "clutter probability per object"),
    Option("--noise-seed", "noise", "seed", int, 0, "detector noise seed"),
]
TRACKER_OPTIONS = [
    Option("--gamma-object", "tracker", "gamma_object", float, 0.2, "class-score threshold"),
    Option("--gamma-prompt", "tracker", "gamma_prompt", float, 0.2, "prompt-score threshold"),
    Option("--n-fixed", "tracker", "n_fixed", int, 64, "fixed birth queries per frame"),
    Option("--miss-tolerance", "tracker", "miss_tolerance", int, 3, "frames below threshold before a track dies"),
    Option("--use-past", "tracker", "use_past", _bool, True, "enable past reasoning"),
    Option("--early-fusion", "tracker", "early_fusion", _bool, False, "gate detector features by the prompt"),
    Option("--width", "tracker", "width", int, 32, "feature width"),
]
EVAL_OPTIONS = [
    Option("--gate", "eval", "gate", float, 2.0, "matching distance gate (m)"),
    Option("--n-recall", "eval", "n_recall", int, 40, "recall sample points"),
]
OPTIONS: dict[str, list[Option]] = {
    "gen": [
        Option("--scenes", "gen", "scenes", int, 20, "number of scenes"),
        Option("--seed", "gen", "seed", int, 0, "scene seed"),
        Option("--frames", "gen", "frames", int, 40, "frames per scene"),
        Option("--tracks", "gen", "tracks", int, 12, "objects per scene"),
    ],
    "prompts": [
        Option("--seed", "prompts", "seed", int, 0, "prompt seed"),
        Option("--n-random", "prompts", "n_random", int, 60, "random expressions tried per scene"),
        Option("--min-boxes", "prompts", "min_boxes", int, 10, "minimum referred boxes per prompt"),
        Option("--max-prompts", "prompts", "max_prompts", int, 40, "prompt cap per scene"),
    ],
    "train": NOISE_OPTIONS + TRACKER_OPTIONS + [
        Option("--steps", "train", "steps", int, 4000, "optimizer steps"),
        Option("--lr", "train", "lr", float, 1e-2, "peak learning rate"),
        Option("--hidden", "train", "hidden", int, 64, "MLP hidden width"),
        Option("--heads", "train", "n_heads", int, 4, "attention heads"),
        Option("--batch-pairs", "train", "batch_pairs", int, 64, "pairs per step"),
        Option("--rows-per-pair", "train", "rows_per_pair", int, 32, "query rows sampled per pair"),
        Option("--train-seed", "train", "seed", int, 0, "initialisation and sampling seed"),
    ],
    "track": NOISE_OPTIONS + TRACKER_OPTIONS + [
        Option("--tracker", "track", "tracker", str, "query", "query or greedy"),
    ],
    "eval": EVAL_OPTIONS,
    "sweep": NOISE_OPTIONS + TRACKER_OPTIONS + EVAL_OPTIONS + [
        Option("--gammas", "sweep", "gammas", _floats, [0.1, 0.2, 0.3, 0.4], "comma-separated prompt thresholds"),
        Option("--tracker", "track", "tracker", str, "query", "query or greedy"),
    ],
}


def _dest(opt: Option) -> str:
    return opt.flag.lstrip("-").replace("-", "_")


def load_ini(path: Optional[str]) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is None:
        return cp
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except configparser.Error as exc:
        raise UsageError(f"config {path}: {exc}") from None
    return cp


def resolve(args: argparse.Namespace, ini: configparser.ConfigParser, command: str) -> dict[str, Any]:
    """Settings for ``command`` keyed by ``section.key``."""
    out = {}
    for opt in OPTIONS.get(command, []):
        value = getattr(args, _dest(opt), None)
        if value is None and ini.has_option(opt.section, opt.key):
            raw = ini.get(opt.section, opt.key)
            try:
                value = opt.kind(raw)
            except ValueError:
                raise UsageError(f"config [{opt.section}] {opt.key} = {raw!r} is not a valid value") from None
        out[f"{opt.section}.{opt.key}"] = opt.default if value is None else value
    return out


def noise_from(s: dict) -> NoiseConfig:
    cfg = NoiseConfig(s["noise.sigma_pos"], s["noise.p_drop"], s["noise.p_clutter"], seed=s["noise.seed"])
    _check(cfg.validate)
    return cfg


def tracker_from(s: dict, width: Optional[int] = None) -> TrackerConfig:
    cfg = TrackerConfig(
        n_fixed=s["tracker.n_fixed"], gamma_object=s["tracker.gamma_object"],
        gamma_prompt=s["tracker.gamma_prompt"], miss_tolerance=s["tracker.miss_tolerance"],
        use_past=s["tracker.use_past"], past=PastParams(), early_fusion=s["tracker.early_fusion"],
        width=width or s["tracker.width"],
    )
    _check(cfg.validate)
    return cfg


def _check(fn: Callable[[], None]) -> None:
    try:
        fn()
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# --------------------------------------------------------------------------
# inputs


def load_scenes(path: str) -> list[Scene]:
    if not Path(path).is_file():
        raise UsageError(f"scenes file not found: {path}")
    return read_scenes(path)


def load_prompts(path: str, scenes: Sequence[Scene]) -> list[PromptLabel]:
    """Prompt labels, checked against the scenes they refer to."""
    if not Path(path).is_file():
        raise UsageError(f"prompts file not found: {path}")
    numbered = read_prompts_numbered(path)
    by_id = {s.scene_id: s for s in scenes}
    errors: list[LineError] = []
    for n, label in numbered:
        scene = by_id.get(label.scene_id)
        if scene is None:
            errors.append(LineError(path, n, f"unknown scene_id {label.scene_id!r}"))
            continue
        for f, ids in sorted(label.referred.items()):
            if f >= scene.n_frames:
                errors.append(LineError(path, n, f"referred frame {f} beyond the scene's {scene.n_frames} frames"))
                break
            absent = sorted(ids - {t.track_id for t in scene.present_tracks(f)})
            if absent:
                errors.append(LineError(path, n, f"referred tracks {absent} absent at frame {f}"))
                break
    if errors:
        raise InputError(errors)
    return [label for _, label in numbered]


def load_predictions(path: str, scenes: Sequence[Scene], labels: Sequence[PromptLabel]) -> list:
    """Submissions, each checked to name a known pair and stay inside its scene's frames."""
    if not Path(path).is_file():
        raise UsageError(f"predictions file not found: {path}")
    numbered = read_predictions_numbered(path)
    known = {(l.scene_id, l.prompt_id) for l in labels}
    n_frames = {s.scene_id: s.n_frames for s in scenes}
    errors: list[LineError] = []
    for n, sub in numbered:
        if sub.key not in known:
            errors.append(LineError(path, n, f"prediction for unknown pair {sub.scene_id}/{sub.prompt_id}"))
            continue
        frames = {f for t in sub.tracklets for f in t.boxes}
        if frames and max(frames) >= n_frames[sub.scene_id]:
            errors.append(LineError(path, n, f"frame {max(frames)} beyond the scene's {n_frames[sub.scene_id]} frames"))
    if errors:
        raise InputError(errors)
    return [sub for _, sub in numbered]


def _load_head(path: Optional[str]):
    if path is None:
        warnings.warn("no checkpoint given; tracking with an untrained prompt head", RuntimeWarning, stacklevel=2)
        return None
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    head, _ = load_head(path)
    return head


def _writable(path: str) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise UsageError(f"cannot write {path}: directory missing or not writable")
    if Path(path).is_dir():
        raise UsageError(f"cannot write {path}: it is a directory")


def _group(labels: Sequence[PromptLabel]) -> dict[str, list[PromptLabel]]:
    out: dict[str, list[PromptLabel]] = {}
    for l in labels:
        out.setdefault(l.scene_id, []).append(l)
    return out


# --------------------------------------------------------------------------
# commands


def cmd_gen(args, s: dict) -> int:
    cfg = SceneConfig(n_tracks=s["gen.tracks"], duration_frames=s["gen.frames"], seed=s["gen.seed"])
    _check(cfg.validate)
    if s["gen.scenes"] < 0:
        raise UsageError("--scenes must be >= 0")
    _writable(args.out)
    scenes = generate_scenes(cfg, s["gen.scenes"])
    write_jsonl(args.out, (sc.to_dict() for sc in scenes))
    n_tracks = sum(len(sc.tracks) for sc in scenes)
    n_boxes = sum(len(t.boxes) for sc in scenes for t in sc.tracks)
    print(f"wrote {len(scenes)} scenes, {n_tracks} tracks, {n_boxes} boxes to {args.out}")
    return EXIT_OK


def cmd_prompts(args, s: dict) -> int:
    cfg = PromptConfig(n_random=s["prompts.n_random"], min_boxes=s["prompts.min_boxes"], seed=s["prompts.seed"],
                       max_prompts=s["prompts.max_prompts"])
    _check(cfg.validate)
    scenes = load_scenes(args.scenes)
    _writable(args.out)
    labels = [l for sc in scenes for l in build_prompt_labels(sc, cfg)]
    write_jsonl(args.out, (l.to_dict() for l in labels))
    print(f"wrote {len(labels)} prompts to {args.out}")
    if labels:
        print(format_stats(summarize_promptset(labels)))
    return EXIT_OK


def cmd_train(args, s: dict) -> int:
    scenes = load_scenes(args.scenes)
    labels = load_prompts(args.prompts, scenes)
    noise, tcfg = noise_from(s), tracker_from(s)
    cfg = TrainConfig(steps=s["train.steps"], lr=s["train.lr"], hidden=s["train.hidden"], n_heads=s["train.n_heads"],
                      batch_pairs=s["train.batch_pairs"], rows_per_pair=s["train.rows_per_pair"],
                      seed=s["train.seed"])
    _check(cfg.validate)
    if tcfg.width % cfg.n_heads:
        raise UsageError(f"width {tcfg.width} is not divisible by {cfg.n_heads} heads")
    _writable(args.out)
    pairs = build_training_pairs(scenes, labels, tcfg, noise)
    if not pairs:
        raise UsageError("no training pairs: the prompts refer to no tracked objects")
    head, history = train_prompt_head(pairs, cfg)
    save_head(args.out, head, {"steps": cfg.steps, "lr": cfg.lr, "seed": cfg.seed, "n_pairs": len(pairs)})
    pos, neg = head_separation(head, pairs)
    tail = history.loss[-50:] or [float("nan")]
    print(f"trained on {len(pairs)} pairs for {cfg.steps} steps; final loss {sum(tail) / len(tail):.6f}")
    print(f"mean probability: referred {pos:.6f}, not referred {neg:.6f}")
    print(f"wrote checkpoint to {args.out}")
    return EXIT_OK


def _run_tracker(name: str, scene: Scene, labels, head, tcfg, noise):
    if name == "greedy":
        return run_greedy_baseline(scene, labels, head, tcfg, noise)
    return run_query_tracker(scene, labels, head, tcfg, noise)


def _existing_predictions(path: str, wanted: set) -> dict:
    """Valid lines of an earlier, possibly interrupted, run keyed by pair."""
    done = {}
    if not Path(path).is_file():
        return done
    skipped: list[LineError] = []
    for _, sub in iter_jsonl(path, "prediction", skipped):
        if sub.key in wanted:
            done[sub.key] = sub
    for e in skipped:
        print(f"warning: ignoring unreadable line of earlier output: {e}", file=sys.stderr)
    return done


def cmd_track(args, s: dict) -> int:
    tracker = s["track.tracker"]
    if tracker not in ("query", "greedy"):
        raise UsageError(f"--tracker must be 'query' or 'greedy', got {tracker!r}")
    scenes = load_scenes(args.scenes)
    labels = load_prompts(args.prompts, scenes)
    head = _load_head(args.checkpoint)
    noise = noise_from(s)
    width = head.width if head is not None else s["tracker.width"]
    tcfg = tracker_from(s, width)
    if head is None:
        head = PromptHead.init(width, 4 if width % 4 == 0 else 1, seed=0)
    _writable(args.out)
    by_scene = _group(labels)
    wanted = {(l.scene_id, l.prompt_id) for l in labels}
    done = _existing_predictions(args.out, wanted) if not args.overwrite else {}
    resumed = len(done)
    with open(args.out, "a" if done else "w", encoding="utf-8") as fh:
        for scene in scenes:
            todo = [l for l in by_scene.get(scene.scene_id, []) if (scene.scene_id, l.prompt_id) not in done]
            if not todo:
                continue
            for sub in _run_tracker(tracker, scene, todo, head, tcfg, noise):
                done[sub.key] = sub
                fh.write(dumps_line(sub.to_dict()) + "\n")
            fh.flush()
    if set(done) != wanted:
        raise InvariantViolation(f"{len(wanted - set(done))} pairs missing after tracking")
    # final pass: sorted, one line per pair
    write_jsonl(args.out, (done[k].to_dict() for k in sorted(done)))
    n_boxes = referred_box_count(done.values())
    print(f"{tracker} tracker: {len(done)} pairs ({resumed} resumed), {n_boxes} referred boxes -> {args.out}")
    return EXIT_OK


def _evaluate(scenes, labels, subs, s: dict, per_pair: bool, report_path: Optional[str], title: str) -> int:
    try:
        report = aggregate_benchmark(evaluate_pairs(scenes, labels, subs, s["eval.n_recall"], s["eval.gate"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(render_table(report, per_pair=per_pair, label=title))
    if report.extra_fp:
        print(f"false positives on pairs without ground truth: {report.extra_fp}")
    if report_path:
        Path(report_path).write_text(json.dumps(report.to_dict(), indent=1, sort_keys=False, allow_nan=False) + "\n")
    return EXIT_OK


def cmd_eval(args, s: dict) -> int:
    if s["eval.n_recall"] < 2 or s["eval.gate"] <= 0:
        raise UsageError("--n-recall must be >= 2 and --gate > 0")
    scenes = load_scenes(args.scenes)
    labels = load_prompts(args.prompts, scenes)
    subs = load_predictions(args.predictions, scenes, labels)
    if args.report:
        _writable(args.report)
    return _evaluate(scenes, labels, subs, s, args.per_pair, args.report, "mean")


def cmd_sweep(args, s: dict) -> int:
    tracker = s["track.tracker"]
    if tracker not in ("query", "greedy"):
        raise UsageError(f"--tracker must be 'query' or 'greedy', got {tracker!r}")
    gammas = sorted(s["sweep.gammas"])
    if not gammas or any(not 0 < g < 1 for g in gammas):
        raise UsageError("--gammas must be values in (0, 1)")
    scenes = load_scenes(args.scenes)
    labels = load_prompts(args.prompts, scenes)
    head = _load_head(args.checkpoint) if args.checkpoint or not args.pass_all else None
    if args.pass_all:
        head = PassAllHead()
    noise = noise_from(s)
    width = head.width if isinstance(head, PromptHead) else s["tracker.width"]
    if head is None:
        head = PromptHead.init(width, 4 if width % 4 == 0 else 1, seed=0)
    rows = []
    by_scene = _group(labels)
    for g in gammas:
        tcfg = replace(tracker_from(s, width), gamma_prompt=g)
        subs = [sub for sc in scenes for sub in _run_tracker(tracker, sc, by_scene.get(sc.scene_id, []), head,
                                                             tcfg, noise)]
        report = aggregate_benchmark(evaluate_pairs(scenes, labels, subs, s["eval.n_recall"], s["eval.gate"]))
        rows.append((g, report, referred_box_count(subs)))
    counts = [n for _, _, n in rows]
    if any(b > a for a, b in zip(counts, counts[1:])):
        raise InvariantViolation(f"referred box counts increase with the prompt threshold: {counts}")
    print(render_sweep_table(rows))
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="langtrack", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="INI file with [gen] [prompts] [noise] [tracker] [train] [track] [eval] sections")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_text)
        seen = set()
        for opt in OPTIONS[name]:
            if opt.flag in seen:
                continue
            seen.add(opt.flag)
            kind = str if opt.kind is _floats else opt.kind
            if opt.kind is _bool:
                kind = _bool_arg
            sp.add_argument(opt.flag, dest=_dest(opt), type=kind, default=None,
                            help=f"{opt.help} (default {opt.default})")
        return sp

    g = add("gen", "generate synthetic scenes")
    g.add_argument("--out", default="scenes.jsonl")
    pr = add("prompts", "build prompt labels for scenes")
    pr.add_argument("--scenes", dest="scenes_path", default="scenes.jsonl")
    pr.add_argument("--out", default="prompts.jsonl")
    t = add("train", "train the prompt head and write a checkpoint")
    t.add_argument("--scenes", default="scenes.jsonl")
    t.add_argument("--prompts", default="prompts.jsonl")
    t.add_argument("--out", default="head.ckpt.json")
    tr = add("track", "run a tracker and write predictions")
    tr.add_argument("--scenes", default="scenes.jsonl")
    tr.add_argument("--prompts", default="prompts.jsonl")
    tr.add_argument("--checkpoint")
    tr.add_argument("--out", default="predictions.jsonl")
    tr.add_argument("--overwrite", action="store_true", help="ignore pairs already present in --out")
    e = add("eval", "score predictions")
    e.add_argument("--predictions", default="predictions.jsonl")
    e.add_argument("--scenes", default="scenes.jsonl")
    e.add_argument("--prompts", default="prompts.jsonl")
    e.add_argument("--report", default="report.json")
    e.add_argument("--per-pair", action="store_true")
    sw = add("sweep", "track and score at several prompt thresholds")
    sw.add_argument("--scenes", default="scenes.jsonl")
    sw.add_argument("--prompts", default="prompts.jsonl")
    sw.add_argument("--checkpoint")
    sw.add_argument("--pass-all", action="store_true", help="score every query as referred")
    return p


def _bool_arg(text: str) -> bool:
    try:
        return _bool(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


COMMANDS = {"gen": cmd_gen, "prompts": cmd_prompts, "train": cmd_train, "track": cmd_track, "eval": cmd_eval,
            "sweep": cmd_sweep}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.command == "sweep" and isinstance(getattr(args, "gammas", None), str):
        try:
            args.gammas = _floats(args.gammas)
        except ValueError:
            print(f"error: --gammas {args.gammas!r} is not a comma-separated list of numbers", file=sys.stderr)
            return EXIT_INPUT
    if args.command == "prompts":
        args.scenes = args.scenes_path
    try:
        settings = resolve(args, load_ini(args.config), args.command)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _show_warning
            return COMMANDS[args.command](args, settings)
    except InputError as exc:
        print(f"error: invalid input\n{exc}", file=sys.stderr)
        return EXIT_INPUT
    except (UsageError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename or ''}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - any other failure is a bug, reported as such
        log.debug("unexpected failure", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def _show_warning(message, category, filename, lineno, file=None, line=None) -> None:
    print(f"warning: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
