"""Prompt construction: element combination, box-count filtering, labelling."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

from ..simworld import CLASSES, COLORS, LOCATIONS, ElementMap, Scene
from .expr import And, Elem, Expr, Not, Or, MAX_DEPTH, depth, from_prefix, referred_sets, to_prefix
from .grammar import render_description

ACTIONS = ("moving", "stopped", "crossing", "overtaking")

# scale of the real-world benchmark, printed next to local statistics
REFERENCE_SCALE = {"prompts": 35367, "instances_per_prompt": 5.3, "prompts_per_video": 41.6}

BOX_BINS = (1, 10, 100, 1000)


@dataclass(frozen=True)
class PromptConfig:
    n_random: int = 60
    min_boxes: int = 10
    seed: int = 0
    max_prompts: Optional[int] = 40
    curated: bool = True
    text_variety: bool = True

    def validate(self) -> None:
        if self.min_boxes < 1:
            raise ValueError("min_boxes must be >= 1")
        if self.n_random < 0:
            raise ValueError("n_random must be >= 0")
        if self.max_prompts is not None and self.max_prompts < 0:
            raise ValueError("max_prompts must be >= 0")


@dataclass
class PromptLabel:
    prompt_id: str
    scene_id: str
    expr: Expr
    text: str
    referred: dict[int, frozenset[int]]  # only frames with at least one referent

    @property
    def n_instances(self) -> int:
        ids = set()
        for s in self.referred.values():
            ids |= s
        return len(ids)

    @property
    def n_boxes(self) -> int:
        return sum(len(s) for s in self.referred.values())

    def referred_at(self, frame: int) -> frozenset[int]:
        return self.referred.get(frame, frozenset())

    def to_dict(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "scene_id": self.scene_id,
            "expr": to_prefix(self.expr),
            "text": self.text,
            "referred": {str(f): sorted(ids) for f, ids in sorted(self.referred.items())},
            "stats": {"n_instances": self.n_instances, "n_boxes": self.n_boxes},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PromptLabel":
        referred = {int(f): frozenset(int(i) for i in ids) for f, ids in d["referred"].items()}
        return cls(
            prompt_id=str(d["prompt_id"]),
            scene_id=str(d["scene_id"]),
            expr=from_prefix(d["expr"]),
            text=str(d["text"]),
            referred={f: s for f, s in referred.items() if s},
        )


def _present(emap: ElementMap, pool: Sequence[str]) -> list[str]:
    return [t for t in pool if t in emap.members]


def curated_templates(emap: ElementMap) -> list[Expr]:
    """Hand-picked, readable combinations instantiated over the map's tags."""
    classes = _present(emap, CLASSES)
    colors = _present(emap, COLORS)
    actions = _present(emap, ACTIONS)
    locs = _present(emap, LOCATIONS)
    out: list[Expr] = []
    for a in actions:
        out.append(Elem(a))
        out.extend(And((Elem(a), Elem(l))) for l in locs)
    for c in classes:
        out.append(Elem(c))
        out.extend(And((Elem(c), Elem(col))) for col in colors)
        out.extend(And((Elem(c), Elem(a))) for a in actions)
        out.extend(And((Elem(c), Elem(l))) for l in locs)
        out.extend(And((Elem(c), Elem(col), Elem("moving"))) for col in colors if "moving" in actions)
        out.extend(And((Elem(c), Elem("moving"), Not(Elem(l)))) for l in locs if "moving" in actions)
    out.extend(Or((Elem(a), Elem(b))) for a, b in combinations(classes, 2))
    out.extend(And((Elem(col), Not(Elem(c)))) for col in colors for c in classes[:2])
    return out


def random_tree(tags: Sequence[str], rng: random.Random, max_depth: int = MAX_DEPTH) -> Expr:
    """Random AND/OR/NOT tree; leaves drawn without replacement from ``tags``."""
    if not tags:
        raise ValueError("no tags to build an expression from")
    pool = list(tags)
    rng.shuffle(pool)

    def grow(budget: int, root: bool) -> Expr:
        p_leaf = 0.1 if root else 0.55
        if budget == 1 or len(pool) < 2 or rng.random() < p_leaf:
            return Elem(pool.pop())
        r = rng.random()
        if r < 0.2:
            child = grow(budget - 1, False)
            return child.child if isinstance(child, Not) else Not(child)
        kids = []
        for _ in range(rng.choice((2, 2, 3))):
            if not pool:
                break
            kids.append(grow(budget - 1, False))
        if len(kids) < 2:
            return kids[0]
        return And(tuple(kids)) if r < 0.7 else Or(tuple(kids))

    return grow(max_depth, True)


def random_candidates(emap: ElementMap, n_random: int, seed: int) -> list[Expr]:
    rng = random.Random(seed)
    tags = emap.tags
    if not tags:
        return []
    return [random_tree(tags, rng) for _ in range(n_random)]


def count_boxes(expr: Expr, emap: ElementMap) -> int:
    return sum(len(s) for s in referred_sets(expr, emap).values())


def enumerate_combinations(emap: ElementMap, n_random: int = 60, min_boxes: int = 10,
                           seed: int = 0, curated: bool = True) -> list[Expr]:
    """Curated plus random combinations whose referred box count reaches ``min_boxes``.

    Duplicates are dropped, keeping the first occurrence.
    """
    if min_boxes < 1:
        raise ValueError("min_boxes must be >= 1")
    candidates = (curated_templates(emap) if curated else []) + random_candidates(emap, n_random, seed)
    seen, kept = set(), []
    for expr in candidates:
        if expr in seen:
            continue
        seen.add(expr)
        if count_boxes(expr, emap) >= min_boxes:
            kept.append(expr)
    return kept


def _stable_int(*parts) -> int:
    h = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big")


def make_label(prompt_id: str, scene: Scene, expr: Expr, text_seed: int = 0) -> PromptLabel:
    referred = {f: s for f, s in referred_sets(expr, scene.element_map).items() if s}
    return PromptLabel(prompt_id, scene.scene_id, expr, render_description(expr, text_seed), referred)


def build_prompt_labels(scene: Scene, config: PromptConfig = PromptConfig()) -> list[PromptLabel]:
    config.validate()
    scene_seed = _stable_int("prompts", config.seed, scene.scene_id)
    exprs = enumerate_combinations(scene.element_map, config.n_random, config.min_boxes,
                                   seed=scene_seed % (2**32), curated=config.curated)
    rng = random.Random(scene_seed)
    order = list(range(len(exprs)))
    rng.shuffle(order)
    if config.max_prompts is not None:
        order = order[: config.max_prompts]
    labels = []
    for k, idx in enumerate(order):
        text_seed = rng.randrange(1, 1 << 30) if config.text_variety else 0
        labels.append(make_label(f"{scene.scene_id}:p{k:03d}", scene, exprs[idx], text_seed))
    return labels


@dataclass
class PromptSetStats:
    count: int
    n_scenes: int
    mean_instances: float
    mean_boxes: float
    prompts_per_scene: float
    box_histogram: dict[str, int]
    instance_histogram: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "n_scenes": self.n_scenes,
            "mean_instances": round(self.mean_instances, 6),
            "mean_boxes": round(self.mean_boxes, 6),
            "prompts_per_scene": round(self.prompts_per_scene, 6),
            "box_histogram": self.box_histogram,
            "instance_histogram": self.instance_histogram,
            "reference_scale": REFERENCE_SCALE,
        }


def _bin_label(value: int, edges: Sequence[int]) -> str:
    for lo, hi in zip(edges, edges[1:]):
        if lo <= value < hi:
            return f"[{lo},{hi})"
    if value < edges[0]:
        return f"<{edges[0]}"
    return f">={edges[-1]}"


def summarize_promptset(labels: Sequence[PromptLabel]) -> PromptSetStats:
    if not labels:
        raise ValueError("cannot summarize an empty prompt set")
    n = len(labels)
    boxes = [l.n_boxes for l in labels]
    insts = [l.n_instances for l in labels]
    box_hist: dict[str, int] = {}
    for b in boxes:
        key = _bin_label(b, BOX_BINS)
        box_hist[key] = box_hist.get(key, 0) + 1
    inst_hist: dict[str, int] = {}
    for i in insts:
        key = _bin_label(i, (0, 1, 11, 21))
        inst_hist[key] = inst_hist.get(key, 0) + 1
    n_scenes = len({l.scene_id for l in labels})
    return PromptSetStats(
        count=n,
        n_scenes=n_scenes,
        mean_instances=sum(insts) / n,
        mean_boxes=sum(boxes) / n,
        prompts_per_scene=n / n_scenes,
        box_histogram=dict(sorted(box_hist.items())),
        instance_histogram=dict(sorted(inst_hist.items())),
    )


def format_stats(stats: PromptSetStats) -> str:
    ref = REFERENCE_SCALE
    lines = [
        f"prompts            {stats.count:>8d}   (reference scale: {ref['prompts']:,})",
        f"scenes             {stats.n_scenes:>8d}",
        f"prompts/scene      {stats.prompts_per_scene:>8.1f}   (reference scale: {ref['prompts_per_video']})",
        f"instances/prompt   {stats.mean_instances:>8.1f}   (reference scale: {ref['instances_per_prompt']})",
        f"boxes/prompt       {stats.mean_boxes:>8.1f}",
        "boxes/prompt histogram:",
    ]
    lines += [f"  {k:<12s} {v:d}" for k, v in stats.box_histogram.items()]
    return "\n".join(lines)
