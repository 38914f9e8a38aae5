"""Random element maps and expression trees shared by the set-algebra tests."""

import random

from langtrack.promptgen import And, Elem, Not, Or
from langtrack.simworld import ElementMap

TAGS = ("car", "bus", "red", "white", "moving", "stopped", "left", "front")


def random_map(rng: random.Random, n_tracks: int = 5, n_frames: int = 4) -> ElementMap:
    present = {f: frozenset(t for t in range(1, n_tracks + 1) if rng.random() < 0.8) for f in range(n_frames)}
    members = {}
    for tag in TAGS:
        members[tag] = {f: frozenset(t for t in ids if rng.random() < 0.5) for f, ids in present.items()}
    return ElementMap(members, present)


def random_expr(rng: random.Random, depth: int = 4):
    if depth <= 1 or rng.random() < 0.3:
        return Elem(rng.choice(TAGS))
    r = rng.random()
    if r < 0.25:
        return Not(random_expr(rng, depth - 1))
    kids = tuple(random_expr(rng, depth - 1) for _ in range(rng.choice((2, 3))))
    return And(kids) if r < 0.65 else Or(kids)


def holds(expr, emap: ElementMap, track: int, frame: int) -> bool:
    """Truth of ``expr`` for one track, evaluated predicate by predicate."""
    if isinstance(expr, Elem):
        return track in emap.members[expr.tag].get(frame, ())
    if isinstance(expr, Not):
        return not holds(expr.child, emap, track, frame)
    if isinstance(expr, And):
        return all(holds(c, emap, track, frame) for c in expr.children)
    return any(holds(c, emap, track, frame) for c in expr.children)


def brute_force(expr, emap: ElementMap, frame: int) -> frozenset:
    return frozenset(t for t in emap.present[frame] if holds(expr, emap, t, frame))
