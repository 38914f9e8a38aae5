"""Template grammar turning element expressions into English descriptions.

Every element owns a set of surface phrases that no other element shares, so
the element multiset of any rendered description can be recovered by
:func:`parse_elements`. Seed 0 always yields the canonical realization; other
seeds pick phrase variants and wrapper templates pseudo-randomly.
"""

from __future__ import annotations

import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..simworld import CLASSES, COLORS
from .expr import And, Elem, Expr, Not, Or

PLURALS = {
    "car": "cars",
    "truck": "trucks",
    "bus": "buses",
    "trailer": "trailers",
    "motorcycle": "motorcycles",
    "bicycle": "bicycles",
    "pedestrian": "pedestrians",
}

# predicate phrases usable as post-nominal clauses
CLAUSES = {
    "moving": ("currently in motion", "that are moving", "on the move"),
    "stopped": ("standing still", "that are stationary", "at a standstill"),
    "crossing": ("crossing the road", "that are crossing the street"),
    "overtaking": ("in the process of overtaking", "that are overtaking"),
    "left": ("situated on the left side", "located to the left"),
    "right": ("situated on the right side", "located to the right"),
    "front": ("situated in front", "located ahead"),
    "back": ("situated behind", "located at the back"),
}

TEMPLATES = ("{np}", "all of {np}", "{np} in the scene", "every one of {np}")


def _kind(tag: str) -> str:
    if tag in PLURALS:
        return "class"
    if tag in COLORS:
        return "color"
    if tag in CLAUSES:
        return "clause"
    return "other"


class _Chooser:
    def __init__(self, seed: int):
        self._rng = None if seed == 0 else random.Random(seed)

    def pick(self, options):
        if self._rng is None:
            return options[0]
        return options[self._rng.randrange(len(options))]


def _clause(tag: str, ch: _Chooser) -> str:
    kind = _kind(tag)
    if kind == "class":
        return "classified as " + PLURALS[tag]
    if kind == "color":
        return ch.pick(("colored " + tag, "in " + tag))
    if kind == "clause":
        return ch.pick(CLAUSES[tag])
    return f"tagged '{tag}'"


def _is_simple(e: Expr) -> bool:
    return isinstance(e, Elem) or (isinstance(e, Not) and isinstance(e.child, Elem))


def _conjunction(items: list[Expr], ch: _Chooser) -> str:
    adjectives, noun, clauses = [], None, []
    for item in items:
        if isinstance(item, Not):
            phrase = _clause(item.child.tag, ch)
            if phrase.startswith("that are "):
                clauses.append("that are not " + phrase[len("that are "):])
            else:
                clauses.append("not " + phrase)
            continue
        tag = item.tag
        kind = _kind(tag)
        if kind == "color":
            adjectives.append(tag)
        elif kind == "class" and noun is None:
            noun = PLURALS[tag]
        else:
            clauses.append(_clause(tag, ch))
    words = ["the"]
    if adjectives:
        words.append(" and ".join(adjectives))
    words.append(noun or "objects")
    text = " ".join(words)
    if clauses:
        text += " " + ", ".join(clauses)
    return text


def _noun_phrase(expr: Expr, ch: _Chooser) -> str:
    if _is_simple(expr):
        return _conjunction([expr], ch)
    match expr:
        case Not(child):
            return "the objects other than " + _noun_phrase(child, ch)
        case Or(children):
            return " or ".join(_noun_phrase(c, ch) for c in children)
        case And(children):
            simple = [c for c in children if _is_simple(c)]
            nested = [c for c in children if not _is_simple(c)]
            head = _conjunction(simple, ch) if simple else "the objects"
            if not nested:
                return head
            tail = ", and also among ".join(_noun_phrase(c, ch) for c in nested)
            return f"{head} that are also among {tail}"
    raise TypeError(f"not an expression: {expr!r}")


def render_description(expr: Expr, seed: int = 0) -> str:
    ch = _Chooser(seed)
    template = ch.pick(TEMPLATES)
    return template.format(np=_noun_phrase(expr, ch))


def _phrase_table() -> dict[str, str]:
    table = {}
    for tag, plural in PLURALS.items():
        table[plural] = tag
    for color in COLORS:
        table[color] = color
    for tag, variants in CLAUSES.items():
        for v in variants:
            table[v] = tag
            if v.startswith("that are "):
                table["that are not " + v[len("that are "):]] = tag
    return table


PHRASES = _phrase_table()
_PHRASE_RE = re.compile(
    r"tagged '([^']+)'|\b(" + "|".join(re.escape(p) for p in sorted(PHRASES, key=len, reverse=True)) + r")\b"
)


def parse_elements(text: str) -> Counter:
    """Recover the multiset of element tags mentioned in a rendered description."""
    found = Counter()
    for m in _PHRASE_RE.finditer(text):
        if m.group(1) is not None:
            found[m.group(1)] += 1
        else:
            found[PHRASES[m.group(2)]] += 1
    return found


def _request_terms(expr: Expr) -> str:
    match expr:
        case Elem(tag):
            return PLURALS.get(tag, tag)
        case Not(Elem(tag)) if _kind(tag) == "clause" and tag in ("left", "right", "front", "back"):
            return f"not in the {tag}"
        case Not(child):
            return "not " + _request_terms(child)
        case And(children):
            return ", ".join(_request_terms(c) for c in children)
        case Or(children):
            return "(" + " or ".join(_request_terms(c) for c in children) + ")"
    raise TypeError(f"not an expression: {expr!r}")


@dataclass
class ExternalDescriber:
    """Boundary for an external text-generation service.

    Disabled unless a ``client`` callable (request string -> sentence) is
    supplied; the benchmark itself always uses :func:`render_description`.
    """

    client: Optional[Callable[[str], str]] = None
    instruction: str = "Write one sentence describing the objects that match these attributes:"

    def build_request(self, expr: Expr) -> str:
        return f"{self.instruction} {_request_terms(expr)}"

    def describe(self, expr: Expr) -> str:
        if self.client is None:
            raise RuntimeError("external description client is disabled")
        return self.client(self.build_request(expr))
