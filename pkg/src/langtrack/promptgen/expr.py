"""Boolean expression trees over language elements and their set semantics."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterator, Union

from ..simworld import ElementMap, UnknownElementError

MAX_DEPTH = 4


@dataclass(frozen=True)
class Elem:
    tag: str


@dataclass(frozen=True)
class Not:
    child: "Expr"


@dataclass(frozen=True)
class And:
    children: tuple["Expr", ...]

    def __post_init__(self) -> None:
        if len(self.children) < 2:
            raise ValueError("AND needs at least two operands")


@dataclass(frozen=True)
class Or:
    children: tuple["Expr", ...]

    def __post_init__(self) -> None:
        if len(self.children) < 2:
            raise ValueError("OR needs at least two operands")


Expr = Union[Elem, Not, And, Or]


class ExprSchemaError(ValueError):
    pass


def depth(expr: Expr) -> int:
    match expr:
        case Elem():
            return 1
        case Not(child):
            return 1 + depth(child)
        case And(children) | Or(children):
            return 1 + max(depth(c) for c in children)
    raise TypeError(f"not an expression: {expr!r}")


def leaves(expr: Expr) -> Iterator[str]:
    match expr:
        case Elem(tag):
            yield tag
        case Not(child):
            yield from leaves(child)
        case And(children) | Or(children):
            for c in children:
                yield from leaves(c)


def leaf_multiset(expr: Expr) -> Counter:
    return Counter(leaves(expr))


def eval_expression(expr: Expr, emap: ElementMap, frame: int) -> frozenset[int]:
    """Track ids referred to by ``expr`` at ``frame``.

    NOT complements within the tracks present at that frame.
    """
    match expr:
        case Elem(tag):
            return emap.at(tag, frame)
        case Not(child):
            return emap.universe(frame) - eval_expression(child, emap, frame)
        case And(children):
            out = eval_expression(children[0], emap, frame)
            for c in children[1:]:
                out = out & eval_expression(c, emap, frame)
            return out
        case Or(children):
            out = frozenset()
            for c in children:
                out = out | eval_expression(c, emap, frame)
            return out
    raise TypeError(f"not an expression: {expr!r}")


def referred_sets(expr: Expr, emap: ElementMap) -> dict[int, frozenset[int]]:
    """Per-frame referred sets over every frame of the map (empty frames kept)."""
    missing = [t for t in leaves(expr) if t not in emap.members]
    if missing:
        raise UnknownElementError(missing[0])
    return {f: eval_expression(expr, emap, f) for f in emap.frames}


def to_prefix(expr: Expr):
    """Nested-list prefix form, e.g. ``["AND", "car", ["NOT", "left"]]``."""
    match expr:
        case Elem(tag):
            return tag
        case Not(child):
            return ["NOT", to_prefix(child)]
        case And(children):
            return ["AND", *(to_prefix(c) for c in children)]
        case Or(children):
            return ["OR", *(to_prefix(c) for c in children)]
    raise TypeError(f"not an expression: {expr!r}")


def from_prefix(obj) -> Expr:
    if isinstance(obj, str):
        if not obj or obj in ("AND", "OR", "NOT"):
            raise ExprSchemaError(f"invalid element tag {obj!r}")
        return Elem(obj)
    if not isinstance(obj, list) or not obj:
        raise ExprSchemaError(f"expression must be a tag string or non-empty list, got {obj!r}")
    op, *args = obj
    if op == "NOT":
        if len(args) != 1:
            raise ExprSchemaError("NOT takes exactly one operand")
        return Not(from_prefix(args[0]))
    if op in ("AND", "OR"):
        if len(args) < 2:
            raise ExprSchemaError(f"{op} needs at least two operands")
        kids = tuple(from_prefix(a) for a in args)
        return And(kids) if op == "AND" else Or(kids)
    raise ExprSchemaError(f"unknown operator {op!r}")
