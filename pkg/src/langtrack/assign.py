"""Optimal and greedy bipartite assignment over gated cost matrices."""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

Pairs = list[tuple[int, int]]


def _prepare(cost, forbidden, gate) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        if c.size == 0:
            c = c.reshape(0, 0)
        else:
            raise ValueError(f"cost matrix must be 2-D, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix entries must be finite")
    if c.size and c.min() < 0:
        raise ValueError("cost matrix entries must be non-negative")
    mask = np.zeros(c.shape, dtype=bool) if forbidden is None else np.asarray(forbidden, dtype=bool)
    if mask.shape != c.shape:
        raise ValueError(f"forbidden mask shape {mask.shape} != cost shape {c.shape}")
    if gate is not None:
        mask = mask | (c >= gate)
    return c, mask


def _components(allowed: np.ndarray) -> list[tuple[list[int], list[int]]]:
    """Connected components of the allowed-edge bipartite graph (rows, cols)."""
    n_rows, n_cols = allowed.shape
    parent = list(range(n_rows + n_cols))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    rows, cols = np.nonzero(allowed)
    for r, c in zip(rows.tolist(), cols.tolist()):
        a, b = find(r), find(n_rows + c)
        if a != b:
            parent[max(a, b)] = min(a, b)
    groups: dict[int, tuple[list[int], list[int]]] = {}
    for r in sorted(set(rows.tolist())):
        groups.setdefault(find(r), ([], []))[0].append(r)
    for c in sorted(set(cols.tolist())):
        groups.setdefault(find(n_rows + c), ([], []))[1].append(c)
    return [groups[k] for k in sorted(groups)]


def solve_assignment(cost, forbidden: Optional[np.ndarray] = None, gate: Optional[float] = None) -> Pairs:
    """Maximum-cardinality, then minimum-cost, one-to-one assignment.

    Entries flagged in ``forbidden`` (or >= ``gate``) are never matched.
    Returns (row, col) pairs sorted by row.
    """
    c, mask = _prepare(cost, forbidden, gate)
    allowed = ~mask
    if c.size == 0 or not allowed.any():
        return []
    if allowed.sum(axis=0).max() <= 1 and allowed.sum(axis=1).max() <= 1:
        # no row or column has a choice to make
        rows, cols = np.nonzero(allowed)
        return list(zip(rows.tolist(), cols.tolist()))
    pairs: Pairs = []
    for rows, cols in _components(allowed):
        if len(rows) == 1:
            r = rows[0]
            sub = c[r, cols]
            pairs.append((r, cols[int(np.argmin(sub))]))
        elif len(cols) == 1:
            col = cols[0]
            sub = c[rows, col]
            pairs.append((rows[int(np.argmin(sub))], col))
        else:
            sub = c[np.ix_(rows, cols)]
            sub_allowed = allowed[np.ix_(rows, cols)]
            # any solution using one more forbidden edge costs more than all allowed edges together
            big = 2.0 * float(sub[sub_allowed].sum()) + 1.0
            ri, ci = linear_sum_assignment(np.where(sub_allowed, sub, big))
            pairs.extend((rows[i], cols[j]) for i, j in zip(ri, ci) if sub_allowed[i, j])
    return sorted(pairs)


def greedy_assignment(cost, gate: float, forbidden: Optional[np.ndarray] = None) -> Pairs:
    """Repeatedly take the globally cheapest free entry below ``gate``."""
    if not gate > 0:
        raise ValueError("gate must be > 0")
    c, mask = _prepare(cost, forbidden, gate)
    if c.size == 0:
        return []
    rows, cols = np.nonzero(~mask)
    order = sorted(zip(c[rows, cols].tolist(), rows.tolist(), cols.tolist()))
    used_r, used_c, pairs = set(), set(), []
    for _, r, col in order:
        if r in used_r or col in used_c:
            continue
        used_r.add(r)
        used_c.add(col)
        pairs.append((r, col))
    return sorted(pairs)


def assignment_cost(cost, pairs: Pairs) -> float:
    c = np.asarray(cost, dtype=np.float64)
    return float(sum(c[r, col] for r, col in sorted(pairs)))
