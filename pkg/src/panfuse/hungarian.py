"""Kuhn-Munkres assignment via shortest augmenting paths with dual potentials.

Among equally good assignments the lexicographically smallest (row, col) pair
list is returned.
"""

from __future__ import annotations

import math

import numpy as np


def _solve_min(cost: np.ndarray):
    """Minimum-cost perfect assignment of a square matrix.

    Returns the column per row and the optimal row/column potentials.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assign = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        assign[p[j] - 1] = j - 1
    return assign, u[1:], v[1:]


def _lexicographic(cost: np.ndarray, n_r: int, n_c: int) -> np.ndarray:
    """Optimal assignment whose real (row, col) pairs are lexicographically smallest.

    Rows are pinned one at a time to the smallest column that still admits an
    optimal completion; "unassigned" (a padding column) ranks after every real
    column. Only edges with zero reduced cost under the optimal potentials can
    appear in any optimal assignment, so only those are tried.
    """
    assign, u, v = _solve_min(cost)
    rows = np.arange(len(cost))
    best = cost[rows, assign].sum()
    tol = 1e-9 * len(cost) * max(1.0, float(np.abs(cost).max()))
    tight = np.abs(cost - u[:, None] - v[None, :]) <= tol
    big = 4.0 * len(cost) * max(1.0, float(np.abs(cost).max())) + 1.0
    forced = cost.copy()

    def pin(mat, r, c):
        out = mat.copy()
        keep = out[r, c] if c is not None else None
        if c is None:  # any padding column
            out[r, :n_c] = big
        else:
            out[r, :] = big
            out[r, c] = keep
        return out

    taken: set[int] = set()
    for r in range(n_r):
        current = int(assign[r])
        options = [c for c in range(n_c) if tight[r, c] and c not in taken and (current >= n_c or c < current)]
        for c in options:
            trial = pin(forced, r, c)
            a, _, _ = _solve_min(trial)
            if abs(trial[rows, a].sum() - best) <= tol:
                assign = a
                break
        if assign[r] < n_c:
            taken.add(int(assign[r]))
        forced = pin(forced, r, int(assign[r]) if assign[r] < n_c else None)
    return assign


def hungarian(scores, maximize: bool = True) -> list[tuple[int, int]]:
    """Optimal one-to-one assignment of min(rows, cols) pairs, sorted by row.

    Rectangular inputs are padded with zero-score rows/columns, and padded pairs
    are discarded.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError("scores must be a 2-D matrix")
    n_r, n_c = s.shape
    if n_r == 0 or n_c == 0:
        return []
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    n = max(n_r, n_c)
    padded = np.zeros((n, n))
    padded[:n_r, :n_c] = s
    cost = -padded if maximize else padded
    assign = _lexicographic(cost, n_r, n_c)
    return [(r, int(assign[r])) for r in range(n_r) if assign[r] < n_c]


def assignment_total(scores, pairs) -> float:
    s = np.asarray(scores, dtype=np.float64)
    return math.fsum(s[r, c] for r, c in pairs)
