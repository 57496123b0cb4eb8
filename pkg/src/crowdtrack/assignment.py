"""Rectangular linear assignment with forbidden pairs.

``hungarian`` returns a maximum-cardinality set of allowed (row, col) pairs
with minimum total cost. Among equally cheap optima the one whose sorted pair
list is lexicographically smallest is returned, so results do not depend on
solver internals.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

FORBIDDEN = math.inf


def _solve_square(C: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest augmenting path Hungarian method on a square matrix.

    Returns (col_of_row, u, v) with u, v optimal dual potentials.
    """
    N = C.shape[0]
    u = np.zeros(N + 1)
    v = np.zeros(N + 1)
    p = np.zeros(N + 1, dtype=np.int64)  # p[j]: row (1-based) assigned to column j
    way = np.zeros(N + 1, dtype=np.int64)
    for i in range(1, N + 1):
        p[0] = i
        j0 = 0
        minv = np.full(N + 1, np.inf)
        used = np.zeros(N + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cols = np.nonzero(free)[0]
            cur = C[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = cur < minv[cols]
            minv[cols[better]] = cur[better]
            way[cols[better]] = j0
            k = int(np.argmin(minv[cols]))
            j1 = int(cols[k])
            delta = minv[j1]
            used_cols = np.nonzero(used)[0]
            u[p[used_cols]] += delta
            v[used_cols] -= delta
            minv[cols] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.empty(N, dtype=np.int64)
    for j in range(1, N + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _reroute(start_row: int, target_col: int, blocked_col: int, tight: np.ndarray,
             real: np.ndarray, fixed: np.ndarray, row_of_col: np.ndarray):
    """Alternating path from a freed row to a freed column over tight edges.

    Rows already settled on a real pair are frozen; settled rows that are
    unassigned may move, but only along non-real edges. Returns the list of
    (row, col) reassignments or None.
    """
    prev = {start_row: None}
    queue = deque([start_row])
    while queue:
        r = queue.popleft()
        edges = tight[r] & ~real[r] if fixed[r] else tight[r]
        for c in np.nonzero(edges)[0]:
            c = int(c)
            if c == blocked_col:
                continue
            if c == target_col:
                moves = [(r, c)]
                while prev[r] is not None:
                    r, c = prev[r]
                    moves.append((r, c))
                return moves
            owner = int(row_of_col[c])
            if owner in prev or (fixed[owner] and real[owner, c]):
                continue
            prev[owner] = (r, c)
            queue.append(owner)
    return None


def hungarian(cost) -> list[tuple[int, int]]:
    """Optimal assignment; ``FORBIDDEN`` (inf) entries are never paired."""
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {C.shape}")
    n, m = C.shape
    if n == 0 or m == 0:
        return []
    if np.any(np.isnan(C)) or np.any(C == -np.inf):
        raise ValueError("cost matrix may only contain finite values or +inf")
    allowed = np.isfinite(C)
    if not allowed.any():
        return []

    finite = C[allowed]
    lo = float(finite.min())
    span = float(finite.max()) - lo
    k = min(n, m)
    big = (span + 1.0) * (k + 1)
    N = max(n, m)
    square = np.zeros((N, N))
    square[:n, :m] = np.where(allowed, C - lo, big)

    col_of_row, u, v = _solve_square(square)
    tol = 1e-10 * (1.0 + big)
    tight = np.abs(square - u[:, None] - v[None, :]) <= tol
    row_of_col = np.empty(N, dtype=np.int64)
    row_of_col[col_of_row] = np.arange(N)
    tight[np.arange(N), col_of_row] = True

    real = np.zeros((N, N), dtype=bool)
    real[:n, :m] = allowed
    fixed = np.zeros(N, dtype=bool)
    for i in range(n):
        cur = int(col_of_row[i])
        cur_real = bool(real[i, cur])
        for j in np.nonzero(tight[i] & real[i])[0]:
            j = int(j)
            if cur_real and j >= cur:
                break
            owner = int(row_of_col[j])
            if fixed[owner] and real[owner, j]:
                continue
            fixed[i] = True
            moves = _reroute(owner, cur, j, tight, real, fixed, row_of_col)
            fixed[i] = False
            if moves is None:
                continue
            for r, c in moves:
                col_of_row[r] = c
                row_of_col[c] = r
            col_of_row[i] = j
            row_of_col[j] = i
            break
        fixed[i] = True

    return [(i, int(col_of_row[i])) for i in range(n) if real[i, col_of_row[i]]]
