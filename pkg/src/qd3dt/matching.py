"""One-to-one assignment on affinity matrices (higher is better)."""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment


def greedy_match(affinity, threshold: float = 0.0) -> list[tuple[int, int]]:
    """Repeatedly take the best remaining entry at or above ``threshold``.

    Ties go to the lower row index, then the lower column index; rows are
    expected in track-id order.
    """
    A = np.asarray(affinity, dtype=float)
    if A.size == 0:
        return []
    rows, cols = np.nonzero(A >= threshold)
    order = np.lexsort((cols, rows, -A[rows, cols]))
    used_r, used_c = set(), set()
    out = []
    for k in order:
        r, c = int(rows[k]), int(cols[k])
        if r in used_r or c in used_c:
            continue
        used_r.add(r)
        used_c.add(c)
        out.append((r, c))
    return sorted(out)


def hungarian_match(affinity, threshold: float = 0.0) -> list[tuple[int, int]]:
    """Maximum-total-affinity partial assignment over entries >= ``threshold``."""
    A = np.asarray(affinity, dtype=float)
    if A.size == 0:
        return []
    allowed = A >= threshold
    weights = np.where(allowed, np.maximum(A, 0.0), 0.0)
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return sorted(
        (int(r), int(c)) for r, c in zip(rows, cols) if allowed[r, c] and A[r, c] >= 0.0
    )


MATCHERS = {"greedy": greedy_match, "hungarian": hungarian_match}
