"""Exact minimum-cost assignment on square cost matrices.

Two independent routes: exhaustive enumeration (ground truth for small n,
lexicographically smallest permutation on ties) and an O(n^3) shortest
augmenting path Hungarian solver. ``assign_min`` dispatches by size; the
test suite requires both routes to agree.
"""

from itertools import permutations

import numpy as np

from .errors import DataError


def _validate(cost):
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] == 0:
        raise DataError(f"assignment: cost matrix must be square and non-empty, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise DataError("assignment: cost matrix contains non-finite entries")
    return cost


def assign_min_exhaustive(cost):
    """Enumerate all permutations; ties break to the lexicographically smallest."""
    cost = _validate(cost)
    n = cost.shape[0]
    best_perm = None
    best_total = np.inf
    rows = np.arange(n)
    for perm in permutations(range(n)):
        total = float(cost[rows, perm].sum())
        if total < best_total:
            best_total = total
            best_perm = perm
    return best_perm, best_total


def assign_min_hungarian(cost):
    """Shortest augmenting path Hungarian method (Jonker-Volgenant style)."""
    cost = _validate(cost)
    n = cost.shape[0]
    # 1-indexed potentials and matching; column 0 is the virtual root.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[j] = row assigned to column j
    way = np.zeros(n + 1, dtype=np.int64)
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = cost

    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = np.inf
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = a[i0, j] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1

    perm = [0] * n
    for j in range(1, n + 1):
        perm[match[j] - 1] = j - 1
    total = float(cost[np.arange(n), perm].sum())
    return tuple(perm), total


def assign_min(cost):
    """Exact minimum-cost assignment: (row -> column permutation, total cost).

    Exhaustive for n <= 4 (deterministic tie-breaking), Hungarian beyond.
    """
    cost = _validate(cost)
    if cost.shape[0] <= 4:
        return assign_min_exhaustive(cost)
    return assign_min_hungarian(cost)
