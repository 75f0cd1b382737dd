"""Independent reference implementations used only by the tests.

These are deliberately naive: dictionaries, plain recursion and exhaustive enumeration.
"""
import itertools
from functools import lru_cache

import numpy as np


def floyd_warshall(raw):
    n = len(raw)
    d = [[int(x) for x in row] for row in raw]
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if d[i][k] + d[k][j] < d[i][j]:
                    d[i][j] = d[i][k] + d[k][j]
    return d


def reference_values(delta, types, anchor_origin, anchor_time):
    """Direct recursive transcription of the constrained value recursion.

    ``types`` maps (origin, destination, start) to (Pr[X >= 1], value).
    Returns (value function, idle-target function).
    """
    n = len(delta)

    def reach(t, l):
        return delta[l][anchor_origin] <= anchor_time - t

    @lru_cache(maxsize=None)
    def idle(t, l):
        rem = anchor_time - t
        options = []
        if delta[l][anchor_origin] <= rem - 1:
            options.append((value(t + 1, l), 0, l))
        for d in range(n):
            if d != l and delta[l][d] + delta[d][anchor_origin] <= rem:
                options.append((value(t + delta[l][d], d), 1, d))
        # highest value, then Wait, then the lowest region
        best = max(options, key=lambda o: (o[0], -o[1], -o[2]))
        return best[0], best[2]

    @lru_cache(maxsize=None)
    def value(t, l):
        assert reach(t, l)
        if t == anchor_time and l == anchor_origin:
            return 0.0
        best, _ = idle(t, l)
        rem = anchor_time - t
        ranked = []
        for (o, d, s), (p, v) in types.items():
            if o == l and s == t and p > 0 and d != l and delta[l][d] + delta[d][anchor_origin] <= rem:
                ranked.append((v + value(t + delta[l][d], d), d, p))
        ranked.sort(key=lambda e: (-e[0], e[1]))
        total, keep = 0.0, 1.0
        for score, _, p in ranked:
            if score <= best:
                break
            total += keep * p * score
            keep *= 1.0 - p
        return total + keep * best

    def idle_target(t, l):
        return idle(t, l)[1]

    return value, idle_target


def reference_serve_probabilities(delta, types, anchor_origin, anchor_time, start):
    """Recursive reach-probability propagation through the reference policy."""
    value, idle_target = reference_values(delta, types, anchor_origin, anchor_time)
    out = {}

    def visit(t, l, x):
        if t == anchor_time and l == anchor_origin:
            return
        target = idle_target(t, l)
        best = value(t + 1, l) if target == l else value(t + delta[l][target], target)
        rem = anchor_time - t
        ranked = []
        for w, (p, v) in types.items():
            o, d, s = w
            if o == l and s == t and p > 0 and d != l and delta[l][d] + delta[d][anchor_origin] <= rem:
                score = v + value(t + delta[l][d], d)
                if score > best:
                    ranked.append((score, d, w, p))
        ranked.sort(key=lambda e: (-e[0], e[1]))
        keep = 1.0
        for _, d, w, p in ranked:
            out[w] = out.get(w, 0.0) + x * keep
            visit(t + delta[l][d], d, x * keep * p)
            keep *= 1.0 - p
        if keep > 0:
            if target == l:
                visit(t + 1, l, x * keep)
            else:
                visit(t + delta[l][target], target, x * keep)

    visit(start[0], start[1], 1.0)
    return out


def best_matching_weight(weights: dict, rows, cols) -> float:
    """Max total weight over all matchings by permutation enumeration."""
    rows, cols = list(rows), list(cols)
    best = 0.0
    if len(rows) <= len(cols):
        for perm in itertools.permutations(cols, len(rows)):
            best = max(best, sum(weights.get((r, c), 0.0) for r, c in zip(rows, perm)))
    else:
        for perm in itertools.permutations(rows, len(cols)):
            best = max(best, sum(weights.get((r, c), 0.0) for r, c in zip(perm, cols)))
    return best


def best_two_partition(points):
    """Exhaustive 2-means: the split of ``points`` minimizing within-cluster squared distance."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    # every nonempty proper split, with point 0 pinned to side B to skip mirror images
    masks = np.arange(1, 2 ** (n - 1), dtype=np.int64)
    sel = ((masks[:, None] >> np.arange(n)) & 1).astype(float)
    size_a = sel.sum(1)
    size_b = n - size_a
    sum_a = sel @ pts
    sum_b = pts.sum(0) - sum_a
    cost = (pts ** 2).sum() - (sum_a ** 2).sum(1) / size_a - (sum_b ** 2).sum(1) / size_b
    k = int(cost.argmin())
    return float(cost[k]), (sum_a[k] / size_a[k], sum_b[k] / size_b[k])


def eq1_shift(ccdf, p):
    h = list(ccdf) + [0.0]
    return [(1 - p) * h[i] + p * h[i + 1] for i in range(len(ccdf))]
