"""Compiled inner loops for the constrained value table and its serve-probability pass.

Layout: ``cst[row, l]`` holds the value at time ``t0 + row``; NaN marks pairs from which
the anchor cannot be reached. ``idle[row, l]`` is the idle target: ``l`` itself for Wait,
another region for a relocation, -1 at the boundary or outside the domain.
Request types are sorted by (start, origin, destination) and bucketed by ``ptr``.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _idle_choice(delta, cst, row, l, rem, ao, n):
    # Wait wins ties, then the lowest region id
    best = -1.0
    target = -1
    if delta[l, ao] < rem:
        best = cst[row + 1, l]
        target = l
    for d in range(n):
        if d == l:
            continue
        dl = delta[l, d]
        if dl + delta[d, ao] <= rem:
            c = cst[row + dl, d]
            if c > best:
                best = c
                target = d
    return best, target


@njit(cache=True)
def _rank(delta, cst, row, l, rem, ao, k0, k1, tdest, tval, h1, best, sc, kk):
    # candidate types whose score beats the idle continuation, sorted by decreasing score;
    # types are visited by increasing destination so equal scores keep the lower destination first
    m = 0
    for k in range(k0, k1):
        if h1[k] <= 0.0:
            continue
        d = tdest[k]
        dl = delta[l, d]
        if dl + delta[d, ao] > rem:
            continue
        s = tval[k] + cst[row + dl, d]
        if s > best:
            j = m
            while j > 0 and sc[j - 1] < s:
                sc[j] = sc[j - 1]
                kk[j] = kk[j - 1]
                j -= 1
            sc[j] = s
            kk[j] = k
            m += 1
    return m


@njit(cache=True)
def backward(delta, ao, at, t0, ptr, tdest, tval, h1, cst, idle, sc, kk):
    n = delta.shape[0]
    nbuckets = ptr.shape[0] - 1
    for t in range(at, t0 - 1, -1):
        rem = at - t
        row = t - t0
        for l in range(n):
            if delta[l, ao] > rem:
                cst[row, l] = np.nan
                idle[row, l] = -1
                continue
            if rem == 0:
                cst[row, l] = 0.0
                idle[row, l] = -1
                continue
            best, target = _idle_choice(delta, cst, row, l, rem, ao, n)
            idle[row, l] = target
            b = t * n + l
            if b >= nbuckets:
                cst[row, l] = best
                continue
            k0 = ptr[b]
            k1 = ptr[b + 1]
            if k1 == k0:
                cst[row, l] = best
                continue
            m = _rank(delta, cst, row, l, rem, ao, k0, k1, tdest, tval, h1, best, sc, kk)
            p = 1.0
            total = 0.0
            for i in range(m):
                q = h1[kk[i]]
                total += p * q * sc[i]
                p *= 1.0 - q
            cst[row, l] = total + p * best


@njit(cache=True)
def forward(delta, ao, at, t0, ptr, tdest, tval, h1, cst, idle, start_row, start_l,
            mass, pw, touched, sc, kk):
    """Propagate reach probability from the start pair; returns the number of touched types.

    ``pw`` must be zero on entry for every type; touched entries are listed in ``touched``.
    """
    n = delta.shape[0]
    nbuckets = ptr.shape[0] - 1
    rows = at - t0
    ntouched = 0
    mass[start_row, start_l] = 1.0
    for row in range(start_row, rows):
        t = t0 + row
        rem = at - t
        for l in range(n):
            x = mass[row, l]
            if x == 0.0:
                continue
            target = idle[row, l]
            best = cst[row + 1, l] if target == l else cst[row + delta[l, target], target]
            p = 1.0
            b = t * n + l
            if b < nbuckets:
                k0 = ptr[b]
                k1 = ptr[b + 1]
                m = _rank(delta, cst, row, l, rem, ao, k0, k1, tdest, tval, h1, best, sc, kk)
                for i in range(m):
                    if p == 0.0:
                        break
                    k = kk[i]
                    if pw[k] == 0.0:
                        touched[ntouched] = k
                        ntouched += 1
                    pw[k] += x * p
                    d = tdest[k]
                    mass[row + delta[l, d], d] += x * p * h1[k]
                    p *= 1.0 - h1[k]
            if p > 0.0:
                if target == l:
                    mass[row + 1, l] += x * p
                else:
                    mass[row + delta[l, target], target] += x * p
    return ntouched


@njit(cache=True)
def shift_update(H, rows, probs):
    """In place: H[k, i] <- (1 - p) H[k, i] + p H[k, i + 1] for each listed row."""
    width = H.shape[1]
    for j in range(rows.shape[0]):
        k = rows[j]
        p = probs[j]
        for i in range(width - 1):
            H[k, i] = (1.0 - p) * H[k, i] + p * H[k, i + 1]
