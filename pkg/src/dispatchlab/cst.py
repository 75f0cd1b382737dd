"""Constrained spatio-temporal value tables and per-type serve probabilities.

A table answers: how much value can one vehicle standing at region ``l`` at time ``t``
expect to collect from on-demand requests before it must be at the anchor request's
origin at the anchor's start time?
"""
from __future__ import annotations

import threading
import weakref
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .demand import DemandView, as_view
from .world import Request, RequestType, World


class InfeasibleAnchor(ValueError):
    pass


class OutOfDomain(KeyError):
    pass


class _Scratch:
    """Reusable kernel buffers for one type index (single-threaded use)."""

    def __init__(self, n_types: int, bucket_cap: int):
        self.scores = np.empty(max(bucket_cap, 1))
        self.ranked = np.empty(max(bucket_cap, 1), dtype=np.int64)
        self.serve = np.zeros(n_types)
        self.touched = np.empty(n_types, dtype=np.int64)


_local = threading.local()


def _scratch(view: DemandView) -> _Scratch:
    """Buffers for this type index, private to the calling thread."""
    idx = view.index
    per_thread = getattr(_local, "buffers", None)
    if per_thread is None:
        per_thread = _local.buffers = weakref.WeakKeyDictionary()
    buf = per_thread.get(idx)
    if buf is None:
        cap = int(np.diff(idx.ptr).max()) if len(idx) else 0
        buf = per_thread[idx] = _Scratch(len(idx), cap)
    return buf


class CstTable:
    """Values over the anchor's feasibility cone, from time ``t0`` up to the anchor time."""

    def __init__(self, anchor: Request, world: World, view: DemandView, t0: int,
                 values: np.ndarray, idle: np.ndarray, h1: np.ndarray):
        self.anchor = anchor
        self.world = world
        self.view = view
        self.t0 = t0
        self.values = values
        self.idle = idle
        self.h1 = h1

    @property
    def travel(self):
        return self.world.travel

    def __repr__(self):
        a = self.anchor
        return f"CstTable(anchor=({a.origin}, {a.start}), t0={self.t0})"

    def in_domain(self, t: int, l: int) -> bool:
        if not (self.t0 <= t <= self.anchor.start) or not (0 <= l < self.world.n_regions):
            return False
        return self.travel.delta[l, self.anchor.origin] <= self.anchor.start - t

    def lookup(self, t: int, l: int) -> float:
        if not self.in_domain(t, l):
            raise OutOfDomain((t, l))
        return float(self.values[t - self.t0, l])

    def idle_target(self, t: int, l: int) -> Optional[int]:
        """Region the vehicle idles toward (itself for Wait), or None at the anchor."""
        if not self.in_domain(t, l):
            raise OutOfDomain((t, l))
        target = int(self.idle[t - self.t0, l])
        return None if target < 0 else target

    def idle_value(self, t: int, l: int) -> float:
        target = self.idle_target(t, l)
        if target is None:
            return 0.0
        if target == l:
            return self.lookup(t + 1, l)
        return self.lookup(t + self.travel(l, target), target)

    def preferred_action(self, t: int, l: int) -> tuple:
        """Ranked request types (with their scores) worth serving at (t, l), and the idle target."""
        target = self.idle_target(t, l)
        if target is None:
            return [], None
        best = self.idle_value(t, l)
        idx = self.view.index
        n = self.world.n_regions
        b = t * n + l
        ranked = []
        if b + 1 < len(idx.ptr):
            delta = self.travel.delta
            rem = self.anchor.start - t
            for k in range(idx.ptr[b], idx.ptr[b + 1]):
                d = int(idx.dest[k])
                if self.h1[k] <= 0 or delta[l, d] + delta[d, self.anchor.origin] > rem:
                    continue
                score = float(idx.value[k]) + self.lookup(t + int(delta[l, d]), d)
                if score > best:
                    ranked.append((score, d, idx.types[k]))
        ranked.sort(key=lambda e: (-e[0], e[1]))
        return [(w, s) for s, _, w in ranked], target


def compute_cst(world: World, demand, anchor: Request, t0: int = 1) -> CstTable:
    """Backward recursion over every pair from which the anchor is still reachable."""
    view = as_view(demand)
    travel = world.travel
    n = world.n_regions
    if not (0 <= anchor.origin < n):
        raise InfeasibleAnchor(f"anchor origin {anchor.origin} is not a region")
    if not (1 <= anchor.start <= world.horizon):
        raise InfeasibleAnchor(f"anchor time {anchor.start} outside [1, {world.horizon}]")
    if t0 > anchor.start:
        raise InfeasibleAnchor(f"table start {t0} is after the anchor time {anchor.start}")
    if travel.has_zero_hops():
        raise InfeasibleAnchor("value tables need positive travel time between distinct regions")
    if view.index.n_regions != n:
        raise ValueError("demand view and world disagree on the number of regions")
    t0 = max(1, int(t0))
    rows = anchor.start - t0 + 1
    values = np.empty((rows, n))
    idle = np.empty((rows, n), dtype=np.int64)
    h1 = view.h1
    idx = view.index
    buf = _scratch(view)
    _kernels.backward(travel.delta, anchor.origin, anchor.start, t0, idx.ptr, idx.dest,
                      idx.value, h1, values, idle, buf.scores, buf.ranked)
    values.setflags(write=False)
    idle.setflags(write=False)
    return CstTable(anchor, world, view, t0, values, idle, h1)


def cst_lookup(table: CstTable, t: int, l: int) -> float:
    return table.lookup(t, l)


@dataclass
class ServeProbabilities:
    """Probability that the vehicle serves a type-w request given at least one appears."""

    anchor: Request
    start: tuple
    rows: np.ndarray
    probs: np.ndarray
    types: list = field(repr=False, default_factory=list)

    @property
    def p(self) -> dict:
        return {self.types[k]: float(q) for k, q in zip(self.rows, self.probs)}

    def get(self, w: RequestType) -> float:
        return self.p.get(w, 0.0)


def serve_probabilities(table: CstTable, start: tuple, demand=None) -> ServeProbabilities:
    """Forward pass of reach probability through the table's induced policy from ``start``."""
    if demand is not None and as_view(demand) is not table.view:
        raise ValueError("serve probabilities must use the demand view the table was built on")
    t, l = start
    if not table.in_domain(t, l):
        raise OutOfDomain(start)
    view = table.view
    idx = view.index
    rows = table.values.shape[0]
    n = table.world.n_regions
    mass = np.zeros((rows, n))
    buf = _scratch(view)
    m = _kernels.forward(table.travel.delta, table.anchor.origin, table.anchor.start, table.t0,
                         idx.ptr, idx.dest, idx.value, table.h1, table.values, table.idle,
                         t - table.t0, l, mass, buf.serve, buf.touched, buf.scores, buf.ranked)
    hit = buf.touched[:m].copy()
    probs = np.minimum(buf.serve[hit], 1.0)
    buf.serve[hit] = 0.0
    return ServeProbabilities(table.anchor, (t, l), hit, probs, idx.types)


class CstCache:
    """Tables on the base demand view, keyed by anchor (origin, time); built from t = 1."""

    def __init__(self, world: World, demand, max_entries: int = 4096):
        self.world = world
        self.view = as_view(demand)
        self.max_entries = max_entries
        self._tables = OrderedDict()
        self.hits = 0
        self.misses = 0

    def get(self, anchor: Request) -> CstTable:
        key = (anchor.origin, anchor.start)
        table = self._tables.get(key)
        if table is not None:
            self.hits += 1
            self._tables.move_to_end(key)
            return table
        self.misses += 1
        table = compute_cst(self.world, self.view, anchor)
        self._tables[key] = table
        if len(self._tables) > self.max_entries:
            self._tables.popitem(last=False)
        return table

    def lookup(self, anchor: Request, t: int, l: int) -> float:
        return self.get(anchor).lookup(t, l)

    def __len__(self):
        return len(self._tables)
