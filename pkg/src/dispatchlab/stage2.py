"""Real-time dispatch: single-vehicle DPDA and its sequential multi-vehicle extension DPDA-SU."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import _kernels
from .cst import CstCache, CstTable, ServeProbabilities, compute_cst, serve_probabilities
from .demand import DemandModel, DemandView, as_view
from .world import (Action, ActionKind, DispatchState, Request, World, available_requests)


class AnchorUnreachable(ValueError):
    pass


class InvalidProbability(ValueError):
    pass


class MissingLedgerEntry(KeyError):
    pass


class VirtualDemand:
    """Mutable copy of a demand view's CCDF rows, updated as vehicles claim demand."""

    def __init__(self, base: DemandView, H: Optional[np.ndarray] = None):
        self.base = base
        H = base.H.copy() if H is None else H
        H.setflags(write=True)
        self.view = DemandView(base.index, H, base.travel)

    @classmethod
    def from_model(cls, demand) -> "VirtualDemand":
        return cls(as_view(demand))

    def copy(self) -> "VirtualDemand":
        return VirtualDemand(self.base, self.view.H.copy())

    @property
    def H(self) -> np.ndarray:
        return self.view.H

    def pr_at_least(self, w, i: int = 1) -> float:
        return self.view.pr_at_least(w, i)

    def ccdf(self, w) -> tuple:
        return self.view.ccdf(w)

    def apply(self, probs: ServeProbabilities) -> None:
        """Shift the tail distribution in place for every type with a positive serve probability."""
        p = np.asarray(probs.probs, dtype=float)
        if p.size and (not np.isfinite(p).all() or p.min() < 0.0 or p.max() > 1.0):
            raise InvalidProbability("serve probabilities must lie in [0, 1]")
        if p.size:
            _kernels.shift_update(self.view.H, np.asarray(probs.rows, dtype=np.int64), p)
        # tables are cached per view identity; a changed distribution is a new view
        self.view = DemandView(self.view.index, self.view.H, self.view.travel)


def shift_ccdf(ccdf, p: float) -> list:
    """h'(>= i) = (1 - p) h(>= i) + p h(>= i + 1), trailing zeros dropped."""
    if not (0.0 <= p <= 1.0):
        raise InvalidProbability(f"probability {p} outside [0, 1]")
    h = list(ccdf) + [0.0]
    out = [(1.0 - p) * h[i] + p * h[i + 1] for i in range(len(h) - 1)]
    while out and out[-1] == 0.0:
        out.pop()
    return out


def update_prob_dist(h: VirtualDemand, probs: ServeProbabilities) -> VirtualDemand:
    """Return a new virtual distribution with the serve probabilities consumed."""
    out = h.copy()
    out.apply(probs)
    return out


class OrderKind(enum.Enum):
    INITIAL = "initial"
    REVERSE = "reverse"
    RANDOM = "random"


@dataclass
class OrderPolicy:
    kind: OrderKind = OrderKind.INITIAL
    seed: Optional[int] = None
    rng: Optional[np.random.Generator] = field(default=None, repr=False)

    def __post_init__(self):
        self.kind = OrderKind(self.kind)
        if self.kind is OrderKind.RANDOM and self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    @classmethod
    def initial(cls) -> "OrderPolicy":
        return cls(OrderKind.INITIAL)

    @classmethod
    def reverse(cls) -> "OrderPolicy":
        return cls(OrderKind.REVERSE)

    @classmethod
    def random(cls, seed) -> "OrderPolicy":
        return cls(OrderKind.RANDOM, seed)


def order_vehicles(fleet: list, policy: OrderPolicy, earnings: Optional[dict] = None) -> list:
    """Fleet order for one tick. Items need an ``id`` attribute (or be ids themselves)."""
    ids = [getattr(v, "id", v) for v in fleet]
    if policy.kind is OrderKind.INITIAL:
        return list(fleet)
    if policy.kind is OrderKind.REVERSE:
        earnings = earnings or {}
        missing = [i for i in ids if i not in earnings]
        if missing:
            raise MissingLedgerEntry(f"no earnings recorded for vehicles {missing}")
        order = sorted(range(len(fleet)), key=lambda k: (earnings[ids[k]], ids[k]))
        return [fleet[k] for k in order]
    return [fleet[k] for k in policy.rng.permutation(len(fleet))]


def _table_value(table: CstTable, t: int, l: int) -> float:
    return float(table.values[t - table.t0, l])


def dpda(state: DispatchState, anchor: Request, demand=None, world: Optional[World] = None,
         table: Optional[CstTable] = None) -> Action:
    """Best action by immediate value plus the value table at the landing pair.

    Ties go to serving (lowest request id), then waiting, then relocating (lowest region).
    """
    t, l = state.time, state.location
    if t == anchor.start and l == anchor.origin:
        return Action.serve_scheduled(anchor)
    if table is None:
        if world is None:
            raise ValueError("dpda needs either a value table or a world")
        table = compute_cst(world, demand, anchor, t0=t)
    travel = table.travel
    delta = travel.delta
    rem = anchor.start - t
    ao = anchor.origin
    if rem < 0 or delta[l, ao] > rem or t < table.t0:
        raise AnchorUnreachable(f"({t}, {l}) cannot reach anchor at ({anchor.start}, {ao})")
    best = None
    best_score = -np.inf
    for r in sorted(state.available_requests, key=lambda r: r.id):
        d = r.destination
        if r.origin != l or r.start != t or d == l or delta[l, d] + delta[d, ao] > rem:
            continue
        score = r.value + _table_value(table, t + int(delta[l, d]), d)
        if score > best_score:
            best, best_score = Action.serve(r), score
    if delta[l, ao] <= rem - 1:
        score = _table_value(table, t + 1, l)
        if score > best_score:
            best, best_score = Action.wait(l), score
    n = delta.shape[0]
    for d in range(n):
        if d == l or delta[l, d] + delta[d, ao] > rem:
            continue
        score = _table_value(table, t + int(delta[l, d]), d)
        if score > best_score:
            best, best_score = Action.relocate(d), score
    if best is None:
        raise AnchorUnreachable(f"no admissible action at ({t}, {l})")
    return best


@dataclass
class FleetMember:
    """A vehicle waiting for a decision at this tick, with its next commitment."""

    vehicle: object
    state: DispatchState
    anchor: Request

    @property
    def id(self):
        return self.vehicle.id


class RequestPool:
    """This tick's undispatched on-demand requests, indexed by pickup region."""

    def __init__(self, requests: Iterable[Request] = ()):
        self._by_region = {}
        for r in requests:
            self._by_region.setdefault(r.origin, {})[r.id] = r

    def add(self, r: Request) -> None:
        self._by_region.setdefault(r.origin, {})[r.id] = r

    def at(self, region: int) -> list:
        return list(self._by_region.get(region, {}).values())

    def remove(self, r: Request) -> None:
        del self._by_region[r.origin][r.id]

    def __contains__(self, r: Request) -> bool:
        return r.id in self._by_region.get(r.origin, {})

    def __len__(self):
        return sum(len(v) for v in self._by_region.values())

    def __iter__(self):
        for bucket in self._by_region.values():
            yield from list(bucket.values())


def _as_pool(pool) -> RequestPool:
    return pool if isinstance(pool, RequestPool) else RequestPool(pool)


def _members(fleet) -> list:
    return [m if isinstance(m, FleetMember) else FleetMember(*m) for m in fleet]


def dpda_su(fleet, demand, policy: OrderPolicy, pool, world: World, earnings: Optional[dict] = None,
            cache: Optional[CstCache] = None, observer=None) -> dict:
    """Sequential dispatch: each vehicle plans against demand left over by the ones before it.

    ``fleet`` holds (vehicle, state, anchor) triples; ``pool`` is mutated as requests are served.
    ``observer(member, table, view)`` is called before each decision (used by tests).
    """
    base = as_view(demand)
    pool = _as_pool(pool)
    members = order_vehicles(_members(fleet), policy, earnings)
    if cache is None or cache.view is not base:
        cache = CstCache(world, base)
    h = None
    actions = {}
    for pos, m in enumerate(members):
        t, l = m.state.time, m.state.location
        anchor = m.anchor
        if t == anchor.start and l == anchor.origin:
            actions[m.id] = Action.serve_scheduled(anchor)
            continue
        table = cache.get(anchor) if h is None else compute_cst(world, h.view, anchor, t0=t)
        if observer is not None:
            observer(m, table, base if h is None else h.view)
        state = DispatchState(t, l, available_requests(t, l, anchor, pool.at(l), world.travel))
        action = dpda(state, anchor, table=table)
        actions[m.id] = action
        if action.kind is ActionKind.SERVE:
            pool.remove(action.request)
        if pos == len(members) - 1:
            break
        landing = action.landing(t, l, world.travel)
        if landing == (anchor.start, anchor.origin):
            continue
        probs = serve_probabilities(table, landing)
        if len(probs.rows):
            if h is None:
                h = VirtualDemand(base)
            h.apply(probs)
    return actions


ACTION_TRACE_COLUMNS = ["tick", "vehicle_id", "action_kind", "target_region", "request_id", "value"]


def action_rows(tick: int, actions: dict) -> list:
    rows = []
    for vid in sorted(actions):
        a = actions[vid]
        rid = "" if a.request is None else a.request.id
        rows.append([tick, vid, a.kind.value, a.target, rid, repr(float(a.value))])
    return rows


def write_action_trace(path, rows: Iterable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ACTION_TRACE_COLUMNS)
        w.writerows(rows)
