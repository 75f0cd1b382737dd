"""Comparison algorithms: value-only and value-plus-table matching, the offline optimum, and LPA."""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linear_sum_assignment, milp
from scipy.sparse import coo_matrix

from .cst import CstCache, CstTable
from .world import (Action, Request, ScheduleBook, TravelTimeMatrix, Vehicle, chainable,
                    find_insert_slot, wait_admissible)
from .stage1 import Decision


class MissingCstTable(KeyError):
    pass


@dataclass
class BipartiteInstance:
    """Vehicles on the left, requests on the right; ``edges`` maps (left, right) to a weight."""

    left: list
    right: list
    edges: dict = field(default_factory=dict)

    def add(self, i, j, weight: float) -> None:
        if not weight >= 0 or not math.isfinite(weight):
            raise ValueError(f"edge weight must be finite and non-negative, got {weight}")
        self.edges[(i, j)] = float(weight)


@dataclass
class Matching:
    pairs: list
    total: float

    def as_dict(self) -> dict:
        return dict(self.pairs)


def max_weight_matching(instance: BipartiteInstance) -> Matching:
    """Maximum-total-weight matching; pairs keep the left and right labels of the instance."""
    if not instance.edges:
        return Matching([], 0.0)
    rows = sorted({i for i, _ in instance.edges}, key=instance.left.index)
    cols = sorted({j for _, j in instance.edges}, key=instance.right.index)
    ri = {x: k for k, x in enumerate(rows)}
    ci = {x: k for k, x in enumerate(cols)}
    weight = np.zeros((len(rows), len(cols)))
    for (i, j), w in instance.edges.items():
        weight[ri[i], ci[j]] = w
    r_idx, c_idx = linear_sum_assignment(weight, maximize=True)
    pairs = [(rows[a], cols[b]) for a, b in zip(r_idx, c_idx) if (rows[a], cols[b]) in instance.edges]
    return Matching(pairs, float(sum(instance.edges[p] for p in pairs)))


def greedy_km(instance: BipartiteInstance) -> Matching:
    return max_weight_matching(instance)


def enhanced_km(instance: BipartiteInstance, tables: dict, travel: TravelTimeMatrix) -> Matching:
    """Re-weights each edge (vehicle at (t, l), request r) as v_r plus the vehicle's table at r's drop-off.

    ``instance.left`` holds vehicle ids; ``tables[vid]`` is the table anchored at that vehicle's
    next commitment.
    """
    out = BipartiteInstance(instance.left, instance.right)
    for (vid, r) in instance.edges:
        table = tables.get(vid)
        if table is None:
            raise MissingCstTable(vid)
        t, d = r.dropoff(travel)
        out.add(vid, r, r.value + table.lookup(t, d))
    return max_weight_matching(out)


def dispatch_instance(members, pool, travel: TravelTimeMatrix) -> BipartiteInstance:
    """Value-weighted edges between waiting vehicles and the requests each may serve."""
    from .world import available_requests
    inst = BipartiteInstance([m.id for m in members], [])
    seen = set()
    for m in members:
        t, l = m.state.time, m.state.location
        for r in available_requests(t, l, m.anchor, pool.at(l), travel):
            if r.id not in seen:
                seen.add(r.id)
                inst.right.append(r)
            inst.add(m.id, r, r.value)
    return inst


def idle_action(t: int, l: int, anchor: Request, travel: TravelTimeMatrix) -> Action:
    """What an unmatched vehicle does: wait in place if it can, else head to the anchor."""
    if t == anchor.start and l == anchor.origin:
        return Action.serve_scheduled(anchor)
    if wait_admissible(t, l, anchor, travel):
        return Action.wait(l)
    return Action.relocate(anchor.origin)


def matching_actions(members, matching: Matching, pool, travel: TravelTimeMatrix) -> dict:
    matched = matching.as_dict()
    actions = {}
    for m in members:
        r = matched.get(m.id)
        if r is not None:
            pool.remove(r)
            actions[m.id] = Action.serve(r)
        else:
            actions[m.id] = idle_action(m.state.time, m.state.location, m.anchor, travel)
    return actions


class _Graph:
    """Residual graph with unit capacities; edges are [to, capacity, cost, reverse index, forward]."""

    def __init__(self, n: int):
        self.adj = [[] for _ in range(n)]

    def add(self, u: int, v: int, cost: float) -> None:
        self.adj[u].append([v, 1, cost, len(self.adj[v]), True])
        self.adj[v].append([u, 0, -cost, len(self.adj[u]) - 1, False])

    def flow_successors(self, u: int) -> list:
        return [e[0] for e in self.adj[u] if e[4] and e[1] == 0]


def _min_cost_paths(graph: _Graph, order: list, source: int, sink: int) -> float:
    """Successive shortest paths with unit augmentations while the path cost is negative.

    Returns the total (negative) cost. ``order`` lists nodes in (near) topological order
    of the initial acyclic graph and seeds the potentials.
    """
    n = len(graph.adj)
    pot = [math.inf] * n
    pot[source] = 0.0
    # one sweep suffices in topological order; repeat in case zero-length trips break the order
    changed = True
    while changed:
        changed = False
        for u in order:
            if pot[u] == math.inf:
                continue
            for v, cap, cost, _, _ in graph.adj[u]:
                if cap > 0 and pot[u] + cost < pot[v]:
                    pot[v] = pot[u] + cost
                    changed = True
    pot = [p if p < math.inf else 0.0 for p in pot]
    total = 0.0
    while True:
        dist = [math.inf] * n
        prev = [None] * n
        dist[source] = 0.0
        heap = [(0.0, source)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for k, (v, cap, cost, _, _) in enumerate(graph.adj[u]):
                if cap <= 0:
                    continue
                nd = d + cost + pot[u] - pot[v]
                if nd < dist[v] - 1e-12:
                    dist[v] = nd
                    prev[v] = (u, k)
                    heapq.heappush(heap, (nd, v))
        if dist[sink] == math.inf:
            break
        path_cost = dist[sink] - pot[source] + pot[sink]
        if path_cost >= -1e-12:
            break
        for v in range(n):
            if dist[v] < math.inf:
                pot[v] += dist[v]
        v = sink
        while v != source:
            u, k = prev[v]
            e = graph.adj[u][k]
            e[1] -= 1
            graph.adj[v][e[3]][1] += 1
            v = u
        total += path_cost
    return total


@dataclass
class OfflineSolution:
    value: float
    chains: dict
    exact_by_flow: bool = True

    def to_json(self) -> str:
        return json.dumps({str(v): [r.id for r in rs] for v, rs in sorted(self.chains.items())})

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def _start_ok(v: Vehicle, r: Request, travel) -> bool:
    return chainable(v.virtual_start(), r, travel)


def _end_ok(r: Request, v: Vehicle, travel) -> bool:
    return chainable(r, v.virtual_end(), travel)


def offline_opt(vehicles: list, requests: list, travel: TravelTimeMatrix) -> OfflineSolution:
    """Best total value of scheduled requests any assignment could serve, with the chains.

    Solved as a max-value flow. The flow network lets a chain start at one vehicle and end
    at another's end point; when chains cannot be matched back to distinct vehicles, an exact
    per-vehicle integer program settles the instance.
    """
    vehicles = list(vehicles)
    requests = sorted(requests, key=lambda r: (r.start, r.id))
    nv, nr = len(vehicles), len(requests)
    if nv == 0 or nr == 0:
        return OfflineSolution(0.0, {v.id: [] for v in vehicles})
    S, T = 0, 1
    vin = [2 + i for i in range(nv)]
    vout = [2 + nv + i for i in range(nv)]
    rin = [2 + 2 * nv + 2 * k for k in range(nr)]
    rout = [3 + 2 * nv + 2 * k for k in range(nr)]
    g = _Graph(2 + 2 * nv + 2 * nr)
    for i in range(nv):
        g.add(S, vin[i], 0.0)
        g.add(vout[i], T, 0.0)
    for k, r in enumerate(requests):
        g.add(rin[k], rout[k], -r.value)
        for i, v in enumerate(vehicles):
            if _start_ok(v, r, travel):
                g.add(vin[i], rin[k], 0.0)
            if _end_ok(r, v, travel):
                g.add(rout[k], vout[i], 0.0)
    for a, ra in enumerate(requests):
        for b, rb in enumerate(requests):
            if a != b and chainable(ra, rb, travel):
                g.add(rout[a], rin[b], 0.0)
    # requests sorted by start time give a topological order of the chain arcs
    order = [S] + vin + [x for k in range(nr) for x in (rin[k], rout[k])] + vout + [T]
    bound = -_min_cost_paths(g, order, S, T)

    request_of = {rin[k]: k for k in range(nr)}
    vehicle_of = {vout[i]: i for i in range(nv)}
    chains = []
    for i in range(nv):
        for node in g.flow_successors(vin[i]):
            chain = []
            while node in request_of:
                k = request_of[node]
                chain.append(k)
                (node,) = g.flow_successors(rout[k])
            chains.append((i, chain, vehicle_of[node]))
    assignment = _match_chains(chains, vehicles, requests, travel)
    if assignment is not None:
        out = {v.id: [] for v in vehicles}
        for vi, chain in assignment.items():
            out[vehicles[vi].id] = [requests[k] for k in chain]
        value = sum(r.value for rs in out.values() for r in rs)
        if abs(value - bound) <= 1e-9 * max(1.0, abs(bound)):
            return OfflineSolution(value, out, True)
    return _offline_milp(vehicles, requests, travel)


def _match_chains(chains, vehicles, requests, travel) -> Optional[dict]:
    """Assign each flow chain to a distinct vehicle that can start and finish it."""
    if not chains:
        return {}
    cost = np.ones((len(chains), len(vehicles)))
    for c, (_, ks, _) in enumerate(chains):
        first, last = requests[ks[0]], requests[ks[-1]]
        for i, v in enumerate(vehicles):
            if _start_ok(v, first, travel) and _end_ok(last, v, travel):
                cost[c, i] = 0.0
    rows, cols = linear_sum_assignment(cost)
    if len(rows) < len(chains) or cost[rows, cols].sum() > 0:
        return None
    return {int(i): chains[c][1] for c, i in zip(rows, cols)}


def _offline_milp(vehicles, requests, travel) -> OfflineSolution:
    """Per-vehicle path formulation over the chainability DAG."""
    nv, nr = len(vehicles), len(requests)
    src, snk = nr, nr + 1
    arcs = []
    for i, v in enumerate(vehicles):
        usable = [k for k, r in enumerate(requests)
                  if _start_ok(v, r, travel) and _end_ok(r, v, travel)]
        arcs.append((i, src, snk))
        for k in usable:
            arcs.append((i, src, k))
            arcs.append((i, k, snk))
        for a in usable:
            for b in usable:
                if a != b and chainable(requests[a], requests[b], travel):
                    arcs.append((i, a, b))
    m = len(arcs)
    gain = np.array([requests[b].value if b < nr else 0.0 for (_, _, b) in arcs])
    # rows: one source row per vehicle, one balance row per (vehicle, request), one row per request
    balance_row = lambda i, k: nv + i * nr + k
    once_row = lambda k: nv + nv * nr + k
    ri, ci, val = [], [], []
    for e, (i, a, b) in enumerate(arcs):
        if a == src:
            ri.append(i); ci.append(e); val.append(1.0)
        if b < nr:
            ri.append(balance_row(i, b)); ci.append(e); val.append(1.0)
            ri.append(once_row(b)); ci.append(e); val.append(1.0)
        if a < nr:
            ri.append(balance_row(i, a)); ci.append(e); val.append(-1.0)
    nrows = nv + nv * nr + nr
    A = coo_matrix((val, (ri, ci)), shape=(nrows, m)).tocsr()
    lo = np.concatenate([np.ones(nv), np.zeros(nv * nr), np.zeros(nr)])
    hi = np.concatenate([np.ones(nv), np.zeros(nv * nr), np.ones(nr)])
    res = milp(-gain, constraints=LinearConstraint(A, lo, hi), integrality=np.ones(m), bounds=Bounds(0, 1))
    if res.x is None:
        raise RuntimeError(f"offline integer program failed: {res.message}")
    x = np.round(res.x).astype(int)
    chains = {v.id: [] for v in vehicles}
    for i, v in enumerate(vehicles):
        succ = {a: b for e, (vi, a, b) in enumerate(arcs) if vi == i and x[e]}
        node = succ.get(src, snk)
        while node != snk:
            chains[v.id].append(requests[node])
            node = succ[node]
    value = sum(r.value for rs in chains.values() for r in rs)
    return OfflineSolution(value, chains, False)


def replay_books(solution: OfflineSolution, vehicles: list) -> list:
    books = []
    for v in vehicles:
        book = ScheduleBook(v)
        book.commitments = list(solution.chains.get(v.id, [])) + [v.virtual_end()]
        books.append(book)
    return books


def r_gamma(reward: float, duration: int, gamma: float) -> float:
    """Reward spread evenly over the action's duration, discounted per step."""
    if duration <= 0:
        return float(reward)
    if gamma == 1.0:
        return float(reward)
    return float(reward / duration * (1.0 - gamma ** duration) / (1.0 - gamma))


class LpaValueTable:
    """Tabular state values V'(t, l) with visit counts, learned from historical transitions."""

    def __init__(self, horizon: int, n_regions: int, gamma: float):
        if not (0.0 < gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        self.horizon = horizon
        self.n_regions = n_regions
        self.gamma = gamma
        self.values = np.zeros((horizon + 2, n_regions))
        self.counts = np.zeros((horizon + 2, n_regions), dtype=np.int64)

    def value(self, t: int, l: int) -> float:
        # states never visited read as zero
        if 0 <= t < self.values.shape[0]:
            return float(self.values[t, l])
        return 0.0

    def request_reward(self, r: Request, travel: TravelTimeMatrix) -> float:
        return r_gamma(r.value, travel(r.origin, r.destination), self.gamma)

    def advantage(self, r: Request, travel: TravelTimeMatrix) -> float:
        dur = travel(r.origin, r.destination)
        return (self.request_reward(r, travel) + self.gamma ** dur * self.value(r.start + dur, r.destination)
                - self.value(r.start, r.origin))


def lpa_learn(transitions: list, gamma: float, horizon: int, n_regions: int) -> LpaValueTable:
    """Incremental-mean value backups, processing later time slices first."""
    table = LpaValueTable(horizon, n_regions, gamma)
    order = sorted(range(len(transitions)), key=lambda i: -transitions[i][0][0])
    for i in order:
        (t, l), _action, reward, (t2, l2), duration = transitions[i]
        table.counts[t, l] += 1
        target = gamma ** (t2 - t) * table.value(t2, l2) + r_gamma(reward, duration, gamma)
        table.values[t, l] += (target - table.values[t, l]) / table.counts[t, l]
    return table


def lpa_stage1(r: Request, books: list, table: LpaValueTable, travel: TravelTimeMatrix) -> Decision:
    """Accept when the request's reward plus the destination value covers the origin value."""
    dur = travel(r.origin, r.destination)
    lhs = table.request_reward(r, travel) + table.value(r.start + dur, r.destination)
    rhs = table.value(r.start, r.origin)
    if lhs < rhs:
        return Decision.reject(r, lhs - rhs)
    for book in books:
        slot = find_insert_slot(book, r, travel)
        if slot is not None:
            book.insert(r, slot)
            return Decision(r, True, book.vehicle.id, lhs - rhs)
    return Decision.reject(r, lhs - rhs)


def lpa_dispatch(instance: BipartiteInstance, table: LpaValueTable, travel: TravelTimeMatrix) -> Matching:
    """Matching on learned advantages, clamped at zero; zero-weight pairs are left unmatched."""
    out = BipartiteInstance(instance.left, instance.right)
    for (vid, r) in instance.edges:
        out.add(vid, r, max(0.0, table.advantage(r, travel)))
    m = max_weight_matching(out)
    m.pairs = [p for p in m.pairs if out.edges[p] > 0.0]
    return m
