"""Two-stage simulator, exact small-instance oracles, worst-case instances and experiment drivers."""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .baselines import (LpaValueTable, dispatch_instance, enhanced_km, greedy_km, lpa_dispatch,
                        lpa_learn, lpa_stage1, matching_actions, offline_opt)
from .cst import CstCache, compute_cst, serve_probabilities
from .demand import DemandModel, as_view, sample_on_demand, sample_scheduled
from .stage1 import (Decision, RankWeights, Variant, best_score, first_fit, random_best_score)
from .stage2 import (FleetMember, OrderKind, OrderPolicy, RequestPool, VirtualDemand, dpda,
                     dpda_su, order_vehicles)
from .world import (Action, ActionKind, DispatchState, Request, RequestKind, RequestType,
                    ScheduleBook, TravelTimeMatrix, Vehicle, World, available_requests,
                    build_travel_matrix, chainable, reachable_destinations, wait_admissible)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class CommitmentViolation(RuntimeError):
    pass


class InstanceTooLarge(ValueError):
    pass


class InvalidParams(ValueError):
    pass


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose under a master seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


# ---------------------------------------------------------------- algorithm registries

STAGE1_ALGORITHMS = ("first-fit", "best-score", "best-score-R", "best-score-A",
                     "random-best-score", "random-best-score-R", "random-best-score-A", "lpa")
STAGE2_ALGORITHMS = ("dpda-su", "dpda", "greedy-km", "enhanced-km", "lpa")
ORDER_POLICIES = ("initial", "reverse", "random")


@dataclass
class EpisodeConfig:
    model: DemandModel
    fleet: object = 50
    kappa: float = 1.0 / 20.0
    stage1: str = "best-score"
    stage2: str = "dpda-su"
    order: str = "initial"
    seed: int = 0
    alpha: float = 1.0
    beta: Optional[float] = None
    gamma: float = 0.9
    lpa_table: Optional[LpaValueTable] = None
    lpa_history_days: int = 20
    scheduled: Optional[list] = None
    on_demand: Optional[list] = None
    record_traces: bool = False

    def validate(self) -> None:
        if self.stage1 not in STAGE1_ALGORITHMS:
            raise ConfigError(f"unknown stage-1 algorithm {self.stage1!r}; known: {', '.join(STAGE1_ALGORITHMS)}")
        if self.stage2 not in STAGE2_ALGORITHMS:
            raise ConfigError(f"unknown stage-2 algorithm {self.stage2!r}; known: {', '.join(STAGE2_ALGORITHMS)}")
        if self.order not in ORDER_POLICIES:
            raise ConfigError(f"unknown order policy {self.order!r}; known: {', '.join(ORDER_POLICIES)}")
        if not (0 < self.kappa <= 1):
            raise ConfigError("kappa must lie in (0, 1]")

    def label(self) -> str:
        return f"{self.stage1}+{self.stage2}"


@dataclass
class EpisodeReport:
    total_value: float = 0.0
    scheduled_value: float = 0.0
    on_demand_value: float = 0.0
    stage1_accepted: int = 0
    stage1_rejected: int = 0
    stage2_served: int = 0
    stage2_rejected: int = 0
    per_vehicle_earnings: dict = field(default_factory=dict)
    earnings_variance: float = 0.0
    commitment_violations: int = 0
    wall_time: float = 0.0
    decisions: list = field(default_factory=list, repr=False)
    actions: list = field(default_factory=list, repr=False)

    @property
    def stage1_reject_rate(self) -> float:
        n = self.stage1_accepted + self.stage1_rejected
        return self.stage1_rejected / n if n else 0.0

    @property
    def stage2_reject_rate(self) -> float:
        n = self.stage2_served + self.stage2_rejected
        return self.stage2_rejected / n if n else 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "total_value": self.total_value,
            "scheduled_value": self.scheduled_value,
            "on_demand_value": self.on_demand_value,
            "stage1_accepted": self.stage1_accepted,
            "stage1_rejected": self.stage1_rejected,
            "stage2_served": self.stage2_served,
            "stage2_rejected": self.stage2_rejected,
            "stage1_reject_rate": self.stage1_reject_rate,
            "stage2_reject_rate": self.stage2_reject_rate,
            "per_vehicle_earnings": {str(k): v for k, v in sorted(self.per_vehicle_earnings.items())},
            "earnings_variance": self.earnings_variance,
            "commitment_violations": self.commitment_violations,
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True)


def transitions_from_model(model: DemandModel, days: int, rng) -> list:
    """Historical trip transitions drawn from the demand model itself."""
    out = []
    delta = model.travel.delta
    for _ in range(days):
        for r in sample_on_demand(model, rng):
            dur = int(delta[r.origin, r.destination])
            out.append(((r.start, r.origin), r.destination, r.value, (r.start + dur, r.destination), dur))
    return out


def _resolve_fleet(config: EpisodeConfig) -> list:
    from .synthetic import make_fleet
    if isinstance(config.fleet, int):
        return make_fleet(config.model, config.fleet, stream(config.seed, "fleet"))
    return list(config.fleet)


class _Stage2:
    """Dispatcher state shared across ticks of one episode."""

    def __init__(self, config: EpisodeConfig, world: World, cache: CstCache, earnings: dict):
        self.config = config
        self.world = world
        self.cache = cache
        self.earnings = earnings
        kind = OrderKind(config.order)
        self.policy = OrderPolicy(kind, rng=stream(config.seed, "order") if kind is OrderKind.RANDOM else None)
        self.lpa = config.lpa_table

    def __call__(self, t: int, members: list, pool: RequestPool) -> dict:
        name = self.config.stage2
        travel = self.world.travel
        if name == "dpda-su":
            return dpda_su(members, self.cache.view, self.policy, pool, self.world, self.earnings, self.cache)
        if name == "dpda":
            actions = {}
            for m in order_vehicles(members, self.policy, self.earnings):
                l = m.state.location
                state = DispatchState(t, l, available_requests(t, l, m.anchor, pool.at(l), travel))
                a = dpda(state, m.anchor, table=self.cache.get(m.anchor))
                if a.kind is ActionKind.SERVE:
                    pool.remove(a.request)
                actions[m.id] = a
            return actions
        inst = dispatch_instance(members, pool, travel)
        if name == "greedy-km":
            matching = greedy_km(inst)
        elif name == "enhanced-km":
            matching = enhanced_km(inst, {m.id: self.cache.get(m.anchor) for m in members if
                                          any(k[0] == m.id for k in inst.edges)}, travel)
        else:
            matching = lpa_dispatch(inst, self.lpa, travel)
        return matching_actions(members, matching, pool, travel)


def _admit(config: EpisodeConfig, scheduled: list, books: list, cache: CstCache, world: World) -> list:
    name = config.stage1
    travel = world.travel
    rng = stream(config.seed, "stage1")
    decisions = []
    if name.startswith("random-best-score"):
        beta = config.beta if config.beta is not None else config.model.mean_value()
        weights = RankWeights.draw([b.vehicle.id for b in books], stream(config.seed, "rank"), config.alpha, beta)
    for r in scheduled:
        if name == "first-fit":
            d = first_fit(r, books, travel)
        elif name == "lpa":
            d = lpa_stage1(r, books, config.lpa_table, travel)
        else:
            variant = Variant(name.rsplit("-", 1)[1]) if name[-2:] in ("-R", "-A") else Variant.PLAIN
            if name.startswith("random"):
                d = random_best_score(r, books, cache, weights, variant, rng)
            else:
                d = best_score(r, books, cache, variant, rng)
        decisions.append(d)
    return decisions


def run_two_stage(config: EpisodeConfig) -> EpisodeReport:
    """Admit the scheduled stream, then dispatch the day tick by tick."""
    config.validate()
    started = time.perf_counter()
    model = config.model
    world = World(model.travel, model.horizon)
    travel = world.travel
    delta = travel.delta
    fleet = _resolve_fleet(config)
    for v in fleet:
        v.check(travel)
    if (config.stage1 == "lpa" or config.stage2 == "lpa") and config.lpa_table is None:
        hist = transitions_from_model(model, config.lpa_history_days, stream(config.seed, "lpa-history"))
        config.lpa_table = lpa_learn(hist, config.gamma, model.horizon, model.n_regions)
    scheduled = config.scheduled if config.scheduled is not None else \
        sample_scheduled(model, config.kappa, stream(config.seed, "scheduled"))
    on_demand = config.on_demand if config.on_demand is not None else \
        sample_on_demand(model, stream(config.seed, "on-demand"), start_id=len(scheduled))

    report = EpisodeReport()
    cache = CstCache(world, model)
    books = [ScheduleBook(v) for v in fleet]
    decisions = _admit(config, scheduled, books, cache, world)
    report.stage1_accepted = sum(d.accepted for d in decisions)
    report.stage1_rejected = len(decisions) - report.stage1_accepted
    for b in books:
        if not b.is_valid(travel):
            raise CommitmentViolation(f"admission produced an infeasible book for vehicle {b.vehicle.id}")
    if config.record_traces:
        report.decisions = decisions

    by_tick = {}
    for r in on_demand:
        by_tick.setdefault(r.start, []).append(r)
    earnings = {v.id: 0.0 for v in fleet}
    free_at = {v.id: v.start_time for v in fleet}
    where = {v.id: v.start_region for v in fleet}
    nxt = {v.id: 0 for v in fleet}
    book_of = {b.vehicle.id: b for b in books}
    dispatcher = _Stage2(config, world, cache, earnings)
    last = max([model.horizon] + [v.end_time for v in fleet])

    def violation(msg):
        report.commitment_violations += 1
        raise CommitmentViolation(msg)

    for t in range(1, last + 1):
        pool = RequestPool(by_tick.get(t, ()))
        members = []
        for v in fleet:
            vid = v.id
            if free_at[vid] != t:
                continue
            anchor = book_of[vid].commitments[nxt[vid]]
            l = where[vid]
            if t == anchor.start and l == anchor.origin:
                nxt[vid] += 1
                if anchor.kind is RequestKind.VIRTUAL_END:
                    free_at[vid] = -1
                    continue
                earnings[vid] += anchor.value
                report.scheduled_value += anchor.value
                free_at[vid], where[vid] = anchor.dropoff(travel)
                continue
            if delta[l, anchor.origin] > anchor.start - t:
                violation(f"vehicle {vid} at ({t}, {l}) can no longer reach request {anchor.id}")
            members.append(FleetMember(v, DispatchState(t, l), anchor))
        if members:
            actions = dispatcher(t, members, pool)
            for m in members:
                vid = m.id
                a = actions[vid]
                l = where[vid]
                if a.kind is ActionKind.SERVE:
                    r = a.request
                    if r.origin != l or r.start != t:
                        violation(f"vehicle {vid} served request {r.id} away from its pickup")
                    earnings[vid] += r.value
                    report.on_demand_value += r.value
                    report.stage2_served += 1
                elif a.kind is ActionKind.SERVE_SCHEDULED:
                    violation(f"vehicle {vid} was told to serve a commitment at the wrong pair")
                elif a.kind is ActionKind.RELOCATE and a.target == l:
                    violation(f"vehicle {vid} relocated to its own region")
                t2, l2 = a.landing(t, l, travel)
                if delta[l2, m.anchor.origin] > m.anchor.start - t2:
                    violation(f"vehicle {vid} action {a.kind.value} at ({t}, {l}) breaks request {m.anchor.id}")
                free_at[vid], where[vid] = t2, l2
            if config.record_traces:
                from .stage2 import action_rows
                report.actions.extend(action_rows(t, actions))
        report.stage2_rejected += len(pool)
    for v in fleet:
        if nxt[v.id] != len(book_of[v.id].commitments):
            violation(f"vehicle {v.id} left commitments unserved")
    report.total_value = report.scheduled_value + report.on_demand_value
    report.per_vehicle_earnings = earnings
    report.earnings_variance = float(np.var(list(earnings.values()))) if earnings else 0.0
    report.wall_time = time.perf_counter() - started
    return report


# ---------------------------------------------------------------- exact oracles

DEFAULT_STATE_CAP = 10 ** 7


def _type_table(demand) -> dict:
    """{(t, l): [(destination, Pr[X >= 1], value), ...]} for types with positive probability."""
    view = as_view(demand)
    idx = view.index
    out = {}
    for k, w in enumerate(idx.types):
        p = float(view.H[k, 0])
        if p > 0:
            out.setdefault((w.start, w.origin), []).append((w.destination, p, float(idx.value[k])))
    return out


def brute_force_values(world: World, demand, anchor: Request, cap: int = DEFAULT_STATE_CAP) -> dict:
    """Optimal expected value at every pair of the anchor's cone, over full request-set states.

    Each state (t, l, S) lists which request types are present at (t, l); the value of (t, l)
    averages the best action over every subset S, weighted by its probability.
    """
    delta = world.travel.delta
    n = world.n_regions
    types = _type_table(demand)
    at, ao = anchor.start, anchor.origin
    count = 0
    for (t, l), ws in types.items():
        if t <= at:
            count += 2 ** len(ws)
            if count > cap:
                raise InstanceTooLarge(f"more than {cap} states")
    V = {}
    for t in range(at, 0, -1):
        for l in range(n):
            rem = at - t
            if delta[l, ao] > rem:
                continue
            if rem == 0:
                V[(t, l)] = 0.0
                continue
            idle = []
            if delta[l, ao] <= rem - 1:
                idle.append(V[(t + 1, l)])
            for d in range(n):
                if d != l and delta[l, d] + delta[d, ao] <= rem:
                    idle.append(V[(t + int(delta[l, d]), d)])
            base = max(idle)
            serve = [(p, v + V[(t + int(delta[l, d]), d)]) for d, p, v in types.get((t, l), [])
                     if d != l and delta[l, d] + delta[d, ao] <= rem]
            total = 0.0
            for present in itertools.product((False, True), repeat=len(serve)):
                prob = 1.0
                best = base
                for on, (p, s) in zip(present, serve):
                    prob *= p if on else 1.0 - p
                    if on and s > best:
                        best = s
                total += prob * best
            V[(t, l)] = total
    return V


def brute_force_mdp(world: World, demand, anchor: Request, start: tuple, cap: int = DEFAULT_STATE_CAP) -> float:
    values = brute_force_values(world, demand, anchor, cap)
    if start not in values:
        raise KeyError(f"{start} cannot reach the anchor")
    return values[start]


def dpda_policy_value(world: World, demand, anchor: Request, start: tuple, max_types: int = 16) -> float:
    """Exact expected value of following DPDA, averaging over every demand realization."""
    view = as_view(demand)
    idx = view.index
    live = [(k, w) for k, w in enumerate(idx.types) if view.H[k, 0] > 0]
    if len(live) > max_types:
        raise InstanceTooLarge(f"{len(live)} types exceed the enumeration limit {max_types}")
    table = compute_cst(world, view, anchor, t0=start[0])
    travel = world.travel
    total = 0.0
    for present in itertools.product((False, True), repeat=len(live)):
        prob = 1.0
        realized = {}
        for on, (k, w) in zip(present, live):
            p = float(view.H[k, 0])
            prob *= p if on else 1.0 - p
            if on:
                realized.setdefault((w.start, w.origin), []).append(
                    Request(k, w.origin, w.destination, w.start, float(idx.value[k]), RequestKind.ON_DEMAND))
        if prob == 0.0:
            continue
        t, l = start
        value = 0.0
        while (t, l) != (anchor.start, anchor.origin):
            reqs = available_requests(t, l, anchor, realized.get((t, l), ()), travel)
            a = dpda(DispatchState(t, l, reqs), anchor, table=table)
            value += a.value
            t, l = a.landing(t, l, travel)
        total += prob * value
    return total


def exhaustive_offline(vehicles: list, requests: list, travel: TravelTimeMatrix) -> float:
    """Best total value over every assignment of requests to vehicles (or to nobody)."""
    best = 0.0
    options = [None] + list(range(len(vehicles)))
    for assign in itertools.product(options, repeat=len(requests)):
        total = 0.0
        ok = True
        for i, v in enumerate(vehicles):
            mine = [r for r, a in zip(requests, assign) if a == i]
            if not _servable(v, mine, travel):
                ok = False
                break
            total += sum(r.value for r in mine)
        if ok and total > best:
            best = total
    return best


def _servable(v: Vehicle, reqs: list, travel) -> bool:
    reqs = sorted(reqs, key=lambda r: r.start)
    groups = [list(g) for _, g in itertools.groupby(reqs, key=lambda r: r.start)]
    for combo in itertools.product(*[itertools.permutations(g) for g in groups]):
        chain = [v.virtual_start()] + [r for g in combo for r in g] + [v.virtual_end()]
        if all(chainable(a, b, travel) for a, b in zip(chain, chain[1:])):
            return True
    return False


# ---------------------------------------------------------------- worst-case instance

@dataclass
class AdversarialInstance:
    world: World
    vehicle: Vehicle
    requests: list
    optimal_value: float
    mu: int
    t: int


def adversarial_instance(mu: int, t: int, copies: int = 3) -> AdversarialInstance:
    """Four-region instance on which first-fit admission earns t while the optimum earns 4mu - 2 + t."""
    if mu != int(mu) or t != int(t) or mu < 1 or not (1 <= t <= mu) or copies < 1:
        raise InvalidParams(f"need integers mu >= 1 and 1 <= t <= mu, got mu={mu}, t={t}")
    mu, t = int(mu), int(t)
    A, B, C, D = range(4)
    raw = np.zeros((4, 4), dtype=np.int64)
    for (u, v), d in {(B, D): mu, (C, A): mu, (A, D): mu, (A, B): mu - 1, (D, C): mu - 1, (B, C): t}.items():
        raw[u, v] = raw[v, u] = d
    travel = build_travel_matrix(raw)
    horizon = 4 * mu - 2 + t
    world = World(travel, horizon + 1)
    specs = [(B, C, 2 * mu)] * copies + [(A, D, 1), (D, C, mu + 1), (C, B, 2 * mu), (B, A, 2 * mu + t),
                                        (A, D, 3 * mu + t - 1)]
    requests = [Request(i, o, d, s, float(travel(o, d))) for i, (o, d, s) in enumerate(specs)]
    vehicle = Vehicle(0, 1, A, horizon + 1, D)
    return AdversarialInstance(world, vehicle, requests, float(4 * mu - 2 + t), mu, t)


# ---------------------------------------------------------------- competitive ratio

@dataclass
class RatioInstance:
    vehicles: list
    requests: list
    travel: TravelTimeMatrix
    model: Optional[DemandModel] = None
    opt: Optional[float] = None

    def optimum(self) -> float:
        if self.opt is None:
            self.opt = offline_opt(self.vehicles, self.requests, self.travel).value
        return self.opt


@dataclass
class RatioResult:
    ratio: float
    per_instance: list


def competitive_ratio(instances: list, algorithm: Callable, replications: int = 1, seed: int = 0) -> RatioResult:
    """Largest OPT / ALG over the instances; ALG is averaged over replications."""
    ratios = []
    for i, inst in enumerate(instances):
        values = [algorithm(inst, stream(seed, f"ratio-{i}-{rep}")) for rep in range(replications)]
        alg = float(np.mean(values))
        opt = inst.optimum()
        ratios.append(math.inf if alg <= 0 else opt / alg)
    return RatioResult(max(ratios) if ratios else math.nan, ratios)


def run_admission(inst: RatioInstance, name: str, rng=None, alpha: float = 1.0, beta: Optional[float] = None,
                  cache: Optional[CstCache] = None) -> float:
    """Total value a stage-1 algorithm admits on a scheduled-only instance."""
    books = [ScheduleBook(v) for v in inst.vehicles]
    travel = inst.travel
    if name == "first-fit":
        for r in inst.requests:
            first_fit(r, books, travel)
    else:
        if cache is None:
            cache = CstCache(inst.model.world, inst.model)
        variant = Variant(name.rsplit("-", 1)[1]) if name[-2:] in ("-R", "-A") else Variant.PLAIN
        if name.startswith("random-best-score"):
            b = beta if beta is not None else inst.model.mean_value()
            weights = RankWeights.draw([v.id for v in inst.vehicles], rng, alpha, b)
            for r in inst.requests:
                random_best_score(r, books, cache, weights, variant, rng)
        elif name.startswith("best-score"):
            for r in inst.requests:
                best_score(r, books, cache, variant, rng)
        else:
            raise ConfigError(f"unknown admission algorithm {name!r}")
    return sum(b.value() for b in books)


def ratio_instances(model: DemandModel, count: int, fleet_size: int, kappa: float = 1.0 / 20.0,
                    seed: int = 0) -> list:
    """Scheduled-only instances drawn from the demand model with a shared fleet layout per instance."""
    from .synthetic import make_fleet
    out = []
    for i in range(count):
        fleet = make_fleet(model, fleet_size, stream(seed, f"ratio-fleet-{i}"))
        reqs = sample_scheduled(model, kappa, stream(seed, f"ratio-requests-{i}"))
        out.append(RatioInstance(fleet, reqs, model.travel, model))
    return out


def ratio_experiment(model: DemandModel, algorithms: list, count: int = 50, fleet_size: int = 10,
                     replications: int = 50, kappa: float = 1.0 / 20.0, seed: int = 0) -> dict:
    """Empirical competitive ratio per admission algorithm over common instances."""
    instances = ratio_instances(model, count, fleet_size, kappa, seed)
    caches = [CstCache(model.world, model) for _ in instances]
    out = {}
    for name in algorithms:
        reps = replications if name.startswith("random") or name.endswith("-A") else 1

        def alg(inst, rng, name=name):
            return run_admission(inst, name, rng, cache=caches[instances.index(inst)])
        out[name] = competitive_ratio(instances, alg, reps, seed)
    return out


# ---------------------------------------------------------------- value versus fleet size

def cst_vs_fleet(world: World, demand, anchor: Request, start: tuple, max_vehicles: int) -> list:
    """Table value at ``start`` for the k-th of k co-located vehicles, k = 1..max_vehicles."""
    h = VirtualDemand(as_view(demand))
    series = []
    for k in range(max_vehicles):
        table = compute_cst(world, h.view, anchor, t0=start[0])
        series.append(table.lookup(*start))
        if k + 1 < max_vehicles:
            h.apply(serve_probabilities(table, start))
    return series


# ---------------------------------------------------------------- random tiny instances

@dataclass
class TinyInstance:
    world: World
    model: DemandModel
    anchor: Request


def random_tiny_instance(rng: np.random.Generator, max_regions: int = 3, max_span: int = 6,
                         max_types: int = 3, bernoulli: bool = True) -> TinyInstance:
    n = int(rng.integers(2, max_regions + 1))
    raw = rng.integers(1, 3, size=(n, n))
    raw = np.triu(raw, 1)
    raw = raw + raw.T
    travel = build_travel_matrix(raw)
    at = int(rng.integers(2, max_span + 2))
    ao = int(rng.integers(0, n))
    ccdf, values = {}, {}
    for _ in range(int(rng.integers(1, max_types + 1))):
        o, d = rng.choice(n, size=2, replace=False)
        dur = int(travel(o, d))
        if at - dur < 1:
            continue
        w = RequestType(int(o), int(d), int(rng.integers(1, at - dur + 1)))
        p = float(rng.uniform(0.05, 1.0))
        ccdf[w] = (p,) if bernoulli else (p, p * float(rng.uniform(0, 1)))
        values[w] = float(np.round(rng.uniform(0.5, 10.0), 3))
    model = DemandModel(travel, at, ccdf, values)
    anchor = Request(-1, ao, ao, at, 0.0, RequestKind.VIRTUAL_END)
    return TinyInstance(World(travel, at), model, anchor)


def random_scheduled_instance(rng: np.random.Generator, n_regions: int = 4, horizon: int = 30,
                              n_requests: int = 8, n_vehicles: int = 2, max_hop: int = 5) -> RatioInstance:
    """Scheduled-only instance with request values equal to their travel times."""
    raw = rng.integers(1, max_hop + 1, size=(n_regions, n_regions))
    raw = np.triu(raw, 1)
    raw = raw + raw.T
    travel = build_travel_matrix(raw)
    reqs = []
    while len(reqs) < n_requests:
        o, d = (int(x) for x in rng.choice(n_regions, size=2, replace=False))
        dur = travel(o, d)
        if dur >= horizon:
            continue
        s = int(rng.integers(1, horizon - dur + 1))
        reqs.append(Request(len(reqs), o, d, s, float(dur)))
    vehicles = []
    for i in range(n_vehicles):
        o = int(rng.integers(0, n_regions))
        vehicles.append(Vehicle(i, 1, o, horizon + max_hop * n_regions, o))
    return RatioInstance(vehicles, reqs, travel)


def value_ratio_mu(travel: TravelTimeMatrix) -> float:
    """Largest over smallest possible request value when values equal travel times."""
    off = travel.delta[~np.eye(travel.n_regions, dtype=bool)]
    return float(off.max() / off.min())


# ---------------------------------------------------------------- statistics and batch output

def permutation_test(a, b, n_resamples: int = 20000, seed: int = 0) -> float:
    """Two-sided paired sign-flip test on the mean difference; exact for up to 20 pairs."""
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if diff.size == 0 or not np.any(diff):
        return 1.0
    observed = abs(diff.mean())
    n = diff.size
    tol = 1e-12 * max(1.0, observed)
    if n <= 20:
        signs = np.array(list(itertools.product((1.0, -1.0), repeat=n)))
        stats = np.abs(signs @ diff) / n
        return float(np.mean(stats >= observed - tol))
    rng = np.random.default_rng(seed)
    signs = rng.choice((1.0, -1.0), size=(n_resamples, n))
    stats = np.abs(signs @ diff) / n
    return float((1 + np.sum(stats >= observed - tol)) / (1 + n_resamples))


BATCH_COLUMNS = ["config", "seed", "stage1", "stage2", "order", "total_value", "scheduled_value",
                 "on_demand_value", "stage1_accepted", "stage1_rejected", "stage2_served", "stage2_rejected",
                 "stage1_reject_rate", "stage2_reject_rate", "earnings_variance", "commitment_violations"]


def config_fingerprint(config: EpisodeConfig) -> str:
    doc = json.dumps([config.stage1, config.stage2, config.order, config.kappa, config.alpha,
                      config.beta, config.gamma, str(config.fleet if isinstance(config.fleet, int) else len(config.fleet)),
                      config.model.horizon, config.model.n_regions, len(config.model.ccdf)])
    return hashlib.sha1(doc.encode()).hexdigest()[:12]


def batch_row(config: EpisodeConfig, report: EpisodeReport) -> list:
    d = report.to_dict()
    return [config_fingerprint(config), config.seed, config.stage1, config.stage2, config.order] + \
        [d[c] if isinstance(d[c], int) else repr(float(d[c])) for c in BATCH_COLUMNS[5:]]


def write_batch_csv(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BATCH_COLUMNS)
        w.writerows(rows)


def summarize(label: str, reports: list) -> dict:
    values = [r.total_value for r in reports]
    return {
        "label": label,
        "episodes": len(reports),
        "mean_total_value": float(np.mean(values)) if values else 0.0,
        "var_total_value": float(np.var(values)) if values else 0.0,
        "mean_stage1_reject_rate": float(np.mean([r.stage1_reject_rate for r in reports])) if reports else 0.0,
        "mean_stage2_reject_rate": float(np.mean([r.stage2_reject_rate for r in reports])) if reports else 0.0,
        "mean_earnings_variance": float(np.mean([r.earnings_variance for r in reports])) if reports else 0.0,
    }
