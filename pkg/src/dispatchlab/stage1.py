"""Online admission of scheduled requests into per-vehicle schedule books."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Optional

from .cst import CstCache
from .world import Request, ScheduleBook, TravelTimeMatrix, chainable, find_insert_slot


class Variant(enum.Enum):
    PLAIN = "plain"
    R = "R"
    A = "A"


@dataclass(frozen=True)
class Decision:
    request: Request
    accepted: bool
    vehicle_id: Optional[int] = None
    delta: Optional[float] = None
    delta_prime: Optional[float] = None

    @classmethod
    def reject(cls, r: Request, delta=None, delta_prime=None) -> "Decision":
        return cls(r, False, None, delta, delta_prime)


def feasible_slots(book: ScheduleBook, r: Request, travel: TravelTimeMatrix) -> list:
    return [(a, b) for a, b in book.pairs() if chainable(a, r, travel) and chainable(r, b, travel)]


def first_fit(r: Request, books: list, travel: TravelTimeMatrix) -> Decision:
    """Accept into the first book (in the given order) that has room for ``r``."""
    for book in books:
        slot = find_insert_slot(book, r, travel)
        if slot is not None:
            book.insert(r, slot)
            return Decision(r, True, book.vehicle.id)
    return Decision.reject(r)


@dataclass(frozen=True)
class IncrementScore:
    vehicle: object
    slot: tuple
    e0: float
    e1: float

    @property
    def delta(self) -> float:
        return self.e1 - self.e0


def score_increment(r: Request, book: ScheduleBook, cache: CstCache) -> Optional[IncrementScore]:
    """Change in the vehicle's expected value if it commits to ``r``; best slot if several fit."""
    travel = cache.world.travel
    best = None
    for r0, r1 in feasible_slots(book, r, travel):
        t0, l0 = r0.dropoff(travel)
        tr, lr = r.dropoff(travel)
        e0 = cache.lookup(r1, t0, l0)
        e1 = cache.lookup(r, t0, l0) + r.value + cache.lookup(r1, tr, lr)
        score = IncrementScore(book.vehicle, (r0, r1), e0, e1)
        if best is None or score.delta > best.delta:
            best = score
    return best


def _settle(r, scores, pick, variant: Variant, rng, delta_prime=None) -> Decision:
    """Apply the variant's rejection rule to the chosen vehicle."""
    book, score = pick
    top = max(s.delta for _, s in scores)
    if top <= 0 and variant is Variant.R:
        return Decision.reject(r, score.delta, delta_prime)
    if top <= 0 and variant is Variant.A:
        if rng is None:
            raise ValueError("variant A needs a random generator")
        if not rng.random() < min(1.0, math.exp(score.delta)):
            return Decision.reject(r, score.delta, delta_prime)
    book.insert(r, score.slot)
    return Decision(r, True, book.vehicle.id, score.delta, delta_prime)


def _scores(r, books, cache) -> list:
    out = []
    for book in books:
        s = score_increment(r, book, cache)
        if s is not None:
            out.append((book, s))
    return out


def best_score(r: Request, books: list, cache: CstCache, variant=Variant.PLAIN, rng=None) -> Decision:
    """Accept into the vehicle with the largest value increment (ties to the lowest id)."""
    variant = Variant(variant)
    scores = _scores(r, books, cache)
    if not scores:
        return Decision.reject(r)
    pick = min(scores, key=lambda bs: (-bs[1].delta, bs[0].vehicle.id))
    return _settle(r, scores, pick, variant, rng)


@dataclass
class RankWeights:
    alpha: float
    beta: float
    k: dict = field(default_factory=dict)

    @classmethod
    def draw(cls, vehicle_ids, rng, alpha: float = 1.0, beta: float = 1.0) -> "RankWeights":
        ids = list(vehicle_ids)
        return cls(alpha, beta, dict(zip(ids, rng.random(len(ids)).tolist())))

    def priority(self, vehicle_id) -> float:
        return self.beta * math.exp(self.alpha * self.k[vehicle_id])


def random_best_score(r: Request, books: list, cache: CstCache, weights: RankWeights,
                      variant=Variant.PLAIN, rng=None) -> Decision:
    """Like best_score, ranked by the increment plus a per-vehicle random priority."""
    variant = Variant(variant)
    scores = _scores(r, books, cache)
    if not scores:
        return Decision.reject(r)
    primed = [(s.delta + weights.priority(b.vehicle.id), b, s) for b, s in scores]
    dp, book, score = min(primed, key=lambda e: (-e[0], e[1].vehicle.id))
    return _settle(r, scores, (book, score), variant, rng, dp)


DECISION_LOG_COLUMNS = ["seq", "request_id", "algorithm", "decision", "vehicle_id", "delta", "delta_prime"]


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def decision_rows(decisions: list, algorithm: str) -> list:
    return [[seq, d.request.id, algorithm, "accept" if d.accepted else "reject",
             "" if d.vehicle_id is None else d.vehicle_id, _num(d.delta), _num(d.delta_prime)]
            for seq, d in enumerate(decisions)]


def write_decision_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DECISION_LOG_COLUMNS)
        w.writerows(rows)
