"""Core domain model: time grid, regions, travel times, requests, vehicles and schedule books.

Regions are 0-based integer indices. Time steps are 1-based integers; a trip that
starts at ``t`` with travel time ``delta`` makes the vehicle available again at
``t + delta``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np


class WorldError(ValueError):
    pass


class NonSquare(WorldError):
    pass


class NegativeEntry(WorldError):
    pass


class NonZeroDiagonal(WorldError):
    pass


class NonFiniteEntry(WorldError):
    pass


class AnchorInfeasible(WorldError):
    pass


class TravelTimeMatrix:
    """Metric table of shortest travel times, in time steps, between regions."""

    def __init__(self, delta: np.ndarray):
        delta = np.array(delta, dtype=np.int64, copy=True)
        delta.setflags(write=False)
        self.delta = delta

    @property
    def n_regions(self) -> int:
        return self.delta.shape[0]

    def __call__(self, u: int, v: int) -> int:
        return int(self.delta[u, v])

    def __eq__(self, other):
        return isinstance(other, TravelTimeMatrix) and np.array_equal(self.delta, other.delta)

    def __hash__(self):
        return hash(self.delta.tobytes())

    def __repr__(self):
        return f"TravelTimeMatrix(n_regions={self.n_regions})"

    def has_zero_hops(self) -> bool:
        if not hasattr(self, "_zero_hops"):
            off = ~np.eye(self.n_regions, dtype=bool)
            self._zero_hops = bool((self.delta[off] == 0).any())
        return self._zero_hops

    def to_text(self) -> str:
        return "\n".join(" ".join(str(int(x)) for x in row) for row in self.delta) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "TravelTimeMatrix":
        rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
        return build_travel_matrix([[int(x) for x in row] for row in rows])


def build_travel_matrix(raw) -> TravelTimeMatrix:
    """Validate a raw travel-time table and return its all-pairs shortest-path closure."""
    table = np.asarray(raw, dtype=float)
    if table.ndim != 2 or table.shape[0] != table.shape[1] or table.shape[0] == 0:
        raise NonSquare(f"travel table must be a non-empty square table, got shape {table.shape}")
    if not np.isfinite(table).all():
        raise NonFiniteEntry("travel table contains non-finite entries")
    if (table < 0).any():
        raise NegativeEntry("travel table contains negative entries")
    if (np.diag(table) != 0).any():
        raise NonZeroDiagonal("travel table must have a zero diagonal")
    if (table != np.round(table)).any():
        raise WorldError("travel times must be whole time steps")
    dist = table.astype(np.int64)
    for k in range(dist.shape[0]):
        dist = np.minimum(dist, dist[:, k, None] + dist[None, k, :])
    return TravelTimeMatrix(dist)


class RequestKind(enum.Enum):
    SCHEDULED = "scheduled"
    ON_DEMAND = "on_demand"
    VIRTUAL_END = "virtual_end"
    VIRTUAL_START = "virtual_start"


@dataclass(frozen=True)
class RequestType:
    origin: int
    destination: int
    start: int


@dataclass(frozen=True)
class Request:
    id: int
    origin: int
    destination: int
    start: int
    value: float
    kind: RequestKind = RequestKind.SCHEDULED

    @property
    def type(self) -> RequestType:
        return RequestType(self.origin, self.destination, self.start)

    @property
    def is_virtual(self) -> bool:
        return self.kind in (RequestKind.VIRTUAL_END, RequestKind.VIRTUAL_START)

    def dropoff(self, travel: TravelTimeMatrix) -> tuple[int, int]:
        """(time, region) at which the serving vehicle becomes available again."""
        return self.start + travel(self.origin, self.destination), self.destination

    def to_record(self) -> list:
        return [self.id, self.origin, self.destination, self.start, self.value, self.kind.value]

    @classmethod
    def from_record(cls, rec) -> "Request":
        rid, o, d, t, v, kind = rec
        return cls(int(rid), int(o), int(d), int(t), float(v), RequestKind(kind))


@dataclass(frozen=True)
class Vehicle:
    id: int
    start_time: int
    start_region: int
    end_time: int
    end_region: int

    def virtual_start(self) -> Request:
        return Request(-2 - 2 * self.id, self.start_region, self.start_region,
                       self.start_time, 0.0, RequestKind.VIRTUAL_START)

    def virtual_end(self) -> Request:
        return Request(-1 - 2 * self.id, self.end_region, self.end_region,
                       self.end_time, 0.0, RequestKind.VIRTUAL_END)

    def check(self, travel: TravelTimeMatrix) -> None:
        if self.start_time > self.end_time:
            raise WorldError(f"vehicle {self.id} ends before it starts")
        if travel(self.start_region, self.end_region) > self.end_time - self.start_time:
            raise WorldError(f"vehicle {self.id} cannot reach its end location in time")


def chainable(a: Request, b: Request, travel: TravelTimeMatrix) -> bool:
    """True if a vehicle that serves ``a`` can still pick up ``b`` on time."""
    return a.start + travel(a.origin, a.destination) + travel(a.destination, b.origin) <= b.start


def reachable_destinations(t: int, l: int, anchor: Request, travel: TravelTimeMatrix) -> frozenset:
    """Regions other than ``l`` the vehicle can move to and still reach the anchor on time."""
    slack = anchor.start - t
    delta = travel.delta
    if slack < 0 or delta[l, anchor.origin] > slack:
        raise AnchorInfeasible(f"({t}, {l}) cannot reach anchor at ({anchor.start}, {anchor.origin})")
    reach = delta[l, :] + delta[:, anchor.origin]
    return frozenset(int(d) for d in np.flatnonzero(reach <= slack) if d != l)


def wait_admissible(t: int, l: int, anchor: Request, travel: TravelTimeMatrix) -> bool:
    return travel(l, anchor.origin) <= anchor.start - t - 1


@dataclass
class ScheduleBook:
    """Time-ordered commitments of one vehicle, always closed by its VirtualEnd."""

    vehicle: Vehicle
    commitments: list = field(default_factory=list)

    def __post_init__(self):
        if not self.commitments:
            self.commitments = [self.vehicle.virtual_end()]

    @property
    def scheduled(self) -> list:
        return [r for r in self.commitments if r.kind is RequestKind.SCHEDULED]

    def pairs(self):
        """Consecutive (predecessor, successor) pairs, starting from the virtual start."""
        prev = self.vehicle.virtual_start()
        for r in self.commitments:
            yield prev, r
            prev = r

    def is_valid(self, travel: TravelTimeMatrix) -> bool:
        if not self.commitments or self.commitments[-1] != self.vehicle.virtual_end():
            return False
        return all(chainable(a, b, travel) for a, b in self.pairs())

    def insert(self, r: Request, slot: tuple) -> None:
        succ = slot[1]
        idx = next(i for i, c in enumerate(self.commitments) if c is succ or c == succ)
        self.commitments.insert(idx, r)

    def value(self) -> float:
        return sum(r.value for r in self.commitments)

    def to_record(self) -> dict:
        v = self.vehicle
        return {
            "vehicle": [v.id, v.start_time, v.start_region, v.end_time, v.end_region],
            "commitments": [r.to_record() for r in self.commitments],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ScheduleBook":
        vehicle = Vehicle(*[int(x) for x in rec["vehicle"]])
        return cls(vehicle, [Request.from_record(c) for c in rec["commitments"]])


def find_insert_slot(book: ScheduleBook, r: Request, travel: TravelTimeMatrix) -> Optional[tuple]:
    """Consecutive pair (r0, r1) of ``book`` between which ``r`` fits, or None."""
    for pred, succ in book.pairs():
        if pred.start > r.start:
            break
        if chainable(pred, r, travel) and chainable(r, succ, travel):
            return pred, succ
    return None


def save_books(books: Iterable[ScheduleBook], path) -> None:
    Path(path).write_text(json.dumps([b.to_record() for b in books], indent=1))


def load_books(path) -> list:
    return [ScheduleBook.from_record(rec) for rec in json.loads(Path(path).read_text())]


class ActionKind(enum.Enum):
    SERVE = "serve"
    RELOCATE = "relocate"
    WAIT = "wait"
    SERVE_SCHEDULED = "serve_scheduled"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    target: int
    request: Optional[Request] = None

    @classmethod
    def serve(cls, r: Request) -> "Action":
        return cls(ActionKind.SERVE, r.destination, r)

    @classmethod
    def serve_scheduled(cls, r: Request) -> "Action":
        return cls(ActionKind.SERVE_SCHEDULED, r.destination, r)

    @classmethod
    def relocate(cls, d: int) -> "Action":
        return cls(ActionKind.RELOCATE, d)

    @classmethod
    def wait(cls, l: int) -> "Action":
        return cls(ActionKind.WAIT, l)

    @property
    def value(self) -> float:
        return self.request.value if self.request is not None else 0.0

    def landing(self, t: int, l: int, travel: TravelTimeMatrix) -> tuple[int, int]:
        if self.kind is ActionKind.WAIT:
            return t + 1, l
        if self.request is not None:
            return self.request.dropoff(travel)
        return t + travel(l, self.target), self.target


@dataclass(frozen=True)
class DispatchState:
    time: int
    location: int
    available_requests: tuple = ()


def available_requests(t: int, l: int, anchor: Request, pool: Iterable[Request],
                       travel: TravelTimeMatrix) -> tuple:
    """Requests from ``pool`` that a vehicle at (t, l) may serve without missing ``anchor``."""
    slack = anchor.start - t
    delta = travel.delta
    out = [r for r in pool
           if r.origin == l and r.start == t and r.destination != l
           and delta[l, r.destination] + delta[r.destination, anchor.origin] <= slack]
    return tuple(sorted(out, key=lambda r: r.id))


@dataclass(frozen=True)
class World:
    travel: TravelTimeMatrix
    horizon: int

    @property
    def n_regions(self) -> int:
        return self.travel.n_regions
