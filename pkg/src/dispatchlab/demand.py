"""Spatio-temporal demand model: region discretization, CCDF estimation and sampling."""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .world import (Request, RequestKind, RequestType, TravelTimeMatrix, World,
                    build_travel_matrix)

log = logging.getLogger(__name__)

TRIP_COLUMNS = ["start_epoch_s", "duration_s", "origin_lat", "origin_lng", "dest_lat", "dest_lng"]
SECONDS_PER_DAY = 86400


class DemandError(ValueError):
    pass


class FileMissing(DemandError, FileNotFoundError):
    pass


class SchemaMismatch(DemandError):
    pass


class MalformedRow(DemandError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row


class TooFewDistinctPoints(DemandError):
    pass


class EmptyInput(DemandError):
    pass


@dataclass(frozen=True)
class TripRecord:
    start_epoch_s: int
    duration_s: int
    origin: tuple
    destination: tuple


def _valid_coord(lat: float, lng: float) -> bool:
    return -90.0 <= lat <= 90.0 and -180.0 <= lng <= 180.0


def ingest_trips(path) -> list:
    """Parse a trip CSV. Trips that cross midnight are dropped (and counted in the log)."""
    path = Path(path)
    if not path.exists():
        raise FileMissing(f"trip file not found: {path}")
    records = []
    dropped = 0
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRIP_COLUMNS:
            raise SchemaMismatch(f"expected header {','.join(TRIP_COLUMNS)}, got {header}")
        for i, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(TRIP_COLUMNS):
                raise MalformedRow(i, f"expected {len(TRIP_COLUMNS)} fields, got {len(row)}")
            try:
                start, duration = int(row[0]), int(row[1])
                olat, olng, dlat, dlng = (float(x) for x in row[2:])
            except ValueError as exc:
                raise MalformedRow(i, str(exc)) from None
            if duration <= 0:
                raise MalformedRow(i, "duration_s must be positive")
            if start < 0:
                raise MalformedRow(i, "start_epoch_s must be non-negative")
            if not (_valid_coord(olat, olng) and _valid_coord(dlat, dlng)):
                raise MalformedRow(i, "coordinate out of range")
            if (start + duration - 1) // SECONDS_PER_DAY != start // SECONDS_PER_DAY:
                dropped += 1
                continue
            records.append(TripRecord(start, duration, (olat, olng), (dlat, dlng)))
    if dropped:
        log.info("dropped %d trips spanning midnight", dropped)
    return records


@dataclass
class RegionMap:
    centers: np.ndarray
    iterations: int = 0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        if len(self.centers) == 0:
            raise DemandError("region map needs at least one center")
        if len(np.unique(self.centers, axis=0)) != len(self.centers):
            raise DemandError("region centers must be pairwise distinct")

    @property
    def n_regions(self) -> int:
        return len(self.centers)

    def assign(self, coords) -> np.ndarray:
        coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        d2 = ((coords[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)


def within_cluster_ss(coords, centers, labels) -> float:
    coords = np.asarray(coords, dtype=float)
    return float(((coords - np.asarray(centers)[labels]) ** 2).sum())


def cluster_regions(coords, k: int, max_iters: int = 100, seed=0, history: Optional[list] = None) -> RegionMap:
    """Lloyd's k-means from a seeded Forgy start on raw (lat, lng).

    ``history`` (if given) receives the within-cluster sum of squares after each iteration.
    """
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    if len(coords) == 0:
        raise TooFewDistinctPoints("no coordinates given")
    distinct = np.unique(coords, axis=0)
    if k < 1 or k > len(distinct):
        raise TooFewDistinctPoints(f"k={k} but only {len(distinct)} distinct points")
    rng = np.random.default_rng(seed)
    centers = distinct[np.sort(rng.choice(len(distinct), size=k, replace=False))]
    labels = None
    it = 0
    for it in range(1, max_iters + 1):
        d2 = ((coords[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            it -= 1
            break
        labels = new_labels
        for j in range(k):
            members = coords[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
        if history is not None:
            history.append(within_cluster_ss(coords, centers, labels))
    if len(np.unique(centers, axis=0)) != k:
        # coincident centers only arise from duplicate inputs; nudge by index to keep them distinct
        centers = centers + np.arange(k)[:, None] * 1e-9
    return RegionMap(centers, iterations=it)


def ccdf_from_counts(day_counts, day_count: int) -> tuple:
    """Empirical Pr[X >= i], i = 1.., from per-day counts (days not listed count as zero)."""
    counts = [c for c in day_counts if c > 0]
    if not counts:
        return ()
    top = max(counts)
    return tuple(sum(1 for c in counts if c >= i) / day_count for i in range(1, top + 1))


class DemandModel:
    """CCDF table Pr[X_w >= i] and value table V_w for request types w = (o, d, t)."""

    def __init__(self, travel: TravelTimeMatrix, horizon: int, ccdf: dict, values: dict,
                 centers=None):
        self.travel = travel
        self.horizon = int(horizon)
        self.ccdf = {}
        self.values = {}
        delta = travel.delta
        for w, probs in ccdf.items():
            w = w if isinstance(w, RequestType) else RequestType(*w)
            probs = _trim(probs)
            if not probs:
                continue
            _check_ccdf(probs, w)
            if w.origin == w.destination:
                raise DemandError(f"type {w} has origin == destination")
            if not (1 <= w.start and w.start + delta[w.origin, w.destination] <= self.horizon):
                raise DemandError(f"type {w} does not fit in the horizon")
            v = float(values[w] if w in values else values[(w.origin, w.destination, w.start)])
            if v < 0:
                raise DemandError(f"negative value for {w}")
            self.ccdf[w] = probs
            self.values[w] = v
        self.centers = None if centers is None else np.asarray(centers, dtype=float)
        self._view = None

    @property
    def n_regions(self) -> int:
        return self.travel.n_regions

    @property
    def world(self) -> World:
        return World(self.travel, self.horizon)

    def types(self) -> list:
        return sorted(self.ccdf, key=lambda w: (w.start, w.origin, w.destination))

    def pr_at_least(self, w: RequestType, i: int = 1) -> float:
        probs = self.ccdf.get(w, ())
        return probs[i - 1] if 0 < i <= len(probs) else 0.0

    def expected_count(self, w: RequestType) -> float:
        return float(sum(self.ccdf.get(w, ())))

    def expected_daily_count(self) -> float:
        return float(sum(sum(p) for p in self.ccdf.values()))

    def mean_value(self) -> float:
        return float(np.mean(list(self.values.values()))) if self.values else 0.0

    def view(self) -> "DemandView":
        if self._view is None:
            self._view = DemandView.from_model(self)
        return self._view

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "regions": self.n_regions,
            "travel": self.travel.delta.tolist(),
            "centers": None if self.centers is None else self.centers.tolist(),
            "ccdf": [[w.origin, w.destination, w.start, list(self.ccdf[w])] for w in self.types()],
            "values": [[w.origin, w.destination, w.start, self.values[w]] for w in self.types()],
        }

    def save(self, path) -> None:
        # json emits floats with shortest round-trip repr
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def from_dict(cls, doc: dict) -> "DemandModel":
        travel = build_travel_matrix(doc["travel"])
        if travel.n_regions != doc["regions"]:
            raise DemandError("region count does not match travel table")
        ccdf = {RequestType(o, d, t): tuple(p) for o, d, t, p in doc["ccdf"]}
        values = {RequestType(o, d, t): v for o, d, t, v in doc["values"]}
        return cls(travel, doc["horizon"], ccdf, values, doc.get("centers"))

    @classmethod
    def load(cls, path) -> "DemandModel":
        path = Path(path)
        if not path.exists():
            raise FileMissing(f"demand model not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))

    def scaled(self, factor: float) -> "DemandModel":
        """Same types and values with every Pr[X_w >= 1] multiplied by ``factor`` (Bernoulli demand)."""
        ccdf = {w: (min(1.0, p[0] * factor),) for w, p in self.ccdf.items()}
        return DemandModel(self.travel, self.horizon, ccdf, self.values, self.centers)


def _trim(probs) -> tuple:
    probs = [float(p) for p in probs]
    while probs and probs[-1] == 0.0:
        probs.pop()
    return tuple(probs)


def _check_ccdf(probs, w=None) -> None:
    prev = 1.0
    for p in probs:
        if not (0.0 <= p <= prev):
            raise DemandError(f"CCDF for {w} is not nonincreasing within [0, 1]: {probs}")
        prev = p


class TypeIndex:
    """Flat arrays over request types sorted by (start, origin, destination).

    ``ptr[t * n + o] : ptr[t * n + o + 1]`` spans the types departing region ``o`` at ``t``.
    """

    def __init__(self, types: list, values: dict, horizon: int, n_regions: int):
        self.types = types
        self.horizon = horizon
        self.n_regions = n_regions
        self.position = {w: k for k, w in enumerate(types)}
        self.start = np.array([w.start for w in types], dtype=np.int64)
        self.origin = np.array([w.origin for w in types], dtype=np.int64)
        self.dest = np.array([w.destination for w in types], dtype=np.int64)
        self.value = np.array([values[w] for w in types], dtype=np.float64)
        counts = np.zeros((horizon + 2) * n_regions + 1, dtype=np.int64)
        np.add.at(counts, self.start * n_regions + self.origin + 1, 1)
        self.ptr = np.cumsum(counts)

    def __len__(self):
        return len(self.types)


class DemandView:
    """Read access to Pr[X_w >= i] and V_w in the flat layout the CST kernels consume.

    ``H[k, i]`` holds Pr[X >= i + 1] for type ``index.types[k]``; the last column is
    always zero so that shifting by one entry is well defined.
    """

    _serial = 0

    def __init__(self, index: TypeIndex, H: np.ndarray, travel: TravelTimeMatrix, key=None):
        self.index = index
        self.H = H
        self.travel = travel
        self._h1 = None
        if key is None:
            DemandView._serial += 1
            key = ("view", DemandView._serial)
        self.key = key

    @classmethod
    def from_model(cls, model: DemandModel) -> "DemandView":
        types = model.types()
        index = TypeIndex(types, model.values, model.horizon, model.n_regions)
        width = max((len(p) for p in model.ccdf.values()), default=0) + 1
        H = np.zeros((len(types), width))
        for k, w in enumerate(types):
            probs = model.ccdf[w]
            H[k, :len(probs)] = probs
        H.setflags(write=False)
        return cls(index, H, model.travel, key=("base", id(model)))

    @property
    def horizon(self) -> int:
        return self.index.horizon

    @property
    def h1(self) -> np.ndarray:
        """Contiguous copy of Pr[X >= 1] per type, taken on first use."""
        if self._h1 is None:
            self._h1 = np.ascontiguousarray(self.H[:, 0]).copy()
        return self._h1

    def pr_at_least(self, w: RequestType, i: int = 1) -> float:
        k = self.index.position.get(w)
        if k is None or i < 1 or i >= self.H.shape[1]:
            return 0.0
        return float(self.H[k, i - 1])

    def ccdf(self, w: RequestType) -> tuple:
        k = self.index.position.get(w)
        if k is None:
            return ()
        return _trim(self.H[k])

    def value(self, w: RequestType) -> float:
        k = self.index.position.get(w)
        return 0.0 if k is None else float(self.index.value[k])


def as_view(demand) -> DemandView:
    if isinstance(demand, DemandView):
        return demand
    if isinstance(demand, DemandModel):
        return demand.view()
    raise TypeError(f"expected DemandModel or DemandView, got {type(demand).__name__}")


def haversine_km(a, b) -> float:
    lat1, lng1, lat2, lng2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lng2 - lng1) / 2) ** 2
    return 2 * 6371.0 * math.asin(min(1.0, math.sqrt(h)))


def travel_from_centers(centers, trips, labels_o, labels_d, step_seconds: int) -> TravelTimeMatrix:
    """Travel steps from center distances at the median observed speed, metric-closed."""
    centers = np.asarray(centers)
    n = len(centers)
    dist = np.array([[haversine_km(centers[i], centers[j]) for j in range(n)] for i in range(n)])
    speeds = [dist[o, d] / (tr.duration_s / step_seconds)
              for tr, o, d in zip(trips, labels_o, labels_d) if o != d]
    speed = float(np.median(speeds)) if speeds else 0.0
    if speed <= 0:
        raw = np.where(np.eye(n, dtype=bool), 0, 1)
    else:
        raw = np.where(np.eye(n, dtype=bool), 0, np.maximum(1, np.ceil(dist / speed - 1e-9)))
    return build_travel_matrix(raw.astype(np.int64))


def estimate_demand(trips: list, region_map: RegionMap, step_seconds: int = 60, day_count: Optional[int] = None,
                    travel: Optional[TravelTimeMatrix] = None) -> DemandModel:
    """Empirical day-frequency CCDFs and mean-duration values per request type."""
    if not trips:
        raise EmptyInput("no trips to estimate from")
    if SECONDS_PER_DAY % step_seconds:
        raise DemandError("step_seconds must divide a day")
    horizon = SECONDS_PER_DAY // step_seconds
    first_day = min(tr.start_epoch_s for tr in trips) // SECONDS_PER_DAY
    days = [tr.start_epoch_s // SECONDS_PER_DAY - first_day for tr in trips]
    if day_count is None:
        day_count = max(days) + 1
    if day_count < 1 or max(days) >= day_count:
        raise DemandError(f"trips span {max(days) + 1} days but day_count={day_count}")
    lo = region_map.assign([tr.origin for tr in trips])
    ld = region_map.assign([tr.destination for tr in trips])
    if travel is None:
        travel = travel_from_centers(region_map.centers, trips, lo, ld, step_seconds)
    delta = travel.delta

    per_day = defaultdict(Counter)
    durations = defaultdict(list)
    skipped = 0
    for tr, day, o, d in zip(trips, days, lo, ld):
        t = (tr.start_epoch_s % SECONDS_PER_DAY) // step_seconds + 1
        if o == d or t + delta[o, d] > horizon:
            skipped += 1
            continue
        w = RequestType(int(o), int(d), int(t))
        per_day[w][day] += 1
        durations[w].append(tr.duration_s / step_seconds)
    if skipped:
        log.info("skipped %d trips (intra-region or past the horizon)", skipped)
    ccdf = {w: ccdf_from_counts(c.values(), day_count) for w, c in per_day.items()}
    values = {w: float(np.mean(v)) for w, v in durations.items()}
    return DemandModel(travel, horizon, ccdf, values, region_map.centers)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_on_demand(model: DemandModel, seed=None, start_id: int = 0) -> list:
    """One day's on-demand stream, ordered by (start, origin, destination)."""
    rng = _rng(seed)
    view = model.view()
    if len(view.index) == 0:
        return []
    u = rng.random(len(view.index))
    counts = (view.H > u[:, None]).sum(axis=1)
    out = []
    rid = start_id
    idx = view.index
    for k in np.flatnonzero(counts):
        for _ in range(counts[k]):
            out.append(Request(rid, int(idx.origin[k]), int(idx.dest[k]), int(idx.start[k]),
                               float(idx.value[k]), RequestKind.ON_DEMAND))
            rid += 1
    return out


def scheduled_count(model: DemandModel, kappa: float) -> int:
    return int(round(kappa * model.expected_daily_count()))


def sample_scheduled(model: DemandModel, kappa: float, seed=None, start_id: int = 0) -> list:
    """Stage-1 stream: round(kappa * E[daily on-demand]) types drawn i.i.d. by Pr[X_w >= 1]."""
    if not (0 < kappa <= 1):
        raise DemandError("kappa must lie in (0, 1]")
    rng = _rng(seed)
    count = scheduled_count(model, kappa)
    view = model.view()
    if count == 0 or len(view.index) == 0:
        return []
    weights = view.H[:, 0]
    picks = rng.choice(len(weights), size=count, p=weights / weights.sum())
    idx = view.index
    return [Request(start_id + i, int(idx.origin[k]), int(idx.dest[k]), int(idx.start[k]),
                    float(idx.value[k]), RequestKind.SCHEDULED)
            for i, k in enumerate(picks)]
