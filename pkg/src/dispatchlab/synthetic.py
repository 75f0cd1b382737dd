"""Synthetic city: historical trip records, fleets and ready-made demand models.

The default city has 21 regions on a jittered grid, a one-minute time step over one
day, and roughly 1800 trips per day with morning and evening commute peaks.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .demand import (SECONDS_PER_DAY, TRIP_COLUMNS, DemandModel, RegionMap, TripRecord,
                     estimate_demand, haversine_km)
from .world import Vehicle


@dataclass(frozen=True)
class CitySpec:
    n_regions: int = 21
    trips_per_day: float = 1800.0
    days: int = 20
    step_seconds: int = 60
    center: tuple = (30.66, 104.06)
    spacing_deg: float = 0.03
    speed_kmh: float = 24.0


def region_centers(spec: CitySpec, rng: np.random.Generator) -> np.ndarray:
    cols = int(np.ceil(np.sqrt(spec.n_regions)))
    cells = [(i // cols, i % cols) for i in range(spec.n_regions)]
    grid = np.array(cells, dtype=float) - (cols - 1) / 2.0
    jitter = rng.uniform(-0.25, 0.25, size=grid.shape)
    return np.asarray(spec.center) + (grid + jitter) * spec.spacing_deg


def _rates(spec: CitySpec, centers: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Relative trip intensity over (minute of day, origin, destination)."""
    n = len(centers)
    minutes = np.arange(SECONDS_PER_DAY // 60)
    hours = minutes / 60.0
    base = 0.25 + 0.75 * np.exp(-0.5 * ((hours - 13.0) / 4.0) ** 2)
    morning = np.exp(-0.5 * ((hours - 8.5) / 1.2) ** 2)
    evening = np.exp(-0.5 * ((hours - 18.0) / 1.5) ** 2)
    night = np.where((hours < 5) | (hours > 23), 0.3, 1.0)
    mid = centers.mean(axis=0)
    centrality = np.exp(-np.linalg.norm(centers - mid, axis=1) / spec.spacing_deg / 1.5)
    popularity = rng.lognormal(0.0, 0.5, size=n) * (0.5 + centrality)
    dist = np.array([[haversine_km(a, b) for b in centers] for a in centers])
    gravity = popularity[:, None] * popularity[None, :] * np.exp(-dist / 6.0)
    np.fill_diagonal(gravity, 0.0)
    inward = gravity * (0.5 + centrality[None, :])
    outward = gravity * (0.5 + centrality[:, None])
    rates = (night * base)[:, None, None] * gravity[None] \
        + morning[:, None, None] * inward[None] + evening[:, None, None] * outward[None]
    return rates / rates.sum()


def generate_trips(spec: CitySpec = CitySpec(), seed: int = 0, start_day: int = 19000) -> tuple:
    """Historical trips for ``spec.days`` days; returns (trips, true region centers)."""
    rng = np.random.default_rng(seed)
    centers = region_centers(spec, rng)
    rates = _rates(spec, centers, rng)
    flat = rates.ravel()
    n = len(centers)
    trips = []
    for day in range(spec.days):
        count = rng.poisson(spec.trips_per_day)
        cells = np.sort(rng.choice(flat.size, size=count, p=flat))
        for cell in cells:
            minute, rest = divmod(int(cell), n * n)
            o, d = divmod(rest, n)
            km = haversine_km(centers[o], centers[d]) * rng.uniform(1.1, 1.4)
            duration = max(60, int(round(km / spec.speed_kmh * 3600 * rng.uniform(0.85, 1.15))))
            start = (start_day + day) * SECONDS_PER_DAY + minute * 60 + int(rng.integers(0, 60))
            if (start + duration - 1) // SECONDS_PER_DAY != start // SECONDS_PER_DAY:
                continue
            trips.append(TripRecord(start, duration, _scatter(centers[o], rng, spec),
                                    _scatter(centers[d], rng, spec)))
    return trips, centers


def _scatter(center, rng, spec):
    lat, lng = center + rng.normal(0.0, spec.spacing_deg / 8, size=2)
    return float(lat), float(lng)


def write_trips(trips, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIP_COLUMNS)
        for tr in trips:
            w.writerow([tr.start_epoch_s, tr.duration_s, repr(tr.origin[0]), repr(tr.origin[1]),
                        repr(tr.destination[0]), repr(tr.destination[1])])


def synthetic_model(spec: CitySpec = CitySpec(), seed: int = 0) -> DemandModel:
    """Demand model estimated from synthetic history using the generating centers as regions."""
    trips, centers = generate_trips(spec, seed)
    return estimate_demand(trips, RegionMap(centers), spec.step_seconds, spec.days)


_MODEL_CACHE = {}


def default_model(seed: int = 0) -> DemandModel:
    """The 21-region, 1440-step, ~1800 requests/day city (memoized per seed)."""
    if seed not in _MODEL_CACHE:
        _MODEL_CACHE[seed] = synthetic_model(CitySpec(), seed)
    return _MODEL_CACHE[seed]


def make_fleet(model: DemandModel, size: int, seed=0, start_time: int = 1) -> list:
    """Vehicles placed by origin popularity; each returns to its start region at day end."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weight = np.zeros(model.n_regions)
    for w, probs in model.ccdf.items():
        weight[w.origin] += sum(probs)
    if weight.sum() == 0:
        weight[:] = 1.0
    regions = rng.choice(model.n_regions, size=size, p=weight / weight.sum())
    return [Vehicle(i, start_time, int(o), model.horizon, int(o)) for i, o in enumerate(regions)]


def historical_transitions(trips, model: DemandModel, region_map: RegionMap, step_seconds: int = 60) -> list:
    """(state, action, reward, next state, duration) tuples for the value-learning baseline."""
    lo = region_map.assign([tr.origin for tr in trips])
    ld = region_map.assign([tr.destination for tr in trips])
    delta = model.travel.delta
    out = []
    for tr, o, d in zip(trips, lo, ld):
        t = (tr.start_epoch_s % SECONDS_PER_DAY) // step_seconds + 1
        dur = int(delta[o, d])
        if o == d or t + dur > model.horizon:
            continue
        out.append(((int(t), int(o)), int(d), float(tr.duration_s / step_seconds),
                    (int(t + dur), int(d)), dur))
    return out
