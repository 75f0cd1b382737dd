"""Command-line entry point: ``dispatchlab <subcommand> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import harness
from .baselines import BipartiteInstance, greedy_km, offline_opt
from .demand import DemandError, DemandModel, cluster_regions, estimate_demand, ingest_trips
from .stage1 import first_fit
from .world import ScheduleBook, WorldError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3

log = logging.getLogger("dispatchlab")


class UsageError(Exception):
    pass


class OracleFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _num(x) -> str:
    return repr(float(x))


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    doc = yaml.safe_load(p.read_text()) or {}
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a mapping of option names to values")
    return {k.replace("-", "_"): v for k, v in doc.items()}


def _opt(args, cfg: dict, name: str, default=None):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return cfg.get(name, default)


def _out_dir(args, cfg) -> Path:
    out = Path(_opt(args, cfg, "out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(args, cfg) -> DemandModel:
    path = _opt(args, cfg, "model")
    if path:
        return DemandModel.load(path)
    from .synthetic import default_model
    return default_model(int(_opt(args, cfg, "city_seed", 0)))


def _csv_list(value) -> list:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


# ---------------------------------------------------------------- subcommands

def cmd_generate(args, cfg) -> int:
    from .synthetic import CitySpec, generate_trips, write_trips
    spec = CitySpec(days=int(_opt(args, cfg, "days", 20)),
                    trips_per_day=float(_opt(args, cfg, "trips_per_day", 1800.0)))
    trips, _ = generate_trips(spec, int(_opt(args, cfg, "seed", 0)))
    out = _out_dir(args, cfg) / "trips.csv"
    write_trips(trips, out)
    print(f"wrote {len(trips)} trips over {spec.days} days to {out}")
    return EXIT_OK


def cmd_estimate(args, cfg) -> int:
    trips_path = _opt(args, cfg, "trips")
    if not trips_path:
        raise UsageError("estimate needs --trips")
    trips = ingest_trips(trips_path)
    if not trips:
        raise DemandError("trip file holds no usable trips")
    k = int(_opt(args, cfg, "k", 21))
    seed = int(_opt(args, cfg, "seed", 0))
    coords = [tr.origin for tr in trips] + [tr.destination for tr in trips]
    region_map = cluster_regions(coords, k, int(_opt(args, cfg, "max_iters", 100)), seed)
    days = _opt(args, cfg, "days")
    model = estimate_demand(trips, region_map, int(_opt(args, cfg, "step_seconds", 60)),
                            None if days is None else int(days))
    out = _out_dir(args, cfg) / "model.json"
    model.save(out)
    day_count = len({tr.start_epoch_s // 86400 for tr in trips}) if days is None else int(days)
    print(f"regions={model.n_regions} types={len(model.ccdf)} days={day_count} "
          f"expected_daily={_num(model.expected_daily_count())} kmeans_iterations={region_map.iterations}")
    print(f"model written to {out}")
    return EXIT_OK


def _episode_config(args, cfg, model, stage1, stage2, seed) -> harness.EpisodeConfig:
    beta = _opt(args, cfg, "beta")
    return harness.EpisodeConfig(
        model=model,
        fleet=int(_opt(args, cfg, "fleet", 50)),
        kappa=float(_opt(args, cfg, "kappa", 1.0 / 20.0)),
        stage1=stage1,
        stage2=stage2,
        order=str(_opt(args, cfg, "order", "initial")),
        seed=seed,
        alpha=float(_opt(args, cfg, "alpha", 1.0)),
        beta=None if beta is None else float(beta),
        gamma=float(_opt(args, cfg, "gamma", 0.9)),
        record_traces=bool(_opt(args, cfg, "trace", False)),
    )


def _run_all(configs: list, jobs: int) -> list:
    for c in configs:
        c.validate()
    if jobs <= 1:
        return [harness.run_two_stage(c) for c in configs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(harness.run_two_stage, configs))


def _seeds(args, cfg) -> list:
    base = int(_opt(args, cfg, "seed", 0))
    reps = int(_opt(args, cfg, "replications", 1))
    if reps < 1:
        raise UsageError("replications must be at least 1")
    return [base + i for i in range(reps)]


def cmd_simulate(args, cfg) -> int:
    model = _load_model(args, cfg)
    stage1 = str(_opt(args, cfg, "stage1", "best-score"))
    stage2 = str(_opt(args, cfg, "stage2", "dpda-su"))
    configs = [_episode_config(args, cfg, model, stage1, stage2, s) for s in _seeds(args, cfg)]
    out = _out_dir(args, cfg)
    try:
        reports = _run_all(configs, int(_opt(args, cfg, "jobs", 1)))
    except harness.CommitmentViolation as exc:
        (out / "violation.txt").write_text(f"{exc}\n{configs[0].label()} seeds={[c.seed for c in configs]}\n")
        raise
    harness.write_batch_csv(out / "episodes.csv", [harness.batch_row(c, r) for c, r in zip(configs, reports)])
    summary = harness.summarize(configs[0].label(), reports)
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    if configs[0].record_traces:
        from .stage1 import decision_rows, write_decision_log
        from .stage2 import write_action_trace
        for c, r in zip(configs, reports):
            write_decision_log(out / f"decisions-{c.seed}.csv", decision_rows(r.decisions, c.stage1))
            write_action_trace(out / f"actions-{c.seed}.csv", r.actions)
    print(f"{summary['label']}: episodes={summary['episodes']} mean_total_value={_num(summary['mean_total_value'])}")
    return EXIT_OK


COMPARE_COLUMNS = ["combo", "stage1", "stage2", "episodes", "mean_total_value", "mean_difference",
                   "p_value", "mean_stage1_reject_rate", "mean_stage2_reject_rate", "mean_earnings_variance"]


def _combos(args, cfg) -> list:
    combos = _csv_list(_opt(args, cfg, "combos"))
    if not combos:
        s1 = _csv_list(_opt(args, cfg, "stage1")) or ["first-fit"]
        s2 = _csv_list(_opt(args, cfg, "stage2")) or ["greedy-km"]
        combos = [f"{a}+{b}" for a in s1 for b in s2]
    out = []
    for c in combos:
        if "+" not in c:
            raise UsageError(f"combo {c!r} must look like stage1+stage2")
        out.append(tuple(c.split("+", 1)))
    if len(out) < 2:
        raise UsageError("compare needs at least two algorithm combinations")
    return out


def cmd_compare(args, cfg) -> int:
    model = _load_model(args, cfg)
    combos = _combos(args, cfg)
    seeds = _seeds(args, cfg)
    jobs = int(_opt(args, cfg, "jobs", 1))
    results = []
    rows = []
    for s1, s2 in combos:
        configs = [_episode_config(args, cfg, model, s1, s2, s) for s in seeds]
        reports = _run_all(configs, jobs)
        results.append(reports)
        rows += [harness.batch_row(c, r) for c, r in zip(configs, reports)]
    out = _out_dir(args, cfg)
    harness.write_batch_csv(out / "episodes.csv", rows)
    base = [r.total_value for r in results[0]]
    table = []
    for (s1, s2), reports in zip(combos, results):
        values = [r.total_value for r in reports]
        summ = harness.summarize(f"{s1}+{s2}", reports)
        table.append([summ["label"], s1, s2, len(reports), _num(summ["mean_total_value"]),
                      _num(np.mean(values) - np.mean(base)), _num(harness.permutation_test(values, base)),
                      _num(summ["mean_stage1_reject_rate"]), _num(summ["mean_stage2_reject_rate"]),
                      _num(summ["mean_earnings_variance"])])
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARE_COLUMNS)
        w.writerows(table)
    (out / "summary.json").write_text(json.dumps([dict(zip(COMPARE_COLUMNS, row)) for row in table],
                                                 indent=1) + "\n")
    for row in table:
        print(f"{row[0]}: mean={row[4]} diff={row[5]} p={row[6]}")
    return EXIT_OK


def cmd_worstcase(args, cfg) -> int:
    mu = _opt(args, cfg, "mu", 2)
    t = _opt(args, cfg, "t", 1)
    try:
        inst = harness.adversarial_instance(int(mu), int(t))
    except (harness.InvalidParams, ValueError) as exc:
        raise UsageError(str(exc)) from None
    book = ScheduleBook(inst.vehicle)
    for r in inst.requests:
        first_fit(r, [book], inst.world.travel)
    alg = book.value()
    opt = offline_opt([inst.vehicle], inst.requests, inst.world.travel).value
    ratio = opt / alg
    print(f"ALG={alg:g} OPT={opt:g} ratio={ratio:g}")
    if _opt(args, cfg, "out") is not None:
        out = _out_dir(args, cfg)
        doc = {"mu": inst.mu, "t": inst.t, "travel": inst.world.travel.delta.tolist(),
               "vehicle": [inst.vehicle.id, inst.vehicle.start_time, inst.vehicle.start_region,
                           inst.vehicle.end_time, inst.vehicle.end_region],
               "requests": [r.to_record() for r in inst.requests],
               "first_fit": alg, "optimum": opt, "ratio": ratio}
        (out / "worstcase.json").write_text(json.dumps(doc, indent=1) + "\n")
    if opt != inst.optimal_value:
        raise OracleFailure(f"flow optimum {opt} differs from the construction's {inst.optimal_value}")
    return EXIT_OK


def cmd_ratio(args, cfg) -> int:
    model = _load_model(args, cfg)
    algorithms = _csv_list(_opt(args, cfg, "algorithms")) or ["first-fit", "best-score", "random-best-score"]
    res = harness.ratio_experiment(model, algorithms, int(_opt(args, cfg, "instances", 50)),
                                   int(_opt(args, cfg, "fleet", 3)), int(_opt(args, cfg, "replications", 50)),
                                   float(_opt(args, cfg, "kappa", 1.0 / 20.0)), int(_opt(args, cfg, "seed", 0)))
    out = _out_dir(args, cfg)
    with open(out / "ratio.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "instance", "ratio"])
        for name, r in res.items():
            for i, x in enumerate(r.per_instance):
                w.writerow([name, i, _num(x)])
    for name, r in res.items():
        print(f"{name}: ratio={_num(r.ratio)}")
    return EXIT_OK


def oracle_suite(instances: int = 100, seed: int = 0, tol: float = 1e-9) -> list:
    """Run the exact-oracle checks; returns a list of failure descriptions (empty on success)."""
    from .cst import compute_cst
    failures = []
    rng = np.random.default_rng(seed)
    for i in range(instances):
        inst = harness.random_tiny_instance(rng)
        table = compute_cst(inst.world, inst.model, inst.anchor)
        brute = harness.brute_force_values(inst.world, inst.model, inst.anchor)
        for (t, l), v in brute.items():
            if abs(table.lookup(t, l) - v) > tol:
                failures.append(f"value table instance {i} at ({t}, {l}): {table.lookup(t, l)} != {v}")
        if i < 20:
            start = (1, inst.anchor.origin)
            pv = harness.dpda_policy_value(inst.world, inst.model, inst.anchor, start)
            if abs(pv - table.lookup(*start)) > tol:
                failures.append(f"policy value instance {i}: {pv} != {table.lookup(*start)}")
    for i in range(instances):
        inst = harness.random_scheduled_instance(rng, n_requests=int(rng.integers(1, 9)),
                                                 n_vehicles=int(rng.integers(1, 3)))
        flow = offline_opt(inst.vehicles, inst.requests, inst.travel).value
        exact = harness.exhaustive_offline(inst.vehicles, inst.requests, inst.travel)
        if abs(flow - exact) > tol:
            failures.append(f"offline instance {i}: flow {flow} != exhaustive {exact}")
    for i in range(instances):
        failures += _matching_check(rng, i, tol)
    return failures


def _matching_check(rng, i, tol) -> list:
    import itertools
    rows, cols = int(rng.integers(1, 7)), int(rng.integers(1, 7))
    inst = BipartiteInstance(list(range(rows)), list(range(cols)))
    for a in range(rows):
        for b in range(cols):
            if rng.random() < 0.6:
                inst.add(a, b, float(np.round(rng.uniform(0, 10), 2)))
    best = 0.0
    for perm in itertools.permutations(range(cols), min(rows, cols)) if rows <= cols else \
            itertools.permutations(range(rows), cols):
        pairs = list(zip(range(rows), perm)) if rows <= cols else list(zip(perm, range(cols)))
        best = max(best, sum(inst.edges.get(p, 0.0) for p in pairs))
    got = greedy_km(inst).total
    return [] if abs(got - best) <= tol else [f"matching instance {i}: {got} != {best}"]


def cmd_oracle_check(args, cfg) -> int:
    n = int(_opt(args, cfg, "instances", 100))
    failures = oracle_suite(n, int(_opt(args, cfg, "seed", 0)))
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    if failures:
        raise OracleFailure(f"{len(failures)} oracle mismatches")
    print(f"oracle checks passed on {n} instances per suite")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "worstcase": cmd_worstcase,
    "ratio": cmd_ratio,
    "oracle-check": cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON file of option values; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="episodes run concurrently")
    common.add_argument("--out", help="output directory")

    parser = _Parser(prog="dispatchlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic trip CSV")
    p.add_argument("--days", type=int)
    p.add_argument("--trips-per-day", type=float)

    p = sub.add_parser("estimate", parents=[common], help="trip CSV to demand model")
    p.add_argument("--trips")
    p.add_argument("--k", type=int, help="number of regions")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--step-seconds", type=int)
    p.add_argument("--days", type=int, help="observed day count (default: distinct days in the data)")

    episode = argparse.ArgumentParser(add_help=False)
    episode.add_argument("--model", help="demand model JSON (default: built-in synthetic city)")
    episode.add_argument("--city-seed", type=int)
    episode.add_argument("--fleet", type=int)
    episode.add_argument("--kappa", type=float)
    episode.add_argument("--order", choices=harness.ORDER_POLICIES)
    episode.add_argument("--alpha", type=float)
    episode.add_argument("--beta", type=float)
    episode.add_argument("--gamma", type=float)
    episode.add_argument("--replications", type=int)

    p = sub.add_parser("simulate", parents=[common, episode], help="run two-stage episodes")
    p.add_argument("--stage1")
    p.add_argument("--stage2")
    p.add_argument("--trace", action="store_true", default=None, help="write decision and action logs")

    p = sub.add_parser("compare", parents=[common, episode], help="paired comparison of algorithm combinations")
    p.add_argument("--combos", help="comma-separated stage1+stage2 pairs")
    p.add_argument("--stage1", help="comma-separated stage-1 algorithms (crossed with --stage2)")
    p.add_argument("--stage2", help="comma-separated stage-2 algorithms")

    p = sub.add_parser("worstcase", parents=[common], help="first-fit on the worst-case instance")
    p.add_argument("--mu", type=int)
    p.add_argument("--t", type=int)

    p = sub.add_parser("ratio", parents=[common, episode], help="empirical competitive ratios")
    p.add_argument("--algorithms")
    p.add_argument("--instances", type=int)

    p = sub.add_parser("oracle-check", parents=[common], help="exact-oracle agreement suite")
    p.add_argument("--instances", type=int)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("DISPATCHLAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, harness.ConfigError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DemandError, WorldError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (harness.CommitmentViolation, OracleFailure) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
