import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dispatchlab.cst import CstCache, compute_cst, serve_probabilities
from dispatchlab.demand import DemandModel
from dispatchlab.harness import random_tiny_instance
from dispatchlab.stage2 import (ACTION_TRACE_COLUMNS, AnchorUnreachable, FleetMember, InvalidProbability,
                                MissingLedgerEntry, OrderPolicy, RequestPool, VirtualDemand, action_rows,
                                dpda, dpda_su, order_vehicles, shift_ccdf, update_prob_dist,
                                write_action_trace)
from dispatchlab.world import (ActionKind, DispatchState, Request, RequestKind, RequestType, Vehicle, World,
                               available_requests, build_travel_matrix)

from oracles import eq1_shift, reference_serve_probabilities, reference_values
from test_cst import as_reference, corridor, three_region

A, B = 0, 1


def on_demand(rid, w, value):
    return Request(rid, w.origin, w.destination, w.start, value, RequestKind.ON_DEMAND)


class TestShift:
    def test_worked_case(self):
        assert shift_ccdf([0.8, 0.3], 0.5) == [0.55, 0.15]

    def test_identity_and_full_shift(self):
        assert shift_ccdf([0.8, 0.3, 0.1], 0.0) == [0.8, 0.3, 0.1]
        assert shift_ccdf([0.8, 0.3, 0.1], 1.0) == [0.3, 0.1]

    def test_rejects_bad_probability(self):
        with pytest.raises(InvalidProbability):
            shift_ccdf([0.5], 1.5)

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=6), st.floats(0, 1))
    def test_stays_a_ccdf_and_matches_oracle(self, raw, p):
        ccdf = sorted(raw, reverse=True)
        out = shift_ccdf(ccdf, p)
        want = eq1_shift(ccdf, p)
        assert out == want[:len(out)] and all(x == 0.0 for x in want[len(out):])
        assert all(0.0 <= x <= 1.0 for x in out)
        assert all(a >= b for a, b in zip(out, out[1:]))
        # expected count drops by exactly p * Pr[X >= 1]
        assert sum(out) == pytest.approx(sum(ccdf) - p * ccdf[0], abs=1e-12)


class TestVirtualDemand:
    def test_apply_matches_oracle_row_by_row(self):
        world, model, anchor, travel, _ = three_region()
        h = VirtualDemand.from_model(model)
        probs = serve_probabilities(compute_cst(world, model, anchor), (1, 0))
        before = {w: model.ccdf[w] for w in model.types()}
        h2 = update_prob_dist(h, probs)
        for w, ccdf in before.items():
            want = eq1_shift(ccdf, probs.get(w))
            got = list(h2.ccdf(w)) + [0.0] * (len(want) - len(h2.ccdf(w)))
            assert got == pytest.approx(want, abs=1e-15)
            assert h.ccdf(w) == ccdf
        assert h2.view.key != h.view.key

    def test_rejects_out_of_range(self):
        world, model, anchor, _, _ = three_region()
        probs = serve_probabilities(compute_cst(world, model, anchor), (1, 0))
        probs.probs = probs.probs * 2
        with pytest.raises(InvalidProbability):
            VirtualDemand.from_model(model).apply(probs)

    def test_base_view_untouched(self):
        world, model, anchor, _, _ = three_region()
        h = VirtualDemand.from_model(model)
        h.apply(serve_probabilities(compute_cst(world, model, anchor), (1, 0)))
        assert model.view().H[:, 0].tolist() == [model.ccdf[w][0] for w in model.types()]


class TestDpda:
    def test_forced_scheduled_service(self):
        world, model, anchor, _ = corridor()
        a = dpda(DispatchState(3, B, ()), anchor, model, world)
        assert a.kind is ActionKind.SERVE_SCHEDULED and a.request == anchor

    def test_corridor_serves(self):
        world, model, anchor, w1 = corridor()
        r = on_demand(5, w1, 5.0)
        a = dpda(DispatchState(1, A, (r,)), anchor, model, world)
        assert a.kind is ActionKind.SERVE and a.request == r

    def test_zero_demand_prefers_wait_then_lowest_relocation(self):
        travel = build_travel_matrix([[0, 1, 1], [1, 0, 1], [1, 1, 0]])
        world = World(travel, 5)
        empty = DemandModel(travel, 5, {}, {})
        anchor = Request(0, 0, 0, 5, 0.0)
        assert dpda(DispatchState(1, 0, ()), anchor, empty, world).kind is ActionKind.WAIT
        # from region 2 with one step left, waiting would strand the vehicle
        a = dpda(DispatchState(4, 2, ()), anchor, empty, world)
        assert a.kind is ActionKind.RELOCATE and a.target == 0
        a = dpda(DispatchState(1, 2, ()), anchor, empty, world)
        assert a.kind is ActionKind.WAIT

    def test_unreachable(self):
        world, model, anchor, _ = corridor()
        with pytest.raises(AnchorUnreachable):
            dpda(DispatchState(3, A, ()), anchor, model, world)

    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_choice_maximizes_oracle_continuation(self, seed):
        rng = np.random.default_rng(seed)
        inst = random_tiny_instance(rng, max_regions=4, max_span=8, max_types=6)
        delta, types = as_reference(inst.model)
        value, _ = reference_values(delta, types, inst.anchor.origin, inst.anchor.start)
        table = compute_cst(inst.world, inst.model, inst.anchor)
        ao, at = inst.anchor.origin, inst.anchor.start
        n = inst.world.n_regions
        for w in inst.model.types():
            if delta[w.origin][ao] > at - w.start:
                continue
            t, l = w.start, w.origin
            reqs = available_requests(t, l, inst.anchor, [on_demand(1, w, inst.model.values[w])], inst.world.travel)
            a = dpda(DispatchState(t, l, reqs), inst.anchor, table=table)
            options = [r.value + value(t + delta[l][r.destination], r.destination) for r in reqs]
            if delta[l][ao] <= at - t - 1:
                options.append(value(t + 1, l))
            options += [value(t + delta[l][d], d) for d in range(n)
                        if d != l and delta[l][d] + delta[d][ao] <= at - t]
            nt, nl = a.landing(t, l, inst.world.travel)
            assert a.value + value(nt, nl) == pytest.approx(max(options), abs=1e-9)


class TestServeProbabilitySimulation:
    def test_policy_simulation_matches_forward_pass(self):
        # follow dpda on sampled days; p_w is the served fraction among days where w appears
        world, model, anchor, travel, spec = three_region()
        table = compute_cst(world, model, anchor)
        want = serve_probabilities(table, (1, 0))
        rng = np.random.default_rng(11)
        types = model.types()
        present = {w: 0 for w in types}
        served = {w: 0 for w in types}
        days = 20000
        for _ in range(days):
            realized = {w: on_demand(k, w, model.values[w]) for k, w in enumerate(types)
                        if rng.random() < model.ccdf[w][0]}
            for w in realized:
                present[w] += 1
            t, l = 1, 0
            while (t, l) != (anchor.start, anchor.origin):
                pool = [r for r in realized.values() if r.start == t and r.origin == l]
                a = dpda(DispatchState(t, l, available_requests(t, l, anchor, pool, travel)), anchor, table=table)
                if a.kind is ActionKind.SERVE:
                    served[a.request.type] += 1
                t, l = a.landing(t, l, travel)
        for w in types:
            p = want.get(w)
            freq = served[w] / present[w]
            se = max(np.sqrt(p * (1 - p) / present[w]), 1e-9)
            assert abs(freq - p) <= 4 * se, (w, freq, p)


class TestOrdering:
    def test_initial(self):
        assert order_vehicles([3, 1, 2], OrderPolicy.initial()) == [3, 1, 2]

    def test_reverse_by_earnings(self):
        assert order_vehicles(["a", "b"], OrderPolicy.reverse(), {"a": 5, "b": 2}) == ["b", "a"]
        with pytest.raises(MissingLedgerEntry):
            order_vehicles(["a", "b"], OrderPolicy.reverse(), {"a": 5})

    def test_random_reproducible(self):
        ids = list(range(20))
        assert order_vehicles(ids, OrderPolicy.random(4)) == order_vehicles(ids, OrderPolicy.random(4))
        assert sorted(order_vehicles(ids, OrderPolicy.random(4))) == ids


def member(vid, t, l, anchor):
    return FleetMember(Vehicle(vid, 1, l, anchor.start, anchor.origin), DispatchState(t, l), anchor)


class TestDpdaSu:
    def test_single_vehicle_matches_dpda(self):
        world, model, anchor, w1 = corridor()
        r = on_demand(5, w1, 5.0)
        acts = dpda_su([member(0, 1, A, anchor)], model, OrderPolicy.initial(), [r], world)
        assert acts[0] == dpda(DispatchState(1, A, (r,)), anchor, model, world)

    def test_pool_exclusivity(self):
        world, model, anchor, w1 = corridor()
        r = on_demand(5, w1, 5.0)
        pool = RequestPool([r])
        acts = dpda_su([member(0, 1, A, anchor), member(1, 1, A, anchor)], model, OrderPolicy.initial(), pool, world)
        assert acts[0].kind is ActionKind.SERVE
        assert acts[1].kind is not ActionKind.SERVE
        assert len(pool) == 0

    def test_order_decides_who_serves(self):
        world, model, anchor, w1 = corridor()
        r = on_demand(5, w1, 5.0)
        acts = dpda_su([member(0, 1, A, anchor), member(1, 1, A, anchor)], model, OrderPolicy.reverse(), [r],
                       world, earnings={0: 10.0, 1: 0.0})
        assert acts[1].kind is ActionKind.SERVE and acts[0].kind is not ActionKind.SERVE

    def test_second_vehicle_sees_updated_demand(self):
        world, model, anchor, travel, _ = three_region()
        seen = []
        fleet = [member(0, 1, 0, anchor), member(1, 1, 0, anchor)]
        acts = dpda_su(fleet, model, OrderPolicy.initial(), [], world,
                       observer=lambda m, table, view: seen.append((m.id, view.H.copy(), table)))
        assert [s[0] for s in seen] == [0, 1]
        # independent recomputation: reference serve probabilities from the first vehicle's landing
        delta, types = as_reference(model)
        landing = acts[0].landing(1, 0, travel)
        probs = reference_serve_probabilities(delta, types, anchor.origin, anchor.start, landing)
        for k, w in enumerate(model.types()):
            want = eq1_shift(model.ccdf[w], probs.get((w.origin, w.destination, w.start), 0.0))
            assert seen[1][1][k, :len(want)].tolist() == pytest.approx(want, abs=1e-12)
        # the second table is the value recursion on the updated first column
        updated = {wk: (seen[1][1][k, 0], types[wk][1]) for k, wk in
                   enumerate((w.origin, w.destination, w.start) for w in model.types())}
        value, _ = reference_values(delta, updated, anchor.origin, anchor.start)
        assert seen[1][2].lookup(1, 0) == pytest.approx(value(1, 0), abs=1e-12)
        assert seen[1][2].lookup(1, 0) < seen[0][2].lookup(1, 0)

    def test_scheduled_service_does_not_consume_demand(self):
        world, model, anchor, travel, _ = three_region()
        seen = []
        fleet = [member(0, 7, 0, anchor), member(1, 1, 0, anchor)]
        dpda_su(fleet, model, OrderPolicy.initial(), [], world,
                observer=lambda m, table, view: seen.append(view.H.copy()))
        assert len(seen) == 1 and np.array_equal(seen[0], model.view().H)

    def test_cache_reuse_gives_identical_actions(self):
        world, model, anchor, _, _ = three_region()
        cache = CstCache(world, model)
        fleet = [member(i, 1, i % 3, anchor) for i in range(3)]
        a = dpda_su(fleet, model, OrderPolicy.initial(), [], world, cache=cache)
        b = dpda_su(fleet, model, OrderPolicy.initial(), [], world)
        assert a == b

    def test_action_trace(self, tmp_path):
        world, model, anchor, w1 = corridor()
        acts = dpda_su([member(0, 1, A, anchor)], model, OrderPolicy.initial(), [on_demand(5, w1, 5.0)], world)
        rows = action_rows(1, acts)
        assert rows == [[1, 0, "serve", B, 5, "5.0"]]
        write_action_trace(tmp_path / "a.csv", rows)
        assert (tmp_path / "a.csv").read_text().splitlines()[0] == ",".join(ACTION_TRACE_COLUMNS)
