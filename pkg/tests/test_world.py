import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dispatchlab.world import (Action, ActionKind, AnchorInfeasible, NegativeEntry, NonSquare,
                               NonZeroDiagonal, Request, RequestKind, ScheduleBook, TravelTimeMatrix,
                               Vehicle, WorldError, available_requests, build_travel_matrix, chainable,
                               find_insert_slot, load_books, reachable_destinations, save_books,
                               wait_admissible)

from oracles import floyd_warshall


def line3():
    return build_travel_matrix([[0, 1, 2], [1, 0, 1], [2, 1, 0]])


class TestTravelMatrix:
    def test_single_region(self):
        assert build_travel_matrix([[0]]).delta.tolist() == [[0]]

    def test_already_metric_is_unchanged(self):
        assert build_travel_matrix([[0, 1], [1, 0]]).delta.tolist() == [[0, 1], [1, 0]]

    def test_closure_shortens_long_hop(self):
        m = build_travel_matrix([[0, 1, 5], [1, 0, 1], [5, 1, 0]])
        assert m.delta.tolist() == [[0, 1, 2], [1, 0, 1], [2, 1, 0]]
        assert m.delta.tolist() == floyd_warshall([[0, 1, 5], [1, 0, 1], [5, 1, 0]])

    @pytest.mark.parametrize("raw, err", [
        ([[0, 1]], NonSquare),
        ([[0, -1], [1, 0]], NegativeEntry),
        ([[1, 1], [1, 0]], NonZeroDiagonal),
    ])
    def test_rejects_bad_tables(self, raw, err):
        with pytest.raises(err):
            build_travel_matrix(raw)

    def test_rejects_infinite(self):
        with pytest.raises(WorldError):
            build_travel_matrix([[0, np.inf], [1, 0]])

    def test_text_round_trip(self, tmp_path):
        m = line3()
        m.save(tmp_path / "t.txt")
        assert TravelTimeMatrix.load(tmp_path / "t.txt") == m

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 6).flatmap(
        lambda n: st.lists(st.lists(st.integers(0, 20), min_size=n, max_size=n), min_size=n, max_size=n)))
    def test_closure_is_metric_and_matches_oracle(self, raw):
        n = len(raw)
        for i in range(n):
            raw[i][i] = 0
        m = build_travel_matrix(raw)
        d = m.delta
        for u in range(n):
            for v in range(n):
                for w in range(n):
                    assert d[u, v] <= d[u, w] + d[w, v]
        assert d.tolist() == floyd_warshall(raw)
        assert build_travel_matrix(d) == m


class TestReachable:
    def test_line_graph(self):
        anchor = Request(0, 2, 2, 5, 0.0)
        assert reachable_destinations(3, 0, anchor, line3()) == {1, 2}

    def test_no_time_left(self):
        anchor = Request(0, 2, 2, 5, 0.0)
        assert reachable_destinations(5, 2, anchor, line3()) == frozenset()

    def test_two_regions(self):
        tm = build_travel_matrix([[0, 1], [1, 0]])
        assert reachable_destinations(1, 0, Request(0, 1, 1, 6, 0.0), tm) == {1}

    def test_infeasible_anchor(self):
        with pytest.raises(AnchorInfeasible):
            reachable_destinations(4, 0, Request(0, 2, 2, 5, 0.0), line3())

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_soundness_against_definition(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        raw = rng.integers(1, 5, size=(n, n))
        np.fill_diagonal(raw, 0)
        tm = build_travel_matrix(raw)
        ao = int(rng.integers(n))
        at = int(rng.integers(1, 15))
        t = int(rng.integers(1, at + 1))
        l = int(rng.integers(n))
        anchor = Request(0, ao, ao, at, 0.0)
        if tm(l, ao) > at - t:
            with pytest.raises(AnchorInfeasible):
                reachable_destinations(t, l, anchor, tm)
            return
        got = reachable_destinations(t, l, anchor, tm)
        for d in range(n):
            ok = d != l and tm(l, d) + tm(d, ao) <= at - t
            assert (d in got) == ok
        assert wait_admissible(t, l, anchor, tm) == (tm(l, ao) <= at - t - 1)


class TestScheduleBook:
    def setup_method(self):
        self.tm = line3()
        self.v = Vehicle(7, 1, 0, 20, 0)

    def test_empty_book_slot(self):
        book = ScheduleBook(self.v)
        r = Request(1, 0, 2, 5, 2.0)
        slot = find_insert_slot(book, r, self.tm)
        assert slot[0].kind is RequestKind.VIRTUAL_START
        assert slot[1] == self.v.virtual_end()

    def test_too_early(self):
        v = Vehicle(1, 5, 0, 20, 0)
        assert find_insert_slot(ScheduleBook(v), Request(1, 0, 2, 3, 2.0), self.tm) is None

    def test_slot_after_existing_commitment(self):
        book = ScheduleBook(self.v)
        first = Request(1, 0, 2, 3, 2.0)
        book.insert(first, find_insert_slot(book, first, self.tm))
        r = Request(2, 2, 1, 6, 1.0)
        # oracle: check each consecutive pair against both chain inequalities
        fits = [(a, b) for a, b in book.pairs() if chainable(a, r, self.tm) and chainable(r, b, self.tm)]
        assert fits == [(first, self.v.virtual_end())]
        assert find_insert_slot(book, r, self.tm) == fits[0]

    def test_virtual_end_blocks_late_request(self):
        v = Vehicle(1, 1, 0, 8, 0)
        assert find_insert_slot(ScheduleBook(v), Request(1, 0, 2, 6, 2.0), self.tm) is None

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_insertions_keep_chain_invariant(self, seed):
        rng = np.random.default_rng(seed)
        book = ScheduleBook(Vehicle(0, 1, 0, 40, 1))
        for i in range(15):
            o, d = rng.choice(3, size=2, replace=False)
            r = Request(i, int(o), int(d), int(rng.integers(1, 40)), 1.0)
            slot = find_insert_slot(book, r, self.tm)
            if slot is not None:
                book.insert(r, slot)
            assert book.is_valid(self.tm)
        starts = [r.start for r in book.commitments]
        assert starts == sorted(starts)

    def test_json_round_trip(self, tmp_path):
        book = ScheduleBook(self.v)
        r = Request(1, 0, 2, 5, 2.5)
        book.insert(r, find_insert_slot(book, r, self.tm))
        save_books([book], tmp_path / "b.json")
        (back,) = load_books(tmp_path / "b.json")
        assert back.commitments == book.commitments and back.vehicle == book.vehicle
        json.loads((tmp_path / "b.json").read_text())


class TestActions:
    def test_landings(self):
        tm = line3()
        r = Request(3, 0, 2, 4, 2.0, RequestKind.ON_DEMAND)
        assert Action.serve(r).landing(4, 0, tm) == (6, 2)
        assert Action.wait(0).landing(4, 0, tm) == (5, 0)
        assert Action.relocate(1).landing(4, 0, tm) == (5, 1)
        assert Action.serve(r).value == 2.0 and Action.wait(0).value == 0.0
        assert Action.serve_scheduled(r).kind is ActionKind.SERVE_SCHEDULED

    def test_available_requests_filters_by_anchor(self):
        tm = line3()
        anchor = Request(0, 0, 0, 6, 0.0)
        pool = [Request(5, 0, 2, 2, 1.0), Request(4, 0, 1, 2, 1.0), Request(6, 1, 2, 2, 1.0),
                Request(7, 0, 2, 3, 1.0)]
        # the round trip to region 2 uses exactly the 4 remaining steps
        assert [r.id for r in available_requests(2, 0, anchor, pool, tm)] == [4, 5]
        assert [r.id for r in available_requests(3, 0, anchor, pool, tm)] == []

    def test_vehicle_check(self):
        with pytest.raises(WorldError):
            Vehicle(0, 5, 0, 3, 0).check(line3())
        with pytest.raises(WorldError):
            Vehicle(0, 1, 0, 2, 2).check(line3())
