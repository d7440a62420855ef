import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpcfgopt.optimizer import (Beam, Memoized, MockOracle, SearchItem, call_bound, coarse_grid, default_order,
                                divergence_report, read_assignment, refine_grid, search, separable_mock,
                                write_assignment, write_trace)


class TestGrids:
    def test_coarse(self):
        assert coarse_grid(24) == [1, 5, 10, 15, 20, 24]
        assert coarse_grid(4) == [1, 4]
        assert coarse_grid(1) == [1]
        assert coarse_grid(10) == [1, 5, 10]

    def test_refine(self):
        assert refine_grid(5, 30) == list(range(1, 10))
        assert refine_grid(2, 30) == list(range(1, 7))
        assert refine_grid(24, 24) == list(range(20, 25))

    def test_bad_args(self):
        with pytest.raises(ValueError):
            coarse_grid(0)
        with pytest.raises(ValueError):
            refine_grid(0, 5)

    @given(st.integers(1, 200))
    def test_coarse_shape(self, m):
        g = coarse_grid(m)
        assert g[0] == 1 and g[-1] == m and g == sorted(set(g))
        assert all(v % 5 == 0 for v in g[1:-1])


class TestBeam:
    def test_capacity_and_order(self):
        b = Beam(2)
        for s in (3.0, 9.0, 1.0, 5.0):
            b.push(SearchItem(s, 1, {"A": int(s)}, "coarse"))
            assert len(b) <= 2
        assert b.pop().s == 9.0 and b.pop().s == 5.0 and len(b) == 0

    def test_evicted_item_reported(self):
        b = Beam(1)
        assert b.push(SearchItem(5.0, 1, {"A": 1}, "coarse"))
        assert not b.push(SearchItem(2.0, 1, {"A": 2}, "coarse"))
        assert b.peek().f == {"A": 1}

    def test_ties_older_first(self):
        b = Beam()
        b.push(SearchItem(1.0, 1, {"A": 9}, "coarse"))
        b.push(SearchItem(1.0, 1, {"A": 2}, "coarse"))
        assert b.pop().f == {"A": 9}

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=40), st.integers(1, 6))
    def test_pop_is_max(self, scores, k):
        b = Beam(k)
        for i, s in enumerate(scores):
            b.push(SearchItem(s, 1, {"A": i}, "coarse"))
            assert len(b) <= k
        assert b.pop().s == max(scores)


def test_single_nonterminal_mock():
    o = MockOracle(lambda f: 100 - abs(f["A"] - 7))
    r = search(o, ["A"], {"A": 1}, None, 10)
    assert r.f == {"A": 7} and r.score == 100


@pytest.mark.parametrize("k", [None, 1, 2, 5])
def test_separable_mock(k):
    o = separable_mock({"A": 3, "B": 7})
    r = search(o, ["A", "B"], {"A": 1, "B": 1}, k, 10)
    assert r.f == {"A": 3, "B": 7}
    assert not r.fallback


def naive_search(score, L, f_init, m):
    """Independent transcription for an unbounded queue: a plain list scanned for
    the max score, ties to the earliest insertion then the smaller f."""
    seen = {}

    def ev(f):
        k = tuple(sorted(f.items()))
        if k not in seen:
            seen[k] = score(f)
        return seen[k]

    queue = [(ev(f_init), 0, 1, dict(f_init), "coarse")]
    age = 1
    M = len(L)
    while queue:
        best = min(queue, key=lambda q: (-q[0], q[1], sorted(q[3].items())))
        queue.remove(best)
        s, _, j, f, t = best
        if j == M + 1:
            return f
        a = L[j - 1]
        if t == "coarse":
            vals = sorted({1, m} | set(range(5, m + 1, 5)))
            nj, nt = j, "refine"
        else:
            vals = sorted({min(m, max(1, f[a] + d)) for d in range(-4, 5)})
            nj, nt = j + 1, "coarse"
        for v in vals:
            g = dict(f, **{a: v})
            queue.append((ev(g), age, nj, g, nt))
            age += 1
    return None


@given(st.integers(0, 2**31))
@settings(max_examples=40)
def test_matches_naive_simulation(seed):
    r = np.random.default_rng(seed)
    M, m = int(r.integers(1, 3)), int(r.integers(1, 9))
    L = [f"N{i}" for i in range(M)]
    table = {fs: float(r.integers(0, 30)) for fs in itertools.product(range(1, m + 1), repeat=M)}

    def score(f):
        return table[tuple(f[a] for a in L)]

    f0 = {a: int(r.integers(1, m + 1)) for a in L}
    assert search(MockOracle(score), L, f0, None, m).f == naive_search(score, L, f0, m)


def reachable(m):
    return sorted({v for c in coarse_grid(m) for v in refine_grid(c, m)})


@given(st.integers(0, 2**31))
@settings(max_examples=40)
def test_separable_reaches_best_reachable(seed):
    r = np.random.default_rng(seed)
    M, m = int(r.integers(1, 4)), int(r.integers(1, 14))
    L = [f"N{i}" for i in range(M)]
    t = {a: int(r.integers(1, m + 1)) for a in L}
    w = {a: float(r.uniform(0.1, 3.0)) for a in L}

    def score(f):
        return 100 - sum(w[a] * abs(f[a] - t[a]) for a in L)

    f0 = {a: int(r.integers(1, m + 1)) for a in L}
    res = search(MockOracle(score), L, f0, None, m)
    R = reachable(m)
    best = max(score(dict(zip(L, fs))) for fs in itertools.product(R, repeat=M))
    assert res.score == pytest.approx(best)
    assert all(res.f[a] in R for a in L)


@given(st.integers(0, 2**31), st.integers(1, 4))
@settings(max_examples=40)
def test_memo_bound_and_monotone(seed, k):
    r = np.random.default_rng(seed)
    M, m = int(r.integers(1, 4)), int(r.integers(1, 12))
    L = [f"N{i}" for i in range(M)]
    table = {}

    def score(f):
        key = tuple(f[a] for a in L)
        if key not in table:
            table[key] = float(r.integers(0, 100))
        return table[key]

    o = MockOracle(score)
    f0 = {a: 1 for a in L}
    res = search(o, L, f0, k, m)
    keys = [tuple(sorted(row.f.items())) for row in res.trace]
    assert len(keys) == len(set(keys)) == o.calls
    assert o.calls <= call_bound(k, M, m)
    assert res.score >= res.initial_score
    assert res.score == max(row.f1 for row in res.trace if row.f == res.f)


def test_oracle_failure_skipped(caplog):
    def score(f):
        if f["A"] == 5:
            raise RuntimeError("training diverged")
        return 100 - abs(f["A"] - 6)

    res = search(MockOracle(score), ["A"], {"A": 1}, None, 10)
    assert {"A": 5} in res.failures
    assert all(row.f != {"A": 5} for row in res.trace)
    assert res.f == {"A": 6}
    assert "training diverged" in caplog.text


def test_initial_failure_raises():
    with pytest.raises(RuntimeError):
        search(MockOracle(lambda f: 1 / 0), ["A"], {"A": 1}, None, 3)


def test_bad_inputs():
    o = separable_mock({"A": 1})
    with pytest.raises(ValueError):
        search(o, [], {"A": 1}, 1, 3)
    with pytest.raises(ValueError):
        search(o, ["A", "B"], {"A": 1}, 1, 3)


def test_memoized_wrapper():
    inner = MockOracle(lambda f: f["A"])
    o = Memoized(inner)
    assert o({"A": 2}) == o({"A": 2}) == 2 and inner.calls == 1


def test_parallel_evaluation_identical():
    o = separable_mock({"A": 3, "B": 7, "C": 2})
    a = search(o, ["A", "B", "C"], {"A": 1, "B": 1, "C": 1}, 2, 10)
    b = search(o, ["A", "B", "C"], {"A": 1, "B": 1, "C": 1}, 2, 10, workers=4)
    assert a.f == b.f and [(r.f, r.f1) for r in a.trace] == [(r.f, r.f1) for r in b.trace]


def test_infinite_k_accepted():
    r = search(separable_mock({"A": 3}), ["A"], {"A": 1}, math.inf, 5)
    assert r.f == {"A": 3}


def test_default_order():
    assert default_order({"A": 3, "B": 10, "C": 3}) == ["B", "A", "C"]


class TestDivergence:
    def test_toy(self):
        rep = divergence_report({"A": 2, "B": 5}, {"A": 4, "B": 4}, {"A": "pre", "B": "pre"})
        p = rep.partition("all")
        assert (p.before, p.after, p.divergence, p.count) == (7, 8, 3, 2)

    def test_identity_zero(self):
        f = {"A": 2, "B": 5, "X": 3}
        rep = divergence_report(f, f, {"A": "preterminals", "B": "preterminals", "X": "interminals"})
        assert all(p.divergence == 0 for p in rep.partitions)
        assert {p.name for p in rep.partitions} == {"preterminals", "interminals", "all"}

    def test_table_schema(self):
        rep = divergence_report({"A": 2, "B": 5}, {"A": 4, "B": 4}, {}, {"A": 1, "B": 9})
        lines = rep.text().splitlines()
        i = lines.index("nonterminal\tfreq.\tb.\ta.")
        assert lines[i + 1:] == ["B\t9\t5\t4", "A\t1\t2\t4"]

    def test_domain_mismatch(self):
        with pytest.raises(ValueError):
            divergence_report({"A": 1}, {"B": 1}, {})


def test_assignment_io(tmp_path):
    f = {"NP": 8, "VP": 16}
    write_assignment(tmp_path / "f.tsv", f)
    assert read_assignment(tmp_path / "f.tsv") == f
    (tmp_path / "bad.tsv").write_text("NP\tx\n")
    with pytest.raises(ValueError, match=":1:"):
        read_assignment(tmp_path / "bad.tsv")


def test_trace_io(tmp_path):
    res = search(separable_mock({"A": 2}), ["A"], {"A": 1}, 1, 4)
    write_trace(tmp_path / "t.tsv", res.trace)
    rows = (tmp_path / "t.tsv").read_text().splitlines()
    assert rows[0].split("\t") == ["eval", "j", "phase", "nonterminal", "m0", "f1"]
    assert len(rows) == 1 + res.evaluations
