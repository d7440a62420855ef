"""Beam search over per-nonterminal latent-state counts.

Each nonterminal in the search order is tuned in two phases: a coarse
sweep over ``{1, 5, 10, ..., m}`` and a refinement over offsets ``-4..4``
around the value chosen by the coarse sweep.  Items on the beam are
``(score, j, f, phase)`` tuples ordered by development F1.
"""
from __future__ import annotations

import bisect
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .presets import COARSE_STEP, REFINE_OFFSETS

log = logging.getLogger(__name__)

COARSE, REFINE = "coarse", "refine"


def coarse_grid(m: int) -> list[int]:
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return sorted({1, m, *range(COARSE_STEP, m + 1, COARSE_STEP)})


def refine_grid(current: int, m: int) -> list[int]:
    if current < 1 or m < 1:
        raise ValueError(f"current and m must be >= 1, got {current}, {m}")
    return sorted({min(m, max(1, current + d)) for d in REFINE_OFFSETS})


def _key(f: Mapping[str, int]) -> tuple[tuple[str, int], ...]:
    return tuple(sorted((a, int(v)) for a, v in f.items()))


@dataclass
class SearchItem:
    s: float
    j: int
    f: dict[str, int]
    t: str
    age: int = 0

    def order(self):
        # best first: higher score, then older, then lexicographic f
        return (-self.s, self.age, _key(self.f))


class Beam:
    """Bounded priority queue; ``capacity=None`` means unbounded."""

    def __init__(self, capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError("beam capacity must be >= 1")
        self.capacity = capacity
        self._items: list[tuple[tuple, SearchItem]] = []
        self._age = itertools.count()
        self.evicted = 0

    def __len__(self):
        return len(self._items)

    def push(self, item: SearchItem) -> bool:
        """Insert; returns False when the item itself was evicted."""
        item.age = next(self._age)
        entry = (item.order(), item)
        bisect.insort(self._items, entry, key=lambda e: e[0])
        if self.capacity is not None and len(self._items) > self.capacity:
            _, worst = self._items.pop()
            self.evicted += 1
            return worst is not item
        return True

    def pop(self) -> SearchItem:
        return self._items.pop(0)[1]

    def peek(self) -> SearchItem:
        return self._items[0][1]


# -- oracles ----------------------------------------------------------------

class Oracle:
    """Maps a state assignment to a development F1."""

    def __call__(self, f: Mapping[str, int]) -> float:
        raise NotImplementedError


class MockOracle(Oracle):
    """Oracle backed by a plain function, for tests and dry runs."""

    def __init__(self, fn: Callable[[Mapping[str, int]], float]):
        self.fn = fn
        self.calls = 0

    def __call__(self, f):
        self.calls += 1
        return float(self.fn(f))


def separable_mock(targets: Mapping[str, int], top: float = 100.0) -> MockOracle:
    """``top - sum_a |f(a) - target(a)|``."""
    return MockOracle(lambda f: top - sum(abs(int(f[a]) - t) for a, t in targets.items()))


class Memoized(Oracle):
    def __init__(self, inner: Callable[[Mapping[str, int]], float]):
        self.inner = inner
        self.cache: dict[tuple, float] = {}

    def __call__(self, f):
        k = _key(f)
        if k not in self.cache:
            self.cache[k] = float(self.inner(f))
        return self.cache[k]


class PipelineOracle(Oracle):
    """Train with ``f``, parse the development sentences, score against gold."""

    def __init__(self, trainer, dev_gold, sentences=None, base=None, params=None, seed: int = 0,
                 threshold: float | None = None, workers: int = 1):
        from .grammar import mle_pcfg
        from .parseval import EvalParams
        from .parser import DEFAULT_THRESHOLD, tagged_from_tree
        from .treebank import debinarize

        self.trainer = trainer
        self.gold = [debinarize(t) for t in dev_gold]
        self.sentences = sentences if sentences is not None else [tagged_from_tree(t) for t in dev_gold]
        self.base = base if base is not None else mle_pcfg(trainer.trees)
        self.params = params or EvalParams()
        self.seed = seed
        self.threshold = DEFAULT_THRESHOLD if threshold is None else threshold
        self.workers = workers

    def __call__(self, f):
        from .parser import parse_corpus
        from .parseval import score_corpus

        g = self.trainer.train(f, self.seed)
        pred, _ = parse_corpus(g, self.base, self.sentences, self.threshold, self.workers)
        return score_corpus(self.gold, pred, self.params).f1


# -- search -------------------------------------------------------------------

@dataclass
class TraceRow:
    index: int
    j: int
    phase: str
    nonterminal: str
    m0: int
    f1: float
    f: dict[str, int]


@dataclass
class SearchResult:
    f: dict[str, int]
    score: float
    initial_score: float
    trace: list[TraceRow] = field(default_factory=list)
    failures: list[dict[str, int]] = field(default_factory=list)
    fallback: bool = False
    evaluations: int = 0


def default_order(freqs: Mapping[str, int], labels: Iterable[str] | None = None) -> list[str]:
    """Nonterminals by descending training frequency, ties by label."""
    labels = list(freqs) if labels is None else list(labels)
    return sorted(labels, key=lambda a: (-freqs.get(a, 0), a))


def search(oracle: Callable[[Mapping[str, int]], float], L: Sequence[str], f_init: Mapping[str, int],
           k: int | None, m: int, workers: int = 1) -> SearchResult:
    """Run the coarse/refine beam search and return the chosen assignment.

    ``k=None`` gives an unbounded beam.  Candidates spawned by one dequeued
    item may be scored by ``workers`` threads; they are always enqueued in
    ascending ``m0`` order so the result does not depend on ``workers``.
    """
    L = list(L)
    if not L:
        raise ValueError("nonterminal list is empty")
    if m < 1:
        raise ValueError("m must be >= 1")
    missing = [a for a in L if a not in f_init]
    if missing:
        raise ValueError(f"f_init lacks nonterminals {missing}")
    if k is not None and (isinstance(k, float) and math.isinf(k)):
        k = None
    M = len(L)
    cache: dict[tuple, float | None] = {}
    trace: list[TraceRow] = []
    failures: list[dict[str, int]] = []
    best: list = [None, -math.inf]

    def evaluate(batch: list[tuple[int, str, str, int, dict[str, int]]]) -> list[float | None]:
        todo = []
        for _, _, _, _, f in batch:
            kf = _key(f)
            if kf not in cache and kf not in {_key(x) for x in todo}:
                todo.append(f)
        if workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(workers) as ex:
                futs = [ex.submit(oracle, f) for f in todo]
                scores = []
                for fut in futs:
                    try:
                        scores.append(fut.result())
                    except Exception as exc:  # noqa: BLE001
                        log.warning("oracle failed: %s", exc)
                        scores.append(None)
        else:
            scores = []
            for f in todo:
                try:
                    scores.append(oracle(f))
                except Exception as exc:  # noqa: BLE001
                    log.warning("oracle failed for %s: %s", dict(f), exc)
                    scores.append(None)
        for f, s in zip(todo, scores):
            cache[_key(f)] = None if s is None else float(s)
        out = []
        fresh = {_key(f) for f in todo}
        for j, phase, a, m0, f in batch:
            kf = _key(f)
            s = cache[kf]
            if kf in fresh:
                fresh.discard(kf)
                if s is None:
                    failures.append(dict(f))
                else:
                    trace.append(TraceRow(len(trace), j, phase, a, m0, s, dict(f)))
                    if s > best[1] or (s == best[1] and kf < _key(best[0])):
                        best[0], best[1] = dict(f), s
            out.append(s)
        return out

    f0 = {a: int(v) for a, v in f_init.items()}
    (s0,) = evaluate([(0, "init", "", 0, f0)])
    if s0 is None:
        raise RuntimeError("oracle failed on the initial assignment")
    beam = Beam(k)
    beam.push(SearchItem(s0, 1, f0, COARSE))
    while len(beam):
        item = beam.pop()
        if item.j == M + 1:
            return SearchResult(item.f, item.s, s0, trace, failures, False, len(trace))
        a = L[item.j - 1]
        if item.t == COARSE:
            grid, nj, nt = coarse_grid(m), item.j, REFINE
        else:
            grid, nj, nt = refine_grid(item.f[a], m), item.j + 1, COARSE
        cands = [dict(item.f, **{a: m0}) for m0 in grid]
        scores = evaluate([(item.j, item.t, a, m0, c) for m0, c in zip(grid, cands)])
        for c, s in zip(cands, scores):
            if s is not None:
                beam.push(SearchItem(s, nj, c, nt))
    log.warning("beam emptied before a complete item was dequeued; returning best evaluated assignment")
    return SearchResult(best[0], best[1], s0, trace, failures, True, len(trace))


def call_bound(k: int, M: int, m: int) -> int:
    return 1 + k * M * (len(coarse_grid(m)) + len(REFINE_OFFSETS))


# -- reporting and I/O -----------------------------------------------------------

@dataclass
class PartitionRow:
    name: str
    before: int
    after: int
    divergence: int
    count: int


@dataclass
class DivergenceReport:
    partitions: list[PartitionRow]
    rows: list[tuple[str, int, int, int]]  # nonterminal, freq, before, after

    def partition(self, name: str) -> PartitionRow:
        return next(p for p in self.partitions if p.name == name)

    def text(self) -> str:
        out = ["partition\tsum_before\tsum_after\tdiv.\t#nts"]
        for p in self.partitions:
            out.append(f"{p.name}\t{p.before}\t{p.after}\t{p.divergence}\t{p.count}")
        out += ["", "nonterminal\tfreq.\tb.\ta."]
        out += [f"{a}\t{fr}\t{b}\t{y}" for a, fr, b, y in self.rows]
        return "\n".join(out) + "\n"


def divergence_report(f_before: Mapping[str, int], f_after: Mapping[str, int],
                      partition: Mapping[str, str], freqs: Mapping[str, int] | None = None) -> DivergenceReport:
    """Sums and L1 divergence of two assignments per partition.

    ``partition`` maps each nonterminal to a group name (e.g. preterminal /
    interminal); an ``all`` group is always added.
    """
    if set(f_before) != set(f_after):
        raise ValueError("assignments have different domains")
    groups: dict[str, list[str]] = {}
    for a in sorted(f_before):
        groups.setdefault(partition.get(a, "other"), []).append(a)
    parts = []
    for name in sorted(groups) + ["all"]:
        mem = sorted(f_before) if name == "all" else groups[name]
        x = [int(f_before[a]) for a in mem]
        y = [int(f_after[a]) for a in mem]
        parts.append(PartitionRow(name, sum(x), sum(y), sum(abs(p - q) for p, q in zip(x, y)), len(mem)))
    freqs = freqs or {}
    rows = [(a, int(freqs.get(a, 0)), int(f_before[a]), int(f_after[a]))
            for a in default_order(freqs, f_before)]
    return DivergenceReport(parts, rows)


def write_assignment(path, f: Mapping[str, int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in sorted(f):
            fh.write(f"{a}\t{int(f[a])}\n")


def read_assignment(path) -> dict[str, int]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{n}: expected 'nonterminal<TAB>count'")
            try:
                v = int(parts[1])
            except ValueError:
                raise ValueError(f"{path}:{n}: state count {parts[1]!r} is not an integer") from None
            if v < 1:
                raise ValueError(f"{path}:{n}: state count must be >= 1")
            out[parts[0]] = v
    return out


def write_trace(path, trace: Sequence[TraceRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("eval\tj\tphase\tnonterminal\tm0\tf1\n")
        for r in trace:
            fh.write(f"{r.index}\t{r.j}\t{r.phase}\t{r.nonterminal}\t{r.m0}\t{r.f1:.6f}\n")
