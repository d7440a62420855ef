"""Sentence- and corpus-level parsing with fail-soft fallbacks."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from ..grammar import Lpcfg, Pcfg
from ..treebank import CONT_PREFIX, UNARY_SEP, Tree, debinarize
from .chart import (DEFAULT_THRESHOLD, Token, TaggedSentence, _as_lpcfg, decode_max_rule, inside_outside,
                    prune_mask, relax_tags)

log = logging.getLogger(__name__)


@dataclass
class CoverageReport:
    parsed: int = 0
    relaxed: int = 0
    fallback: int = 0
    unpruned_retries: int = 0
    fallback_sentences: list[int] = field(default_factory=list)

    def add(self, status: str, index: int, retried: bool) -> None:
        setattr(self, status, getattr(self, status) + 1)
        if status == "fallback":
            self.fallback_sentences.append(index)
        self.unpruned_retries += int(retried)

    def summary(self) -> str:
        total = self.parsed + self.relaxed + self.fallback
        return (f"sentences\t{total}\nparsed\t{self.parsed}\nrelaxed\t{self.relaxed}\n"
                f"fallback\t{self.fallback}\nunpruned_retries\t{self.unpruned_retries}\n")


def most_frequent_root(g: Lpcfg) -> str:
    best = max(sorted(g.root), key=lambda a: float(g.root[a].sum()))
    return g.symbols.labels[best]


def fallback_tree(root: str, sentence: TaggedSentence) -> Tree:
    """Flat tree under ``root`` with the given (or placeholder) tags."""
    pts = [Tree(t.tag or "X", word=t.word) for t in sentence]
    if len(pts) == 1:
        return debinarize(Tree(root + UNARY_SEP + pts[0].label, word=pts[0].word))
    right = pts[-1]
    for p in reversed(pts[1:-1]):
        right = Tree(CONT_PREFIX + root, [p, right])
    return debinarize(Tree(root, [pts[0], right]))


def _attempt(g, base, sentence, cands, threshold, backend):
    mask = None
    if base is not None:
        mask = prune_mask(base, sentence, threshold, candidates=cands, backend=backend)
    chart = inside_outside(g, sentence, mask, candidates=cands, backend=backend)
    retried = False
    if not chart.parsed and mask is not None and not mask.fail_open:
        chart = inside_outside(g, sentence, None, candidates=cands, backend=backend)
        retried = True
    return chart, retried


def parse_sentence(g: Lpcfg, base: Pcfg | Lpcfg | None, sentence: TaggedSentence,
                   threshold: float = DEFAULT_THRESHOLD, backend: str | None = None) -> tuple[Tree, str, bool]:
    """Debinarized tree, status (parsed / relaxed / fallback), unpruned-retry flag."""
    sentence = [t if isinstance(t, Token) else Token(*t) for t in sentence]
    g = _as_lpcfg(g)
    cands = relax_tags(g, sentence)
    retried = False
    for status, cset, ok in (("parsed", cands.strict, cands.strict_ok),
                             ("relaxed", cands.relaxed, cands.relaxed_ok)):
        if not ok or (status == "relaxed" and cands.relaxed == cands.strict):
            continue
        chart, r = _attempt(g, base, sentence, cset, threshold, backend)
        retried = retried or r
        if chart.parsed:
            return debinarize(decode_max_rule(chart, backend)), status, retried
    return fallback_tree(most_frequent_root(g), sentence), "fallback", retried


_WORKER: dict = {}


def _init_worker(g, base, threshold, backend):
    _WORKER.update(g=g, base=base, threshold=threshold, backend=backend)


def _parse_one(sentence):
    w = _WORKER
    return parse_sentence(w["g"], w["base"], sentence, w["threshold"], w["backend"])


def parse_corpus(g: Lpcfg, base: Pcfg | Lpcfg | None, sentences: Sequence[TaggedSentence],
                 threshold: float = DEFAULT_THRESHOLD, workers: int = 1,
                 backend: str | None = None) -> tuple[list[Tree], CoverageReport]:
    """Parse every sentence; output order equals input order."""
    report = CoverageReport()
    if not sentences:
        return [], report
    if workers > 1 and len(sentences) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(g, base, threshold, backend)) as pool:
            results = list(pool.map(_parse_one, sentences, chunksize=max(1, len(sentences) // (4 * workers))))
    else:
        results = [parse_sentence(g, base, s, threshold, backend) for s in sentences]
    trees = []
    for i, (tree, status, retried) in enumerate(results):
        trees.append(tree)
        report.add(status, i, retried)
    if report.fallback:
        log.warning("%d of %d sentences fell back to flat trees", report.fallback, len(sentences))
    return trees, report
