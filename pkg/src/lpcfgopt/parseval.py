"""Labeled-bracket precision, recall and F1 with EVALB-like parameters."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .treebank import Tree

Bracket = tuple[str, int, int]


@dataclass(frozen=True)
class EvalParams:
    delete_labels: frozenset[str] = frozenset({"TOP", "ROOT", "VROOT"})
    punct_tags: frozenset[str] = frozenset()
    cutoff: int | None = None
    score_preterminals: bool = False
    equivalences: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "delete_labels", frozenset(self.delete_labels))
        object.__setattr__(self, "punct_tags", frozenset(self.punct_tags))
        if self.cutoff is not None and self.cutoff < 1:
            raise ValueError(f"cutoff must be >= 1, got {self.cutoff}")

    def canon(self, label: str) -> str:
        return self.equivalences.get(label, label)


@dataclass(frozen=True)
class PrfScore:
    matched: int
    gold: int
    predicted: int

    @property
    def precision(self) -> float:
        return 100.0 * self.matched / self.predicted if self.predicted else 0.0

    @property
    def recall(self) -> float:
        return 100.0 * self.matched / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def __add__(self, other: "PrfScore") -> "PrfScore":
        return PrfScore(self.matched + other.matched, self.gold + other.gold, self.predicted + other.predicted)


def kept_yield(tree: Tree, params: EvalParams) -> list[str]:
    return [p.word for p in tree.preterminals() if p.label not in params.punct_tags]


def extract_brackets(tree: Tree, params: EvalParams = EvalParams()) -> Counter:
    """Multiset of ``(label, start, end)`` over non-punctuation token indices."""
    out: Counter = Counter()

    def visit(node: Tree, pos: int) -> int:
        if node.is_preterminal:
            if node.label in params.punct_tags:
                return pos
            if params.score_preterminals and node.label not in params.delete_labels:
                out[params.canon(node.label), pos, pos + 1] += 1
            return pos + 1
        start = pos
        for ch in node.children:
            pos = visit(ch, pos)
        if pos > start and node.label not in params.delete_labels:
            out[params.canon(node.label), start, pos] += 1
        return pos

    visit(tree, 0)
    return out


@dataclass
class SentenceScore:
    index: int
    length: int
    score: PrfScore
    yield_mismatch: bool = False
    skipped: bool = False

    @property
    def exact(self) -> bool:
        s = self.score
        return not self.yield_mismatch and s.matched == s.gold == s.predicted


@dataclass
class CorpusScore:
    total: PrfScore
    sentences: list[SentenceScore]

    @property
    def f1(self) -> float:
        return self.total.f1

    @property
    def mismatches(self) -> list[int]:
        return [s.index for s in self.sentences if s.yield_mismatch]

    @property
    def exact_match(self) -> float:
        scored = [s for s in self.sentences if not s.skipped]
        return 100.0 * sum(s.exact for s in scored) / len(scored) if scored else 0.0

    def by_length(self, edges: Sequence[int] = (10, 20, 40)) -> list[tuple[str, PrfScore, int]]:
        rows = []
        lo = 1
        for hi in list(edges) + [None]:
            sel = [s for s in self.sentences if not s.skipped and s.length >= lo and (hi is None or s.length <= hi)]
            tot = sum((s.score for s in sel), PrfScore(0, 0, 0))
            rows.append((f"{lo}-{hi}" if hi is not None else f">={lo}", tot, len(sel)))
            if hi is not None:
                lo = hi + 1
        return rows


def score_sentence(gold: Tree, pred: Tree, params: EvalParams = EvalParams(), index: int = 0) -> SentenceScore:
    gy, py = kept_yield(gold, params), kept_yield(pred, params)
    g = extract_brackets(gold, params)
    p = extract_brackets(pred, params)
    ng, np_ = sum(g.values()), sum(p.values())
    if params.cutoff is not None and len(gy) > params.cutoff:
        return SentenceScore(index, len(gy), PrfScore(0, 0, 0), skipped=True)
    if gy != py:
        return SentenceScore(index, len(gy), PrfScore(0, ng, np_), yield_mismatch=True)
    return SentenceScore(index, len(gy), PrfScore(sum((g & p).values()), ng, np_))


def score_corpus(gold: Sequence[Tree], pred: Sequence[Tree], params: EvalParams = EvalParams()) -> CorpusScore:
    """Micro-averaged scores; a yield mismatch counts as zero matches."""
    if len(gold) != len(pred):
        raise ValueError(f"corpus length mismatch: {len(gold)} gold vs {len(pred)} predicted trees")
    sents = [score_sentence(g, p, params, i) for i, (g, p) in enumerate(zip(gold, pred))]
    total = sum((s.score for s in sents), PrfScore(0, 0, 0))
    return CorpusScore(total, sents)


def report(score: CorpusScore) -> str:
    t = score.total
    lines = [
        f"sentences\t{len(score.sentences)}",
        f"matched\t{t.matched}",
        f"gold_brackets\t{t.gold}",
        f"test_brackets\t{t.predicted}",
        f"precision\t{t.precision:.2f}",
        f"recall\t{t.recall:.2f}",
        f"f1\t{t.f1:.2f}",
        f"exact_match\t{score.exact_match:.2f}",
        f"yield_mismatches\t{len(score.mismatches)}",
        "",
        "length\tsentences\tprecision\trecall\tf1",
    ]
    for name, s, n in score.by_length():
        lines.append(f"{name}\t{n}\t{s.precision:.2f}\t{s.recall:.2f}\t{s.f1:.2f}")
    return "\n".join(lines) + "\n"
