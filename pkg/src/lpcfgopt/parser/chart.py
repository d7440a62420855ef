"""Latent-variable CKY: inside-outside, posterior pruning, max-rule decoding."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ..grammar import Lpcfg, Pcfg
from ..treebank import RARE_PREFIX, UNARY_SEP, Tree, rare_signature
from . import _backend

log = logging.getLogger(__name__)

NEG_INF = -math.inf
DEFAULT_THRESHOLD = 5e-5


class Token(NamedTuple):
    word: str
    tag: str | None = None
    morph: str | None = None


TaggedSentence = Sequence[Token]


def tagged_from_tree(tree: Tree) -> list[Token]:
    """Words with their gold tags; collapsed preterminals keep the lowest tag."""
    return [Token(n.word, n.label.split(UNARY_SEP)[-1]) for n in tree.preterminals()]


class ChartGrammar:
    """Flat arrays for the kernels, built once per grammar."""

    def __init__(self, g: Lpcfg):
        self.g = g
        self.labels = g.symbols.labels
        self.N = len(self.labels)
        self.m = np.ascontiguousarray(g.m, dtype=np.int64)
        self.off = np.zeros(self.N, dtype=np.int64)
        self.off[1:] = np.cumsum(self.m)[:-1]
        self.S = int(self.m.sum())
        rules = sorted(g.binary)
        self.rules = rules
        self.r_b = np.array([b for _, b, _ in rules], dtype=np.int64)
        self.r_c = np.array([c for _, _, c in rules], dtype=np.int64)
        self.r_a = np.array([a for a, _, _ in rules], dtype=np.int64)
        sizes = [g.binary[r].size for r in rules]
        self.r_off = np.zeros(len(rules), dtype=np.int64)
        if rules:
            self.r_off[1:] = np.cumsum(sizes)[:-1]
        self.params = (np.ascontiguousarray(np.concatenate([g.binary[r].ravel() for r in rules]))
                       if rules else np.zeros(1))
        self.a_start = np.searchsorted(self.r_a, np.arange(self.N + 1)).astype(np.int64)
        self.root = np.zeros(self.S)
        for a, vec in g.root.items():
            self.root[self.off[a]:self.off[a] + self.m[a]] = vec


def compiled(g: Lpcfg) -> ChartGrammar:
    if g._compiled is None:
        g._compiled = ChartGrammar(g)
    return g._compiled


def _as_lpcfg(g) -> Lpcfg:
    if isinstance(g, Pcfg):
        cached = getattr(g, "_lpcfg", None)
        if cached is None:
            cached = g.to_lpcfg()
            g._lpcfg = cached
        return cached
    return g


# -- tag relaxation -------------------------------------------------------

def _tag_matches(label: str, tag: str) -> bool:
    return label == tag or label.endswith(UNARY_SEP + tag)


@dataclass
class TagCandidates:
    """Per token: preterminal candidates as ``label -> lexical form``."""

    strict: list[dict[str, str]]
    relaxed: list[dict[str, str]]

    @property
    def relaxed_ok(self) -> bool:
        return all(self.relaxed)

    @property
    def strict_ok(self) -> bool:
        return all(self.strict)


def _signatures(tok: Token) -> list[str]:
    sigs = []
    if tok.tag is not None:
        if tok.morph and tok.morph != "_":
            sigs.append(rare_signature(tok.tag, tok.morph))
        sigs.append(rare_signature(tok.tag))
    return sigs


def relax_tags(g: Lpcfg, sentence: TaggedSentence) -> TagCandidates:
    """Strict candidates honour the given tag; relaxed ones admit every
    preterminal that can emit the token (or its rare-word signature)."""
    g = _as_lpcfg(g)
    labels = g.symbols.labels
    lexicon = g.lexicon
    rare_forms = None
    strict, relaxed = [], []
    for tok in sentence:
        tok = Token(*tok) if not isinstance(tok, Token) else tok
        if tok.word in lexicon:
            forms = [tok.word]
        else:
            forms = [s for s in _signatures(tok) if s in lexicon]
        rel: dict[str, str] = {}
        for form in forms:
            for a in g.emitters(form):
                rel.setdefault(labels[a], form)
        if not rel and tok.word not in lexicon:
            if rare_forms is None:
                rare_forms = sorted(w for w in lexicon if w.startswith(RARE_PREFIX))
            for form in rare_forms:
                for a in g.emitters(form):
                    rel.setdefault(labels[a], form)
        if tok.tag is None:
            st = dict(rel)
        else:
            st = {lab: form for lab, form in rel.items() if _tag_matches(lab, tok.tag)}
        strict.append(dict(sorted(st.items())))
        relaxed.append(dict(sorted(rel.items())))
    return TagCandidates(strict, relaxed)


def all_candidates(g: Lpcfg, words: Sequence[str]) -> list[dict[str, str]]:
    """Every preterminal emitting each word verbatim (brute-force oracles)."""
    g = _as_lpcfg(g)
    return [{g.symbols.labels[a]: w for a in sorted(g.emitters(w))} for w in words]


# -- chart ----------------------------------------------------------------

@dataclass
class PruneMask:
    labels: list[str]
    mask: np.ndarray  # bool (n, n+1, N)
    fail_open: bool = False

    def allowed(self, label: str, i: int, j: int) -> bool:
        return bool(self.mask[i, j, self.labels.index(label)])

    def count(self) -> int:
        n = self.mask.shape[0]
        return int(sum(self.mask[i, j].sum() for i in range(n) for j in range(i + 1, n + 1)))


@dataclass
class Chart:
    grammar: ChartGrammar
    words: list[str]
    candidates: list[dict[str, str]]
    ins: np.ndarray
    ins_sc: np.ndarray
    out: np.ndarray
    out_sc: np.ndarray
    logZ: float

    @property
    def n(self) -> int:
        return len(self.words)

    @property
    def parsed(self) -> bool:
        return self.logZ > NEG_INF

    def _vec(self, arr, sc, a, i, j):
        cg = self.grammar
        s = sc[i, j, a]
        if s == NEG_INF:
            return np.full(cg.m[a], NEG_INF)
        v = arr[i, j, cg.off[a]:cg.off[a] + cg.m[a]]
        with np.errstate(divide="ignore"):
            return np.log(v) + s

    def inside_log(self, label: str, i: int, j: int) -> np.ndarray:
        return self._vec(self.ins, self.ins_sc, self.grammar.labels.index(label), i, j)

    def outside_log(self, label: str, i: int, j: int) -> np.ndarray:
        return self._vec(self.out, self.out_sc, self.grammar.labels.index(label), i, j)

    def _post(self, a, i, j) -> float:
        cg = self.grammar
        s = self.ins_sc[i, j, a] + self.out_sc[i, j, a]
        if not self.parsed or s == NEG_INF:
            return 0.0
        sl = slice(cg.off[a], cg.off[a] + cg.m[a])
        dot = float(self.ins[i, j, sl] @ self.out[i, j, sl])
        return dot * math.exp(s - self.logZ) if dot > 0 else 0.0

    def posterior(self, label: str, i: int, j: int) -> float:
        return self._post(self.grammar.labels.index(label), i, j)

    def posteriors(self) -> dict[tuple[str, int, int], float]:
        """Nonzero latent-marginalized item posteriors."""
        out = {}
        n = self.n
        for i in range(n):
            for j in range(i + 1, n + 1):
                for a in np.nonzero(self.ins_sc[i, j] > NEG_INF)[0]:
                    p = self._post(int(a), i, j)
                    if p > 0:
                        out[self.grammar.labels[a], i, j] = p
        return out

    def rule_posterior(self, a: str, b: str, c: str, i: int, k: int, j: int) -> float:
        cg = self.grammar
        ix = cg.labels.index
        ia, ib, ic = ix(a), ix(b), ix(c)
        key = (ia, ib, ic)
        if key not in cg.g.binary or not self.parsed:
            return 0.0
        s = self.out_sc[i, j, ia] + self.ins_sc[i, k, ib] + self.ins_sc[k, j, ic]
        if s == NEG_INF:
            return 0.0
        va = self.out[i, j, cg.off[ia]:cg.off[ia] + cg.m[ia]]
        vb = self.ins[i, k, cg.off[ib]:cg.off[ib] + cg.m[ib]]
        vc = self.ins[k, j, cg.off[ic]:cg.off[ic] + cg.m[ic]]
        q = float(va @ ((cg.g.binary[key] @ vc) @ vb))
        return q * math.exp(s - self.logZ) if q > 0 else 0.0


def _lexical_init(cg: ChartGrammar, candidates, n, ins, ins_sc, allow=None):
    ix = {lab: a for a, lab in enumerate(cg.labels)}
    lex = cg.g.lexical
    for i, cands in enumerate(candidates):
        for lab, form in cands.items():
            a = ix.get(lab)
            if a is None:
                continue
            if allow is not None and not allow[i, i + 1, a]:
                continue
            vec = lex.get((a, form))
            if vec is None:
                continue
            mx = vec.max()
            if mx <= 0:
                continue
            ins[i, i + 1, cg.off[a]:cg.off[a] + cg.m[a]] = vec / mx
            ins_sc[i, i + 1, a] = math.log(mx)


def _mask_for(cg: ChartGrammar, mask: PruneMask | None, n: int) -> np.ndarray:
    if mask is None:
        return np.ones((n, n + 1, cg.N), dtype=np.uint8)
    if mask.labels == cg.labels:
        return np.ascontiguousarray(mask.mask, dtype=np.uint8)
    out = np.zeros((n, n + 1, cg.N), dtype=np.uint8)
    src = {lab: a for a, lab in enumerate(mask.labels)}
    for a, lab in enumerate(cg.labels):
        if lab in src:
            out[:, :, a] = mask.mask[:, :, src[lab]]
    return out


def inside_outside(g, sentence: TaggedSentence | None = None, mask: PruneMask | None = None,
                   candidates: list[dict[str, str]] | None = None, backend: str | None = None) -> Chart:
    """Inside and outside passes over unpruned items.

    ``candidates`` overrides tag relaxation (one ``label -> form`` dict per
    token); by default the relaxed candidate set is used.  A sentence with no
    complete parse gives a chart with ``logZ == -inf``.
    """
    g = _as_lpcfg(g)
    cg = compiled(g)
    if candidates is None:
        candidates = relax_tags(g, sentence).relaxed
    words = [t[0] for t in sentence] if sentence is not None else [next(iter(c.values()), "") for c in candidates]
    n = len(candidates)
    kern = _backend.get(backend)
    ins = np.zeros((n, n + 1, cg.S))
    ins_sc = np.full((n, n + 1, cg.N), NEG_INF)
    out = np.zeros_like(ins)
    out_sc = np.full_like(ins_sc, NEG_INF)
    if n == 0:
        return Chart(cg, words, candidates, ins, ins_sc, out, out_sc, NEG_INF)
    allow = _mask_for(cg, mask, n)
    _lexical_init(cg, candidates, n, ins, ins_sc, allow)
    kern.inside(n, cg.m, cg.off, cg.a_start, cg.r_b, cg.r_c, cg.r_off, cg.params, ins, ins_sc, allow)
    # root
    terms = []
    for a in range(cg.N):
        s = ins_sc[0, n, a]
        if s == NEG_INF:
            continue
        sl = slice(cg.off[a], cg.off[a] + cg.m[a])
        pi = cg.root[sl]
        dot = float(pi @ ins[0, n, sl])
        if dot <= 0:
            continue
        terms.append(s + math.log(dot))
        mx = pi.max()
        out[0, n, sl] = pi / mx
        out_sc[0, n, a] = math.log(mx)
    if not terms:
        return Chart(cg, words, candidates, ins, ins_sc, np.zeros_like(ins), np.full_like(ins_sc, NEG_INF),
                     NEG_INF)
    top = max(terms)
    logZ = top + math.log(sum(math.exp(t - top) for t in terms))
    kern.outside(n, cg.m, cg.off, cg.a_start, cg.r_b, cg.r_c, cg.r_off, cg.params, ins, ins_sc, out, out_sc)
    return Chart(cg, words, candidates, ins, ins_sc, out, out_sc, logZ)


def prune_mask(base, sentence: TaggedSentence | None = None, threshold: float = DEFAULT_THRESHOLD,
               candidates: list[dict[str, str]] | None = None, backend: str | None = None) -> PruneMask:
    """Keep items whose posterior under the latentless grammar is >= threshold.

    Fails open (everything allowed) when the base grammar cannot parse the
    sentence or when no root item survives pruning.
    """
    chart = inside_outside(base, sentence, None, candidates, backend)
    cg = chart.grammar
    n = chart.n
    full = np.ones((n, n + 1, cg.N), dtype=bool)
    if not chart.parsed:
        log.warning("base grammar cannot parse sentence of length %d; pruning disabled", n)
        return PruneMask(list(cg.labels), full, fail_open=True)
    mask = np.zeros((n, n + 1, cg.N), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n + 1):
            for a in np.nonzero(chart.ins_sc[i, j] > NEG_INF)[0]:
                p = chart._post(int(a), i, j)
                if p > 0 and p >= threshold:
                    mask[i, j, a] = True
    roots = [a for a in range(cg.N) if mask[0, n, a] and cg.root[cg.off[a]:cg.off[a] + cg.m[a]].any()]
    if not roots:
        log.warning("pruning at threshold %g removed every root item; pruning disabled", threshold)
        return PruneMask(list(cg.labels), full, fail_open=True)
    return PruneMask(list(cg.labels), mask)


def decode_max_rule(chart: Chart, backend: str | None = None) -> Tree:
    """Tree maximizing the sum of log anchored-rule posteriors.

    Ties go to the lower split point, then the lower rule id (rules sorted
    by ``(parent, left, right)`` ids), then the lower root id.
    """
    if not chart.parsed:
        raise ValueError("cannot decode a chart without a complete parse")
    cg = chart.grammar
    n = chart.n
    best = np.full((n, n + 1, cg.N), NEG_INF)
    bp_k = np.full((n, n + 1, cg.N), -1, dtype=np.int64)
    bp_r = np.full((n, n + 1, cg.N), -1, dtype=np.int64)
    for i in range(n):
        for a in np.nonzero(chart.ins_sc[i, i + 1] > NEG_INF)[0]:
            p = chart._post(int(a), i, i + 1)
            if p > 0:
                best[i, i + 1, a] = math.log(p)
    kern = _backend.get(backend)
    kern.decode(n, cg.m, cg.off, cg.a_start, cg.r_b, cg.r_c, cg.r_off, cg.params, chart.ins, chart.ins_sc,
                chart.out, chart.out_sc, chart.logZ, best, bp_k, bp_r)
    root, score = -1, NEG_INF
    for a in range(cg.N):
        if cg.root[cg.off[a]:cg.off[a] + cg.m[a]].any() and best[0, n, a] > score:
            root, score = a, best[0, n, a]
    if root < 0:
        raise ValueError("no decodable root item")

    def build(a, i, j):
        if j == i + 1 and bp_r[i, j, a] < 0:
            return Tree(cg.labels[a], word=chart.words[i])
        k, r = int(bp_k[i, j, a]), int(bp_r[i, j, a])
        return Tree(cg.labels[a], [build(int(cg.r_b[r]), i, k), build(int(cg.r_c[r]), k, j)])

    return build(root, 0, n)
