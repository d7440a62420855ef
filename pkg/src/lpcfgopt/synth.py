"""Synthetic L-PCFGs, ancestral sampling and brute-force enumeration oracles."""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .features import CovStats, FeatureConfig, FeatureHasher, tree_features
from .grammar import GrammarError, Lpcfg, Pcfg, SymbolTable, validate
from .treebank import Tree

log = logging.getLogger(__name__)


class BudgetExceeded(RuntimeError):
    pass


@dataclass
class SynthSpec:
    """Shape of a random grammar.

    In the default layered mode interminal ``i`` only rewrites to
    interminals with a larger index or to preterminals, so every derivation
    terminates and has at most ``2 ** interminals`` words.  ``recursive``
    lifts that restriction; sampling then rejects trees longer than
    ``max_len``.
    """

    interminals: int = 2
    preterminals: int = 3
    words: int = 8
    states: int | Sequence[int] | Mapping[str, int] = 2
    separability: float = 1.0
    max_len: int | None = None
    seed: int = 0
    rules_per_nt: int = 3
    recursive: bool = False
    concentration: float = 0.5
    words_per_tag: int | None = None
    branching: float = 0.8

    def __post_init__(self):
        if min(self.interminals, self.preterminals, self.words, self.rules_per_nt) < 1:
            raise ValueError("synthetic grammar counts must be >= 1")
        if not 0.0 <= self.separability <= 1.0:
            raise ValueError("separability must lie in [0, 1]")
        if self.max_len is not None and self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.recursive and self.max_len is None:
            raise ValueError("recursive grammars need max_len")
        if not 0.0 < self.branching < 1.0:
            raise ValueError("branching must lie in (0, 1)")

    @property
    def interminal_labels(self) -> list[str]:
        return [f"N{i}" for i in range(self.interminals)]

    @property
    def preterminal_labels(self) -> list[str]:
        return [f"T{i}" for i in range(self.preterminals)]

    @property
    def word_list(self) -> list[str]:
        return [f"w{i}" for i in range(self.words)]

    def state_map(self) -> dict[str, int]:
        labels = self.interminal_labels + self.preterminal_labels
        st = self.states
        if isinstance(st, Mapping):
            return {a: int(st.get(a, 1)) for a in labels}
        if isinstance(st, int):
            return {a: st for a in labels}
        st = list(st)
        if len(st) != len(labels):
            raise ValueError(f"need {len(labels)} state counts, got {len(st)}")
        return dict(zip(labels, map(int, st)))

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        if not isinstance(d["states"], int):
            d["states"] = self.state_map()
        return d


def _separable(rng, n_out: int, groups: Sequence[int], m: int, sep: float, conc: float) -> np.ndarray:
    """``m`` distributions over ``n_out`` outcomes.

    Outcomes carry a group id; state ``h`` puts its separable mass on a
    contiguous block of groups so that different states prefer different
    skeleton choices.
    """
    out = np.empty((m, n_out))
    groups = np.asarray(groups)
    ug = np.unique(groups)
    chunks = np.array_split(ug, m) if len(ug) >= m else np.array_split(np.arange(n_out), m)
    for h in range(m):
        base = rng.dirichlet(np.full(n_out, conc))
        if len(ug) >= m:
            sel = np.isin(groups, chunks[h])
        else:
            sel = np.zeros(n_out, dtype=bool)
            sel[chunks[h]] = True
        spec = np.zeros(n_out)
        if sel.any():
            spec[sel] = rng.dirichlet(np.full(sel.sum(), conc))
        else:
            spec = base
        out[h] = (1.0 - sep) * base + sep * spec
    return out


def random_lpcfg(spec: SynthSpec, max_retries: int = 20) -> Lpcfg:
    rng = np.random.default_rng(spec.seed)
    I, P = spec.interminal_labels, spec.preterminal_labels
    words = spec.word_list
    m = spec.state_map()
    sym = SymbolTable(I, P, [])
    ix = sym.index
    for attempt in range(max_retries):
        skel = _skeleton(rng, spec, I, P)
        binary, lexical, root = {}, {}, {}
        for a in I:
            rules = skel[a]
            n_out = sum(m[b] * m[c] for b, c in rules)
            groups = np.concatenate([np.full(m[b] * m[c], r) for r, (b, c) in enumerate(rules)])
            dist = _separable(rng, n_out, groups, m[a], spec.separability, spec.concentration)
            pos = 0
            for b, c in rules:
                sz = m[b] * m[c]
                binary[ix[a], ix[b], ix[c]] = dist[:, pos:pos + sz].reshape(m[a], m[b], m[c])
                pos += sz
        wpt = spec.words_per_tag or len(words)
        for t, a in enumerate(P):
            if wpt >= len(words):
                vocab = words
            else:
                start = (t * wpt) % len(words)
                vocab = [words[(start + q) % len(words)] for q in range(wpt)]
            dist = _separable(rng, len(vocab), np.arange(len(vocab)), m[a], spec.separability, spec.concentration)
            for q, w in enumerate(vocab):
                lexical[ix[a], w] = dist[:, q]
        roots = I if not spec.recursive else I[:1]
        rdist = rng.dirichlet(np.full(sum(m[a] for a in roots), 1.0))
        pos = 0
        for a in roots:
            root[ix[a]] = rdist[pos:pos + m[a]]
            pos += m[a]
        if spec.recursive:
            _make_subcritical(sym, m, binary, spec.branching)
        g = Lpcfg(SymbolTable(I, P, sorted({w for _, w in lexical})), m, binary, lexical, root)
        bad = validate(g, 1e-9)
        if not bad:
            return g
        log.debug("synthetic grammar attempt %d not normalized: %s", attempt, bad[0])
    raise GrammarError("could not build a normalized synthetic grammar")


def _skeleton(rng, spec: SynthSpec, I, P) -> dict[str, list[tuple[str, str]]]:
    """Child pairs of each interminal, covering every nonterminal."""
    skel: dict[str, list[tuple[str, str]]] = {}
    for i, a in enumerate(I):
        allowed = (I if spec.recursive else I[i + 1:]) + P
        pairs = [(b, c) for b in allowed for c in allowed]
        k = min(spec.rules_per_nt, len(pairs))
        pick = rng.choice(len(pairs), size=k, replace=False)
        skel[a] = sorted(pairs[p] for p in pick)
        if spec.recursive and not any(b in P and c in P for b, c in skel[a]):
            skel[a] = sorted(set(skel[a]) | {(P[int(rng.integers(len(P)))], P[int(rng.integers(len(P)))])})
    # every nonterminal must occur as a child somewhere
    used = {x for rules in skel.values() for pair in rules for x in pair}
    for x in P + (I[1:] if spec.recursive else I):
        if x in used:
            continue
        cand = [a for a in I if a != x and (spec.recursive or I.index(a) < (I.index(x) if x in I else len(I)))]
        if not cand:
            continue
        a = cand[int(rng.integers(len(cand)))]
        other = P[int(rng.integers(len(P)))]
        skel[a] = sorted(set(skel[a]) | {(x, other)})
        used.add(x)
    return skel


def _make_subcritical(sym, m, binary, target: float = 0.8) -> None:
    """Shrink interminal-producing mass until the expected number of
    interminal children per node has spectral radius <= ``target``."""
    pre = sym.preterminal
    labels = sym.labels
    inter = [a for a in range(len(labels)) if not pre[a]]
    off = {}
    tot = 0
    for a in inter:
        off[a] = tot
        tot += m[labels[a]]
    for _ in range(200):
        E = np.zeros((tot, tot))
        for (a, b, c), blk in binary.items():
            if not pre[b]:
                E[off[a]:off[a] + blk.shape[0], off[b]:off[b] + blk.shape[1]] += blk.sum(axis=2)
            if not pre[c]:
                E[off[a]:off[a] + blk.shape[0], off[c]:off[c] + blk.shape[2]] += blk.sum(axis=1)
        rho = max(abs(np.linalg.eigvals(E))) if tot else 0.0
        if rho <= target:
            return
        for a in inter:
            keys = [k for k in binary if k[0] == a]
            leafy = [k for k in keys if pre[k[1]] and pre[k[2]]]
            if not leafy:
                continue
            for k in keys:
                if k not in leafy:
                    binary[k] = binary[k] * 0.7
            mass = sum(binary[k].sum(axis=(1, 2)) for k in keys)
            deficit = 1.0 - mass
            share = sum(binary[k].sum(axis=(1, 2)) for k in leafy)
            empty = share <= 0  # states whose leafy rules carry no mass get it spread evenly
            scale = np.where(empty, 1.0, 1.0 + deficit / np.where(empty, 1.0, share))
            cells = sum(binary[k][0].size for k in leafy)
            for k in leafy:
                blk = binary[k] * scale[:, None, None]
                blk[empty] = (deficit[empty] / cells)[:, None, None]
                binary[k] = blk
    raise GrammarError("could not make the synthetic grammar terminate")


# -- sampling -------------------------------------------------------------------

class _Sampler:
    def __init__(self, g: Lpcfg):
        self.g = g
        lab = g.symbols.labels
        self.labels = lab
        self.pre = g.symbols.preterminal
        self.out: dict[tuple[int, int], tuple[np.ndarray, list]] = {}
        rules = defaultdict(list)
        for (a, b, c), blk in g.binary.items():
            rules[a].append((b, c, blk))
        lex = defaultdict(list)
        for (a, w), vec in g.lexical.items():
            lex[a].append((w, vec))
        for a in range(len(lab)):
            for h in range(int(g.m[a])):
                probs, outs = [], []
                if self.pre[a]:
                    for w, vec in lex[a]:
                        probs.append(vec[h])
                        outs.append(w)
                else:
                    for b, c, blk in rules[a]:
                        for hb in range(blk.shape[1]):
                            for hc in range(blk.shape[2]):
                                probs.append(blk[h, hb, hc])
                                outs.append((b, hb, c, hc))
                cum = np.cumsum(probs)
                self.out[a, h] = (cum / cum[-1] if len(cum) and cum[-1] > 0 else cum, outs)
        rp, ro = [], []
        for a, vec in g.root.items():
            for h, p in enumerate(vec):
                rp.append(p)
                ro.append((a, h))
        cum = np.cumsum(rp)
        self.root = (cum / cum[-1], ro)

    @staticmethod
    def _draw(rng, table):
        cum, outs = table
        return outs[min(int(np.searchsorted(cum, rng.random(), side="right")), len(outs) - 1)]

    def sample(self, rng, max_len: int | None) -> Tree | None:
        a, h = self._draw(rng, self.root)
        budget = [max_len if max_len is not None else math.inf]
        return self._expand(rng, a, h, budget)

    def _expand(self, rng, a, h, budget):
        if self.pre[a]:
            budget[0] -= 1
            if budget[0] < 0:
                return None
            return Tree(self.labels[a], word=self._draw(rng, self.out[a, h]), state=h)
        # each pending sibling needs at least one word
        b, hb, c, hc = self._draw(rng, self.out[a, h])
        budget[0] -= 1
        left = self._expand(rng, b, hb, budget)
        budget[0] += 1
        if left is None:
            return None
        right = self._expand(rng, c, hc, budget)
        if right is None:
            return None
        return Tree(self.labels[a], [left, right], state=h)


def strip_states(tree: Tree) -> Tree:
    t = tree.copy()
    for n in t.preorder():
        n.state = None
    return t


def sample_trees(g: Lpcfg, n: int, seed: int = 0, max_len: int | None = None,
                 max_rejections: int = 1_000_000) -> list[tuple[Tree, Tree]]:
    """``n`` i.i.d. ``(skeletal, annotated)`` pairs, rejecting yields over ``max_len``."""
    rng = np.random.default_rng(seed)
    s = _Sampler(g)
    out = []
    rejected = 0
    while len(out) < n:
        t = s.sample(rng, max_len)
        if t is None:
            rejected += 1
            if rejected > max_rejections:
                raise RuntimeError(f"more than {max_rejections} samples rejected at max_len={max_len}")
            continue
        out.append((strip_states(t), t))
    return out


# -- enumeration -----------------------------------------------------------------

def _as_lpcfg(g) -> Lpcfg:
    return g.to_lpcfg() if isinstance(g, Pcfg) else g


def enumerate_derivations(g, max_len: int, budget: int = 200_000) -> list[tuple[Tree, float]]:
    """Every skeletal tree with at most ``max_len`` words and its probability."""
    g = _as_lpcfg(g)
    pre = g.symbols.preterminal
    lab = g.symbols.labels
    rules = defaultdict(list)
    for (a, b, c), blk in g.binary.items():
        rules[a].append((b, c, blk))
    lex = defaultdict(list)
    for (a, w), vec in g.lexical.items():
        lex[a].append((w, vec))
    memo: dict[tuple[int, int], list[tuple[Tree, np.ndarray, int]]] = {}
    count = [0]

    def trees(a: int, cap: int):
        key = (a, cap)
        if key in memo:
            return memo[key]
        out = []
        if cap >= 1:
            if pre[a]:
                out = [(Tree(lab[a], word=w), vec, 1) for w, vec in lex[a]]
            elif cap >= 2:
                for b, c, blk in rules[a]:
                    for tb, vb, lb in trees(b, cap - 1):
                        for tc, vc, lc in trees(c, cap - lb):
                            v = (blk @ vc) @ vb
                            if v.any():
                                out.append((Tree(lab[a], [tb, tc]), v, lb + lc))
                                count[0] += 1
                                if count[0] > budget:
                                    raise BudgetExceeded(f"more than {budget} partial derivations")
        memo[key] = out
        return out

    result = []
    for a, pi in sorted(g.root.items()):
        for t, v, _ in trees(a, max_len):
            p = float(pi @ v)
            if p > 0:
                # subtrees are shared between derivations; give each its own nodes
                result.append((t.copy(), p))
    return result


def exact_covariance(g: Lpcfg, cfg: FeatureConfig, max_len: int, budget: int = 200_000,
                     min_mass: float = 0.99) -> dict[str, CovStats]:
    """Inside/outside feature moments under the grammar's own distribution."""
    derivs = enumerate_derivations(g, max_len, budget)
    mass = sum(p for _, p in derivs)
    if mass < min_mass:
        raise ValueError(f"enumerated mass {mass:.6f} below {min_mass} at max_len={max_len}")
    hasher = FeatureHasher(cfg)
    stats: dict[str, CovStats] = {}
    for t, p in derivs:
        for nf in tree_features(t, cfg, hasher):
            st = stats.setdefault(nf.node.label, CovStats(cfg.d_in, cfg.d_out, center=cfg.center))
            psi = np.bincount(nf.psi, minlength=cfg.d_in).astype(np.float64)
            phi = np.bincount(nf.phi, minlength=cfg.d_out).astype(np.float64)
            st.count += p
            st.psi_sum += p * psi
            st.phi_sum += p * phi
            st.cross_sum += p * np.outer(psi, phi)
    return dict(sorted(stats.items()))


def enumerate_parses(g, sentence: Sequence[str], explicit_states: bool = True,
                     budget: int = 500_000) -> list[tuple[Tree, float]]:
    """All skeletal parses of ``sentence`` (words used verbatim) with probabilities.

    With ``explicit_states`` every latent annotation is enumerated and
    multiplied out node by node, then summed per skeleton; otherwise latent
    states are summed inside each subtree.
    """
    g = _as_lpcfg(g)
    words = list(sentence)
    n = len(words)
    if n == 0:
        return []
    pre = g.symbols.preterminal
    lab = g.symbols.labels
    N = len(lab)
    rules = defaultdict(list)
    for (a, b, c), blk in g.binary.items():
        rules[a].append((b, c, blk))
    count = [0]

    def tick():
        count[0] += 1
        if count[0] > budget:
            raise BudgetExceeded(f"more than {budget} partial parses")

    if explicit_states:
        # cell[(i, j, a, h)] -> list of (annotated tree, prob)
        cell: dict = defaultdict(list)
        for i, w in enumerate(words):
            for a in range(N):
                vec = g.lexical.get((a, w))
                if vec is None:
                    continue
                for h, p in enumerate(vec):
                    if p > 0:
                        cell[i, i + 1, a, h].append((Tree(lab[a], word=w, state=h), float(p)))
        for length in range(2, n + 1):
            for i in range(n - length + 1):
                j = i + length
                for a in range(N):
                    if pre[a]:
                        continue
                    for b, c, blk in rules[a]:
                        for k in range(i + 1, j):
                            for hb in range(blk.shape[1]):
                                L = cell.get((i, k, b, hb))
                                if not L:
                                    continue
                                for hc in range(blk.shape[2]):
                                    R = cell.get((k, j, c, hc))
                                    if not R:
                                        continue
                                    for h in range(blk.shape[0]):
                                        q = float(blk[h, hb, hc])
                                        if q <= 0:
                                            continue
                                        for tl, pl in L:
                                            for tr, pr in R:
                                                tick()
                                                cell[i, j, a, h].append((Tree(lab[a], [tl, tr], state=h),
                                                                        q * pl * pr))
        agg: dict[str, list] = {}
        for a, pi in sorted(g.root.items()):
            for h, ph in enumerate(pi):
                if ph <= 0:
                    continue
                for t, p in cell.get((0, n, a, h), []):
                    sk = strip_states(t)
                    key = str(sk)
                    if key not in agg:
                        agg[key] = [sk, 0.0]
                    agg[key][1] += float(ph) * p
        return [(t, p) for t, p in agg.values() if p > 0]

    vcell: dict = defaultdict(list)
    for i, w in enumerate(words):
        for a in range(N):
            vec = g.lexical.get((a, w))
            if vec is not None and vec.any():
                vcell[i, i + 1, a].append((Tree(lab[a], word=w), vec))
    for length in range(2, n + 1):
        for i in range(n - length + 1):
            j = i + length
            for a in range(N):
                for b, c, blk in rules[a]:
                    for k in range(i + 1, j):
                        for tl, vl in vcell.get((i, k, b), []):
                            for tr, vr in vcell.get((k, j, c), []):
                                v = (blk @ vr) @ vl
                                if v.any():
                                    tick()
                                    vcell[i, j, a].append((Tree(lab[a], [tl, tr]), v))
    out = []
    for a, pi in sorted(g.root.items()):
        for t, v in vcell.get((0, n, a), []):
            p = float(pi @ v)
            if p > 0:
                out.append((t, p))
    return out


def candidate_trees(g, sentence: Sequence[str], budget: int = 500_000) -> list[Tree]:
    """Every tree built from the grammar's rule skeleton over ``sentence``,
    regardless of probability."""
    g = _as_lpcfg(g)
    lab = g.symbols.labels
    words = list(sentence)
    n = len(words)
    rules = defaultdict(list)
    for a, b, c in g.binary:
        rules[a].append((b, c))
    cell: dict = defaultdict(list)
    count = 0
    for i, w in enumerate(words):
        for a in g.emitters(w):
            cell[i, i + 1, a].append(Tree(lab[a], word=w))
    for length in range(2, n + 1):
        for i in range(n - length + 1):
            j = i + length
            for a in sorted(rules):
                for b, c in rules[a]:
                    for k in range(i + 1, j):
                        for tl in cell.get((i, k, b), []):
                            for tr in cell.get((k, j, c), []):
                                count += 1
                                if count > budget:
                                    raise BudgetExceeded(f"more than {budget} candidate trees")
                                cell[i, j, a].append(Tree(lab[a], [tl, tr]))
    return [t for a in sorted(g.root) for t in cell.get((0, n, a), [])]


@dataclass
class EnumeratedPosteriors:
    Z: float
    spans: dict[tuple[str, int, int], float] = field(default_factory=dict)
    rules: dict[tuple[str, str, str, int, int, int], float] = field(default_factory=dict)


def _anchored(tree: Tree):
    items, rules = [], []
    for node, s, e in tree.spans():
        items.append((node.label, s, e))
        if not node.is_preterminal:
            b, c = node.children
            k = s + len(b.words())
            rules.append((node.label, b.label, c.label, s, k, e))
    return items, rules


def enumerated_posteriors(parses: Sequence[tuple[Tree, float]]) -> EnumeratedPosteriors:
    Z = sum(p for _, p in parses)
    out = EnumeratedPosteriors(Z)
    if Z <= 0:
        return out
    for t, p in parses:
        items, rules = _anchored(t)
        for it in items:
            out.spans[it] = out.spans.get(it, 0.0) + p / Z
        for r in rules:
            out.rules[r] = out.rules.get(r, 0.0) + p / Z
    return out


def max_rule_oracle(g, sentence: Sequence[str], parses: Sequence[tuple[Tree, float]] | None = None):
    """Brute-force max-rule-sum tree.

    Scores every candidate tree as the sum of log posteriors of its anchored
    binary rules and preterminal items; trees using a zero-posterior piece
    are excluded.  Returns ``(tree, score, runner_up_score)``.
    """
    if parses is None:
        parses = enumerate_parses(g, sentence)
    post = enumerated_posteriors(parses)
    best, best_s, second = None, -math.inf, -math.inf
    for t in candidate_trees(g, sentence):
        s = 0.0
        for node, i, j in t.spans():
            if node.is_preterminal:
                p = post.spans.get((node.label, i, j), 0.0)
            else:
                b, c = node.children
                k = i + len(b.words())
                p = post.rules.get((node.label, b.label, c.label, i, k, j), 0.0)
            if p <= 0:
                s = -math.inf
                break
            s += math.log(p)
        if s > best_s:
            best, best_s, second = t, s, best_s
        elif s > second:
            second = s
    return best, best_s, second
