"""PCFG and latent-variable PCFG containers, MLE and the text format.

Latent-rule parameters are stored per rule skeleton as dense blocks:
``binary[(a, b, c)]`` has shape ``(m_a, m_b, m_c)`` and ``lexical[(a, w)]``
has shape ``(m_a,)``.  A skeleton that is absent has probability zero.
Probabilities are kept in linear space.
"""
from __future__ import annotations

import io
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .treebank import Tree

FORMAT_HEADER = "LPCFG v1"

StateAssignment = Mapping[str, int]
"""Nonterminal label -> number of latent states (every value >= 1)."""


class GrammarError(ValueError):
    pass


class SymbolTable:
    """Dense ids for nonterminals (sorted by text) and words."""

    def __init__(self, interminals: Iterable[str], preterminals: Iterable[str],
                 words: Iterable[str] = ()):
        inter, pre = set(interminals), set(preterminals)
        both = inter & pre
        if both:
            raise GrammarError("symbols used both as interminal and preterminal: "
                               + ", ".join(sorted(both)))
        self.labels: list[str] = sorted(inter | pre)
        self.index = {lab: i for i, lab in enumerate(self.labels)}
        self.preterminal = np.array([lab in pre for lab in self.labels], dtype=bool)
        self.words: list[str] = sorted(set(words))
        self.word_index = {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        return (isinstance(other, SymbolTable) and self.labels == other.labels
                and bool(np.array_equal(self.preterminal, other.preterminal))
                and self.words == other.words)

    def is_preterminal(self, label: str) -> bool:
        return bool(self.preterminal[self.index[label]])

    @property
    def interminals(self) -> list[str]:
        return [lab for lab, p in zip(self.labels, self.preterminal) if not p]

    @property
    def preterminals(self) -> list[str]:
        return [lab for lab, p in zip(self.labels, self.preterminal) if p]

    @classmethod
    def from_trees(cls, trees: Iterable[Tree]) -> "SymbolTable":
        inter, pre, words = set(), set(), set()
        for t in trees:
            for node in t.preorder():
                if node.is_preterminal:
                    pre.add(node.label)
                    words.add(node.word)
                else:
                    if len(node.children) != 2:
                        raise GrammarError(f"tree is not binarized at {node.label!r}")
                    inter.add(node.label)
        return cls(inter, pre, words)


@dataclass
class Pcfg:
    """A latentless PCFG keyed by label text."""

    binary: dict[tuple[str, str, str], float]
    lexical: dict[tuple[str, str], float]
    root: dict[str, float]

    def to_lpcfg(self) -> "Lpcfg":
        inter = {a for a, _, _ in self.binary}
        kids = {x for _, b, c in self.binary for x in (b, c)}
        pre = {a for a, _ in self.lexical}
        inter |= {r for r in self.root if r not in pre}
        inter |= kids - pre
        sym = SymbolTable(inter, pre, (w for _, w in self.lexical))
        ix = sym.index
        return Lpcfg(
            sym, {lab: 1 for lab in sym.labels},
            {(ix[a], ix[b], ix[c]): np.full((1, 1, 1), p) for (a, b, c), p in self.binary.items()},
            {(ix[a], w): np.full(1, p) for (a, w), p in self.lexical.items()},
            {ix[a]: np.full(1, p) for a, p in self.root.items()},
        )


def mle_pcfg(trees: Sequence[Tree]) -> Pcfg:
    """Relative-frequency estimate from binarized trees."""
    if not trees:
        raise GrammarError("cannot estimate a grammar from an empty corpus")
    SymbolTable.from_trees(trees)  # partition and binarization check
    bin_c: Counter = Counter()
    lex_c: Counter = Counter()
    lhs: Counter = Counter()
    roots: Counter = Counter(t.label for t in trees)
    for t in trees:
        for node in t.preorder():
            lhs[node.label] += 1
            if node.is_preterminal:
                lex_c[node.label, node.word] += 1
            else:
                bin_c[node.label, node.children[0].label, node.children[1].label] += 1
    n = len(trees)
    return Pcfg({r: c / lhs[r[0]] for r, c in sorted(bin_c.items())},
                {r: c / lhs[r[0]] for r, c in sorted(lex_c.items())},
                {a: c / n for a, c in sorted(roots.items())})


class Lpcfg:
    """Latent-variable PCFG with skeleton-sparse, state-dense parameters."""

    def __init__(self, symbols: SymbolTable, states: StateAssignment,
                 binary: Mapping[tuple[int, int, int], np.ndarray],
                 lexical: Mapping[tuple[int, str], np.ndarray],
                 root: Mapping[int, np.ndarray]):
        self.symbols = symbols
        missing = set(symbols.labels) - set(states)
        if missing:
            raise GrammarError("state assignment misses " + ", ".join(sorted(missing)))
        self.m = np.array([int(states[lab]) for lab in symbols.labels], dtype=np.int64)
        if (self.m < 1).any():
            raise GrammarError("every nonterminal needs at least one latent state")
        pre = symbols.preterminal
        self.binary: dict[tuple[int, int, int], np.ndarray] = {}
        for (a, b, c), block in sorted(binary.items()):
            if pre[a]:
                raise GrammarError(f"preterminal {symbols.labels[a]!r} has a binary rule")
            block = np.asarray(block, dtype=np.float64)
            if block.shape != (self.m[a], self.m[b], self.m[c]):
                raise GrammarError(f"bad block shape {block.shape} for rule {self._rule_text(a, b, c)}")
            self.binary[a, b, c] = block
        self.lexical: dict[tuple[int, str], np.ndarray] = {}
        for (a, w), vec in sorted(lexical.items()):
            if not pre[a]:
                raise GrammarError(f"interminal {symbols.labels[a]!r} has a lexical rule")
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (self.m[a],):
                raise GrammarError(f"bad lexical shape {vec.shape} for {symbols.labels[a]!r}")
            self.lexical[a, w] = vec
        self.root: dict[int, np.ndarray] = {}
        for a, vec in sorted(root.items()):
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (self.m[a],):
                raise GrammarError(f"bad root shape {vec.shape} for {symbols.labels[a]!r}")
            self.root[a] = vec
        self._by_word: dict[str, list[int]] | None = None
        self._compiled = None

    def _rule_text(self, a, b, c):
        lab = self.symbols.labels
        return f"{lab[a]} -> {lab[b]} {lab[c]}"

    @property
    def states(self) -> dict[str, int]:
        return {lab: int(m) for lab, m in zip(self.symbols.labels, self.m)}

    def emitters(self, word: str) -> list[int]:
        """Preterminal ids with a lexical rule for ``word``."""
        if self._by_word is None:
            by: dict[str, list[int]] = defaultdict(list)
            for a, w in self.lexical:
                by[w].append(a)
            self._by_word = dict(by)
        return self._by_word.get(word, [])

    @property
    def lexicon(self) -> set[str]:
        return {w for _, w in self.lexical}

    def __eq__(self, other):
        if not isinstance(other, Lpcfg):
            return NotImplemented
        return (self.symbols == other.symbols and np.array_equal(self.m, other.m)
                and _blocks_equal(self.binary, other.binary)
                and _blocks_equal(self.lexical, other.lexical)
                and _blocks_equal(self.root, other.root))

    def to_pcfg(self) -> Pcfg:
        """Only defined when every nonterminal has a single state."""
        if (self.m != 1).any():
            raise GrammarError("to_pcfg needs m_a = 1 everywhere")
        lab = self.symbols.labels
        return Pcfg({(lab[a], lab[b], lab[c]): float(p[0, 0, 0]) for (a, b, c), p in self.binary.items()},
                    {(lab[a], w): float(p[0]) for (a, w), p in self.lexical.items()},
                    {lab[a]: float(p[0]) for a, p in self.root.items()})


def _blocks_equal(x: Mapping, y: Mapping) -> bool:
    return x.keys() == y.keys() and all(np.array_equal(x[k], y[k]) for k in x)


@dataclass(frozen=True)
class Violation:
    nonterminal: str
    state: int | None
    mass: float

    def __str__(self):
        where = "root distribution" if self.state is None else f"{self.nonterminal}({self.state})"
        return f"{where}: mass {self.mass!r}"


def rule_mass(g: Lpcfg) -> np.ndarray:
    """Outgoing mass per (nonterminal, state), flattened into one array per id."""
    mass = [np.zeros(m) for m in g.m]
    for (a, _, _), block in g.binary.items():
        mass[a] += block.sum(axis=(1, 2))
    for (a, _), vec in g.lexical.items():
        mass[a] += vec
    return mass


def validate(g: Lpcfg, tol: float = 1e-9) -> list[Violation]:
    out: list[Violation] = []
    # an entry above 1 already shows up as excess mass, so only sign and finiteness here
    for blocks in (g.binary, g.lexical, g.root):
        for key, block in blocks.items():
            bad = ~np.isfinite(block) | (block < 0)
            if bad.any():
                a = key[0] if isinstance(key, tuple) else key
                h = int(np.argwhere(bad)[0][0])
                out.append(Violation(g.symbols.labels[a], None if blocks is g.root else h,
                                     float(block[np.unravel_index(np.argmax(bad), bad.shape)])))
    for a, mass in enumerate(rule_mass(g)):
        for h, v in enumerate(mass):
            if abs(v - 1.0) > tol:
                out.append(Violation(g.symbols.labels[a], h, float(v)))
    total = sum(float(v.sum()) for v in g.root.values())
    if abs(total - 1.0) > tol:
        out.append(Violation("ROOT", None, total))
    return out


# -- text format ----------------------------------------------------------

def _fmt(p: float) -> str:
    return format(float(p), ".17g")


def serialize(g: Lpcfg) -> bytes:
    buf = io.StringIO()
    sym = g.symbols
    buf.write(FORMAT_HEADER + "\n")
    for i, lab in enumerate(sym.labels):
        buf.write(f"NT {i} {lab} {'P' if sym.preterminal[i] else 'I'} {g.m[i]}\n")
    n = 0
    for a, vec in g.root.items():
        for h in range(len(vec)):
            if vec[h] != 0.0:
                buf.write(f"ROOT {a} {h} {_fmt(vec[h])}\n")
                n += 1
    for (a, b, c), block in g.binary.items():
        for h1, h2, h3 in zip(*np.nonzero(block)):
            buf.write(f"BIN {a} {h1} {b} {h2} {c} {h3} {_fmt(block[h1, h2, h3])}\n")
            n += 1
    for (a, w), vec in g.lexical.items():
        for h in np.nonzero(vec)[0]:
            buf.write(f"LEX {a} {h} {w} {_fmt(vec[h])}\n")
            n += 1
    buf.write(f"END {n}\n")
    return buf.getvalue().encode("utf-8")


def deserialize(data: bytes, tol: float = 1e-9) -> Lpcfg:
    lines = data.decode("utf-8").splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        got = lines[0].strip() if lines else "<empty>"
        raise GrammarError(f"unsupported grammar format {got!r}; expected {FORMAT_HEADER!r}")
    labels: dict[int, tuple[str, bool, int]] = {}
    roots: dict[tuple[int, int], float] = {}
    bins: dict[tuple[int, int, int, int, int, int], float] = {}
    lexs: dict[tuple[int, int, str], float] = {}
    end = None
    for lno, line in enumerate(lines[1:], 2):
        parts = line.split()
        if not parts:
            continue
        if end is not None:
            raise GrammarError(f"line {lno}: content after END")
        try:
            kind = parts[0]
            if kind == "NT":
                labels[int(parts[1])] = (parts[2], parts[3] == "P", int(parts[4]))
            elif kind == "ROOT":
                roots[int(parts[1]), int(parts[2])] = float(parts[3])
            elif kind == "BIN":
                bins[tuple(int(x) for x in parts[1:7])] = float(parts[7])
            elif kind == "LEX":
                lexs[int(parts[1]), int(parts[2]), parts[3]] = float(parts[4])
            elif kind == "END":
                end = int(parts[1])
            else:
                raise GrammarError(f"line {lno}: unknown record {kind!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, GrammarError):
                raise
            raise GrammarError(f"line {lno}: malformed record {line!r}") from exc
    if end is None:
        raise GrammarError("truncated grammar stream (missing END record)")
    if not (roots or bins or lexs):
        raise GrammarError("no rules")
    if end != len(roots) + len(bins) + len(lexs):
        raise GrammarError("truncated grammar stream (record count mismatch)")
    if sorted(labels) != list(range(len(labels))):
        raise GrammarError("nonterminal ids are not contiguous")
    order = [labels[i] for i in range(len(labels))]
    sym = SymbolTable([l for l, p, _ in order if not p], [l for l, p, _ in order if p],
                      {w for _, _, w in lexs})
    if [l for l, _, _ in order] != sym.labels:
        raise GrammarError("nonterminal table is not in canonical order")
    m = [k for _, _, k in order]
    binary: dict = {}
    for (a, h1, b, h2, c, h3), p in bins.items():
        blk = binary.setdefault((a, b, c), np.zeros((m[a], m[b], m[c])))
        blk[h1, h2, h3] = p
    lexical: dict = {}
    for (a, h, w), p in lexs.items():
        lexical.setdefault((a, w), np.zeros(m[a]))[h] = p
    root: dict = {}
    for (a, h), p in roots.items():
        root.setdefault(a, np.zeros(m[a]))[h] = p
    g = Lpcfg(sym, dict(zip(sym.labels, m)), binary, lexical, root)
    bad = validate(g, tol)
    if bad:
        raise GrammarError("grammar fails normalization: " + "; ".join(map(str, bad[:5])))
    return g


def save_grammar(path, g: Lpcfg) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(g))


def load_grammar(path) -> Lpcfg:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
