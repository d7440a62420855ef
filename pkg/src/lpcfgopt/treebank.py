"""Bracketed treebank I/O, binarization and rare-word preprocessing.

Trees are skeletal: internal nodes carry a nonterminal label, and a
preterminal carries its word directly (``Tree("D", word="the")`` renders as
``(D the)``).  Binarization collapses unary chains into ``A|B`` labels and
right-binarizes wide nodes with ``@A`` continuation symbols; both transforms
are undone by :func:`debinarize`.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

UNARY_SEP = "|"
CONT_PREFIX = "@"
RARE_PREFIX = "_RARE_"
PREPROCESSED_MARKER = "# lpcfgopt-preprocessed"


class TreebankError(ValueError):
    """Malformed treebank input."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class ConfigError(ValueError):
    """Inconsistent preprocessing configuration."""


class Tree:
    """A constituency tree node.

    Exactly one of ``children`` (non-empty) or ``word`` is set.  ``state`` is
    the latent-state id of the node in annotated trees and ``None`` otherwise.
    """

    __slots__ = ("label", "children", "word", "state")

    def __init__(self, label: str, children: Sequence["Tree"] = (), word: str | None = None,
                 state: int | None = None):
        children = list(children)
        if (word is None) == (not children):
            raise ValueError(f"node {label!r} must have either a word or children")
        self.label = label
        self.children = children
        self.word = word
        self.state = state

    @property
    def is_preterminal(self) -> bool:
        return self.word is not None

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        return (self.label == other.label and self.word == other.word
                and self.state == other.state and self.children == other.children)

    def __hash__(self):
        return hash(str(self))

    def __repr__(self):
        return f"Tree({str(self)!r})"

    def __str__(self):
        return render(self)

    def preorder(self) -> Iterator["Tree"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def preterminals(self) -> list["Tree"]:
        return [n for n in self.preorder() if n.is_preterminal]

    def words(self) -> list[str]:
        return [n.word for n in self.preorder() if n.is_preterminal]

    def tags(self) -> list[str]:
        return [n.label for n in self.preorder() if n.is_preterminal]

    def copy(self) -> "Tree":
        if self.is_preterminal:
            return Tree(self.label, word=self.word, state=self.state)
        return Tree(self.label, [c.copy() for c in self.children], state=self.state)

    def spans(self) -> list[tuple["Tree", int, int]]:
        """(node, start, end) triples in pre-order."""
        out: list[tuple[Tree, int, int]] = []

        def visit(node: Tree, start: int) -> int:
            slot = len(out)
            out.append((node, start, start))
            if node.is_preterminal:
                end = start + 1
            else:
                end = start
                for child in node.children:
                    end = visit(child, end)
            out[slot] = (node, start, end)
            return end

        visit(self, 0)
        return out


def render(tree: Tree) -> str:
    if tree.is_preterminal:
        return f"({tree.label} {tree.word})"
    return "(" + tree.label + " " + " ".join(render(c) for c in tree.children) + ")"


def _tokenize(text: str):
    line, line_start = 1, 0
    for m in re.finditer(r"\n|\(|\)|[^\s()]+", text):
        tok = m.group()
        if tok == "\n":
            line += 1
            line_start = m.end()
            continue
        yield tok, line, m.start() - line_start + 1


def parse_bracketed(text: str) -> list[Tree]:
    """Parse every top-level s-expression in ``text`` into a :class:`Tree`.

    Lines starting with ``#`` are comments.  An outermost unlabeled wrapper
    ``( (S ...) )`` is stripped.
    """
    text = "\n".join("" if ln.lstrip().startswith("#") else ln for ln in text.split("\n"))
    tokens = list(_tokenize(text))
    trees: list[Tree] = []
    pos = 0

    def parse_node(pos: int) -> tuple[Tree | None, int]:
        # tokens[pos] is "("
        _, lno, col = tokens[pos]
        pos += 1
        if pos >= len(tokens):
            raise TreebankError("unbalanced parentheses at end of input", lno, col)
        tok, l2, c2 = tokens[pos]
        if tok == ")":
            raise TreebankError("empty constituent ()", lno, col)
        if tok == "(":
            # unlabeled wrapper
            child, pos = parse_node(pos)
            if pos >= len(tokens):
                raise TreebankError("unbalanced parentheses at end of input", lno, col)
            if tokens[pos][0] != ")":
                raise TreebankError("unlabeled wrapper must hold exactly one tree", *tokens[pos][1:])
            return child, pos + 1
        label = tok
        pos += 1
        children: list[Tree] = []
        words: list[str] = []
        while True:
            if pos >= len(tokens):
                raise TreebankError("unbalanced parentheses at end of input", lno, col)
            tok, l3, c3 = tokens[pos]
            if tok == ")":
                pos += 1
                break
            if tok == "(":
                child, pos = parse_node(pos)
                children.append(child)
            else:
                words.append(tok)
                pos += 1
        if words and children:
            raise TreebankError(f"node {label!r} mixes words and constituents", lno, col)
        if len(words) > 1:
            raise TreebankError(f"preterminal {label!r} has {len(words)} words", lno, col)
        if not words and not children:
            raise TreebankError(f"constituent {label!r} has no children", lno, col)
        if words:
            return Tree(label, word=words[0]), pos
        return Tree(label, children), pos

    while pos < len(tokens):
        tok, lno, col = tokens[pos]
        if tok != "(":
            raise TreebankError(f"unexpected token {tok!r} outside a tree", lno, col)
        tree, pos = parse_node(pos)
        trees.append(tree)
    return trees


def read_treebank(path) -> list[Tree]:
    with open(path, encoding="utf-8") as fh:
        return parse_bracketed(fh.read())


def write_treebank(path, trees: Iterable[Tree], header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(header.rstrip("\n") + "\n")
        for t in trees:
            fh.write(render(t) + "\n")


# -- binarization ---------------------------------------------------------

def _check_label(label: str) -> None:
    if UNARY_SEP in label or label.startswith(CONT_PREFIX):
        raise ValueError(f"label {label!r} uses a reserved binarization symbol")


def binarize(tree: Tree) -> Tree:
    """Collapse nonterminal unary chains and right-binarize wide nodes."""
    labels = [tree.label]
    node = tree
    while not node.is_preterminal and len(node.children) == 1:
        node = node.children[0]
        labels.append(node.label)
    for lab in labels:
        _check_label(lab)
    label = UNARY_SEP.join(labels)
    if node.is_preterminal:
        return Tree(label, word=node.word)
    kids = [binarize(c) for c in node.children]
    cont = CONT_PREFIX + label
    right = kids[-1]
    for i in range(len(kids) - 2, 0, -1):
        right = Tree(cont, [kids[i], right])
    return Tree(label, [kids[0], right])


def debinarize(tree: Tree) -> Tree:
    """Inverse of :func:`binarize`; also tolerates parser output rooted at ``@A``."""
    label = tree.label
    if label.startswith(CONT_PREFIX):
        label = label[len(CONT_PREFIX):]
        if not label:
            raise TreebankError("malformed continuation label '@'")
    return _expand(label, tree)


def _splice(node: Tree) -> list[Tree]:
    out: list[Tree] = []
    for child in node.children:
        if child.label.startswith(CONT_PREFIX):
            if len(child.label) == len(CONT_PREFIX):
                raise TreebankError("malformed continuation label '@'")
            if child.is_preterminal:
                raise TreebankError(f"continuation label {child.label!r} on a preterminal")
            out.extend(_splice(child))
        else:
            out.append(debinarize(child))
    return out


def _expand(label: str, node: Tree) -> Tree:
    parts = label.split(UNARY_SEP)
    if any(not p for p in parts):
        raise TreebankError(f"malformed collapsed label {label!r}")
    if node.is_preterminal:
        inner = Tree(parts[-1], word=node.word)
    else:
        inner = Tree(parts[-1], _splice(node))
    for p in reversed(parts[:-1]):
        inner = Tree(p, [inner])
    return inner


# -- decorations and rare words ------------------------------------------

DEFAULT_DELIMITERS = ("-", "=", "##")


def strip_label(label: str, delimiters: Sequence[str] = DEFAULT_DELIMITERS) -> str:
    if len(label) > 1 and label.startswith("-") and label.endswith("-"):
        return label  # -NONE-, -LRB- and friends
    cut = len(label)
    for d in delimiters:
        i = label.find(d, 1)
        if i != -1:
            cut = min(cut, i)
    return label[:cut]


def morph_value(morph: str | None, field_name: str | None) -> str | None:
    """Pull one feature value out of a ``k=v|k=v`` bundle; with no field name
    the whole bundle is the value."""
    if morph is None or morph in ("", "_"):
        return None
    if not field_name:
        return morph
    for item in morph.split("|"):
        k, _, v = item.partition("=")
        if k == field_name:
            return v or None
    return None


def strip_decorations(tree: Tree, keep_morph: bool = False, morphs: Sequence[str | None] | None = None,
                      morph_field: str | None = None,
                      delimiters: Sequence[str] = DEFAULT_DELIMITERS) -> Tree:
    """Drop functional annotations; with ``keep_morph`` build fine tags ``POS+value``."""
    pos = 0

    def visit(node: Tree) -> Tree:
        nonlocal pos
        label = strip_label(node.label, delimiters)
        if node.is_preterminal:
            if keep_morph and morphs is not None:
                val = morph_value(morphs[pos], morph_field)
                if val:
                    label = f"{label}+{val}"
            pos += 1
            return Tree(label, word=node.word, state=node.state)
        return Tree(label, [visit(c) for c in node.children], state=node.state)

    return visit(tree)


@dataclass
class Vocab:
    counts: Counter = field(default_factory=Counter)
    threshold: int = 20
    mode: str = "pos"

    def __post_init__(self):
        if self.threshold < 1:
            raise ConfigError("rare threshold must be >= 1")
        if self.mode not in ("pos", "pos+morph"):
            raise ConfigError(f"unknown rare-word mode {self.mode!r}")

    @classmethod
    def build(cls, trees: Iterable[Tree], threshold: int = 20, mode: str = "pos") -> "Vocab":
        counts: Counter = Counter()
        for t in trees:
            counts.update(t.words())
        return cls(counts, threshold, mode)

    def is_rare(self, word: str) -> bool:
        return self.counts.get(word, 0) < self.threshold


def rare_signature(tag: str, morph: str | None = None) -> str:
    if morph:
        return f"{RARE_PREFIX}{tag}+{morph}"
    return f"{RARE_PREFIX}{tag}"


def replace_rare(trees: Sequence[Tree], vocab: Vocab,
                 morphs: Sequence[Sequence[str | None]] | None = None,
                 morph_field: str | None = None) -> list[Tree]:
    """Replace words seen fewer than ``vocab.threshold`` times by a POS
    (or POS+morphology) pseudo-token.  Case is preserved."""
    if vocab.mode == "pos+morph" and morphs is None:
        raise ConfigError("rare-word mode pos+morph needs morphology annotations")
    out = []
    for ti, tree in enumerate(trees):
        pos = 0

        def visit(node: Tree) -> Tree:
            nonlocal pos
            if node.is_preterminal:
                word = node.word
                if not word.startswith(RARE_PREFIX) and vocab.is_rare(word):
                    if vocab.mode == "pos+morph":
                        m = morph_value(morphs[ti][pos], morph_field)
                        if m is None:
                            raise ConfigError(
                                f"token {word!r} (sentence {ti + 1}, position {pos + 1}) has no morphology")
                        word = rare_signature(node.label, m)
                    else:
                        word = rare_signature(node.label)
                pos += 1
                return Tree(node.label, word=word, state=node.state)
            return Tree(node.label, [visit(c) for c in node.children], state=node.state)

        out.append(visit(tree))
    return out


@dataclass(frozen=True)
class CorpusStats:
    sentences: int = 0
    tokens: int = 0
    lexicon: int = 0
    nonterminals: int = 0

    def table(self) -> str:
        return ("sent.\ttokens\tlex. size\t#nts\n"
                f"{self.sentences}\t{self.tokens}\t{self.lexicon}\t{self.nonterminals}\n")


def corpus_stats(trees: Sequence[Tree]) -> CorpusStats:
    words: set[str] = set()
    labels: set[str] = set()
    tokens = 0
    for t in trees:
        for node in t.preorder():
            labels.add(node.label)
            if node.is_preterminal:
                tokens += 1
                words.add(node.word)
    return CorpusStats(len(trees), tokens, len(words), len(labels))


# -- sidecar and profile files -------------------------------------------

def read_tagged(path) -> list[list[tuple[str, ...]]]:
    """Read ``word<TAB>tag[<TAB>morph]`` rows, blank line between sentences."""
    sents: list[list[tuple[str, ...]]] = []
    cur: list[tuple[str, ...]] = []
    with open(path, encoding="utf-8") as fh:
        for lno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                if cur:
                    sents.append(cur)
                    cur = []
                continue
            cols = line.split("\t")
            if len(cols) < 2 or len(cols) > 3 or not all(cols[:2]):
                raise TreebankError(f"{path}: expected 2 or 3 tab-separated columns", lno, 1)
            cur.append(tuple(cols))
    if cur:
        sents.append(cur)
    return sents


def read_morph_sidecar(path, trees: Sequence[Tree]) -> list[list[str | None]]:
    rows = read_tagged(path)
    if len(rows) != len(trees):
        raise ConfigError(f"{path}: {len(rows)} sentences but treebank has {len(trees)}")
    out = []
    for i, (sent, tree) in enumerate(zip(rows, trees)):
        words = tree.words()
        if [r[0] for r in sent] != words:
            raise ConfigError(f"{path}: sentence {i + 1} tokens do not match the treebank")
        out.append([r[2] if len(r) > 2 else None for r in sent])
    return out


def parse_kv(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment line."""
    out = {}
    for lno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        key, sep, value = s.partition("=")
        if not sep:
            raise ConfigError(f"line {lno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def _flag(v: str) -> bool:
    return v.lower() in ("1", "true", "yes", "on")


@dataclass
class CorpusProfile:
    delimiters: tuple[str, ...] = DEFAULT_DELIMITERS
    threshold: int = 20
    mode: str = "pos"
    fine_tags: bool = False
    morph_field: str | None = None

    @classmethod
    def from_text(cls, text: str) -> "CorpusProfile":
        kv = parse_kv(text)
        p = cls()
        if "delimiters" in kv:
            p.delimiters = tuple(kv["delimiters"].split())
        if "threshold" in kv:
            p.threshold = int(kv["threshold"])
        if "mode" in kv:
            p.mode = kv["mode"]
        if "fine_tags" in kv:
            p.fine_tags = _flag(kv["fine_tags"])
        if "morph_field" in kv:
            p.morph_field = kv["morph_field"] or None
        unknown = set(kv) - {"delimiters", "threshold", "mode", "fine_tags", "morph_field"}
        if unknown:
            raise ConfigError(f"unknown profile keys: {', '.join(sorted(unknown))}")
        Vocab(threshold=p.threshold, mode=p.mode)  # validates
        return p

    def to_text(self) -> str:
        return (f"delimiters = {' '.join(self.delimiters)}\nthreshold = {self.threshold}\n"
                f"mode = {self.mode}\nfine_tags = {str(self.fine_tags).lower()}\n"
                f"morph_field = {self.morph_field or ''}\n")

    @property
    def needs_morph(self) -> bool:
        return self.mode == "pos+morph" or self.fine_tags


def clean_trees(trees: Sequence[Tree], profile: CorpusProfile,
                morphs: Sequence[Sequence[str | None]] | None = None) -> list[Tree]:
    return [strip_decorations(t, keep_morph=profile.fine_tags,
                              morphs=morphs[i] if morphs is not None else None,
                              morph_field=profile.morph_field, delimiters=profile.delimiters)
            for i, t in enumerate(trees)]


def preprocess(trees: Sequence[Tree], profile: CorpusProfile,
               morphs: Sequence[Sequence[str | None]] | None = None) -> tuple[list[Tree], Vocab]:
    """Strip decorations, replace rare words, then binarize."""
    if profile.needs_morph and morphs is None:
        raise ConfigError("profile requires morphology but no sidecar was given")
    clean = clean_trees(trees, profile, morphs)
    vocab = Vocab.build(clean, profile.threshold, profile.mode)
    replaced = replace_rare(clean, vocab, morphs, profile.morph_field)
    return [binarize(t) for t in replaced], vocab
