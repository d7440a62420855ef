import numpy as np
import pytest
from hypothesis import given, strategies as st

from lpcfgopt.grammar import (FORMAT_HEADER, GrammarError, Lpcfg, SymbolTable, deserialize, load_grammar,
                              mle_pcfg, save_grammar, serialize, validate)
from lpcfgopt.estimation import mle_lpcfg
from lpcfgopt.synth import SynthSpec, random_lpcfg
from lpcfgopt.treebank import binarize, parse_bracketed

from .conftest import random_tree


def corpus(text):
    return parse_bracketed(text)


def test_mle_fraction():
    ts = corpus("(S (A a) (B b))\n" * 3 + "(S (C c) (D d))\n")
    g = mle_pcfg(ts)
    assert g.binary["S", "A", "B"] == pytest.approx(0.75)
    assert g.binary["S", "C", "D"] == pytest.approx(0.25)
    assert g.root == {"S": 1.0}


def test_single_tree_all_ones():
    g = mle_pcfg(corpus("(S (NP (D the) (N cat)) (V ran))"))
    assert set(g.binary.values()) == {1.0}
    assert set(g.lexical.values()) == {1.0}


def test_empty_corpus():
    with pytest.raises(GrammarError):
        mle_pcfg([])


def test_random_corpus_normalized(rng):
    ts = [binarize(random_tree(rng)) for _ in range(200)]
    for t in ts:  # labels used both as tag and phrase would break the partition
        assert t
    g = mle_pcfg(ts).to_lpcfg()
    assert validate(g, 1e-9) == []
    # independent recount of one left-hand side
    lhs = g.symbols.labels[int(np.nonzero(~g.symbols.preterminal)[0][0])]
    counts = {}
    for t in ts:
        for n in t.preorder():
            if n.label == lhs:
                k = (n.children[0].label, n.children[1].label)
                counts[k] = counts.get(k, 0) + 1
    tot = sum(counts.values())
    pc = mle_pcfg(ts)
    for (b, c), k in counts.items():
        assert pc.binary[lhs, b, c] == pytest.approx(k / tot, abs=1e-12)


def test_partition_enforced():
    sym = SymbolTable(["S"], ["A"], ["a"])
    with pytest.raises(GrammarError):
        Lpcfg(sym, {"S": 1, "A": 1}, {}, {(1, "a"): [1.0]}, {1: [1.0]})  # S has a lexical rule
    with pytest.raises(GrammarError):
        Lpcfg(sym, {"S": 1, "A": 1}, {(0, 1, 1): np.ones((1, 1, 1))}, {}, {})  # A is preterminal
    with pytest.raises(GrammarError):
        SymbolTable(["X"], ["X"])


def test_validate_fault_injection():
    g = random_lpcfg(SynthSpec(seed=3))
    assert validate(g, 1e-9) == []
    key = sorted(g.lexical)[0]
    g.lexical[key] = g.lexical[key].copy()
    g.lexical[key][0] *= 2
    bad = validate(g, 1e-9)
    assert len(bad) == 1
    assert bad[0].nonterminal == g.symbols.labels[key[0]] and bad[0].state == 0


def test_roundtrip_identity():
    for seed in range(5):
        g = random_lpcfg(SynthSpec(interminals=3, preterminals=3, states=[1, 2, 3, 2, 4, 1], seed=seed))
        h = deserialize(serialize(g))
        assert h == g
        assert h.states == g.states and h.symbols == g.symbols
        assert validate(h) == []


def test_roundtrip_file(tmp_path):
    g = random_lpcfg(SynthSpec(seed=1))
    save_grammar(tmp_path / "g.lpcfg", g)
    assert load_grammar(tmp_path / "g.lpcfg") == g
    assert (tmp_path / "g.lpcfg").read_bytes().startswith(FORMAT_HEADER.encode())


def test_no_rules():
    with pytest.raises(GrammarError, match="no rules"):
        deserialize(f"{FORMAT_HEADER}\nNT 0 A P 1\nEND 0\n".encode())


def test_minimal_file():
    g = deserialize(f"{FORMAT_HEADER}\nNT 0 A P 1\nROOT 0 0 1\nLEX 0 0 a 1\nEND 2\n".encode())
    assert g.states == {"A": 1} and g.lexicon == {"a"}


def test_version_and_truncation():
    good = serialize(random_lpcfg(SynthSpec(seed=2)))
    with pytest.raises(GrammarError, match="format"):
        deserialize(good.replace(b"LPCFG v1", b"LPCFG v2"))
    lines = good.splitlines(keepends=True)
    with pytest.raises(GrammarError, match="truncated"):
        deserialize(b"".join(lines[:-3]))
    with pytest.raises(GrammarError, match="truncated"):
        deserialize(b"".join(lines[:-3] + lines[-1:]))


def test_normalization_checked_on_load():
    text = serialize(random_lpcfg(SynthSpec(seed=2))).decode()
    lines = text.splitlines()
    i = next(k for k, ln in enumerate(lines) if ln.startswith("LEX"))
    parts = lines[i].split()
    parts[-1] = repr(float(parts[-1]) * 0.5)
    lines[i] = " ".join(parts)
    with pytest.raises(GrammarError, match="normalization"):
        deserialize(("\n".join(lines) + "\n").encode())


@given(st.integers(0, 10_000))
def test_m1_lpcfg_matches_pcfg(seed):
    rng = np.random.default_rng(seed)
    ts = [binarize(random_tree(rng)) for _ in range(20)]
    for t in ts:
        for n in t.preorder():
            n.state = 0
    lp = mle_lpcfg(ts, {lab: 1 for t in ts for lab in (n.label for n in t.preorder())})
    pc = mle_pcfg(ts)
    back = lp.to_pcfg()
    for k, v in pc.binary.items():
        assert abs(back.binary[k] - v) <= 1e-12
    for k, v in pc.lexical.items():
        assert abs(back.lexical[k] - v) <= 1e-12
    for k, v in pc.root.items():
        assert abs(back.root[k] - v) <= 1e-12
