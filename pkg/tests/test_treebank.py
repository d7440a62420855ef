from collections import Counter

import numpy as np
import pytest
from hypothesis import given

from lpcfgopt.treebank import (RARE_PREFIX, ConfigError, CorpusProfile, Tree, TreebankError, Vocab, binarize,
                               corpus_stats, debinarize, parse_bracketed, preprocess, read_morph_sidecar,
                               read_tagged, render, replace_rare, strip_decorations, strip_label)

from .conftest import random_tree, trees


def one(text):
    (t,) = parse_bracketed(text)
    return t


class TestParse:
    def test_example_counts(self):
        t = one("(S (NP (D the) (N mouse)) (VP (V ran)))")
        pre = t.preterminals()
        assert [p.label for p in pre] == ["D", "N", "V"]
        inter = [n for n in t.preorder() if not n.is_preterminal]
        assert [n.label for n in inter] == ["S", "NP", "VP"]
        # the VP -> V unary collapses, leaving two interminals
        b = binarize(t)
        assert sorted(n.label for n in b.preorder() if not n.is_preterminal) == ["NP", "S"]
        assert sorted(b.tags()) == ["D", "N", "VP|V"]

    def test_unbalanced(self):
        with pytest.raises(TreebankError, match="unbalanced") as e:
            parse_bracketed("(S (NP x)")
        assert e.value.line == 1

    def test_empty_constituent(self):
        with pytest.raises(TreebankError, match="empty"):
            parse_bracketed("(S ())")

    def test_error_position(self):
        with pytest.raises(TreebankError) as e:
            parse_bracketed("(S (A a))\n(S (B b) ())")
        assert e.value.line == 2 and e.value.column == 10

    def test_wrapper_and_comments(self):
        ts = parse_bracketed("# header\n( (S (A a) (B b)) )\n(X (Y y))\n")
        assert [render(t) for t in ts] == ["(S (A a) (B b))", "(X (Y y))"]

    def test_mixed_words_rejected(self):
        with pytest.raises(TreebankError):
            parse_bracketed("(S word (A a))")

    def test_render_roundtrip_random(self, rng):
        for _ in range(100):
            t = random_tree(rng)
            text = render(t)
            assert render(one(text)) == text
            spaced = text.replace(" ", "   ").replace("(", "( ")
            assert one(spaced) == t


class TestBinarize:
    def test_unary_to_preterminal(self):
        assert render(binarize(one("(NP (NN dog))"))) == "(NP|NN dog)"
        assert render(debinarize(one("(NP|NN dog)"))) == "(NP (NN dog))"

    def test_binary_unchanged(self):
        t = one("(S (A a) (B b))")
        assert binarize(t) == t

    def test_ternary(self):
        t = one("(S (A a) (B b) (C c))")
        b = binarize(t)
        assert render(b) == "(S (A a) (@S (B b) (C c)))"
        assert debinarize(b) == t

    def test_unary_chain_over_wide_node(self):
        t = one("(ROOT (S (NP (N x)) (V y) (N z)))")
        assert render(binarize(t)) == "(ROOT|S (NP|N x) (@ROOT|S (V y) (N z)))"

    def test_reserved_symbols(self):
        with pytest.raises(ValueError):
            binarize(one("(A|B (C c) (D d))"))
        with pytest.raises(ValueError):
            binarize(one("(@A (C c) (D d))"))

    def test_malformed_labels(self):
        with pytest.raises(TreebankError):
            debinarize(one("(S (A a) (@ (B b) (C c)))"))
        with pytest.raises(TreebankError):
            debinarize(one("(S| (A a) (B b))"))

    def test_parser_output_rooted_at_continuation(self):
        assert render(debinarize(one("(@S (A a) (B b))"))) == "(S (A a) (B b))"

    def test_roundtrip_1000(self, rng):
        for _ in range(1000):
            t = random_tree(rng, max_depth=5)
            assert debinarize(binarize(t)) == t

    @given(trees())
    def test_binary_shape(self, t):
        for n in binarize(t).preorder():
            assert n.is_preterminal or len(n.children) == 2


class TestDecorations:
    def test_strip(self):
        assert strip_label("NP-SBJ") == "NP"
        assert strip_label("NP") == "NP"
        assert strip_label("PP=2") == "PP"
        assert strip_label("S##x") == "S"
        assert strip_label("-NONE-") == "-NONE-"

    def test_fine_tags(self):
        t = one("(S (VB egin) (N x))")
        out = strip_decorations(t, keep_morph=True, morphs=["AZP=Fin|NUM=S", None], morph_field="AZP")
        assert out.tags() == ["VB+Fin", "N"]

    def test_whole_bundle_without_field(self):
        t = one("(S (VB egin) (N x))")
        out = strip_decorations(t, keep_morph=True, morphs=["Pres", "_"])
        assert out.tags() == ["VB+Pres", "N"]


class TestRare:
    def _corpus(self, n_cat, n_dog):
        return [one("(S (NN cat) (VB ran))")] * n_cat + [one("(S (NN dog) (VB ran))")] * n_dog

    def test_threshold_boundary(self):
        corpus = self._corpus(20, 19)
        vocab = Vocab.build(corpus, 20)
        out = replace_rare(corpus, vocab)
        assert out[0].words() == ["cat", "ran"]
        assert out[-1].words() == [RARE_PREFIX + "NN", "ran"]

    def test_morph_signature(self):
        corpus = [one("(S (VB swam) (NN fish))")] * 3
        vocab = Vocab.build(corpus, 20, "pos+morph")
        out = replace_rare(corpus, vocab, morphs=[["Pres", "Sg"]] * 3)
        assert out[0].words() == ["_RARE_VB+Pres", "_RARE_NN+Sg"]

    def test_missing_morph_names_token(self):
        corpus = [one("(S (VB swam) (NN fish))")]
        vocab = Vocab.build(corpus, 20, "pos+morph")
        with pytest.raises(ConfigError, match="fish"):
            replace_rare(corpus, vocab, morphs=[["Pres", None]])
        with pytest.raises(ConfigError):
            replace_rare(corpus, vocab)

    def test_case_preserved(self):
        corpus = [one("(S (NN Cat) (NN cat))")] * 25
        out = replace_rare(corpus, Vocab.build(corpus, 20))
        assert out[0].words() == ["Cat", "cat"]

    @given(trees())
    def test_idempotent(self, t):
        corpus = [t, t.copy()]
        vocab = Vocab.build(corpus, 2)
        once = replace_rare(corpus, vocab)
        assert replace_rare(once, vocab) == once
        for a, b in zip(t.words(), once[0].words()):
            if not vocab.is_rare(a):
                assert a == b


class TestStats:
    def test_counts(self):
        s = corpus_stats([one("(S (A a) (B b))")] * 2)
        assert (s.sentences, s.tokens, s.lexicon, s.nonterminals) == (2, 4, 2, 3)

    def test_empty(self):
        s = corpus_stats([])
        assert (s.sentences, s.tokens, s.lexicon, s.nonterminals) == (0, 0, 0, 0)

    def test_table_header(self):
        assert corpus_stats([]).table().splitlines()[0].split("\t") == ["sent.", "tokens", "lex. size", "#nts"]

    def test_random_recount(self, rng):
        corpus = [binarize(random_tree(rng)) for _ in range(50)]
        s = corpus_stats(corpus)
        toks, words, labels = 0, set(), set()
        for t in corpus:
            stack = [t]
            while stack:
                n = stack.pop()
                labels.add(n.label)
                if n.word is not None:
                    toks += 1
                    words.add(n.word)
                stack.extend(n.children)
        assert (s.sentences, s.tokens, s.lexicon, s.nonterminals) == (50, toks, len(words), len(labels))
        assert s.lexicon <= s.tokens


class TestFiles:
    def test_tagged_errors_carry_line(self, tmp_path):
        p = tmp_path / "x.tsv"
        p.write_text("a\tDT\n\nb\tNN\nc\n")
        with pytest.raises(TreebankError) as e:
            read_tagged(p)
        assert e.value.line == 4

    def test_sidecar_alignment(self, tmp_path):
        p = tmp_path / "m.tsv"
        p.write_text("the\tDT\t_\ncat\tNN\tSg\n")
        ts = [one("(S (DT the) (NN cat))")]
        assert read_morph_sidecar(p, ts) == [["_", "Sg"]]
        with pytest.raises(ConfigError):
            read_morph_sidecar(p, [one("(S (DT a) (NN cat))")])

    def test_profile_roundtrip(self):
        p = CorpusProfile(delimiters=("-", "#"), threshold=5, mode="pos+morph", fine_tags=True, morph_field="AZP")
        assert CorpusProfile.from_text(p.to_text()) == p
        with pytest.raises(ConfigError):
            CorpusProfile.from_text("bogus = 1\n")

    def test_preprocess_needs_morph(self):
        with pytest.raises(ConfigError):
            preprocess([one("(S (A a) (B b))")], CorpusProfile(mode="pos+morph"))

    def test_preprocess_uses_true_pos(self):
        trees = [one("(S (NP-SBJ (NN cat)) (VP (VB ran) (RB far) (RB away)))")]
        out, vocab = preprocess(trees, CorpusProfile(threshold=2))
        assert render(out[0]) == ("(S (NP|NN _RARE_NN) (VP (VB _RARE_VB) (@VP (RB _RARE_RB) (RB _RARE_RB))))")
        assert Counter(vocab.counts)["cat"] == 1
