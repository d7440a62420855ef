from collections import Counter

import numpy as np
import pytest
from scipy import stats

from lpcfgopt.estimation import svd_project
from lpcfgopt.features import FeatureConfig, accumulate_covariance
from lpcfgopt.grammar import Pcfg, serialize, validate
from lpcfgopt.synth import (BudgetExceeded, SynthSpec, enumerate_derivations, enumerate_parses,
                            exact_covariance, random_lpcfg, sample_trees)
from lpcfgopt.treebank import render


def test_single_state_is_pcfg():
    g = random_lpcfg(SynthSpec(states=1, seed=2))
    assert set(g.states.values()) == {1}
    pc = g.to_pcfg()
    assert pc.to_lpcfg() == g


@pytest.mark.parametrize("spec", [
    SynthSpec(seed=0),
    SynthSpec(interminals=3, preterminals=4, words=10, states=[1, 2, 3, 4, 2, 3, 1], seed=5, separability=0.3),
    SynthSpec(interminals=4, preterminals=4, words=12, states=3, seed=1, recursive=True, max_len=10),
])
def test_valid_and_deterministic(spec):
    g = random_lpcfg(spec)
    assert validate(g, 1e-9) == []
    assert serialize(random_lpcfg(spec)) == serialize(g)
    assert serialize(random_lpcfg(SynthSpec(**dict(spec.to_dict(), seed=spec.seed + 1)))) != serialize(g)


def test_spec_checks():
    with pytest.raises(ValueError):
        SynthSpec(separability=1.5)
    with pytest.raises(ValueError):
        SynthSpec(interminals=0)
    with pytest.raises(ValueError):
        SynthSpec(recursive=True)
    with pytest.raises(ValueError):
        SynthSpec(states=[1, 2]).state_map()


def test_sample_zero():
    assert sample_trees(random_lpcfg(SynthSpec()), 0) == []


def test_samples_strip_states():
    sk, ann = sample_trees(random_lpcfg(SynthSpec(seed=3)), 1, seed=3)[0]
    assert all(n.state is None for n in sk.preorder())
    assert all(n.state is not None for n in ann.preorder())
    assert render(sk) == render(ann)


def test_length_cap():
    g = random_lpcfg(SynthSpec(interminals=3, preterminals=3, recursive=True, max_len=6, seed=2))
    assert max(len(s.words()) for s, _ in sample_trees(g, 300, seed=1, max_len=6)) <= 6


def test_root_distribution_within_3_sigma():
    g = random_lpcfg(SynthSpec(interminals=2, preterminals=3, states=3, seed=7))
    n = 10_000
    roots = Counter((t.label, t.state) for _, t in sample_trees(g, n, seed=7))
    for a, pi in g.root.items():
        lab = g.symbols.labels[a]
        for h, p in enumerate(pi):
            sd = np.sqrt(n * p * (1 - p))
            assert abs(roots[lab, h] - n * p) <= 3 * sd + 1e-9


def pooled_chisquare(observed, expected, min_expected=5.0):
    obs, exp = [], []
    rest_o = rest_e = 0.0
    for o, e in zip(observed, expected):
        if e >= min_expected:
            obs.append(o)
            exp.append(e)
        else:
            rest_o += o
            rest_e += e
    if rest_e > 0:
        obs.append(rest_o)
        exp.append(rest_e)
    exp = np.array(exp) * (sum(obs) / sum(exp))
    return stats.chisquare(obs, exp).pvalue


def test_sampler_agrees_with_enumeration():
    g = random_lpcfg(SynthSpec(interminals=2, preterminals=2, words=3, states=2, seed=11))
    enum = enumerate_derivations(g, max_len=4)
    assert sum(p for _, p in enum) == pytest.approx(1.0, abs=1e-12)
    n = 50_000
    counts = Counter(render(s) for s, _ in sample_trees(g, n, seed=11))
    keys = [render(t) for t, _ in enum]
    assert set(counts) <= set(keys)
    p = pooled_chisquare([counts[k] for k in keys], [n * q for _, q in enum])
    assert p > 0.01


def test_rule_frequencies_converge():
    g = random_lpcfg(SynthSpec(interminals=2, preterminals=3, words=6, states=2, seed=13))
    pairs = sample_trees(g, 50_000, seed=13)
    emitted: dict = {}
    for _, t in pairs:
        for node in t.preterminals():
            emitted.setdefault((node.label, node.state), Counter())[node.word] += 1
    pvals = []
    ix = g.symbols.index
    for (lab, h), c in emitted.items():
        words = sorted(w for (a, w) in g.lexical if a == ix[lab])
        probs = [g.lexical[ix[lab], w][h] for w in words]
        pvals.append(pooled_chisquare([c[w] for w in words], [sum(c.values()) * p for p in probs]))
    assert min(pvals) > 0.01 / len(pvals)


def test_exact_full_enumeration_mass_one():
    g = random_lpcfg(SynthSpec(interminals=1, preterminals=2, words=3, states=2, seed=1))
    enum = enumerate_derivations(g, max_len=2)
    assert max(len(t.words()) for t, _ in enum) <= 2
    assert sum(p for _, p in enum) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_exact_covariance_rank(m):
    g = random_lpcfg(SynthSpec(interminals=2, preterminals=2, words=4, states=m, seed=20 + m))
    omega = exact_covariance(g, FeatureConfig(d_in=32, d_out=32), max_len=4)
    for a, st in omega.items():
        p = svd_project(st, min(8, m + 2))
        assert p.sigma[g.states[a]] < 1e-8 * p.sigma[0]


def test_exact_covariance_mass_shortfall():
    g = random_lpcfg(SynthSpec(interminals=2, preterminals=2, recursive=True, max_len=20, seed=3, branching=0.9))
    with pytest.raises(ValueError, match="mass"):
        exact_covariance(g, FeatureConfig(d_in=8, d_out=8), max_len=2)


def test_budget_exceeded():
    g = random_lpcfg(SynthSpec(interminals=3, preterminals=3, recursive=True, max_len=12, seed=3))
    with pytest.raises(BudgetExceeded):
        enumerate_derivations(g, max_len=12, budget=50)
    with pytest.raises(BudgetExceeded):
        enumerate_parses(g, ["w0"] * 6, budget=10)


def test_unambiguous_sentence_one_tree():
    pc = Pcfg({("S", "A", "B"): 1.0}, {("A", "a"): 1.0, ("B", "b"): 1.0}, {"S": 1.0})
    parses = enumerate_parses(pc, ["a", "b"])
    assert len(parses) == 1 and parses[0][1] == pytest.approx(1.0)
    assert enumerate_parses(pc, ["b", "a"]) == []


@pytest.mark.slow
def test_empirical_covariance_halves_with_four_times_data():
    g = random_lpcfg(SynthSpec(interminals=2, preterminals=2, words=4, states=2, seed=5))
    cfg = FeatureConfig(d_in=16, d_out=16)
    exact = exact_covariance(g, cfg, max_len=4)
    samples = [s for s, _ in sample_trees(g, 100_000, seed=2)]
    err = {}
    for n in (25_000, 100_000):
        emp = accumulate_covariance(samples[:n], cfg)
        err[n] = sum(np.linalg.norm(emp[a].omega - exact[a].omega) for a in exact)
    # n^-1/2 rate predicts a ratio of 0.5
    assert 0.3 < err[100_000] / err[25_000] < 0.75
