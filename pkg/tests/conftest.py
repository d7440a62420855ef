import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from lpcfgopt.treebank import Tree

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

LABELS = ["S", "NP", "VP", "PP", "ADJP", "SBAR"]
TAGS = ["DT", "NN", "VB", "IN", "JJ", "RB"]
WORDS = ["the", "cat", "Dog", "ran", "on", "a", "mat", "big", "quickly", "."]


def random_tree(rng: np.random.Generator, depth: int = 0, max_depth: int = 4) -> Tree:
    """Raw tree with arbitrary fan-out and unary chains."""
    if depth >= max_depth or (depth > 0 and rng.random() < 0.3):
        return Tree(TAGS[rng.integers(len(TAGS))], word=WORDS[rng.integers(len(WORDS))])
    k = int(rng.choice([1, 1, 2, 2, 3, 4]))
    return Tree(LABELS[rng.integers(len(LABELS))], [random_tree(rng, depth + 1, max_depth) for _ in range(k)])


@st.composite
def trees(draw, max_depth=4):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_tree(np.random.default_rng(seed), 0, max_depth)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting: one PASS/FAIL line per numbered criterion --------

_CRITERIA: dict[int, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, name = mark.args
    entry = _CRITERIA.setdefault(n, [name, True, False])
    if rep.when == "call":
        entry[2] = True
    if rep.failed or (rep.when == "call" and rep.skipped):
        entry[1] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        name, ok, ran = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n} {name}: {'PASS' if ok and ran else 'FAIL'}")
