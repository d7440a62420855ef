"""Clustering-based spectral estimation of L-PCFGs.

The pipeline is: inside/outside covariance per nonterminal, one thin SVD at
rank ``m_max``, projection of each instance's inside vector onto the top
``f(a)`` left singular vectors, hard k-means into ``f(a)`` clusters, and a
relative-frequency estimate with the cluster ids as observed states.

:class:`Trainer` caches everything that does not depend on ``f`` (design
matrices, covariances, SVDs) and memoizes clustering per ``(a, f(a))``, so a
new candidate assignment only re-clusters the nonterminals that changed.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .features import CovStats, FeatureConfig, covariance_from_design, design_matrices
from .grammar import GrammarError, Lpcfg, StateAssignment, SymbolTable, validate
from .treebank import Tree

log = logging.getLogger(__name__)

PROJECTION_VERSION = 1


@dataclass
class Projection:
    sigma: np.ndarray
    U: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return len(self.sigma)

    def numerical_rank(self, rel_threshold: float) -> int:
        if not len(self.sigma) or self.sigma[0] <= 0:
            return 0
        return int((self.sigma > rel_threshold * self.sigma[0]).sum())


def svd_project(stats: CovStats, m_max: int, name: str = "?") -> Projection:
    """Top-``m_max`` thin SVD with canonical column signs."""
    if m_max < 1 or m_max > min(stats.d_in, stats.d_out):
        raise ValueError(f"m_max={m_max} outside [1, {min(stats.d_in, stats.d_out)}]")
    if stats.count <= 0:
        raise ValueError(f"nonterminal {name!r} has no instances")
    omega = stats.omega
    if not np.any(omega):
        raise ValueError(f"covariance of nonterminal {name!r} is all zero")
    U, s, Vt = np.linalg.svd(omega, full_matrices=False)
    U, s, V = U[:, :m_max].copy(), s[:m_max].copy(), Vt[:m_max].T.copy()
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[pivot, np.arange(U.shape[1])] < 0, -1.0, 1.0)
    return Projection(s, U * signs, V * signs)


def truncate_projection(p: Projection, m: int) -> Projection:
    if not 1 <= m <= p.rank:
        raise ValueError(f"cannot truncate a rank-{p.rank} projection to {m}")
    return Projection(p.sigma[:m].copy(), p.U[:, :m].copy(), p.V[:, :m].copy())


def save_projections(path, projections: Mapping[str, Projection]) -> None:
    arrays = {"version": np.array(PROJECTION_VERSION), "names": np.array(sorted(projections))}
    for i, a in enumerate(sorted(projections)):
        p = projections[a]
        arrays[f"s{i}"], arrays[f"u{i}"], arrays[f"v{i}"] = p.sigma, p.U, p.V
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_projections(path) -> dict[str, Projection]:
    with np.load(path) as z:
        if int(z["version"]) != PROJECTION_VERSION:
            raise ValueError(f"{path}: projection cache version {int(z['version'])} unsupported")
        return {str(a): Projection(z[f"s{i}"], z[f"u{i}"], z[f"v{i}"]) for i, a in enumerate(z["names"])}


# -- k-means --------------------------------------------------------------

@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    objective: list[float]


def _assign(points, centroids):
    d = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    lab = d.argmin(axis=1)
    return lab, d[np.arange(len(points)), lab]


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator, weights: np.ndarray | None = None,
           max_iter: int = 100) -> KMeansResult:
    """Hard Lloyd k-means; ``points`` must be distinct rows, ``weights`` their
    multiplicities.  Initial centroids are ``k`` points sampled without
    replacement."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    centroids = points[np.sort(rng.choice(n, size=k, replace=False))].copy()
    labels, dist = _assign(points, centroids)
    history = [float((w * dist).sum())]
    for _ in range(max_iter):
        for j in range(k):
            members = labels == j
            if not members.any():
                far = int(np.argmax(np.where(np.bincount(labels, minlength=k)[labels] > 1, dist, -1.0)))
                labels[far] = j
                dist[far] = 0.0
                members = labels == j
            centroids[j] = np.average(points[members], axis=0, weights=w[members])
        new, dist = _assign(points, centroids)
        history.append(float((w * dist).sum()))
        if np.array_equal(new, labels):
            break
        labels = new
    return KMeansResult(labels, centroids, history)


def cluster_points(points: np.ndarray, k: int, seed, restarts: int = 1, max_iter: int = 100,
                   name: str = "?") -> np.ndarray:
    """Cluster id per row of ``points`` (duplicates collapsed before Lloyd)."""
    n = len(points)
    if k <= 1 or n == 0:
        return np.zeros(n, dtype=np.int64)
    uniq, inverse, counts = np.unique(points, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if len(uniq) < k:
        log.warning("nonterminal %s: only %d distinct points, using %d states instead of %d",
                    name, len(uniq), len(uniq), k)
        k = len(uniq)
        if k == 1:
            return np.zeros(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        res = kmeans(uniq, k, rng, counts, max_iter)
        if best is None or res.objective[-1] < best.objective[-1]:
            best = res
    # relabel by first occurrence so ids do not depend on centroid order
    lab = best.labels[inverse]
    _, first = np.unique(lab, return_index=True)
    order = np.argsort(first)
    remap = np.empty(k, dtype=np.int64)
    remap[np.unique(lab)[order]] = np.arange(len(order))
    return remap[lab]


# -- estimation -----------------------------------------------------------

def _seed_for(seed: int, label: str, m: int) -> list[int]:
    import zlib

    return [int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode("utf-8")), int(m)]


@dataclass(frozen=True)
class TrainConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    m_max: int = 30
    restarts: int = 1
    whiten: bool = False
    sv_threshold: float = 1e-8
    max_iter: int = 100
    lex_smoothing: float = 0.0

    @classmethod
    def from_kv(cls, kv: Mapping[str, str]) -> "TrainConfig":
        fkw, kw = {}, {}
        for k, v in kv.items():
            if k in ("d_in", "d_out", "feature_seed"):
                fkw["seed" if k == "feature_seed" else k] = int(v)
            elif k == "dims":
                fkw["d_in"] = fkw["d_out"] = int(v)
            elif k == "center":
                fkw["center"] = v.lower() in ("1", "true", "yes")
            elif k in ("m_max", "restarts", "max_iter"):
                kw[k] = int(v)
            elif k in ("sv_threshold", "lex_smoothing"):
                kw[k] = float(v)
            elif k in ("whiten", "whitening"):
                kw["whiten"] = v.lower() in ("1", "true", "yes")
            elif k == "seed":
                continue
            else:
                raise ValueError(f"unknown training config key {k!r}")
        return cls(features=FeatureConfig(**fkw), **kw)


def project_points(psi, proj: Projection, m: int, cfg: TrainConfig) -> np.ndarray:
    r = max(1, min(m, proj.numerical_rank(cfg.sv_threshold)))
    p = truncate_projection(proj, r)
    pts = np.asarray(psi @ p.U)
    if cfg.whiten:
        pts = pts / np.where(p.sigma > 0, p.sigma, 1.0)
    return pts


def cluster_states(trees: Sequence[Tree], proj: Mapping[str, Projection], f: StateAssignment, seed: int = 0,
                   cfg: TrainConfig = TrainConfig()) -> list[Tree]:
    """Annotated copies of ``trees`` with a k-means state id on every node."""
    copies = [t.copy() for t in trees]
    dm = design_matrices(copies, cfg.features)
    for a, rows in dm.nodes.items():
        m = int(f[a])
        if m <= 1:
            states = np.zeros(len(rows), dtype=np.int64)
        else:
            pts = project_points(dm.psi[a], proj[a], m, cfg)
            states = cluster_points(pts, m, _seed_for(seed, a, m), cfg.restarts, cfg.max_iter, a)
        for (_, node), h in zip(rows, states):
            node.state = int(h)
    return copies


def mle_lpcfg(trees: Sequence[Tree], f: StateAssignment, lex_smoothing: float = 0.0) -> Lpcfg:
    """Relative frequencies over annotated trees (``node.state`` set everywhere).

    The realized number of states of ``a`` is ``1 + max observed state``,
    which can be below ``f(a)`` when clustering had to merge states.
    """
    if not trees:
        raise GrammarError("cannot estimate a grammar from an empty corpus")
    sym = SymbolTable.from_trees(trees)
    seen = Counter()
    for t in trees:
        for node in t.preorder():
            if node.state is None or node.state < 0 or node.state >= f[node.label]:
                raise GrammarError(f"state {node.state} of {node.label!r} not in [0, {f[node.label]})")
            seen[node.label] = max(seen[node.label], node.state + 1)
    m = {a: seen[a] for a in sym.labels}
    ix = sym.index
    bin_c: dict = {}
    lex_c: dict = {}
    root_c: dict = {}
    lhs = {a: np.zeros(m[a]) for a in sym.labels}
    for t in trees:
        a = ix[t.label]
        root_c.setdefault(a, np.zeros(m[t.label]))[t.state] += 1
        for node in t.preorder():
            lhs[node.label][node.state] += 1
            if node.is_preterminal:
                lex_c.setdefault((ix[node.label], node.word), np.zeros(m[node.label]))[node.state] += 1
            else:
                b, c = node.children
                key = (ix[node.label], ix[b.label], ix[c.label])
                blk = bin_c.setdefault(key, np.zeros((m[node.label], m[b.label], m[c.label])))
                blk[node.state, b.state, c.state] += 1
    return _normalize(sym, m, bin_c, lex_c, root_c, {ix[a]: v for a, v in lhs.items()}, len(trees),
                      lex_smoothing)


def _normalize(sym, m, bin_c, lex_c, root_c, lhs, n_sent, lex_smoothing=0.0) -> Lpcfg:
    binary = {k: blk / lhs[k[0]][:, None, None] for k, blk in bin_c.items()}
    if lex_smoothing > 0:
        nwords = Counter(a for a, _ in lex_c)
        lexical = {(a, w): (v + lex_smoothing) / (lhs[a] + lex_smoothing * nwords[a])
                   for (a, w), v in lex_c.items()}
    else:
        lexical = {k: v / lhs[k[0]] for k, v in lex_c.items()}
    root = {a: v / n_sent for a, v in root_c.items()}
    g = Lpcfg(sym, m, binary, lexical, root)
    bad = validate(g, 1e-9)
    if bad:
        raise GrammarError("estimated grammar is not normalized: " + "; ".join(map(str, bad[:3])))
    return g


class Trainer:
    """Estimator with all ``f``-independent work done once per corpus."""

    def __init__(self, trees: Sequence[Tree], config: TrainConfig = TrainConfig()):
        if not trees:
            raise GrammarError("cannot train on an empty corpus")
        self.trees = list(trees)
        self.config = config
        self.symbols = SymbolTable.from_trees(self.trees)
        self.design = design_matrices(self.trees, config.features)
        self.stats = covariance_from_design(self.design, config.features)
        fc = config.features
        m_max = min(config.m_max, fc.d_in, fc.d_out)
        self.projections = {a: svd_project(self.stats[a], m_max, a) for a in self.stats}
        self._cluster_cache: dict[tuple[str, int, int], np.ndarray] = {}
        self._index_events()

    def _index_events(self):
        sym = self.symbols
        inst = {}
        for a, rows in self.design.nodes.items():
            for i, (_, node) in enumerate(rows):
                inst[id(node)] = i
        self.counts = {a: len(rows) for a, rows in self.design.nodes.items()}
        bins: dict[tuple[int, int, int], list[tuple[int, int, int]]] = {}
        lexs: dict[tuple[int, str], list[int]] = {}
        roots: dict[int, list[int]] = {}
        for t in self.trees:
            roots.setdefault(sym.index[t.label], []).append(inst[id(t)])
            for node in t.preorder():
                a = sym.index[node.label]
                if node.is_preterminal:
                    lexs.setdefault((a, node.word), []).append(inst[id(node)])
                else:
                    b, c = node.children
                    key = (a, sym.index[b.label], sym.index[c.label])
                    bins.setdefault(key, []).append((inst[id(node)], inst[id(b)], inst[id(c)]))
        self._bins = {k: np.array(v, dtype=np.int64).T for k, v in sorted(bins.items())}
        self._lexs = {k: np.array(v, dtype=np.int64) for k, v in sorted(lexs.items())}
        self._roots = {k: np.array(v, dtype=np.int64) for k, v in sorted(roots.items())}

    def max_states(self, a: str) -> int:
        """Upper bound imposed by the projection rank and distinct points."""
        return self.projections[a].rank

    def default_assignment(self, m: int) -> dict[str, int]:
        """Uniform ``m`` capped at each nonterminal's numerical covariance rank."""
        thr = self.config.sv_threshold
        return {a: max(1, min(m, self.projections[a].numerical_rank(thr))) for a in self.symbols.labels}

    def frequencies(self) -> dict[str, int]:
        return dict(self.counts)

    def states(self, a: str, m: int, seed: int) -> np.ndarray:
        key = (a, int(m), int(seed))
        got = self._cluster_cache.get(key)
        if got is None:
            n = self.counts[a]
            if m <= 1:
                got = np.zeros(n, dtype=np.int64)
            else:
                if m > self.projections[a].rank:
                    raise ValueError(f"f({a})={m} exceeds m_max={self.projections[a].rank}")
                pts = project_points(self.design.psi[a], self.projections[a], m, self.config)
                got = cluster_points(pts, m, _seed_for(seed, a, m), self.config.restarts,
                                     self.config.max_iter, a)
            self._cluster_cache[key] = got
        return got

    def train(self, f: StateAssignment, seed: int = 0) -> Lpcfg:
        sym = self.symbols
        st = [self.states(a, int(f[a]), seed) for a in sym.labels]
        m = {a: int(s.max()) + 1 if len(s) else 1 for a, s in zip(sym.labels, st)}
        ms = [m[a] for a in sym.labels]
        lhs = {i: np.bincount(s, minlength=ms[i]).astype(np.float64) for i, s in enumerate(st)}
        bin_c = {}
        for (a, b, c), (ia, ib, ic) in self._bins.items():
            blk = np.zeros(ms[a] * ms[b] * ms[c])
            flat = (st[a][ia] * ms[b] + st[b][ib]) * ms[c] + st[c][ic]
            blk += np.bincount(flat, minlength=blk.size)
            bin_c[a, b, c] = blk.reshape(ms[a], ms[b], ms[c])
        lex_c = {(a, w): np.bincount(st[a][idx], minlength=ms[a]).astype(np.float64)
                 for (a, w), idx in self._lexs.items()}
        root_c = {a: np.bincount(st[a][idx], minlength=ms[a]).astype(np.float64)
                  for a, idx in self._roots.items()}
        return _normalize(sym, m, bin_c, lex_c, root_c, lhs, len(self.trees), self.config.lex_smoothing)

    def annotate(self, f: StateAssignment, seed: int = 0) -> list[Tree]:
        """Annotated copies of the training trees for assignment ``f``."""
        copies = [t.copy() for t in self.trees]
        lookup = {}
        for a, rows in self.design.nodes.items():
            s = self.states(a, int(f[a]), seed)
            for (ti, node), h in zip(rows, s):
                lookup[id(node)] = int(h)
        for orig, cp in zip(self.trees, copies):
            for n1, n2 in zip(orig.preorder(), cp.preorder()):
                n2.state = lookup[id(n1)]
        return copies


def train(trees: Sequence[Tree], config: TrainConfig, f: StateAssignment, seed: int = 0) -> Lpcfg:
    return Trainer(trees, config).train(f, seed)
