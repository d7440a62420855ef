"""Inside/outside feature extraction and per-nonterminal cross-covariance.

Template strings are hashed into ``[0, D)`` with a seeded CRC32, so feature
vectors are sparse count vectors and collisions simply add up.  The hashing
is stable across processes (no dependence on ``PYTHONHASHSEED``).
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .treebank import Tree

INSIDE_TEMPLATES = ("rule", "rule2", "label", "first", "last", "len")
OUTSIDE_TEMPLATES = ("prule", "parent", "sibling", "before", "after", "dist")


@dataclass(frozen=True)
class FeatureConfig:
    d_in: int = 512
    d_out: int = 512
    seed: int = 0
    inside: tuple[str, ...] = INSIDE_TEMPLATES
    outside: tuple[str, ...] = OUTSIDE_TEMPLATES
    center: bool = False

    def __post_init__(self):
        if self.d_in < 2 or self.d_out < 2:
            raise ValueError("feature dimensions must be >= 2")
        bad = (set(self.inside) - set(INSIDE_TEMPLATES)) | (set(self.outside) - set(OUTSIDE_TEMPLATES))
        if bad:
            raise ValueError(f"unknown feature templates: {sorted(bad)}")


def _bucket(n: int) -> str:
    if n <= 4:
        return str(n)
    return "5-8" if n <= 8 else "9+"


class FeatureHasher:
    def __init__(self, cfg: FeatureConfig):
        self.cfg = cfg
        self._prefix = f"{cfg.seed}\x1f".encode()
        self._cache: dict[tuple[str, int], int] = {}

    def index(self, key: str, dim: int) -> int:
        k = (key, dim)
        idx = self._cache.get(k)
        if idx is None:
            idx = zlib.crc32(self._prefix + key.encode("utf-8")) % dim
            self._cache[k] = idx
        return idx

    def inside(self, keys: Iterable[str]) -> list[int]:
        return [self.index(k, self.cfg.d_in) for k in keys]

    def outside(self, keys: Iterable[str]) -> list[int]:
        return [self.index(k, self.cfg.d_out) for k in keys]


def _sig(node: Tree) -> str:
    if node.is_preterminal:
        return node.label
    return f"{node.label}({node.children[0].label},{node.children[1].label})"


def inside_keys(node: Tree, start: int, end: int, words: Sequence[str],
                templates: Sequence[str] = INSIDE_TEMPLATES) -> list[str]:
    if node.is_preterminal:
        keys = {"rule": f"rule={node.label}>{node.word}", "label": f"label={node.label}",
                "first": f"word={node.word}"}
        return [keys[t] for t in templates if t in keys]
    b, c = node.children
    keys = {
        "rule": f"rule={node.label}>{b.label},{c.label}",
        "rule2": f"rule2={node.label}>{_sig(b)},{_sig(c)}",
        "label": f"label={node.label}",
        "first": f"first={words[start]}",
        "last": f"last={words[end - 1]}",
        "len": f"len={_bucket(end - start)}",
    }
    return [keys[t] for t in templates]


def outside_keys(parent: Tree | None, position: int, start: int, end: int, words: Sequence[str],
                 templates: Sequence[str] = OUTSIDE_TEMPLATES) -> list[str]:
    if parent is None:
        return ["outside:ROOT"]
    b, c = parent.children
    sib = parent.children[1 - position]
    side = "L" if position == 0 else "R"
    n = len(words)
    keys = {
        "prule": f"prule={parent.label}>{b.label},{c.label}@{side}",
        "parent": f"parent={parent.label}",
        "sibling": f"sibling={sib.label}@{side}",
        "before": f"before={words[start - 1] if start > 0 else '<s>'}",
        "after": f"after={words[end] if end < n else '</s>'}",
        "dist": f"dist={_bucket(start)}:{_bucket(n - end)}",
    }
    return [keys[t] for t in templates]


@dataclass
class NodeFeatures:
    node: Tree
    parent: Tree | None
    start: int
    end: int
    psi: list[int]
    phi: list[int]


def tree_features(tree: Tree, cfg: FeatureConfig, hasher: FeatureHasher | None = None) -> list[NodeFeatures]:
    """Features of every node of a binarized tree, in pre-order."""
    hasher = hasher or FeatureHasher(cfg)
    words = tree.words()
    spans = tree.spans()
    parent_of: dict[int, tuple[Tree, int]] = {}
    for node, _, _ in spans:
        for pos, ch in enumerate(node.children):
            parent_of[id(ch)] = (node, pos)
    out = []
    for node, s, e in spans:
        par, pos = parent_of.get(id(node), (None, 0))
        out.append(NodeFeatures(node, par, s, e,
                                hasher.inside(inside_keys(node, s, e, words, cfg.inside)),
                                hasher.outside(outside_keys(par, pos, s, e, words, cfg.outside))))
    return out


def _dense(idx: Sequence[int], dim: int) -> np.ndarray:
    v = np.zeros(dim)
    np.add.at(v, np.asarray(idx, dtype=np.int64), 1.0)
    return v


def inside_features(tree: Tree, node: Tree, cfg: FeatureConfig) -> np.ndarray:
    for nf in tree_features(tree, cfg):
        if nf.node is node:
            return _dense(nf.psi, cfg.d_in)
    raise ValueError("node is not part of the tree")


def outside_features(tree: Tree, node: Tree, cfg: FeatureConfig) -> np.ndarray:
    for nf in tree_features(tree, cfg):
        if nf.node is node:
            return _dense(nf.phi, cfg.d_out)
    raise ValueError("node is not part of the tree")


@dataclass
class CovStats:
    """Unnormalized sums for one nonterminal; ``omega`` divides once."""

    d_in: int
    d_out: int
    count: float = 0.0
    psi_sum: np.ndarray = None
    phi_sum: np.ndarray = None
    cross_sum: np.ndarray = None
    center: bool = False

    def __post_init__(self):
        if self.psi_sum is None:
            self.psi_sum = np.zeros(self.d_in)
        if self.phi_sum is None:
            self.phi_sum = np.zeros(self.d_out)
        if self.cross_sum is None:
            self.cross_sum = np.zeros((self.d_in, self.d_out))

    @classmethod
    def from_matrix(cls, omega: np.ndarray, count: float = 1.0) -> "CovStats":
        omega = np.asarray(omega, dtype=np.float64)
        return cls(omega.shape[0], omega.shape[1], count, cross_sum=omega * count)

    @property
    def omega(self) -> np.ndarray:
        if self.count <= 0:
            return np.zeros((self.d_in, self.d_out))
        om = self.cross_sum / self.count
        if self.center:
            om = om - np.outer(self.psi_sum / self.count, self.phi_sum / self.count)
        return om

    def merge(self, other: "CovStats") -> "CovStats":
        return CovStats(self.d_in, self.d_out, self.count + other.count,
                        self.psi_sum + other.psi_sum, self.phi_sum + other.phi_sum,
                        self.cross_sum + other.cross_sum, self.center)


@dataclass
class DesignMatrices:
    """Per-nonterminal sparse inside/outside instance matrices (rows in
    corpus pre-order) plus the (tree, node) each row came from."""

    psi: dict[str, sparse.csr_matrix]
    phi: dict[str, sparse.csr_matrix]
    nodes: dict[str, list[tuple[int, Tree]]] = field(default_factory=dict)


def design_matrices(trees: Sequence[Tree], cfg: FeatureConfig) -> DesignMatrices:
    hasher = FeatureHasher(cfg)
    rows_in: dict[str, list[list[int]]] = {}
    rows_out: dict[str, list[list[int]]] = {}
    nodes: dict[str, list[tuple[int, Tree]]] = {}
    for ti, tree in enumerate(trees):
        for nf in tree_features(tree, cfg, hasher):
            lab = nf.node.label
            rows_in.setdefault(lab, []).append(nf.psi)
            rows_out.setdefault(lab, []).append(nf.phi)
            nodes.setdefault(lab, []).append((ti, nf.node))
    return DesignMatrices({a: _csr(r, cfg.d_in) for a, r in rows_in.items()},
                          {a: _csr(r, cfg.d_out) for a, r in rows_out.items()}, nodes)


def _csr(rows: list[list[int]], dim: int) -> sparse.csr_matrix:
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r) for r in rows])
    indices = np.fromiter((i for r in rows for i in r), dtype=np.int64, count=int(indptr[-1]))
    mat = sparse.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(len(rows), dim))
    mat.sum_duplicates()
    return mat


def covariance_from_design(dm: DesignMatrices, cfg: FeatureConfig) -> dict[str, CovStats]:
    out = {}
    for a in sorted(dm.psi):
        psi, phi = dm.psi[a], dm.phi[a]
        cross = np.asarray((psi.T @ phi).todense())
        out[a] = CovStats(cfg.d_in, cfg.d_out, float(psi.shape[0]),
                          np.asarray(psi.sum(axis=0)).ravel(), np.asarray(phi.sum(axis=0)).ravel(),
                          cross, cfg.center)
    return out


def accumulate_covariance(trees: Sequence[Tree], cfg: FeatureConfig) -> dict[str, CovStats]:
    """One pass over the corpus; nodes visited in pre-order."""
    return covariance_from_design(design_matrices(trees, cfg), cfg)


# -- binary dump ----------------------------------------------------------

_MAGIC = b"LPCOV1\n"


def save_covstats(path, stats: Mapping[str, CovStats], cfg: FeatureConfig) -> None:
    header = json.dumps({"d_in": cfg.d_in, "d_out": cfg.d_out, "seed": cfg.seed,
                         "center": cfg.center, "nonterminals": sorted(stats)}).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for a in sorted(stats):
            s = stats[a]
            fh.write(struct.pack("<d", s.count))
            fh.write(np.ascontiguousarray(s.psi_sum, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.phi_sum, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.cross_sum, dtype="<f8").tobytes())


def load_covstats(path) -> tuple[dict[str, CovStats], dict]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a covariance dump")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
        di, do = header["d_in"], header["d_out"]
        out = {}
        for a in header["nonterminals"]:
            raw = fh.read(8)
            if len(raw) < 8:
                raise ValueError(f"{path}: truncated")
            (count,) = struct.unpack("<d", raw)

            def take(k):
                buf = fh.read(8 * k)
                if len(buf) < 8 * k:
                    raise ValueError(f"{path}: truncated")
                return np.frombuffer(buf, dtype="<f8").astype(np.float64)

            psi, phi = take(di), take(do)
            cross = take(di * do).reshape(di, do)
            out[a] = CovStats(di, do, count, psi, phi, cross, header["center"])
    return out, header
