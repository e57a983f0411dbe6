"""Attributed graph container, file ingestion/export and the inductive split."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import GraphFormatError, GraphValidationError

UNLABELED = -1
FEATURE_MAGIC = b"SGFX"


def _canonical_edges(edges, n_nodes):
    """Sort, orient (u < v) and deduplicate an edge array."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if (e < 0).any() or (e >= n_nodes).any():
        bad = e[(e < 0).any(axis=1) | (e >= n_nodes).any(axis=1)][0]
        raise GraphValidationError(
            f"edge ({bad[0]}, {bad[1]}) has an endpoint outside [0, {n_nodes})")
    if (e[:, 0] == e[:, 1]).any():
        node = int(e[e[:, 0] == e[:, 1]][0, 0])
        raise GraphValidationError(f"self-loop on node {node}")
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    """Undirected simple graph with dense node features and optional labels.

    ``edges`` holds each undirected edge once as ``(u, v)`` with ``u < v``.
    ``labels[i] == UNLABELED`` marks an unlabeled node.
    """

    features: np.ndarray
    edges: np.ndarray
    labels: np.ndarray
    n_classes: int = 0

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise GraphValidationError("features must be a 2-D matrix")
        n = x.shape[0]
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if y.shape[0] != n:
            raise GraphValidationError(
                f"{y.shape[0]} labels for {n} feature rows")
        n_classes = int(self.n_classes)
        labeled = y[y != UNLABELED]
        if (labeled < 0).any():
            raise GraphValidationError("negative class id")
        if labeled.size:
            n_classes = max(n_classes, int(labeled.max()) + 1)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "edges", _canonical_edges(self.edges, n))
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "n_classes", n_classes)
        x.setflags(write=False)
        self.edges.setflags(write=False)
        y.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def d_feat(self) -> int:
        return self.features.shape[1]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency without self-loops."""
        n = self.n_nodes
        u, v = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        a = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        a.sort_indices()
        return a

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr).astype(np.int64)

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        return v in set(self.neighbors(u).tolist())

    def labeled_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labels != UNLABELED)

    def with_labels(self, labels) -> "AttributedGraph":
        return AttributedGraph(self.features, self.edges, labels, self.n_classes)

    def add_nodes(self, features, edges=(), labels=None) -> "AttributedGraph":
        """Append nodes (ids continue from ``n_nodes``) and extra edges."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if labels is None:
            labels = np.full(features.shape[0], UNLABELED)
        new_edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        return AttributedGraph(
            np.vstack([self.features, features]),
            np.vstack([self.edges, new_edges]),
            np.concatenate([self.labels, labels]),
            self.n_classes,
        )

    def remove_edges(self, mask) -> "AttributedGraph":
        """Drop the edges where ``mask`` is True."""
        keep = ~np.asarray(mask, dtype=bool)
        return AttributedGraph(self.features, self.edges[keep], self.labels,
                               self.n_classes)


@dataclass(frozen=True)
class SplitSpec:
    train_nodes: np.ndarray
    unseen_nodes: np.ndarray
    seed: int

    def to_json(self) -> str:
        return json.dumps({"seed": int(self.seed),
                           "train": [int(i) for i in self.train_nodes],
                           "unseen": [int(i) for i in self.unseen_nodes]})

    @classmethod
    def from_json(cls, text: str) -> "SplitSpec":
        d = json.loads(text)
        return cls(np.asarray(d["train"], dtype=np.int64),
                   np.asarray(d["unseen"], dtype=np.int64), int(d["seed"]))


@dataclass(frozen=True)
class RoleMask:
    """Clean-labeled nodes, backdoored targets and the attacker's class."""

    clean_labeled: frozenset
    backdoored: frozenset
    target_class: int

    def __post_init__(self):
        if self.clean_labeled & self.backdoored:
            raise GraphValidationError("clean and backdoored sets overlap")


# ---------------------------------------------------------------------------
# ingestion / export


def _read_features(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == FEATURE_MAGIC:
        return _read_features_binary(path)
    return _read_features_csv(path)


def _read_features_binary(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise GraphFormatError(path, 1, "truncated SGFX header")
    n, d = struct.unpack_from("<II", raw, 4)
    expected = 12 + 4 * n * d
    if len(raw) != expected:
        raise GraphFormatError(
            path, 1, f"SGFX payload is {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", count=n * d, offset=12)
    return data.reshape(n, d).astype(np.float64)


def _read_features_csv(path: Path) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise GraphFormatError(path, lineno, f"non-numeric feature in {row!r}") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise GraphFormatError(
                    path, lineno, f"expected {width} columns, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise GraphFormatError(path, 1, "no feature rows")
    x = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(x).all():
        raise GraphValidationError(f"{path}: non-finite feature value")
    return x


def _read_edges(path: Path, n_nodes: int) -> np.ndarray:
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(path, lineno, f"expected 'u v', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(path, lineno, f"non-integer node id in {line!r}") from None
            if u == v:
                raise GraphFormatError(path, lineno, f"self-loop on node {u}")
            if not (0 <= u < n_nodes and 0 <= v < n_nodes):
                raise GraphValidationError(
                    f"{path}:{lineno}: dangling edge endpoint ({u}, {v}) for {n_nodes} nodes")
            pairs.append((u, v))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def _read_labels(path: Path, n_nodes: int) -> np.ndarray:
    labels = np.full(n_nodes, UNLABELED, dtype=np.int64)
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and row[0].strip() == "node_id":
                continue
            if len(row) != 2:
                raise GraphFormatError(path, lineno, f"expected 'node_id,label', got {row!r}")
            try:
                node, lab = int(row[0]), int(row[1])
            except ValueError:
                raise GraphFormatError(path, lineno, f"non-integer field in {row!r}") from None
            if not 0 <= node < n_nodes:
                raise GraphValidationError(f"{path}:{lineno}: unknown node id {node}")
            if lab < 0:
                raise GraphFormatError(path, lineno, f"negative label {lab}")
            labels[node] = lab
    return labels


def ingest(features_path, edges_path, labels_path=None) -> AttributedGraph:
    """Load a graph from a features file, an edge list and a label CSV."""
    x = _read_features(Path(features_path))
    n = x.shape[0]
    edges = _read_edges(Path(edges_path), n)
    if labels_path is not None:
        labels = _read_labels(Path(labels_path), n)
    else:
        labels = np.full(n, UNLABELED, dtype=np.int64)
    return AttributedGraph(x, edges, labels)


def write_features_binary(path, x) -> None:
    x = np.asarray(x)
    n, d = x.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def export(g: AttributedGraph, out_dir, binary: bool = True) -> dict:
    """Write ``features``, ``edges.txt`` and ``labels.csv`` into ``out_dir``.

    The binary variant stores float32, so ``ingest(export(g))`` is exact when
    the features are float32-representable. The CSV variant stores ``repr``
    of each float64 and is always exact.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if binary:
        fpath = out / "features.sgfx"
        write_features_binary(fpath, g.features)
    else:
        fpath = out / "features.csv"
        with open(fpath, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in g.features:
                w.writerow([repr(float(v)) for v in row])
    epath = out / "edges.txt"
    with open(epath, "w") as fh:
        for u, v in g.edges:
            fh.write(f"{u} {v}\n")
    lpath = out / "labels.csv"
    with open(lpath, "w") as fh:
        fh.write("node_id,label\n")
        for i in g.labeled_nodes():
            fh.write(f"{i},{g.labels[i]}\n")
    return {"features": fpath, "edges": epath, "labels": lpath}


# ---------------------------------------------------------------------------
# split / subgraph


def inductive_split(g: AttributedGraph, ratio: float = 0.8, seed: int = 0) -> SplitSpec:
    """Randomly partition node ids into a training part and an unseen part."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    n = g.n_nodes
    n_train = int(round(ratio * n))
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    return SplitSpec(np.sort(perm[:n_train]), np.sort(perm[n_train:]), int(seed))


def subgraph(g: AttributedGraph, ids) -> tuple[AttributedGraph, np.ndarray]:
    """Induced subgraph on ``ids`` with dense renumbering.

    Returns ``(sub, mapping)`` where ``mapping[new_id] == old_id``; ids keep
    their ascending order.
    """
    ids = np.unique(np.asarray(ids, dtype=np.int64))
    if ids.size and (ids[0] < 0 or ids[-1] >= g.n_nodes):
        raise ValueError(f"subgraph ids outside [0, {g.n_nodes})")
    remap = np.full(g.n_nodes, -1, dtype=np.int64)
    remap[ids] = np.arange(ids.size)
    e = remap[g.edges]
    e = e[(e >= 0).all(axis=1)]
    sub = AttributedGraph(g.features[ids], e, g.labels[ids], g.n_classes)
    return sub, ids


def remove_nodes(g: AttributedGraph, ids) -> tuple[AttributedGraph, np.ndarray]:
    """Drop ``ids`` and their incident edges; returns ``(sub, kept_old_ids)``."""
    keep = np.ones(g.n_nodes, dtype=bool)
    keep[np.asarray(list(ids), dtype=np.int64)] = False
    return subgraph(g, np.flatnonzero(keep))


def load_graph_dir(path) -> AttributedGraph:
    """Load a directory written by ``export`` (binary or CSV features)."""
    d = Path(path)
    feats = d / "features.sgfx"
    if not feats.exists():
        feats = d / "features.csv"
    labels = d / "labels.csv"
    for p in (feats, d / "edges.txt"):
        if not p.exists():
            raise GraphValidationError(f"missing graph file {p}")
    return ingest(feats, d / "edges.txt", labels if labels.exists() else None)
