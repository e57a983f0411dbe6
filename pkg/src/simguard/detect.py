"""Training-graph trigger identification.

Pipeline: cosine DBSCAN, keep the clusters whose members all share one degree
(S1); fit an autoencoder on the remaining nodes and keep the best
reconstructed fraction as a trusted clean set (O); score everything else by
its normalised L1 distance to a sample of O and cut the descending scores at
their largest gap (S2).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import numkit as nk
from .errors import StageError, TrainingDivergenceError
from .graph import AttributedGraph

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# DBSCAN


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.04
    min_pts: int = 6

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.min_pts < 2:
            raise ValueError(f"min_pts must be >= 2, got {self.min_pts}")


@dataclass
class ClusterSet:
    clusters: list  # sorted id arrays, ordered by their lowest core point
    noise: np.ndarray

    def labels_for(self, ids) -> np.ndarray:
        """Cluster index per id (-1 for noise)."""
        pos = {int(i): k for k, i in enumerate(ids)}
        out = np.full(len(pos), -1, dtype=np.int64)
        for c, members in enumerate(self.clusters):
            out[[pos[int(m)] for m in members]] = c
        return out


def cosine_distances(x: np.ndarray) -> np.ndarray:
    """``1 - cos``; a zero row is at distance 1 from every other row."""
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    u = x / safe[:, None]
    d = 1.0 - u @ u.T
    np.fill_diagonal(d, 0.0)
    return np.clip(d, 0.0, 2.0)


def dbscan(x: np.ndarray, params: DbscanParams = DbscanParams(), ids=None) -> ClusterSet:
    """DBSCAN over cosine distance.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Clusters are the connected components of core points
    under the eps relation, numbered by their lowest core index. A border
    point joins the lowest-numbered cluster among its core neighbours.
    ``ids`` maps row positions to the node ids reported in the result.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    ids = np.arange(n) if ids is None else np.asarray(ids, dtype=np.int64)
    if n == 0:
        return ClusterSet([], ids.copy())
    near = cosine_distances(x) <= params.eps
    core = near.sum(axis=1) >= params.min_pts
    labels = np.full(n, -1, dtype=np.int64)
    core_idx = np.flatnonzero(core)
    if core_idx.size:
        sub = csr_matrix(near[np.ix_(core_idx, core_idx)])
        _, comp = connected_components(sub, directed=False)
        # renumber components by their lowest core index
        order = {}
        for c in comp:
            order.setdefault(int(c), len(order))
        labels[core_idx] = [order[int(c)] for c in comp]
        for i in np.flatnonzero(~core):
            claim = labels[core_idx[near[i, core_idx]]]
            if claim.size:
                labels[i] = claim.min()
    k = int(labels.max()) + 1
    clusters = [np.sort(ids[labels == c]) for c in range(k)]
    return ClusterSet(clusters, np.sort(ids[labels == -1]))


def variance_filter(g: AttributedGraph, clusters: ClusterSet, delta: float = 0.001) -> np.ndarray:
    """Union of the clusters whose population degree variance is below ``delta``."""
    if not delta > 0:
        raise ValueError("delta must be > 0")
    flagged = [c for c in clusters.clusters if g.degrees[c].astype(float).var() < delta]
    if not flagged:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(flagged))


# ---------------------------------------------------------------------------
# autoencoder


@dataclass(frozen=True)
class AeHyper:
    hidden: tuple = (64, 32, 64)
    lr: float = 0.01
    epochs: int = 200


@dataclass
class Autoencoder:
    weights: list  # [W1, b1, W2, b2, ...]

    def network(self) -> nk.Sequential:
        layers = []
        n_lin = len(self.weights) // 2
        for k in range(n_lin):
            layers.append(nk.Linear(self.weights[2 * k], self.weights[2 * k + 1]))
            if k < n_lin - 1:
                layers.append(nk.ReLU())
        return nk.Sequential(layers)

    def reconstruct(self, x):
        return self.network().forward(x)

    def losses(self, x) -> np.ndarray:
        """Per-node L1 reconstruction loss."""
        return np.abs(self.reconstruct(x) - x).sum(axis=1)


def init_autoencoder(d, hyper: AeHyper, rng) -> Autoencoder:
    dims = [d, *hyper.hidden, d]
    w = []
    for a, b in zip(dims[:-1], dims[1:]):
        w += [nk.glorot(rng, a, b), np.zeros(b)]
    return Autoencoder(w)


def ae_loss_and_grads(ae: Autoencoder, x):
    """Mean per-node L1 reconstruction loss and its parameter gradients."""
    net = ae.network()
    out = net.forward(x)
    per_row, dout = nk.l1_rows(out, x)
    net.backward(dout)
    return float(per_row.mean()), net.grads


def train_autoencoder(x, hyper: AeHyper = AeHyper(), seed: int = 0) -> Autoencoder:
    x = np.asarray(x, dtype=np.float64)
    rng = nk.make_rng(seed, "autoencoder")
    ae = init_autoencoder(x.shape[1], hyper, rng)
    state = nk.AdamState.for_params(ae.weights, lr=hyper.lr)
    for epoch in range(hyper.epochs):
        loss, grads = ae_loss_and_grads(ae, x)
        if not np.isfinite(loss):
            raise TrainingDivergenceError("autoencoder", epoch, loss)
        ae.weights, state = nk.adam_step(ae.weights, grads, state)
    return ae


def lowest_fraction(ids, values, fraction) -> np.ndarray:
    """The ``ceil(fraction * n)`` ids with smallest value, ties by id."""
    ids = np.asarray(ids, dtype=np.int64)
    k = math.ceil(fraction * ids.size)
    order = np.lexsort((ids, values))
    return np.sort(ids[order[:k]])


def select_clean(x, ids, percentile: float = 0.25, hyper: AeHyper = AeHyper(),
                 seed: int = 0) -> np.ndarray:
    """Trusted clean set: the best-reconstructed ``percentile`` of ``ids``.

    ``x`` holds the feature rows of ``ids`` (same order); the autoencoder is
    fitted on those rows only.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size < 10:
        raise ValueError(f"select_clean needs at least 10 nodes, got {ids.size}")
    if not 0.0 < percentile <= 0.5:
        raise ValueError(f"percentile must lie in (0, 0.5], got {percentile}")
    ae = train_autoencoder(x, hyper, seed)
    return lowest_fraction(ids, ae.losses(x), percentile)


# ---------------------------------------------------------------------------
# global anomaly score


@dataclass
class AnomalyScores:
    ids: np.ndarray
    scores: np.ndarray
    reference: np.ndarray


def _l1_ratio_block(xa, yb, na, nb):
    num = np.abs(xa[:, None, :] - yb[None, :, :]).sum(axis=2)
    den = na[:, None] + nb[None, :]
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def _canberra_block(xa, yb):
    diff = np.abs(xa[:, None, :] - yb[None, :, :])
    den = np.abs(xa)[:, None, :] + np.abs(yb)[None, :, :]
    terms = np.divide(diff, den, out=np.zeros_like(diff), where=den > 0)
    return terms.mean(axis=2)


def anomaly_matrix(x, refs, per_dim: bool = False, block: int = 128) -> np.ndarray:
    """Pairwise normalised L1 distances ``|x - y|_1 / (|x|_1 + |y|_1)``.

    With ``per_dim`` the ratio is taken per coordinate and averaged over the
    dimensions instead (textbook Canberra scaled into [0, 1]).
    """
    x = np.asarray(x, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    nx, nr = np.abs(x).sum(axis=1), np.abs(refs).sum(axis=1)
    out = np.empty((x.shape[0], refs.shape[0]))
    for s in range(0, x.shape[0], block):
        xa = x[s:s + block]
        if per_dim:
            out[s:s + block] = _canberra_block(xa, refs)
        else:
            out[s:s + block] = _l1_ratio_block(xa, refs, nx[s:s + block], nr)
    # the ratio is at most 1 exactly; rounding can overshoot by an ulp
    return np.clip(out, 0.0, 1.0, out=out)


def global_anomaly_scores(x, ids, refs, reference_ids=None, per_dim: bool = False) -> AnomalyScores:
    """``G(x)`` = mean over the reference rows of the normalised L1 distance."""
    refs = np.asarray(refs, dtype=np.float64)
    if refs.ndim != 2 or refs.shape[0] == 0:
        raise ValueError("global_anomaly_scores needs a nonempty reference set")
    x = np.asarray(x, dtype=np.float64)
    scores = anomaly_matrix(x, refs, per_dim).mean(axis=1)
    zero = np.abs(x).sum(axis=1) == 0
    if zero.any():
        log.warning("%d zero-norm rows scored 0", int(zero.sum()))
        scores[zero] = 0.0
    ref_ids = np.zeros(0, dtype=np.int64) if reference_ids is None else np.asarray(reference_ids)
    return AnomalyScores(np.asarray(ids, dtype=np.int64), np.clip(scores, 0.0, 1.0), ref_ids)


def elbow_cut(ids, scores, min_gap: float = 0.05, max_frac: float = 0.10) -> np.ndarray:
    """Top prefix of the descending scores ending at the largest consecutive gap.

    Only gaps at positions ``j < max(1, max_frac * n)`` are considered; if the
    winning gap is below ``min_gap`` nothing is returned. Equal scores sort by
    id, and equal gaps resolve to the smaller position.
    """
    ids = np.asarray(ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    n = ids.size
    if n < 2:
        raise ValueError("elbow_cut needs at least two scored nodes")
    order = np.lexsort((ids, -scores))
    s = scores[order]
    gaps = s[:-1] - s[1:]
    limit = min(n - 1, max(1, math.ceil(max_frac * n)))
    k = int(np.argmax(gaps[:limit]))
    if gaps[k] < min_gap:
        return np.zeros(0, dtype=np.int64)
    return np.sort(ids[order[:k + 1]])


# ---------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True)
class DetectConfig:
    eps: float = 0.04
    min_pts: int = 6
    delta: float = 0.001
    clean_percentile: float = 0.25
    ae: AeHyper = AeHyper()
    reference_size: int = 500
    min_gap: float = 0.05
    max_frac: float = 0.10
    per_dim: bool = False
    seed: int = 0


@dataclass
class DetectionResult:
    s1: list
    s2: list
    clean: list
    scores: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def s(self) -> list:
        return sorted(set(self.s1) | set(self.s2))

    def to_json(self) -> str:
        return json.dumps({
            "s1": self.s1, "s2": self.s2, "clean": self.clean,
            "scores": {str(k): v for k, v in self.scores.items()},
            "provenance": {str(k): v for k, v in self.provenance.items()},
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DetectionResult":
        d = json.loads(text)
        return cls([int(i) for i in d["s1"]], [int(i) for i in d["s2"]],
                   [int(i) for i in d["clean"]],
                   {int(k): float(v) for k, v in d.get("scores", {}).items()},
                   {int(k): v for k, v in d.get("provenance", {}).items()})


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_pipeline(g: AttributedGraph, cfg: DetectConfig = DetectConfig()) -> DetectionResult:
    """Flag suspected trigger nodes of a (possibly poisoned) training graph."""
    x = g.features
    all_ids = np.arange(g.n_nodes)
    params = _stage("dbscan", DbscanParams, cfg.eps, cfg.min_pts)
    clusters = _stage("dbscan", dbscan, x, params)
    s1 = _stage("variance_filter", variance_filter, g, clusters, cfg.delta)
    rest = np.setdiff1d(all_ids, s1)
    clean = _stage("select_clean", select_clean, x[rest], rest, cfg.clean_percentile,
                   cfg.ae, cfg.seed)
    cand = np.setdiff1d(rest, clean)
    rng = nk.make_rng(cfg.seed, "references")
    m = min(cfg.reference_size, clean.size)
    refs = np.sort(rng.choice(clean, size=m, replace=False))
    s2 = np.zeros(0, dtype=np.int64)
    scores = {}
    if cand.size >= 2:
        an = _stage("global_anomaly", global_anomaly_scores, x[cand], cand, x[refs], refs,
                    cfg.per_dim)
        scores = {int(i): float(v) for i, v in zip(an.ids, an.scores)}
        s2 = _stage("elbow_cut", elbow_cut, an.ids, an.scores, cfg.min_gap, cfg.max_frac)
    prov = {int(i): "candidate" for i in cand}
    prov.update({int(i): "clean" for i in clean})
    prov.update({int(i): "s1" for i in s1})
    prov.update({int(i): "s2" for i in s2})
    return DetectionResult([int(i) for i in s1], [int(i) for i in s2],
                           [int(i) for i in clean], scores, dict(sorted(prov.items())))
