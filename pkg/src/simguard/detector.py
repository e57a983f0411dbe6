"""Contrastive trigger detector applied to unseen graphs before message passing.

The embedder (``d -> 128 -> 64`` with unit-norm output) is trained so that
clean embeddings gather together, detected-trigger embeddings gather
together, and the two groups repel. A two-way linear head is then fitted on
the frozen embeddings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numkit as nk
from .detect import DetectionResult
from .errors import InsufficientTriggersError, TrainingDivergenceError
from .gcn import GcnModel, predict
from .graph import AttributedGraph, remove_nodes


# ---------------------------------------------------------------------------
# loss


def _row_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_mean_exp(logits, exclude_diag=False):
    """Row-wise ``log(mean_j exp(logits[i, j]))`` and the softmax weights."""
    s = logits.copy()
    n_cols = s.shape[1]
    if exclude_diag:
        np.fill_diagonal(s, -np.inf)
        n_cols -= 1
    mx = s.max(axis=1, keepdims=True)
    e = np.exp(s - mx)
    tot = e.sum(axis=1, keepdims=True)
    return (mx + np.log(tot / n_cols)).ravel(), e / tot


def contrastive_loss(zc, zt, tau: float = 0.5, symmetric_q: bool = False):
    """Loss value and its gradients ``(L, dL/dzc, dL/dzt)``.

    ``u_i`` averages ``exp(zc_i . zc_j / tau)`` over the other clean rows,
    ``v_i`` does the same among trigger rows, and ``q_i`` averages
    ``exp(zc_i . zt_j / tau)`` over all trigger rows. Then
    ``L = -(1/m) (sum_i log(u_i / q_i) + sum_i log(v_i / q_i))``.
    With ``symmetric_q`` the trigger term is divided by a ``q`` anchored at
    the trigger row instead.
    """
    zc = np.asarray(zc, dtype=np.float64)
    zt = np.asarray(zt, dtype=np.float64)
    m = zc.shape[0]
    if m < 2 or zt.shape[0] != m:
        raise ValueError("contrastive_loss needs m >= 2 clean and m trigger rows")
    if not tau > 0:
        raise ValueError("tau must be > 0")
    log_u, pu = _log_mean_exp(zc @ zc.T / tau, exclude_diag=True)
    log_v, pv = _log_mean_exp(zt @ zt.T / tau, exclude_diag=True)
    log_q, pq = _log_mean_exp(zc @ zt.T / tau)
    if symmetric_q:
        log_q2, pq2 = _log_mean_exp(zt @ zc.T / tau)
    else:
        log_q2, pq2 = log_q, None
    loss = -(log_u.sum() - log_q.sum() + log_v.sum() - log_q2.sum()) / m

    gc = (pu + pu.T) @ zc - pq @ zt
    gt = (pv + pv.T) @ zt - pq.T @ zc
    if symmetric_q:
        gt -= pq2 @ zc
        gc -= pq2.T @ zt
    else:
        gc -= pq @ zt
        gt -= pq.T @ zc
    scale = -1.0 / (m * tau)
    return float(loss), scale * gc, scale * gt


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class DetectorHyper:
    hidden: tuple = (128, 64)
    tau: float = 0.5
    lr: float = 1e-3
    epochs: int = 300
    head_lr: float = 0.01
    head_epochs: int = 200
    symmetric_q: bool = False
    mode: str = "contrastive"  # or "mlp": embedder and head trained jointly by cross-entropy

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.mode not in ("contrastive", "mlp"):
            raise ValueError(f"unknown detector mode {self.mode!r}")


@dataclass
class DetectorModel:
    embed: list  # [W1, b1, W2, b2]
    head: list  # [W, b]
    tau: float = 0.5
    seed: int = 0
    mode: str = "contrastive"

    @property
    def dims(self) -> list:
        return [self.embed[0].shape[0]] + [w.shape[1] for w in self.embed[0::2]]

    def embedder(self) -> nk.Sequential:
        layers = []
        n_lin = len(self.embed) // 2
        for k in range(n_lin):
            layers.append(nk.Linear(self.embed[2 * k], self.embed[2 * k + 1]))
            if k < n_lin - 1:
                layers.append(nk.ReLU())
        layers.append(nk.RowL2Normalize())
        return nk.Sequential(layers)

    def embeddings(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != self.dims[0]:
            raise ValueError(f"detector expects {self.dims[0]} features, got {x.shape[1]}")
        return self.embedder().forward(x)

    def trigger_probability(self, x) -> np.ndarray:
        z = self.embeddings(x)
        return nk.softmax(z @ self.head[0] + self.head[1])[:, 1]

    def flag(self, x) -> np.ndarray:
        """Boolean mask of rows classified as triggers."""
        z = self.embeddings(x)
        logits = z @ self.head[0] + self.head[1]
        return logits[:, 1] > logits[:, 0]

    def save(self, path) -> None:
        path = Path(path)
        nk.save_weights(path, self.embed + self.head)
        meta = {"tau": self.tau, "dims": self.dims, "seed": self.seed, "mode": self.mode}
        path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True))

    @classmethod
    def load(cls, path) -> "DetectorModel":
        path = Path(path)
        tensors = nk.load_weights(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        n_embed = 2 * (len(meta["dims"]) - 1)
        embed = [t if k % 2 == 0 else t.ravel() for k, t in enumerate(tensors[:n_embed])]
        head = [tensors[n_embed], tensors[n_embed + 1].ravel()]
        return cls(embed, head, float(meta["tau"]), int(meta.get("seed", 0)),
                   meta.get("mode", "contrastive"))


def init_detector(d, hyper: DetectorHyper, rng) -> DetectorModel:
    dims = [d, *hyper.hidden]
    embed = []
    for a, b in zip(dims[:-1], dims[1:]):
        embed += [nk.glorot(rng, a, b), np.zeros(b)]
    head = [nk.glorot(rng, dims[-1], 2), np.zeros(2)]
    return DetectorModel(embed, head, hyper.tau, mode=hyper.mode)


def embed_loss_and_grads(model: DetectorModel, x_clean, x_trig, tau, symmetric_q=False):
    """Contrastive loss of the embedder on one batch and its weight gradients."""
    m = x_clean.shape[0]
    net = model.embedder()
    z = net.forward(np.vstack([x_clean, x_trig]))
    loss, gc, gt = contrastive_loss(z[:m], z[m:], tau, symmetric_q)
    net.backward(np.vstack([gc, gt]))
    return loss, net.grads


def head_loss_and_grads(head, z, labels, class_weights=None):
    net = nk.Sequential([nk.Linear(head[0], head[1])])
    loss, dlogits = nk.softmax_cross_entropy(net.forward(z), labels, weights=class_weights)
    net.backward(dlogits)
    return loss, net.grads


def joint_loss_and_grads(model: DetectorModel, x, labels, class_weights=None):
    """Cross-entropy through embedder and head (the plain-MLP ablation)."""
    net = model.embedder()
    net.layers.append(nk.Linear(model.head[0], model.head[1]))
    loss, dlogits = nk.softmax_cross_entropy(net.forward(x), labels, weights=class_weights)
    net.backward(dlogits)
    return loss, net.grads


def _balanced_weights(labels):
    counts = np.bincount(labels, minlength=2).astype(np.float64)
    return np.where(counts > 0, labels.size / (2.0 * np.maximum(counts, 1.0)), 0.0)


def train_detector(x, detection: DetectionResult, hyper: DetectorHyper = DetectorHyper(),
                   seed: int = 0) -> DetectorModel:
    """Fit the detector on the suspects ``S`` and the trusted clean set ``O``.

    Every contrastive epoch draws ``m = |S|`` clean rows from ``O`` without
    replacement. The head is trained afterwards on frozen embeddings with
    class-balanced cross-entropy over ``O`` (clean) and ``S`` (trigger).
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(detection.s, dtype=np.int64)
    o = np.asarray(detection.clean, dtype=np.int64)
    if s.size < 2:
        raise InsufficientTriggersError(
            f"insufficient detected triggers: need at least 2, got {s.size}")
    if o.size < s.size:
        raise InsufficientTriggersError(
            f"clean set ({o.size}) is smaller than the trigger set ({s.size})")
    rng = nk.make_rng(seed, "detector")
    model = init_detector(x.shape[1], hyper, rng)
    model.seed = seed
    ids = np.concatenate([o, s])
    labels = np.concatenate([np.zeros(o.size, np.int64), np.ones(s.size, np.int64)])
    weights = _balanced_weights(labels)

    if hyper.mode == "mlp":
        params = model.embed + model.head
        state = nk.AdamState.for_params(params, lr=hyper.lr)
        n_e = len(model.embed)
        for epoch in range(hyper.epochs + hyper.head_epochs):
            loss, grads = joint_loss_and_grads(model, x[ids], labels, weights)
            if not np.isfinite(loss):
                raise TrainingDivergenceError("detector", epoch, loss)
            params, state = nk.adam_step(params, grads, state)
            model.embed, model.head = params[:n_e], params[n_e:]
        return model

    x_trig = x[s]
    state = nk.AdamState.for_params(model.embed, lr=hyper.lr)
    for epoch in range(hyper.epochs):
        batch = rng.choice(o, size=s.size, replace=False)
        loss, grads = embed_loss_and_grads(model, x[batch], x_trig, hyper.tau,
                                           hyper.symmetric_q)
        if not np.isfinite(loss):
            raise TrainingDivergenceError("detector", epoch, loss)
        model.embed, state = nk.adam_step(model.embed, grads, state)

    z = model.embeddings(x[ids])
    state = nk.AdamState.for_params(model.head, lr=hyper.head_lr)
    for epoch in range(hyper.head_epochs):
        loss, grads = head_loss_and_grads(model.head, z, labels, weights)
        if not np.isfinite(loss):
            raise TrainingDivergenceError("detector head", epoch, loss)
        model.head, state = nk.adam_step(model.head, grads, state)
    return model


# ---------------------------------------------------------------------------
# inference


@dataclass
class SanitizeResult:
    graph: AttributedGraph
    kept: np.ndarray  # old ids of the cleaned graph's nodes
    flagged: np.ndarray
    predictions: np.ndarray | None  # per original node, -1 where removed


def sanitize(g: AttributedGraph, model: DetectorModel, victim: GcnModel | None = None) -> SanitizeResult:
    """Drop every node the detector flags, then classify the rest."""
    if g.d_feat != model.dims[0]:
        raise ValueError(f"graph has {g.d_feat} features, detector expects {model.dims[0]}")
    flagged = np.flatnonzero(model.flag(g.features))
    return apply_removal(g, flagged, victim)


def apply_removal(g: AttributedGraph, removed, victim: GcnModel | None = None) -> SanitizeResult:
    removed = np.asarray(removed, dtype=np.int64)
    if removed.size:
        clean_g, kept = remove_nodes(g, removed)
    else:
        clean_g, kept = g, np.arange(g.n_nodes)
    preds = None
    if victim is not None:
        p, _ = predict(victim, clean_g)
        preds = np.full(g.n_nodes, -1, dtype=np.int64)
        preds[kept] = p
    return SanitizeResult(clean_g, kept, removed, preds)
