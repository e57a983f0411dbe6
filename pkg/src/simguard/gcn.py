"""Two-layer GCN node classifier and the one-layer injection-feature solver."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numkit as nk
from .errors import TrainingDivergenceError
from .graph import AttributedGraph


@dataclass(frozen=True)
class GcnHyper:
    hidden: int = 64
    dropout: float = 0.5
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 200


@dataclass
class GcnModel:
    """``Z = Â · ReLU(Â X W1 + b1) · W2 + b2``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    dropout: float = 0.5
    trained: bool = False

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.w2.shape[1]

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def network(self, a_hat, rng=None) -> nk.Sequential:
        return nk.Sequential([
            nk.Dropout(self.dropout, rng),
            nk.Propagate(a_hat),
            nk.Linear(self.w1, self.b1),
            nk.ReLU(),
            nk.Dropout(self.dropout, rng),
            nk.Propagate(a_hat),
            nk.Linear(self.w2, self.b2),
        ])

    def save(self, path) -> None:
        path = Path(path)
        nk.save_weights(path, self.params)
        sidecar = {"hidden": self.hidden, "classes": self.n_classes,
                   "dropout": self.dropout, "trained": self.trained}
        path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True))

    @classmethod
    def load(cls, path) -> "GcnModel":
        path = Path(path)
        w1, b1, w2, b2 = nk.load_weights(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        return cls(w1, b1.ravel(), w2, b2.ravel(), float(meta["dropout"]),
                   bool(meta.get("trained", True)))


def init_gcn(d_in, n_classes, hyper: GcnHyper, rng) -> GcnModel:
    return GcnModel(
        nk.glorot(rng, d_in, hyper.hidden), np.zeros(hyper.hidden),
        nk.glorot(rng, hyper.hidden, n_classes), np.zeros(n_classes),
        hyper.dropout)


def gcn_loss_and_grads(model: GcnModel, a_hat, x, labels, index, weight_decay=0.0,
                       rng=None, training=False):
    """Cross-entropy over ``index`` plus ``weight_decay/2 * ||W||^2``."""
    net = model.network(a_hat, rng)
    logits = net.forward(x, training)
    loss, dlogits = nk.softmax_cross_entropy(logits, labels, index)
    net.backward(dlogits)
    grads = net.grads
    if weight_decay:
        loss += 0.5 * weight_decay * (np.sum(model.w1 ** 2) + np.sum(model.w2 ** 2))
        grads[0] = grads[0] + weight_decay * model.w1
        grads[2] = grads[2] + weight_decay * model.w2
    return loss, grads


def train_gcn(g: AttributedGraph, labeled=None, hyper: GcnHyper = GcnHyper(),
              seed: int = 0, n_classes: int | None = None) -> GcnModel:
    """Full-batch Adam training on the labeled nodes of ``g``.

    ``labeled`` is ``(ids, classes)``; by default every labeled node of ``g``
    is used with its stored label.
    """
    if labeled is None:
        ids = g.labeled_nodes()
        classes = g.labels[ids]
    else:
        ids = np.asarray(labeled[0], dtype=np.int64)
        classes = np.asarray(labeled[1], dtype=np.int64)
    if ids.size == 0:
        raise ValueError("train_gcn needs at least one labeled node")
    c = n_classes or max(g.n_classes, int(classes.max()) + 1)
    rng = nk.make_rng(seed, "gcn")
    model = init_gcn(g.d_feat, c, hyper, rng)
    a_hat = nk.normalize_adjacency(g)
    x = g.features
    params = model.params
    state = nk.AdamState.for_params(params, lr=hyper.lr)
    for epoch in range(hyper.epochs):
        model.w1, model.b1, model.w2, model.b2 = params
        loss, grads = gcn_loss_and_grads(model, a_hat, x, classes, ids,
                                         hyper.weight_decay, rng, training=True)
        if not np.isfinite(loss):
            raise TrainingDivergenceError("GCN", epoch, loss)
        params, state = nk.adam_step(params, grads, state)
    model.w1, model.b1, model.w2, model.b2 = params
    model.trained = True
    return model


def predict(model: GcnModel, g: AttributedGraph):
    """Returns ``(classes, logits)`` for every node of ``g``; dropout is off."""
    if g.d_feat != model.d_in:
        raise ValueError(f"graph has {g.d_feat} features, model expects {model.d_in}")
    logits = model.network(nk.normalize_adjacency(g)).forward(g.features, training=False)
    nk.check_finite(logits, "logits")
    return np.argmax(logits, axis=1), logits


# ---------------------------------------------------------------------------
# linearised GNN and the representation-matching injection


@dataclass
class LinearGnn:
    """``H = Â^L X Θ`` with ``L`` in {1, 2}."""

    theta: np.ndarray
    layers: int = 1

    def __post_init__(self):
        if self.layers not in (1, 2):
            raise ValueError("LinearGnn supports 1 or 2 layers")

    def forward(self, g: AttributedGraph) -> np.ndarray:
        a_hat = nk.normalize_adjacency(g)
        h = g.features
        for _ in range(self.layers):
            h = a_hat @ h
        return h @ self.theta


def solve_injection_feature(g: AttributedGraph, target_u: int, reference_i: int) -> np.ndarray:
    """Feature for a new node ``v`` joined only to ``target_u`` such that the
    one-layer aggregate of ``target_u`` afterwards equals that of ``reference_i``.

    Degrees count the self-loop. After the insertion ``u`` has degree
    ``d_u + 1`` and ``v`` has degree 2, so every term of ``u``'s aggregate is
    renormalised. Solving for the ``v`` term gives

        X_v = sqrt(2 (d_u + 1)) * (H_i - sum_{t in N(u)} X_t / sqrt((d_u + 1) d_t)
                                       - X_u / (d_u + 1))

    Because the aggregation is linear, any ``Θ`` maps the matched aggregates
    to identical one-layer outputs.
    """
    n = g.n_nodes
    if not (0 <= target_u < n and 0 <= reference_i < n):
        raise ValueError("target and reference must be existing nodes")
    if target_u == reference_i:
        raise ValueError("reference node must differ from the target")
    deg = g.degrees.astype(np.float64) + 1.0
    x = g.features
    nbr_i = g.neighbors(reference_i)
    h_i = (x[reference_i] / deg[reference_i]
           + (x[nbr_i] / np.sqrt(deg[reference_i] * deg[nbr_i])[:, None]).sum(axis=0))
    du_new = deg[target_u] + 1.0
    dv_new = 2.0
    nbr_u = g.neighbors(target_u)
    rest = (x[target_u] / du_new
            + (x[nbr_u] / np.sqrt(du_new * deg[nbr_u])[:, None]).sum(axis=0))
    if du_new <= 0 or dv_new <= 0:
        raise ValueError("degenerate degree")
    return np.sqrt(dv_new * du_new) * (h_i - rest)


def inject_node(g: AttributedGraph, target_u: int, x_v) -> AttributedGraph:
    """Append one unlabeled node with features ``x_v`` wired to ``target_u``."""
    return g.add_nodes(np.asarray(x_v)[None, :], [(target_u, g.n_nodes)])
