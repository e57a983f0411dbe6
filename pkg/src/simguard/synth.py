"""Synthetic citation-style graphs for experiments without bundled data.

Nodes get a class from imbalanced priors, word-count features from a
class-specific topic mixture, and edges from a homophilous block model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import AttributedGraph
from .numkit import make_rng

# Class proportions of Cora, smallest class first.
CORA_PRIORS = np.array([180, 217, 298, 351, 418, 426, 818], dtype=np.float64)


@dataclass(frozen=True)
class SynthSpec:
    n_nodes: int = 3000
    d_feat: int = 100
    n_classes: int = 7
    avg_degree: float = 4.0
    homophily: float = 0.8
    words_per_node: int = 60
    topic_weight: float = 0.5
    topic_concentration: float = 0.3
    seed: int = 0


def _priors(n_classes):
    if n_classes == CORA_PRIORS.size:
        p = CORA_PRIORS
    else:
        p = np.linspace(1.0, 4.0, n_classes)
    return p / p.sum()


def make_synthetic_graph(spec: SynthSpec = SynthSpec()) -> AttributedGraph:
    rng = make_rng(spec.seed, "synth")
    n, d, c = spec.n_nodes, spec.d_feat, spec.n_classes
    labels = rng.choice(c, size=n, p=_priors(c))

    # word frequencies are Zipf-like so some dimensions are globally rare
    background = 1.0 / np.arange(1, d + 1) ** 0.8
    background = background[rng.permutation(d)]
    background /= background.sum()
    topics = rng.dirichlet(np.full(d, spec.topic_concentration), size=c)
    mix = spec.topic_weight * topics + (1.0 - spec.topic_weight) * background
    x = np.zeros((n, d))
    for k in range(c):
        members = np.flatnonzero(labels == k)
        x[members] = rng.multinomial(spec.words_per_node, mix[k], size=members.size)

    # homophilous edges: each endpoint pair is intra-class with prob `homophily`
    m = int(round(spec.avg_degree * n / 2))
    by_class = [np.flatnonzero(labels == k) for k in range(c)]
    src = rng.integers(0, n, size=3 * m)
    same = rng.random(3 * m) < spec.homophily
    dst = np.empty_like(src)
    for i, (s, intra) in enumerate(zip(src, same)):
        pool = by_class[labels[s]] if intra else None
        dst[i] = pool[rng.integers(pool.size)] if intra else rng.integers(n)
    pairs = np.sort(np.stack([src, dst], axis=1), axis=1)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    _, first = np.unique(pairs, axis=0, return_index=True)
    pairs = pairs[np.sort(first)][:m]
    return AttributedGraph(x, pairs, labels, c)
