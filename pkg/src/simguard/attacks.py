"""Trigger injectors producing poisoned graphs plus ground-truth reports.

Three feature modes are available:

* ``random`` - SBA: Erdős–Rényi trigger subgraphs whose node features are
  coordinate permutations of random real nodes.
* ``collapse`` - every trigger slot shares one prototype feature (plus a
  little Gaussian noise) across all targets, and every trigger-bridge node
  has the same degree.
* ``homophily`` - trigger features interpolate between the target's own
  features and one global prototype, so triggers look like their target
  locally but like each other globally.

A ``TriggerTemplate`` holds the attack state fitted on the training graph so
the same triggers can be planted into an unseen graph at inference time.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .graph import AttributedGraph
from .numkit import make_rng

FEATURE_MODES = ("random", "collapse", "homophily")


@dataclass(frozen=True)
class InjectorConfig:
    trigger_size: int = 3
    attach_edges: int = 1
    budget: int = 10
    feature_mode: str = "collapse"
    collapse_noise: float = 0.01
    shared_prototype: bool = False
    prototype_quantile: float = 0.8
    alpha: float = 0.3
    homophily_noise: float = 0.2
    prototype_fraction: float = 0.25
    trigger_scale: float = 8.0
    tbn_degree: int | None = 3
    edge_prob: float = 0.5
    target_class: int = 0
    exclude_target_class: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.trigger_size < 1:
            raise ValueError("trigger_size must be >= 1")
        if self.attach_edges < 1:
            raise ValueError("attach_edges must be >= 1")
        if self.attach_edges > self.trigger_size:
            raise ValueError("attach_edges cannot exceed trigger_size")
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"unknown feature_mode {self.feature_mode!r}")
        if self.collapse_noise < 0:
            raise ValueError("collapse noise scale must be >= 0")
        if not 0.0 <= self.prototype_quantile < 1.0:
            raise ValueError("prototype_quantile must lie in [0, 1)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.trigger_scale > 0:
            raise ValueError("trigger_scale must be > 0")
        if self.homophily_noise < 0:
            raise ValueError("homophily noise scale must be >= 0")
        if not 0.0 <= self.edge_prob <= 1.0:
            raise ValueError("edge_prob must lie in [0, 1]")


@dataclass
class TriggerTemplate:
    """Attack state shared between the training and the unseen graph."""

    mode: str
    mean_norm: float
    prototypes: np.ndarray | None = None  # collapse: one row per trigger slot
    global_prototype: np.ndarray | None = None  # homophily

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "mean_norm": self.mean_norm}
        if self.prototypes is not None:
            d["prototypes"] = self.prototypes.tolist()
        if self.global_prototype is not None:
            d["global_prototype"] = self.global_prototype.tolist()
        return d

    @classmethod
    def from_dict(cls, d) -> "TriggerTemplate":
        def arr(key):
            return None if d.get(key) is None else np.asarray(d[key], dtype=np.float64)
        return cls(d["mode"], float(d["mean_norm"]), arr("prototypes"), arr("global_prototype"))


def templates_to_json(template) -> str:
    """Serialise a template or a (collapse, homophily) pair of templates."""
    if isinstance(template, tuple):
        return json.dumps([t.to_dict() if t is not None else None for t in template])
    return json.dumps(template.to_dict())


def templates_from_json(text: str):
    d = json.loads(text)
    if isinstance(d, list):
        return tuple(TriggerTemplate.from_dict(t) if t is not None else None for t in d)
    return TriggerTemplate.from_dict(d)


@dataclass
class AttackReport:
    methods: list
    target_class: int
    target_nodes: list
    trigger_nodes: list
    tbn: list
    bridge_edges: list
    trigger_internal_edges: list
    seed: int
    n_original: int
    groups: dict = field(default_factory=dict)  # target -> its trigger node ids
    tbn_by_method: dict = field(default_factory=dict)
    template: TriggerTemplate | None = field(default=None, repr=False)

    @property
    def method(self) -> str:
        return "+".join(self.methods) if self.methods else "none"

    def non_tbn_triggers(self) -> set:
        return set(self.trigger_nodes) - set(self.tbn)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("template", "groups")}
        d["groups"] = {str(k): v for k, v in self.groups.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "AttackReport":
        d = dict(d)
        d["groups"] = {int(k): v for k, v in d.get("groups", {}).items()}
        d["bridge_edges"] = [tuple(e) for e in d["bridge_edges"]]
        d["trigger_internal_edges"] = [tuple(e) for e in d["trigger_internal_edges"]]
        return cls(**d)


def empty_report(cfg: InjectorConfig, n_original: int) -> AttackReport:
    return AttackReport([], cfg.target_class, [], [], [], [], [], cfg.seed, n_original)


def merge_reports(a: AttackReport, b: AttackReport) -> AttackReport:
    return AttackReport(
        a.methods + [m for m in b.methods if m not in a.methods],
        a.target_class,
        a.target_nodes + b.target_nodes,
        a.trigger_nodes + b.trigger_nodes,
        a.tbn + b.tbn,
        a.bridge_edges + b.bridge_edges,
        a.trigger_internal_edges + b.trigger_internal_edges,
        a.seed,
        a.n_original,
        {**a.groups, **b.groups},
        {**a.tbn_by_method, **b.tbn_by_method},
        a.template or b.template,
    )


# ---------------------------------------------------------------------------
# targets


def eligible_targets(g: AttributedGraph, target_class=None, exclude_target_class=True,
                     candidates=None) -> np.ndarray:
    ids = g.labeled_nodes() if candidates is None else np.asarray(candidates, dtype=np.int64)
    if exclude_target_class and target_class is not None:
        ids = ids[g.labels[ids] != target_class]
    return np.sort(ids)


def _target_order(g, budget, seed, target_class, exclude_target_class, candidates):
    pool = eligible_targets(g, target_class, exclude_target_class, candidates)
    if budget > pool.size:
        raise ValueError(f"budget {budget} exceeds the {pool.size} eligible target nodes")
    return make_rng(seed, "targets").permutation(pool)[:budget]


def select_targets(g: AttributedGraph, budget: int, seed: int, target_class=None,
                   exclude_target_class=True, candidates=None) -> np.ndarray:
    """Uniform sample without replacement from the eligible nodes (sorted)."""
    return np.sort(_target_order(g, budget, seed, target_class, exclude_target_class,
                                 candidates))


# ---------------------------------------------------------------------------
# trigger topology


def _path_with_chords(size, n_bridges, tbn_degree):
    """Path over ``size`` slots; each TBN slot gains chords until its total
    degree (internal + one bridge) equals ``tbn_degree``."""
    edges = {(i, i + 1) for i in range(size - 1)}
    if tbn_degree is None:
        return sorted(edges)
    need_internal = tbn_degree - 1
    if need_internal > size - 1 or need_internal < 0:
        raise ValueError(
            f"a trigger of {size} nodes cannot give its bridge nodes degree {tbn_degree}")
    for t in range(n_bridges):
        deg = sum(1 for e in edges if t in e)
        if deg > need_internal:
            raise ValueError(
                f"trigger layout gives bridge slot {t} degree above {tbn_degree}")
        for other in range(size):
            if deg == need_internal:
                break
            e = (min(t, other), max(t, other))
            if other == t or e in edges:
                continue
            if other < n_bridges and sum(1 for f in edges if other in f) >= need_internal:
                continue  # would overshoot another bridge slot
            edges.add(e)
            deg += 1
        if deg != need_internal:
            raise ValueError(
                f"trigger layout cannot give bridge slot {t} degree {tbn_degree}")
    return sorted(edges)


def _er_edges(size, p, rng):
    return [(i, j) for i in range(size) for j in range(i + 1, size) if rng.random() < p]


# ---------------------------------------------------------------------------
# templates / features


def fit_template(g: AttributedGraph, cfg: InjectorConfig) -> TriggerTemplate:
    rng = make_rng(cfg.seed, "template", cfg.feature_mode)
    x = g.features
    mean_norm = float(np.linalg.norm(x, axis=1).mean())
    tpl = TriggerTemplate(cfg.feature_mode, mean_norm)
    if cfg.feature_mode == "collapse":
        # each coordinate is an observed value of that dimension among
        # target-class nodes, drawn from the upper tail of its marginal, so the
        # prototype is in-distribution per dimension without copying any node
        n_proto = 1 if cfg.shared_prototype else cfg.trigger_size
        pool = x[g.labels == cfg.target_class]
        if pool.shape[0] == 0:
            pool = x
        ranked = np.sort(pool, axis=0)
        u = rng.uniform(cfg.prototype_quantile, 1.0, size=(n_proto, g.d_feat))
        rows = np.minimum((u * ranked.shape[0]).astype(np.int64), ranked.shape[0] - 1)
        protos = ranked[rows, np.arange(g.d_feat)[None, :]]
        tpl.prototypes = np.repeat(protos, cfg.trigger_size, axis=0) if n_proto == 1 else protos
    elif cfg.feature_mode == "homophily":
        # large values on many globally rare dimensions
        k = max(1, int(round(cfg.prototype_fraction * g.d_feat)))
        rare = np.argsort(x.mean(axis=0), kind="stable")[:k]
        p = np.zeros(g.d_feat)
        p[rare] = np.abs(x[:, rare]).max(axis=0)
        if not p.any():
            p[rare] = 1.0
        tpl.global_prototype = p / np.linalg.norm(p)
    return tpl


def _trigger_features(g, cfg, tpl, target, rng):
    s, d = cfg.trigger_size, g.d_feat
    x = g.features
    if cfg.feature_mode == "random":
        src = rng.integers(0, g.n_nodes, size=s)
        return np.stack([x[i][rng.permutation(d)] for i in src])
    if cfg.feature_mode == "collapse":
        sigma = cfg.collapse_noise * tpl.mean_norm / np.sqrt(d)
        return tpl.prototypes + sigma * rng.standard_normal((s, d))
    a = cfg.alpha
    p = tpl.global_prototype
    xt = x[target]
    nt = np.linalg.norm(xt)
    xt = xt / nt if nt > 0 else xt
    scale = cfg.trigger_scale * tpl.mean_norm
    sigma = cfg.homophily_noise / np.sqrt(d)
    out = np.empty((s, d))
    for k in range(s):
        v = a * xt + (1.0 - a) * p + sigma * rng.standard_normal(d)
        nv = np.linalg.norm(v)
        out[k] = v * (scale / nv) if nv > 0 else v
    return out


# ---------------------------------------------------------------------------
# injection


def plant_triggers(g: AttributedGraph, targets, cfg: InjectorConfig,
                   template: TriggerTemplate | None = None, relabel: bool = True,
                   rng_key: str = "plant"):
    """Attach one trigger per target. Returns ``(graph, report)``.

    With ``relabel`` the targets take ``cfg.target_class`` (training-time
    poisoning); without it labels are untouched (inference-time triggers).
    """
    targets = [int(t) for t in targets]
    tpl = template if template is not None else fit_template(g, cfg)
    rng = make_rng(cfg.seed, rng_key, cfg.feature_mode)
    n0 = g.n_nodes
    report = empty_report(cfg, n0)
    if not targets:
        report.template = tpl
        return g, report
    s = cfg.trigger_size
    layout = None
    if cfg.feature_mode != "random":
        layout = _path_with_chords(s, cfg.attach_edges, cfg.tbn_degree)
    feats, new_edges = [], []
    nxt = n0
    for t in targets:
        ids = list(range(nxt, nxt + s))
        nxt += s
        local = _er_edges(s, cfg.edge_prob, rng) if layout is None else layout
        internal = [(ids[i], ids[j]) for i, j in local]
        bridges = [(t, ids[k]) for k in range(cfg.attach_edges)]
        feats.append(_trigger_features(g, cfg, tpl, t, rng))
        new_edges += internal + bridges
        report.trigger_nodes += ids
        report.tbn += ids[:cfg.attach_edges]
        report.bridge_edges += bridges
        report.trigger_internal_edges += internal
        report.groups[t] = ids
    report.target_nodes = targets
    report.methods = [_method_tag(cfg)]
    report.tbn_by_method = {report.methods[0]: list(report.tbn)}
    report.template = tpl
    labels = None
    out = g.add_nodes(np.vstack(feats), new_edges, labels)
    if relabel:
        y = out.labels.copy()
        y[targets] = cfg.target_class
        out = out.with_labels(y)
    return out, report


def _method_tag(cfg):
    return {"random": "sba", "collapse": "collapse", "homophily": "homophily"}[cfg.feature_mode]


def _inject(g, cfg, mode, template=None, targets=None, relabel=True):
    cfg = replace(cfg, feature_mode=mode)
    if targets is None:
        targets = _target_order(g, cfg.budget, cfg.seed, cfg.target_class,
                                cfg.exclude_target_class, None)
    return plant_triggers(g, targets, cfg, template, relabel)


def inject_sba(g, cfg: InjectorConfig, template=None, targets=None, relabel=True):
    return _inject(g, cfg, "random", template, targets, relabel)


def inject_collapse(g, cfg: InjectorConfig, template=None, targets=None, relabel=True):
    return _inject(g, cfg, "collapse", template, targets, relabel)


def inject_homophily(g, cfg: InjectorConfig, template=None, targets=None, relabel=True):
    return _inject(g, cfg, "homophily", template, targets, relabel)


def inject(g, cfg: InjectorConfig, template=None, targets=None, relabel=True):
    return _inject(g, cfg, cfg.feature_mode, template, targets, relabel)


def inject_mixed(g, cfg_a: InjectorConfig, cfg_b: InjectorConfig, templates=None,
                 targets=None, relabel=True):
    """Collapse triggers on ``cfg_a.budget`` targets and homophily triggers on
    ``cfg_b.budget`` further targets.

    ``templates`` is an optional ``(collapse_template, homophily_template)``
    pair; ``targets`` an optional sequence whose first ``cfg_a.budget`` ids go
    to the collapse injector.
    """
    cfg_a = replace(cfg_a, feature_mode="collapse")
    cfg_b = replace(cfg_b, feature_mode="homophily", target_class=cfg_a.target_class)
    ka, kb = cfg_a.budget, cfg_b.budget
    if targets is None:
        order = _target_order(g, ka + kb, cfg_a.seed, cfg_a.target_class,
                              cfg_a.exclude_target_class, None)
    else:
        order = np.asarray(targets, dtype=np.int64)
        ka = min(ka, order.size)
    tpl_a, tpl_b = templates if templates is not None else (None, None)
    if tpl_b is None and kb > 0:
        tpl_b = fit_template(g, cfg_b)
    g1, rep_a = plant_triggers(g, order[:ka], cfg_a, tpl_a, relabel)
    if order.size - ka == 0:
        return g1, rep_a
    g2, rep_b = plant_triggers(g1, order[ka:], cfg_b, tpl_b, relabel)
    rep_b.n_original = rep_a.n_original
    if ka == 0:
        return g2, rep_b
    merged = merge_reports(rep_a, rep_b)
    merged.template = (rep_a.template, rep_b.template)
    return g2, merged
