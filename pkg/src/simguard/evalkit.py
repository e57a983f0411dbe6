"""Metrics, baseline defenses and the end-to-end experiment runner."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import detect as det
from . import detector as dcl
from . import simstats
from .errors import ConfigError, InsufficientTriggersError, StageError
from .gcn import GcnHyper, GcnModel, predict, train_gcn
from .graph import AttributedGraph, inductive_split, load_graph_dir, remove_nodes, subgraph
from .numkit import make_rng
from .synth import SynthSpec, make_synthetic_graph

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

ATTACKS = ("none", "sba", "collapse", "homophily", "mixed")
DEFENSES = ("none", "simguard", "prune", "od")
SWEEP_EPS = (0.01, 0.02, 0.04, 0.10, 0.20)
SWEEP_MIN_PTS = (2, 4, 6, 10, 15)


# ---------------------------------------------------------------------------
# metrics


def compute_asr(predictions, target_class: int, ids) -> float:
    """Fraction of ``ids`` predicted as ``target_class``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("ASR needs at least one poisoned node")
    return float(np.mean(np.asarray(predictions)[ids] == target_class))


def compute_drr(defended, reference, ids) -> float:
    """Fraction of ``ids`` whose defended prediction equals the clean reference.

    Both prediction arrays are indexed by the same node ids.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("DRR needs at least one poisoned node")
    defended, reference = np.asarray(defended), np.asarray(reference)
    if ids.max() >= min(defended.size, reference.size):
        raise ValueError("prediction arrays do not cover every poisoned id")
    return float(np.mean(defended[ids] == reference[ids]))


def compute_detection_prf(flagged, tbn, non_tbn_triggers=()) -> tuple[float, float]:
    """Recall over the bridge nodes; precision ignores non-bridge trigger nodes.

    With nothing flagged, precision is reported as 0.
    """
    tbn = set(int(i) for i in tbn)
    if not tbn:
        raise ValueError("no trigger-bridge nodes to score against")
    flagged = set(int(i) for i in flagged)
    hit = len(flagged & tbn)
    counted = flagged - set(int(i) for i in non_tbn_triggers)
    recall = hit / len(tbn)
    precision = hit / len(counted) if counted else 0.0
    return recall, precision


def accuracy(predictions, labels, ids) -> float:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        return float("nan")
    return float(np.mean(np.asarray(predictions)[ids] == np.asarray(labels)[ids]))


# ---------------------------------------------------------------------------
# baselines


def edge_cosines(g: AttributedGraph) -> np.ndarray:
    x = g.features
    if g.n_edges == 0:
        return np.zeros(0)
    a, b = x[g.edges[:, 0]], x[g.edges[:, 1]]
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    den = na * nb
    dots = (a * b).sum(axis=1)
    return np.divide(dots, den, out=np.zeros_like(dots), where=den > 0)


def baseline_prune(g: AttributedGraph, threshold: float = 0.2):
    """Drop every edge whose endpoint cosine similarity is below ``threshold``.

    Returns ``(pruned_graph, removed_edges)``.
    """
    if not -1.0 <= threshold <= 1.0:
        raise ValueError("prune threshold must lie in [-1, 1]")
    mask = edge_cosines(g) < threshold
    return g.remove_edges(mask), g.edges[mask]


def baseline_od(g: AttributedGraph, removal_frac: float = 0.05,
                hyper: det.AeHyper = det.AeHyper(), seed: int = 0):
    """Drop the ``removal_frac`` of nodes with the largest reconstruction loss.

    Returns ``(pruned_graph, removed_ids)``.
    """
    if not 0.0 < removal_frac <= 0.2:
        raise ValueError("OD removal fraction must lie in (0, 0.2]")
    ae = det.train_autoencoder(g.features, hyper, seed)
    losses = ae.losses(g.features)
    k = int(round(removal_frac * g.n_nodes))
    order = np.lexsort((np.arange(g.n_nodes), -losses))
    removed = np.sort(order[:k])
    pruned, _ = remove_nodes(g, removed)
    return pruned, removed


# ---------------------------------------------------------------------------
# configuration


@dataclass
class DataConfig:
    features: str | None = None
    edges: str | None = None
    labels: str | None = None
    graph_dir: str | None = None
    synth_nodes: int = 3000
    synth_features: int = 100
    synth_classes: int = 7
    synth_seed: int | None = None


@dataclass
class SplitConfig:
    ratio: float = 0.8
    seed: int | None = None


@dataclass
class AttackConfig:
    method: str = "collapse"
    budget: int = 20
    mixed_fraction: float = 0.5
    trigger_size: int = 3
    attach_edges: int = 1
    target_class: int = 0
    exclude_target_class: bool = True
    collapse_noise: float = 0.01
    shared_prototype: bool = False
    prototype_quantile: float = 0.8
    alpha: float = 0.3
    homophily_noise: float = 0.2
    prototype_fraction: float = 0.25
    trigger_scale: float = 8.0
    tbn_degree: int = 3
    edge_prob: float = 0.5
    poison_fraction: float = 0.5
    seed: int | None = None


@dataclass
class DefenseConfig:
    method: str = "simguard"
    eps: float = 0.04
    min_pts: int = 6
    delta: float = 0.001
    clean_percentile: float = 0.25
    reference_size: int = 500
    min_gap: float = 0.05
    max_frac: float = 0.10
    per_dim: bool = False
    ae_lr: float = 0.01
    ae_epochs: int = 200
    tau: float = 0.5
    detector_lr: float = 1e-3
    detector_epochs: int = 300
    head_epochs: int = 200
    symmetric_q: bool = False
    detector_mode: str = "contrastive"
    prune_threshold: float = 0.2
    od_fraction: float = 0.05
    seed: int | None = None


@dataclass
class VictimConfig:
    hidden: int = 64
    dropout: float = 0.5
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 200
    seed: int | None = None
    reference_seed: int | None = None


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    victim: VictimConfig = field(default_factory=VictimConfig)

    def seed_of(self, section: str) -> int:
        if section == "reference":
            s = self.victim.reference_seed
        elif section == "synth":
            s = self.data.synth_seed
        else:
            s = getattr(self, section).seed
        return self.seed if s is None else int(s)

    def validate(self) -> "ExperimentConfig":
        if self.attack.method not in ATTACKS:
            raise ConfigError(f"attack.method must be one of {ATTACKS}, got {self.attack.method!r}")
        if self.defense.method not in DEFENSES:
            raise ConfigError(f"defense.method must be one of {DEFENSES}, got {self.defense.method!r}")
        if not 0.0 < self.split.ratio < 1.0:
            raise ConfigError("split.ratio must lie in (0, 1)")
        if not 0.0 < self.attack.poison_fraction <= 1.0:
            raise ConfigError("attack.poison_fraction must lie in (0, 1]")
        if not 0.0 <= self.attack.mixed_fraction <= 1.0:
            raise ConfigError("attack.mixed_fraction must lie in [0, 1]")
        d = self.data
        if d.graph_dir is None and (d.features is None) != (d.edges is None):
            raise ConfigError("data.features and data.edges must be given together")
        for p in (d.features, d.edges, d.labels, d.graph_dir):
            if p is not None and not Path(p).exists():
                raise ConfigError(f"data path does not exist: {p}")
        try:
            self.injector("collapse")
            self.detect_config()
            self.detector_hyper()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def snapshot(self) -> dict:
        """Result-determining settings; the output location is left out."""
        d = dataclasses.asdict(self)
        d.pop("out_dir")
        return d

    # -- derived component configs ----------------------------------------

    def injector(self, mode: str, budget: int | None = None) -> atk.InjectorConfig:
        a = self.attack
        return atk.InjectorConfig(
            trigger_size=a.trigger_size, attach_edges=a.attach_edges,
            budget=a.budget if budget is None else budget, feature_mode=mode,
            collapse_noise=a.collapse_noise, shared_prototype=a.shared_prototype,
            prototype_quantile=a.prototype_quantile,
            alpha=a.alpha, homophily_noise=a.homophily_noise,
            prototype_fraction=a.prototype_fraction, trigger_scale=a.trigger_scale,
            tbn_degree=a.tbn_degree, edge_prob=a.edge_prob, target_class=a.target_class,
            exclude_target_class=a.exclude_target_class, seed=self.seed_of("attack"))

    def detect_config(self) -> det.DetectConfig:
        d = self.defense
        return det.DetectConfig(
            eps=d.eps, min_pts=d.min_pts, delta=d.delta, clean_percentile=d.clean_percentile,
            ae=det.AeHyper(lr=d.ae_lr, epochs=d.ae_epochs), reference_size=d.reference_size,
            min_gap=d.min_gap, max_frac=d.max_frac, per_dim=d.per_dim,
            seed=self.seed_of("defense"))

    def detector_hyper(self) -> dcl.DetectorHyper:
        d = self.defense
        return dcl.DetectorHyper(tau=d.tau, lr=d.detector_lr, epochs=d.detector_epochs,
                                 head_epochs=d.head_epochs, symmetric_q=d.symmetric_q,
                                 mode=d.detector_mode)

    def gcn_hyper(self) -> GcnHyper:
        v = self.victim
        return GcnHyper(v.hidden, v.dropout, v.lr, v.weight_decay, v.epochs)


_SECTIONS = {"data": DataConfig, "split": SplitConfig, "attack": AttackConfig,
             "defense": DefenseConfig, "victim": VictimConfig}


def _coerce(cls, name, raw):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown key {name}.{key}")
        default = known[key].default
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"{name}.{key} must be a boolean")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name}.{key} must be a number")
            if isinstance(default, int) and not isinstance(value, int):
                raise ConfigError(f"{name}.{key} must be an integer")
        if isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{name}.{key} must be a string")
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for key, value in raw.items():
        if key in _SECTIONS:
            setattr(cfg, key, _coerce(_SECTIONS[key], key, value))
        elif key == "seed":
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError("seed must be an integer")
            cfg.seed = value
        elif key == "out_dir":
            cfg.out_dir = str(value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if base_dir is not None:
        d = cfg.data
        for name in ("features", "edges", "labels", "graph_dir"):
            p = getattr(d, name)
            if p is not None and not Path(p).is_absolute():
                setattr(d, name, str(base_dir / p))
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw, path.parent)


# ---------------------------------------------------------------------------
# experiment


@dataclass
class MetricsReport:
    asr: float
    asr_excluding_target: float
    acc: float
    reference_acc: float
    drr: float
    det_recall: float
    det_precision: float
    inf_recall: float
    inf_precision: float
    flagged_train: int
    flagged_unseen: int
    attack: str
    defense: str
    drr_defined: bool = True
    detection_defined: bool = True
    fallback: bool = False
    seeds: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    SCALARS = ("attack", "defense", "asr", "asr_excluding_target", "acc", "reference_acc",
               "drr", "det_recall", "det_precision", "inf_recall", "inf_precision",
               "flagged_train", "flagged_unseen", "drr_defined", "detection_defined",
               "fallback")

    def to_dict(self) -> dict:
        """Everything except wall-clock timings, so reruns compare byte for byte."""
        d = dataclasses.asdict(self)
        d.pop("timings")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def row(self) -> dict:
        return {k: getattr(self, k) for k in self.SCALARS}


@dataclass
class Prepared:
    """Everything that does not depend on the defense under test."""

    cfg: ExperimentConfig
    graph: AttributedGraph
    train: AttributedGraph
    unseen: AttributedGraph
    reference: GcnModel
    reference_pred: np.ndarray  # on the untriggered unseen graph
    poisoned_train: AttributedGraph
    report_train: atk.AttackReport
    triggered_unseen: AttributedGraph
    report_unseen: atk.AttackReport
    poisoned_ids: np.ndarray  # unseen node ids selected as poisoned
    timings: dict


def _stage(name, timings, fn, *args, **kwargs):
    t0 = time.perf_counter()
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except InsufficientTriggersError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


def load_graph(cfg: ExperimentConfig) -> AttributedGraph:
    d = cfg.data
    if d.graph_dir is not None:
        return load_graph_dir(d.graph_dir)
    if d.features is not None:
        from .graph import ingest
        return ingest(d.features, d.edges, d.labels)
    return make_synthetic_graph(SynthSpec(n_nodes=d.synth_nodes, d_feat=d.synth_features,
                                          n_classes=d.synth_classes,
                                          seed=cfg.seed_of("synth")))


def attack_graph(g, cfg: ExperimentConfig, method, budget, targets=None, templates=None,
            relabel=True):
    if method == "none" or budget == 0:
        rep = atk.empty_report(cfg.injector("collapse", 0), g.n_nodes)
        return g, rep
    if method == "mixed":
        k_a = int(round(cfg.attack.mixed_fraction * budget))
        ca = cfg.injector("collapse", k_a)
        cb = cfg.injector("homophily", budget - k_a)
        return atk.inject_mixed(g, ca, cb, templates, targets, relabel)
    mode = {"sba": "random", "collapse": "collapse", "homophily": "homophily"}[method]
    return atk.inject(g, cfg.injector(mode, budget), templates, targets, relabel)


def prepare(cfg: ExperimentConfig) -> Prepared:
    timings = {}
    g = _stage("ingest", timings, load_graph, cfg)
    spl = _stage("split", timings, inductive_split, g, cfg.split.ratio, cfg.seed_of("split"))
    gt, _ = subgraph(g, spl.train_nodes)
    gu, _ = subgraph(g, spl.unseen_nodes)
    hyper = cfg.gcn_hyper()
    ref = _stage("reference_gcn", timings, train_gcn, gt, None, hyper,
                 cfg.seed_of("reference"), g.n_classes)
    ref_pred, _ = predict(ref, gu)

    method = cfg.attack.method
    pg, rep_t = _stage("attack_train", timings, attack_graph, gt, cfg, method, cfg.attack.budget)
    # half of the unseen graph is poisoned with the same trigger generator
    n_poison = max(1, int(round(cfg.attack.poison_fraction * gu.n_nodes)))
    order = make_rng(cfg.seed_of("attack"), "unseen-targets").permutation(gu.n_nodes)
    poisoned = order[:n_poison]
    templates = rep_t.template
    if method != "mixed" and isinstance(templates, tuple):
        templates = None
    tu, rep_u = _stage("attack_unseen", timings, attack_graph, gu, cfg, method, n_poison,
                       poisoned, templates, False)
    return Prepared(cfg, g, gt, gu, ref, ref_pred, pg, rep_t, tu, rep_u,
                    np.sort(poisoned), timings)


def _defend(p: Prepared, defense: str, timings: dict):
    """Returns ``(predictions on triggered unseen graph, train flags, unseen flags,
    fallback, detection, detector, victim)``."""
    cfg = p.cfg
    hyper = cfg.gcn_hyper()
    vseed = cfg.seed_of("victim")
    n_cls = p.graph.n_classes
    gt, gu = p.poisoned_train, p.triggered_unseen
    flags_t = np.zeros(0, dtype=np.int64)
    flags_u = np.zeros(0, dtype=np.int64)
    fallback = False
    detection = detector = None

    if defense == "none":
        victim = _stage("victim_gcn", timings, train_gcn, gt, None, hyper, vseed, n_cls)
        preds, _ = predict(victim, gu)
    elif defense == "prune":
        t = cfg.defense.prune_threshold
        pruned_t, removed_t = baseline_prune(gt, t)
        victim = _stage("victim_gcn", timings, train_gcn, pruned_t, None, hyper, vseed, n_cls)
        pruned_u, removed_u = baseline_prune(gu, t)
        preds, _ = predict(victim, pruned_u)
        flags_t, flags_u = removed_t, removed_u  # edges, not nodes
    elif defense == "od":
        d = cfg.defense
        pruned_t, flags_t = _stage("od", timings, baseline_od, gt, d.od_fraction,
                                   det.AeHyper(lr=d.ae_lr, epochs=d.ae_epochs),
                                   cfg.seed_of("defense"))
        victim = _stage("victim_gcn", timings, train_gcn, pruned_t, None, hyper, vseed, n_cls)
        preds, _ = predict(victim, gu)
    else:
        detection = _stage("detect", timings, det.run_pipeline, gt, cfg.detect_config())
        flags_t = np.asarray(detection.s, dtype=np.int64)
        cleaned_t, _ = remove_nodes(gt, flags_t) if flags_t.size else (gt, None)
        victim = _stage("victim_gcn", timings, train_gcn, cleaned_t, None, hyper, vseed, n_cls)
        try:
            detector = _stage("train_detector", timings, dcl.train_detector, gt.features,
                              detection, cfg.detector_hyper(), cfg.seed_of("defense"))
        except InsufficientTriggersError as exc:
            log.warning("%s; falling back to training-graph removal only", exc)
            fallback = True
        if detector is not None:
            san = _stage("sanitize", timings, dcl.sanitize, gu, detector, victim)
            preds, flags_u = san.predictions, san.flagged
        else:
            preds, _ = predict(victim, gu)
    return preds, flags_t, flags_u, fallback, detection, detector, victim


def _edge_prf(removed_edges, report: atk.AttackReport):
    bridges = {tuple(sorted(e)) for e in report.bridge_edges}
    internal = {tuple(sorted(e)) for e in report.trigger_internal_edges}
    removed = {tuple(sorted(map(int, e))) for e in removed_edges}
    hit = len(removed & bridges)
    counted = removed - internal
    recall = hit / len(bridges)
    precision = hit / len(counted) if counted else 0.0
    return recall, precision


def evaluate(p: Prepared, defense: str | None = None, out_dir=None) -> MetricsReport:
    cfg = p.cfg
    defense = cfg.defense.method if defense is None else defense
    timings = dict(p.timings)
    preds, flags_t, flags_u, fallback, detection, detector, victim = _defend(p, defense, timings)
    y_t = cfg.attack.target_class
    gu = p.unseen
    ids = p.poisoned_ids
    clean_half = np.setdiff1d(np.arange(gu.n_nodes), ids)
    labels_u = gu.labels

    asr = compute_asr(preds, y_t, ids)
    natives = ids[labels_u[ids] != y_t]
    asr_ex = compute_asr(preds, y_t, natives) if natives.size else 0.0
    acc = accuracy(preds, labels_u, clean_half)
    ref_acc = accuracy(p.reference_pred, labels_u, clean_half)

    attacked = cfg.attack.method != "none" and len(p.report_train.tbn) > 0
    drr_defined = attacked
    drr = compute_drr(preds, p.reference_pred, ids) if attacked else 1.0
    detection_defined = attacked and defense != "none"
    if not attacked:
        # nothing to find: perfect unless something was flagged
        det_r = inf_r = 1.0
        det_p = 1.0 if len(flags_t) == 0 else 0.0
        inf_p = 1.0 if len(flags_u) == 0 else 0.0
    elif defense == "none":
        det_r = det_p = inf_r = inf_p = 0.0
    elif defense == "prune":
        det_r, det_p = _edge_prf(flags_t, p.report_train)
        inf_r, inf_p = _edge_prf(flags_u, p.report_unseen)
    else:
        rt, ru = p.report_train, p.report_unseen
        det_r, det_p = compute_detection_prf(flags_t, rt.tbn, rt.non_tbn_triggers())
        inf_r, inf_p = compute_detection_prf(flags_u, ru.tbn, ru.non_tbn_triggers())

    report = MetricsReport(
        asr=asr, asr_excluding_target=asr_ex, acc=acc, reference_acc=ref_acc, drr=drr,
        det_recall=det_r, det_precision=det_p, inf_recall=inf_r, inf_precision=inf_p,
        flagged_train=int(len(flags_t)), flagged_unseen=int(len(flags_u)),
        attack=cfg.attack.method, defense=defense, drr_defined=drr_defined,
        detection_defined=detection_defined, fallback=fallback,
        seeds={k: cfg.seed_of(k) for k in ("split", "attack", "defense", "victim",
                                            "reference", "synth")},
        config=cfg.snapshot(), timings=timings)
    if out_dir is not None:
        write_outputs(Path(out_dir), p, report, detection, detector, victim)
    return report


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> MetricsReport:
    cfg.validate()
    p = prepare(cfg)
    return evaluate(p, out_dir=out_dir)


# ---------------------------------------------------------------------------
# outputs


def write_metrics_csv(path, rows) -> None:
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def write_outputs(out: Path, p: Prepared, report: MetricsReport, detection, detector, victim):
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.to_json())
    (out / "timings.json").write_text(
        json.dumps({k: round(v, 6) for k, v in report.timings.items()}, sort_keys=True, indent=2))
    write_metrics_csv(out / "metrics.csv", [report.row()])
    (out / "attack_train.json").write_text(p.report_train.to_json())
    (out / "attack_unseen.json").write_text(p.report_unseen.to_json())
    if detection is not None:
        (out / "detection.json").write_text(detection.to_json())
    models = out / "models"
    models.mkdir(exist_ok=True)
    p.reference.save(models / "reference.sgwt")
    victim.save(models / "victim.sgwt")
    if detector is not None:
        detector.save(models / "detector.sgwt")
    write_analysis(out, p.poisoned_train, p.report_train)


def write_analysis(out: Path, g: AttributedGraph, report: atk.AttackReport, bins: int = 20):
    """Similarity histograms and the degree table for one poisoned graph."""
    hist = out / "histograms"
    hist.mkdir(parents=True, exist_ok=True)
    trig = np.asarray(report.trigger_nodes, dtype=np.int64)
    clean = np.setdiff1d(np.arange(g.n_nodes), trig)
    profiles = []
    if clean.size >= 2:
        profiles.append(simstats.ck_within(g, clean, "clean"))
    if len(report.tbn) >= 2:
        tbn = np.asarray(report.tbn)
        profiles.append(simstats.ck_within(g, tbn, "tbn"))
        profiles.append(simstats.ck_cross(g, tbn, clean, "tbn_vs_clean"))
    if profiles:
        simstats.export_histograms(profiles, bins, hist / "similarity.csv")
    rows = []
    for method, ids in report.tbn_by_method.items():
        if ids:
            rows.append(simstats.degree_profile(g, ids, method))
    if clean.size:
        rows.append(simstats.degree_profile(g, clean, "clean"))
    simstats.write_degree_table(rows, out / "degree_table.csv", out / "degree_table.txt")


# ---------------------------------------------------------------------------
# sweep


def sweep(cfg: ExperimentConfig, out_dir, eps_grid=SWEEP_EPS, min_pts_grid=SWEEP_MIN_PTS):
    """SimGuard over the eps x min_pts grid; one metrics row per cell."""
    cfg.validate()
    p = prepare(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for eps in eps_grid:
        for mp in min_pts_grid:
            cell = dataclasses.replace(cfg, defense=dataclasses.replace(
                cfg.defense, method="simguard", eps=eps, min_pts=mp))
            q = dataclasses.replace(p, cfg=cell)
            rep = evaluate(q, "simguard")
            rows.append({"eps": eps, "min_pts": mp, **rep.row()})
    write_metrics_csv(out / "sweep.csv", rows)
    return rows
