"""Command-line entry point.

Usage:
  simguard pipeline --config exp.toml --out-dir runs/a
  simguard --seed 3 sweep --out-dir runs/sweep
  simguard synth --out-dir data/synth
  simguard attack --graph data/train --method collapse --out-dir runs/atk

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
divergence, 5 insufficient detected triggers (fallback engaged).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import detect as det
from . import detector as dcl
from . import evalkit as ek
from . import graph as gr
from .errors import ConfigError, DataError, InsufficientTriggersError, SimGuardError
from .gcn import GcnModel, predict, train_gcn
from .numkit import make_rng
from .synth import SynthSpec, make_synthetic_graph

log = logging.getLogger("simguard")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    """Flags accepted before and after the verb; after-verb values win."""
    none = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=none, help="TOML experiment config")
    p.add_argument("--seed", type=int, default=none, help="master seed")
    p.add_argument("--out-dir", default=none, help="output directory")
    p.add_argument("--threads", type=int, default=none, help="cap on BLAS threads")
    p.add_argument("-v", "--verbose", action="store_true",
                   default=argparse.SUPPRESS if suppress else False)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simguard", parents=[_global_flags(False)],
                                     description="Graph backdoor trigger detection lab")
    sub = parser.add_subparsers(dest="verb", required=True)
    common = _global_flags(True)

    def verb(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    p = verb("synth", "generate a synthetic citation-style graph")
    p.add_argument("--nodes", type=int, default=3000)
    p.add_argument("--features", type=int, default=100)
    p.add_argument("--classes", type=int, default=7)
    p.add_argument("--csv", action="store_true", help="write CSV features instead of binary")

    p = verb("ingest", "validate raw files and write a graph directory")
    p.add_argument("--features", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--labels")
    p.add_argument("--csv", action="store_true")

    p = verb("export", "rewrite a graph directory")
    p.add_argument("--graph", required=True)
    p.add_argument("--csv", action="store_true")

    p = verb("split", "inductive train/unseen split")
    p.add_argument("--graph", required=True)
    p.add_argument("--ratio", type=float)

    p = verb("attack", "inject triggers")
    p.add_argument("--graph", required=True)
    p.add_argument("--method", choices=[m for m in ek.ATTACKS if m != "none"])
    p.add_argument("--budget", type=int)
    p.add_argument("--unseen", action="store_true",
                   help="poison a fraction of all nodes without relabelling")
    p.add_argument("--template", help="trigger template JSON from a previous attack")

    p = verb("analyze", "similarity histograms and degree table")
    p.add_argument("--graph", required=True)
    p.add_argument("--attack", required=True, help="attack report JSON")
    p.add_argument("--bins", type=int, default=20)

    p = verb("defend", "run trigger identification on a training graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--attack", help="attack report JSON, to score the detection")
    p.add_argument("--train-victim", action="store_true",
                   help="also train a GCN on the cleaned graph")

    p = verb("train-detector", "fit the contrastive detector")
    p.add_argument("--graph", required=True)
    p.add_argument("--detection", required=True)

    p = verb("eval", "score a victim (optionally behind a detector) on a triggered graph")
    p.add_argument("--graph", required=True, help="triggered unseen graph")
    p.add_argument("--clean-graph", required=True, help="the same graph before triggering")
    p.add_argument("--attack", required=True, help="attack report of the triggered graph")
    p.add_argument("--victim", required=True)
    p.add_argument("--reference", required=True, help="GCN trained on the clean training graph")
    p.add_argument("--detector")

    verb("pipeline", "full experiment from a config")
    verb("sweep", "eps x min_pts grid of full experiments")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _config(args) -> ek.ExperimentConfig:
    cfg = ek.load_config(args.config) if args.config else ek.ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    return cfg


def _out(cfg) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _load_graph(path) -> gr.AttributedGraph:
    return gr.load_graph_dir(path)


def _load_report(path) -> atk.AttackReport:
    try:
        return atk.AttackReport.from_dict(json.loads(Path(path).read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: not an attack report ({exc})") from exc


# ---------------------------------------------------------------------------
# verbs


def cmd_synth(args, cfg):
    g = make_synthetic_graph(SynthSpec(n_nodes=args.nodes, d_feat=args.features,
                                       n_classes=args.classes, seed=cfg.seed))
    gr.export(g, _out(cfg), binary=not args.csv)
    print(f"wrote {g.n_nodes} nodes, {g.n_edges} edges to {cfg.out_dir}")


def cmd_ingest(args, cfg):
    g = gr.ingest(args.features, args.edges, args.labels)
    out = _out(cfg)
    gr.export(g, out, binary=not args.csv)
    summary = {"n_nodes": g.n_nodes, "d_feat": g.d_feat, "n_edges": g.n_edges,
               "n_classes": g.n_classes, "n_labeled": int(g.labeled_nodes().size)}
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))


def cmd_export(args, cfg):
    g = _load_graph(args.graph)
    gr.export(g, _out(cfg), binary=not args.csv)


def cmd_split(args, cfg):
    g = _load_graph(args.graph)
    ratio = cfg.split.ratio if args.ratio is None else args.ratio
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}")
    spl = gr.inductive_split(g, ratio, cfg.seed_of("split"))
    out = _out(cfg)
    (out / "split.json").write_text(spl.to_json())
    gr.export(gr.subgraph(g, spl.train_nodes)[0], out / "train")
    gr.export(gr.subgraph(g, spl.unseen_nodes)[0], out / "unseen")
    print(f"train {spl.train_nodes.size} / unseen {spl.unseen_nodes.size}")


def cmd_attack(args, cfg):
    g = _load_graph(args.graph)
    method = args.method or cfg.attack.method
    if method == "none":
        raise ConfigError("attack verb needs a method other than 'none'")
    templates = None
    if args.template:
        templates = atk.templates_from_json(Path(args.template).read_text())
    if args.unseen:
        n = max(1, int(round(cfg.attack.poison_fraction * g.n_nodes)))
        targets = make_rng(cfg.seed_of("attack"), "unseen-targets").permutation(g.n_nodes)[:n]
        budget, relabel = n, False
    else:
        targets, relabel = None, True
        budget = cfg.attack.budget if args.budget is None else args.budget
    try:
        pg, rep = ek.attack_graph(g, cfg, method, budget, targets, templates, relabel)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = _out(cfg)
    gr.export(pg, out / "graph")
    (out / "attack.json").write_text(rep.to_json())
    if rep.template is not None:
        (out / "template.json").write_text(atk.templates_to_json(rep.template))
    print(f"{rep.method}: {len(rep.target_nodes)} targets, {len(rep.trigger_nodes)} trigger nodes")


def cmd_analyze(args, cfg):
    g = _load_graph(args.graph)
    rep = _load_report(args.attack)
    out = _out(cfg)
    ek.write_analysis(out, g, rep, args.bins)
    print((out / "degree_table.txt").read_text(), end="")


def cmd_defend(args, cfg):
    g = _load_graph(args.graph)
    res = det.run_pipeline(g, cfg.detect_config())
    out = _out(cfg)
    (out / "detection.json").write_text(res.to_json())
    summary = {"s1": len(res.s1), "s2": len(res.s2), "clean": len(res.clean),
               "flagged": res.s}
    if args.attack:
        rep = _load_report(args.attack)
        r, p = ek.compute_detection_prf(res.s, rep.tbn, rep.non_tbn_triggers())
        summary.update(recall=r, precision=p)
    if args.train_victim:
        cleaned = gr.remove_nodes(g, res.s)[0] if res.s else g
        model = train_gcn(cleaned, None, cfg.gcn_hyper(), cfg.seed_of("victim"), g.n_classes)
        (out / "models").mkdir(exist_ok=True)
        model.save(out / "models" / "victim.sgwt")
    _write_json(out / "flagged.json", summary)
    print(f"flagged {len(res.s)} nodes (s1={len(res.s1)}, s2={len(res.s2)})")


def cmd_train_detector(args, cfg):
    g = _load_graph(args.graph)
    try:
        res = det.DetectionResult.from_json(Path(args.detection).read_text())
    except (KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"{args.detection}: not a detection result ({exc})") from exc
    model = dcl.train_detector(g.features, res, cfg.detector_hyper(), cfg.seed_of("defense"))
    out = _out(cfg)
    (out / "models").mkdir(exist_ok=True)
    model.save(out / "models" / "detector.sgwt")
    print(f"detector trained on {len(res.s)} suspects and {len(res.clean)} clean nodes")


def cmd_eval(args, cfg):
    tu = _load_graph(args.graph)
    gu = _load_graph(args.clean_graph)
    rep = _load_report(args.attack)
    victim = GcnModel.load(args.victim)
    reference = GcnModel.load(args.reference)
    if tu.n_nodes < gu.n_nodes or not np.array_equal(tu.features[:gu.n_nodes], gu.features):
        raise DataError("triggered graph does not extend the clean graph")
    ids = np.asarray(rep.target_nodes, dtype=np.int64)
    ref_pred, _ = predict(reference, gu)
    flagged = np.zeros(0, dtype=np.int64)
    if args.detector:
        san = dcl.sanitize(tu, dcl.DetectorModel.load(args.detector), victim)
        preds, flagged = san.predictions, san.flagged
    else:
        preds, _ = predict(victim, tu)
    clean_half = np.setdiff1d(np.arange(gu.n_nodes), ids)
    y_t = rep.target_class
    natives = ids[gu.labels[ids] != y_t]
    metrics = {
        "asr": ek.compute_asr(preds, y_t, ids),
        "asr_excluding_target": ek.compute_asr(preds, y_t, natives) if natives.size else 0.0,
        "drr": ek.compute_drr(preds, ref_pred, ids),
        "acc": ek.accuracy(preds, gu.labels, clean_half),
        "reference_acc": ek.accuracy(ref_pred, gu.labels, clean_half),
        "flagged_unseen": int(flagged.size),
    }
    if rep.tbn:
        r, p = ek.compute_detection_prf(flagged, rep.tbn, rep.non_tbn_triggers())
        metrics.update(inf_recall=r, inf_precision=p)
    out = _out(cfg)
    _write_json(out / "metrics.json", metrics)
    ek.write_metrics_csv(out / "metrics.csv", [metrics])
    print(json.dumps(metrics, sort_keys=True))


def cmd_pipeline(args, cfg):
    report = ek.run_experiment(cfg, out_dir=_out(cfg))
    print(json.dumps(report.row(), sort_keys=True))
    if report.fallback:
        log.warning("fewer than two suspects were detected; detector training skipped")
        return InsufficientTriggersError.exit_code
    return 0


def cmd_sweep(args, cfg):
    rows = ek.sweep(cfg, _out(cfg))
    for r in rows:
        print(f"eps={r['eps']:<5} min_pts={r['min_pts']:<3} asr={r['asr']:.3f} "
              f"drr={r['drr']:.3f} recall={r['det_recall']:.3f} precision={r['det_precision']:.3f}")


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "export": cmd_export, "split": cmd_split,
    "attack": cmd_attack, "analyze": cmd_analyze, "defend": cmd_defend,
    "train-detector": cmd_train_detector, "eval": cmd_eval, "pipeline": cmd_pipeline,
    "sweep": cmd_sweep,
}


def _thread_limit(n):
    if n is None:
        return nullcontext()
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.out_dir is None and args.verb not in ("pipeline", "sweep") and not args.config:
            cfg.out_dir = "."
        with _thread_limit(args.threads):
            code = COMMANDS[args.verb](args, cfg)
        return int(code or 0)
    except SimGuardError as exc:
        print(f"simguard: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"simguard: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except ValueError as exc:
        print(f"simguard: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
