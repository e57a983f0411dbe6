"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into the terminal summary. Criterion 8 needs a
Cora-format graph directory in ``SIMGUARD_CORA_DIR`` and is skipped otherwise.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from simguard import detect as det
from simguard import detector as dcl
from simguard import evalkit as ek
from simguard import numkit as nk
from simguard.cli import main as cli_main
from simguard.gcn import GcnModel, gcn_loss_and_grads, inject_node, solve_injection_feature
from simguard.graph import AttributedGraph
from oracles import dbscan_reference, one_layer_aggregate, partition

GRAD_TOL = 1e-4


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. gradient checks


def _squared_error(build, x, target):
    def fn(params):
        net = nk.Sequential(build(params))
        out = net.forward(x, training=True)
        diff = out - target
        net.backward(diff)
        return 0.5 * float((diff ** 2).sum()), net.grads
    return fn


def _gradient_cases(seed):
    """(name, loss_fn, params) for every op and every full model."""
    rng = np.random.default_rng(seed)
    # an odd row count keeps L1 sign sums from cancelling to an exactly zero
    # gradient, where central differences return only rounding noise
    n, d = 7, 5
    x = rng.standard_normal((n, d))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.5]
    g = AttributedGraph(x, pairs, rng.integers(0, 3, n))
    a_hat = nk.normalize_adjacency(g)

    def w(*shape):
        return rng.standard_normal(shape)

    cases = [
        ("linear", _squared_error(lambda p: [nk.Linear(p[0], p[1])], x, w(n, 3)),
         [w(d, 3), w(3)]),
        ("relu", _squared_error(lambda p: [nk.Linear(p[0], p[1]), nk.ReLU()], x, w(n, 3)),
         [w(d, 3), w(3)]),
        ("dropout", _squared_error(
            lambda p: [nk.Dropout(0.5, nk.make_rng(seed, "mask")), nk.Linear(p[0], p[1])],
            x, w(n, 3)), [w(d, 3), w(3)]),
        ("propagate", _squared_error(
            lambda p: [nk.Propagate(a_hat), nk.Linear(p[0], p[1])], x, w(n, 3)),
         [w(d, 3), w(3)]),
        ("row_l2_normalize", _squared_error(
            lambda p: [nk.Linear(p[0], p[1]), nk.RowL2Normalize()], x, w(n, 3)),
         [w(d, 3), w(3)]),
    ]

    labels = rng.integers(0, 3, n)

    def ce(params):
        loss, dlogits = nk.softmax_cross_entropy(params[0], labels, [0, 2, 3, 5])
        return loss, [dlogits]
    cases.append(("softmax_cross_entropy", ce, [w(n, 3)]))

    target = w(n, 4)

    def l1(params):
        per_row, dpred = nk.l1_rows(params[0], target)
        return float(per_row.mean()), [dpred]
    cases.append(("l1_rows", l1, [w(n, 4)]))

    def contrastive(params):
        loss, gc, gt = dcl.contrastive_loss(params[0], params[1], 0.5)
        return loss, [gc, gt]
    cases.append(("contrastive_loss", contrastive, [w(4, 3), w(4, 3)]))

    ids = np.array([0, 1, 3, 4])

    def gcn(params):
        m = GcnModel(*params, dropout=0.5)
        return gcn_loss_and_grads(m, a_hat, x, labels[ids], ids, 5e-4,
                                  nk.make_rng(seed, "gcn-mask"), training=True)
    cases.append(("gcn", gcn, [w(d, 4), w(4), w(4, 3), w(3)]))

    def ae(params):
        return det.ae_loss_and_grads(det.Autoencoder(list(params)), x)
    cases.append(("autoencoder", ae,
                  [w(d, 4), w(4), w(4, 3), w(3), w(3, 4), w(4), w(4, d), w(d)]))

    xc, xt = w(4, d), w(4, d)
    head = [w(3, 2), w(2)]

    def embedder(params):
        m = dcl.DetectorModel(list(params), head, 0.5)
        return dcl.embed_loss_and_grads(m, xc, xt, 0.5)
    cases.append(("contrastive_embedder", embedder, [w(d, 4), w(4), w(4, 3), w(3)]))

    y2 = np.array([0, 0, 0, 0, 1, 1, 1])

    def embedder_head(params):
        m = dcl.DetectorModel(list(params[:4]), list(params[4:]), 0.5)
        return dcl.joint_loss_and_grads(m, x, y2, dcl._balanced_weights(y2))
    cases.append(("embedder_head", embedder_head,
                  [w(d, 4), w(4), w(4, 3), w(3), w(3, 2), w(2)]))
    return cases


def test_criterion_01_gradient_checks():
    t0 = time.perf_counter()
    worst, where = 0.0, ""
    names = set()
    for seed in range(20):
        for name, fn, params in _gradient_cases(seed):
            names.add(name)
            err = nk.grad_check(fn, params, epsilon=1e-4)
            if err > worst:
                worst, where = err, f"{name}@seed{seed}"
    elapsed = time.perf_counter() - t0
    record(1, worst < GRAD_TOL and elapsed < 30.0,
           f"{len(names)} ops/models x 20 seeds, max rel err {worst:.2e} ({where}), "
           f"{elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. DBSCAN vs textbook


def test_criterion_02_dbscan_oracle():
    t0 = time.perf_counter()
    mismatches = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(5, 201))
        d = int(rng.integers(2, 17))
        k = int(rng.integers(1, 6))
        centres = rng.standard_normal((k, d))
        x = centres[rng.integers(0, k, n)] + rng.uniform(0.02, 0.5) * rng.standard_normal((n, d))
        eps = float(rng.choice([0.01, 0.02, 0.04, 0.1, 0.2, 0.4]))
        min_pts = int(rng.integers(2, 16))
        got = det.dbscan(x, det.DbscanParams(eps, min_pts)).labels_for(np.arange(n)).tolist()
        if partition(got) != partition(dbscan_reference(x, eps, min_pts)):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    record(2, mismatches == 0 and elapsed < 20.0,
           f"100 point sets, {mismatches} partition mismatches, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. contrastive closed forms


def test_criterion_03_contrastive_closed_forms():
    z = np.tile([0.6, 0.8], (5, 1))
    collapse, _, _ = dcl.contrastive_loss(z, z.copy(), 0.5)
    errs = []
    for tau in (0.1, 0.5, 1.0):
        zc = np.tile([1.0, 0.0], (5, 1))
        zt = np.tile([0.0, 1.0], (5, 1))
        loss, _, _ = dcl.contrastive_loss(zc, zt, tau)
        errs.append(abs(loss + 2.0 / tau))
    ok = abs(collapse) <= 1e-9 and max(errs) <= 1e-6
    record(3, ok, f"collapse L={collapse:.1e}, separation max |L + 2/tau|={max(errs):.1e}")


# ---------------------------------------------------------------------------
# 4. injection solver


def test_criterion_04_injection_solver():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 31))
        d = int(rng.integers(1, 9))
        p = rng.uniform(0.05, 0.6)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
        g = AttributedGraph(rng.standard_normal((n, d)), pairs, np.full(n, -1))
        u, i = (int(v) for v in rng.choice(n, size=2, replace=False))
        g2 = inject_node(g, u, solve_injection_feature(g, u, i))
        h_u = one_layer_aggregate(g2.adjacency.toarray(), g2.features, u)
        h_i = one_layer_aggregate(g.adjacency.toarray(), g.features, i)
        worst = max(worst, float(np.abs(h_u - h_i).max()))
    elapsed = time.perf_counter() - t0
    record(4, worst < 1e-9 and elapsed < 10.0,
           f"50 graphs, max |H'_u - H_i| = {worst:.1e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 5. anomaly bound


def test_criterion_05_anomaly_bound():
    rng = np.random.default_rng(5)
    lo, hi, pairs = np.inf, -np.inf, 0
    for trial in range(20):
        d = int(rng.choice([1, 2, 5, 20, 100]))
        x = rng.standard_normal((100, d)) * rng.uniform(0.01, 100, (100, 1))
        y = rng.standard_normal((100, d)) * rng.uniform(0.01, 100, (100, 1))
        if d > 1:
            x[::7, 0] = 0.0  # sprinkle exact zeros
        for per_dim in (False, True):
            vals = det.anomaly_matrix(x, y, per_dim=per_dim)
            lo, hi = min(lo, vals.min()), max(hi, vals.max())
            pairs += vals.size
    record(5, pairs >= 100_000 and lo >= 0.0 and hi <= 1.0,
           f"{pairs} pairs, G range [{lo:.4f}, {float(hi)!r}]")


# ---------------------------------------------------------------------------
# shared full-scale runs for 6 and 7


def full_config(method, seed=0):
    return ek.config_from_dict({"seed": seed, "attack": {"method": method, "budget": 20}})


@pytest.fixture(scope="module")
def prepared_runs():
    return {m: ek.prepare(full_config(m).validate()) for m in ("collapse", "homophily", "mixed")}


def test_criterion_06_training_detection(prepared_runs):
    bands = {"collapse": (1.0, 0.9), "homophily": (0.95, 0.9), "mixed": (0.95, None)}
    total, parts, ok = 0.0, [], True
    for method, (min_r, min_p) in bands.items():
        p = prepared_runs[method]
        t0 = time.perf_counter()
        res = det.run_pipeline(p.poisoned_train, p.cfg.detect_config())
        total += time.perf_counter() - t0
        rep = p.report_train
        r, prec = ek.compute_detection_prf(res.s, rep.tbn, rep.non_tbn_triggers())
        ok &= r >= min_r and (min_p is None or prec >= min_p)
        parts.append(f"{method} R={r:.2f} P={prec:.2f}")
    record(6, ok and total < 120.0, ", ".join(parts) + f", {total:.1f}s")


def test_criterion_07_end_to_end(prepared_runs):
    parts, ok = [], True
    for method, p in prepared_runs.items():
        none = ek.evaluate(p, "none")
        sg = ek.evaluate(p, "simguard")
        good = (none.asr >= 0.9 and sg.asr <= 0.1 and sg.drr >= 0.9
                and abs(sg.acc - sg.reference_acc) <= 0.02)
        ok &= good
        parts.append(f"{method}: ASR {none.asr:.3f}->{sg.asr:.3f} DRR {sg.drr:.3f} "
                     f"ACC {sg.acc:.3f} vs ref {sg.reference_acc:.3f}")
    record(7, ok, "; ".join(parts))


# ---------------------------------------------------------------------------
# 8. Cora (optional)


def test_criterion_08_cora_sba():
    cora = os.environ.get("SIMGUARD_CORA_DIR")
    if not cora:
        ACCEPTANCE_LINES.append("criterion  8: SKIP  set SIMGUARD_CORA_DIR to a Cora graph directory")
        pytest.skip("Cora files not supplied")
    from threadpoolctl import threadpool_limits
    cfg = ek.config_from_dict({"seed": 0, "data": {"graph_dir": str(Path(cora).resolve())},
                               "attack": {"method": "sba", "budget": 20}}).validate()
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        p = ek.prepare(cfg)
        none = ek.evaluate(p, "none")
        sg = ek.evaluate(p, "simguard")
    elapsed = time.perf_counter() - t0
    ok = (0.35 <= none.asr <= 0.70 and sg.asr <= 0.10 and sg.drr >= 0.95
          and sg.acc >= 0.82 and elapsed < 300)
    record(8, ok, f"undefended ASR {none.asr:.3f}, defended ASR {sg.asr:.3f} "
                  f"DRR {sg.drr:.3f} ACC {sg.acc:.3f}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 9. no attack


def test_criterion_09_no_attack():
    p = ek.prepare(full_config("none").validate())
    res = det.run_pipeline(p.poisoned_train, p.cfg.detect_config())
    frac = len(res.s) / p.poisoned_train.n_nodes
    none = ek.evaluate(p, "none")
    sg = ek.evaluate(p, "simguard")
    ok = frac <= 0.005 and abs(sg.acc - none.acc) <= 0.01
    record(9, ok, f"flagged {len(res.s)} / {p.poisoned_train.n_nodes} ({frac:.2%}), "
                  f"ACC {sg.acc:.3f} vs undefended {none.acc:.3f}")


# ---------------------------------------------------------------------------
# 10. determinism


def test_criterion_10_determinism(tmp_path):
    cfg = tmp_path / "exp.toml"
    cfg.write_text('seed = 3\n[attack]\nmethod = "mixed"\nbudget = 20\n')
    codes = [cli_main(["pipeline", "--config", str(cfg), "--out-dir", str(tmp_path / r)])
             for r in ("a", "b")]
    a = (tmp_path / "a/metrics.json").read_bytes()
    b = (tmp_path / "b/metrics.json").read_bytes()
    record(10, codes == [0, 0] and a == b,
           f"exit codes {codes}, metrics.json identical: {a == b} ({len(a)} bytes)")
