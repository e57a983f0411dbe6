"""Over-similarity statistics: per-node mean cosine similarity (C_k), degree
profiles and plot-ready histogram CSVs."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import AttributedGraph

log = logging.getLogger(__name__)


@dataclass
class SimilarityProfile:
    """``values[k]`` is the C_k of ``ids[k]`` within ``group``."""

    ids: np.ndarray
    values: np.ndarray
    group: str = "all"
    skipped: list = field(default_factory=list)  # zero-norm rows left out

    @property
    def mean(self) -> float:
        return float(self.values.mean()) if self.values.size else float("nan")

    def histogram(self, bins: int = 20, value_range=(-1.0, 1.0)):
        """``(edges, densities)``; densities integrate to 1 over the edges."""
        if bins < 2:
            raise ValueError("need at least 2 bins")
        lo, hi = value_range
        vmin, vmax = float(self.values.min()), float(self.values.max())
        if vmin < lo or vmax > hi:
            lo, hi = min(lo, vmin), max(hi, vmax)
        dens, edges = np.histogram(self.values, bins=bins, range=(lo, hi), density=True)
        return edges, dens


@dataclass
class DegreeProfile:
    group: str
    degrees: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.degrees.mean())

    @property
    def var(self) -> float:
        # population variance
        return float(((self.degrees - self.degrees.mean()) ** 2).mean())


def _unit_rows(x, ids):
    ids = np.asarray(ids, dtype=np.int64)
    rows = x[ids]
    norms = np.linalg.norm(rows, axis=1)
    ok = norms > 0
    if not ok.all():
        log.warning("skipping %d zero-norm feature rows in cosine statistics",
                    int((~ok).sum()))
    return ids[ok], rows[ok] / norms[ok, None], ids[~ok].tolist()


def ck_within(g: AttributedGraph | np.ndarray, ids, group: str = "all") -> SimilarityProfile:
    """C_i = mean over the other ``n - 1`` members j of cos(x_i, x_j)."""
    x = g.features if isinstance(g, AttributedGraph) else np.asarray(g, dtype=np.float64)
    if len(np.unique(ids)) < 2:
        raise ValueError("ck_within needs at least two nodes")
    kept, u, skipped = _unit_rows(x, np.unique(ids))
    n = kept.size
    if n < 2:
        raise ValueError("fewer than two nonzero feature rows")
    s = u @ u.T
    np.fill_diagonal(s, 0.0)
    vals = np.clip(s.sum(axis=1) / (n - 1), -1.0, 1.0)
    return SimilarityProfile(kept, vals, group, skipped)


def ck_cross(g: AttributedGraph | np.ndarray, ids_a, ids_b, group: str = "cross") -> SimilarityProfile:
    """Mean cosine similarity of every node in ``ids_a`` to all of ``ids_b``."""
    x = g.features if isinstance(g, AttributedGraph) else np.asarray(g, dtype=np.float64)
    a, b = np.unique(ids_a), np.unique(ids_b)
    if a.size == 0 or b.size == 0:
        raise ValueError("ck_cross needs two nonempty sets")
    if np.intersect1d(a, b).size:
        raise ValueError("ck_cross sets must be disjoint")
    ka, ua, skipped = _unit_rows(x, a)
    _, ub, skipped_b = _unit_rows(x, b)
    if ub.shape[0] == 0:
        raise ValueError("second set has no nonzero feature rows")
    vals = np.clip((ua @ ub.T).mean(axis=1), -1.0, 1.0)
    return SimilarityProfile(ka, vals, group, skipped + skipped_b)


def degree_profile(g: AttributedGraph, ids, group: str = "all") -> DegreeProfile:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("degree_profile needs at least one node")
    return DegreeProfile(group, g.degrees[ids].astype(np.float64))


def export_histograms(profiles, bins: int, path) -> Path:
    """CSV ``group,bin_left,bin_right,density``; all groups share bin edges."""
    if isinstance(profiles, SimilarityProfile):
        profiles = [profiles]
    if bins < 2:
        raise ValueError("need at least 2 bins")
    lo = min(-1.0, *(float(p.values.min()) for p in profiles))
    hi = max(1.0, *(float(p.values.max()) for p in profiles))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "bin_left", "bin_right", "density"])
        for p in profiles:
            edges, dens = p.histogram(bins, (lo, hi))
            for left, right, d in zip(edges[:-1], edges[1:], dens):
                w.writerow([p.group, repr(float(left)), repr(float(right)), repr(float(d))])
    return path


# ---------------------------------------------------------------------------
# degree summary table


def degree_table(rows) -> list[tuple[str, float, float]]:
    """``rows`` is an iterable of DegreeProfile; returns (group, mean, var)."""
    return [(p.group, p.mean, p.var) for p in rows]


def write_degree_table(rows, csv_path, txt_path=None) -> None:
    table = degree_table(rows)
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "mean", "var"])
        for name, mean, var in table:
            w.writerow([name, f"{mean:.4f}", f"{var:.4f}"])
    if txt_path is not None:
        Path(txt_path).write_text(format_degree_table(table))


def format_degree_table(table) -> str:
    width = max([len("method")] + [len(r[0]) for r in table])
    lines = [f"{'method':<{width}}  {'mean':>8}  {'var':>8}"]
    lines += [f"{name:<{width}}  {mean:8.3f}  {var:8.3f}" for name, mean, var in table]
    return "\n".join(lines) + "\n"
