import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from simguard import simstats as ss
from oracles import ck_reference, cosine


def test_ck_within_matches_loop(small_synth):
    ids = np.arange(0, 40, 3)
    prof = ss.ck_within(small_synth, ids)
    ref = ck_reference([small_synth.features[i].tolist() for i in ids])
    assert np.allclose(prof.values, ref)


def test_ck_within_skips_zero_rows():
    x = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    prof = ss.ck_within(x, [0, 1, 2])
    assert prof.ids.tolist() == [0, 2]
    assert prof.skipped == [1]
    assert prof.values[0] == pytest.approx(cosine([1, 0], [1, 1]))


def test_ck_cross_requires_disjoint():
    x = np.eye(3)
    with pytest.raises(ValueError):
        ss.ck_cross(x, [0, 1], [1, 2])
    prof = ss.ck_cross(x + 0.1, [0], [1, 2])
    want = np.mean([cosine(x[0] + 0.1, x[j] + 0.1) for j in (1, 2)])
    assert prof.values[0] == pytest.approx(want)


def test_degree_profile_population_variance(tiny_graph):
    prof = ss.degree_profile(tiny_graph, [0, 1, 2, 3])
    assert prof.mean == pytest.approx(np.mean([2, 2, 3, 2]))
    assert prof.var == pytest.approx(np.var([2, 2, 3, 2]))


def test_histograms_share_edges_and_integrate(tmp_path):
    a = ss.SimilarityProfile(np.arange(4), np.array([-0.5, 0.1, 0.2, 0.9]), "a", [])
    b = ss.SimilarityProfile(np.arange(2), np.array([0.95, 0.97]), "b", [])
    path = ss.export_histograms([a, b], 10, tmp_path / "h.csv")
    rows = list(csv.DictReader(open(path)))
    for grp in "ab":
        sub = [r for r in rows if r["group"] == grp]
        assert len(sub) == 10
        area = sum(float(r["density"]) * (float(r["bin_right"]) - float(r["bin_left"]))
                   for r in sub)
        assert area == pytest.approx(1.0)
    assert [r["bin_left"] for r in rows[:10]] == [r["bin_left"] for r in rows[10:]]


def test_degree_table_files(tmp_path, tiny_graph):
    rows = [ss.degree_profile(tiny_graph, [0, 1], "clean"),
            ss.degree_profile(tiny_graph, [3], "collapse")]
    ss.write_degree_table(rows, tmp_path / "t.csv", tmp_path / "t.txt")
    body = (tmp_path / "t.csv").read_text().splitlines()
    assert body[0] == "method,mean,var"
    assert body[2] == "collapse,2.0000,0.0000"
    assert "collapse" in (tmp_path / "t.txt").read_text()


@given(st.integers(2, 10), st.integers(1, 5), st.integers(0, 10_000))
def test_ck_within_bounded_and_scale_invariant(n, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d)) + 1e-3
    prof = ss.ck_within(x, np.arange(n))
    assert np.all(np.abs(prof.values) <= 1.0)
    scaled = ss.ck_within(x * rng.uniform(0.1, 10, size=(n, 1)), np.arange(n))
    assert np.allclose(prof.values, scaled.values)
