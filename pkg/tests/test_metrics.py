import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patchmixer import oracles as O
from patchmixer.metrics import (
    ConfusionMatrix,
    MetricsReport,
    clustering_suite,
    mean_iou,
    normalized_view,
    overall_accuracy,
    transfer_table,
)

labelings = st.integers(1, 8).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 3), min_size=n, max_size=n),
                        st.lists(st.integers(0, 3), min_size=n, max_size=n))
)


# -- accuracy and IoU ---------------------------------------------------------------

def test_oa_examples():
    assert overall_accuracy(np.diag([3, 4, 5])) == 1.0
    assert overall_accuracy(np.ones((2, 2), int)) == 0.5


def test_miou_examples():
    assert mean_iou(np.diag([2, 7])) == 1.0
    assert mean_iou(np.array([[1, 1], [1, 1]])) == pytest.approx(1 / 3, abs=0)


def test_miou_excludes_absent_classes():
    cm = np.zeros((3, 3), int)
    cm[0, 0] = cm[1, 1] = 4
    assert mean_iou(cm) == 1.0


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=60))
def test_oa_and_miou_match_recounts(pairs):
    y, yh = map(list, zip(*pairs))
    cm = ConfusionMatrix.from_labels(y, yh, 5)
    assert cm.total == len(y)
    assert overall_accuracy(cm) == O.accuracy_recount(y, yh)
    assert mean_iou(cm) == pytest.approx(O.miou_sets(y, yh), abs=1e-15)
    diagonal = np.count_nonzero(cm.counts - np.diag(np.diag(cm.counts))) == 0
    assert (overall_accuracy(cm) == 1.0) == diagonal == (mean_iou(cm) == 1.0)


def test_confusion_rejects_bad_labels():
    cm = ConfusionMatrix(2)
    with pytest.raises(ValueError):
        cm.update([0, 2], [0, 1])
    with pytest.raises(ValueError):
        cm.update([0], [0, 1])


# -- clustering ---------------------------------------------------------------------------

def test_identical_labelings_score_one():
    out = clustering_suite([0, 0, 1, 2, 2], [0, 0, 1, 2, 2])
    for k in ("ari", "ami", "h", "c", "v", "fm"):
        assert out[k] == pytest.approx(1.0, abs=1e-15)


def test_relabelled_prediction_scores_one():
    out = clustering_suite([0, 0, 1, 1], [1, 1, 0, 0])
    for k in ("ari", "ami", "h", "c", "v", "fm"):
        assert out[k] == pytest.approx(1.0, abs=1e-15)


def test_intrinsic_scores_need_two_to_n_minus_one_clusters(rng):
    x = rng.normal(size=(4, 2))
    assert clustering_suite([0, 1, 0, 1], [0, 0, 0, 0], x)["s"] is None
    assert clustering_suite([0, 1, 0, 1], [0, 1, 2, 3], x)["ch"] is None
    assert clustering_suite([0, 1, 0, 1], [0, 1, 0, 1])["s"] is None


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        clustering_suite([], [])


@given(labelings, st.integers(0, 2**32 - 1))
def test_clustering_matches_bruteforce(pair, seed):
    t, p = pair
    x = np.random.default_rng(seed).normal(size=(len(t), 3))
    got = clustering_suite(t, p, x)
    h, c, v = O.homogeneity_completeness_v(t, p)
    ref = {"ari": O.ari_pairs(t, p), "ami": O.ami_max(t, p), "h": h, "c": c, "v": v, "fm": O.fm_pairs(t, p)}
    if 2 <= len(set(p)) <= len(p) - 1:
        ref["s"] = O.silhouette_loop(x, p)
        ref["ch"] = O.calinski_harabasz_loop(x, p)
    for k, val in ref.items():
        assert abs(got[k] - val) <= 1e-12, k


@given(labelings, st.permutations([0, 1, 2, 3]))
def test_label_scores_ignore_prediction_ids(pair, perm):
    t, p = pair
    a = clustering_suite(t, p)
    b = clustering_suite(t, [perm[v] for v in p])
    for k in ("ari", "ami", "h", "c", "v", "fm"):
        assert a[k] == pytest.approx(b[k], abs=1e-12)


def test_single_cluster_prediction_boundary():
    t, p = [0, 0, 1, 1, 2], [0] * 5
    out = clustering_suite(t, p)
    assert out["ari"] == pytest.approx(O.ari_pairs(t, p), abs=1e-12) and out["ari"] <= 0
    assert out["h"] == pytest.approx(O.homogeneity_completeness_v(t, p)[0], abs=1e-12)


def test_normalized_view():
    rows = normalized_view([{"ari": 0.5, "s": None}, {"ari": 1.0, "s": None}], keys=("ari", "s"))
    assert [r["ari"] for r in rows] == [0.5, 1.0]
    assert rows[0]["s"] is None


# -- reports and transfer tables --------------------------------------------------------------

def test_report_json_round_trip():
    rep = MetricsReport(oa=0.75, ari=0.1, n_items=4, confusion=[[1, 0], [1, 2]])
    assert MetricsReport.from_json(rep.to_json()) == rep


def test_transfer_table_examples():
    rows = transfer_table({("a", "a"): 0.95, ("a", "b"): 0.7})
    assert rows[0].same_domain == 0.95 and rows[0].avg_tl == 0.7
    rows = transfer_table({("a", "a"): 1.0, ("a", "b"): 0.8, ("a", "c"): 0.9})
    assert rows[0].avg_tl == pytest.approx(0.85, abs=1e-15)


@given(st.dictionaries(st.tuples(st.sampled_from("abc"), st.sampled_from("abc")),
                       st.floats(0, 1), min_size=1))
def test_transfer_table_recount(grid):
    for row in transfer_table(grid):
        off = [v for (a, b), v in grid.items() if a == row.train_domain and a != b]
        assert row.avg_tl == (math.fsum(off) / len(off) if off else None)
        assert row.same_domain == grid.get((row.train_domain, row.train_domain))
