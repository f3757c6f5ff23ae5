import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardsim.cluster import (
    ClusterConfig,
    WcssCurve,
    cluster_cards,
    kmeans,
    knee_point,
    mds_embed,
    wcss_curve,
)
from cardsim.errors import DegenerateStructureError
from cardsim.metrics import nmi
from cardsim.model import Clustering
from cardsim.simmatrix import DistanceMatrix, build_similarity, complement

from oracles import discrete_curvature_knee, wcss_of
from synth import planted_groups, planted_results


def _euclid(points):
    P = np.asarray(points, float)
    D = np.sqrt(((P[:, None] - P[None]) ** 2).sum(-1))
    return DistanceMatrix(tuple(range(len(P))), D)


def test_mds_recovers_euclidean_distances():
    P = np.random.default_rng(0).normal(size=(8, 3))
    emb = mds_embed(_euclid(P))
    D2 = np.sqrt(((emb.coords[:, None] - emb.coords[None]) ** 2).sum(-1))
    assert np.allclose(D2, _euclid(P).values, atol=1e-8)


def test_mds_sign_convention_and_dims():
    P = np.random.default_rng(1).normal(size=(6, 2))
    emb = mds_embed(_euclid(P), d=2)
    assert emb.d == 2
    for a in range(2):
        col = emb.coords[:, a]
        assert col[np.argmax(np.abs(col))] > 0
    with pytest.raises(ValueError):
        mds_embed(_euclid(P), d=6)
    bad = DistanceMatrix((0, 1, 2), np.array([[0, 1, 2], [1, 0, 1], [3, 1, 0.0]]))
    with pytest.raises(ValueError):
        mds_embed(bad)


def test_kmeans_deterministic_and_sound():
    P = np.vstack([np.random.default_rng(2).normal(c, 0.1, size=(5, 2))
                   for c in ((0, 0), (5, 0), (0, 5))])
    emb = mds_embed(_euclid(P))
    a = kmeans(emb, 3, seed=4)
    b = kmeans(emb, 3, seed=4)
    assert a.clustering == b.clustering
    assert a.k == 3
    truth = Clustering.from_labels(range(15), [0] * 5 + [1] * 5 + [2] * 5)
    assert a.clustering.same_partition(truth)
    labs = a.clustering.labels_for(range(15))
    assert a.wcss_at_k == pytest.approx(wcss_of(emb.coords, labs), rel=1e-9)


def test_kmeans_with_duplicate_points_refines_groups():
    P = [[0, 0]] * 3 + [[1, 1]] * 3
    lab = kmeans(mds_embed(_euclid(P)), 4, seed=0)
    assert lab.k == lab.clustering.n_categories() <= 4
    assert lab.wcss_at_k == pytest.approx(0.0, abs=1e-12)
    for ids in lab.clustering.clusters.values():
        assert set(ids) <= {0, 1, 2} or set(ids) <= {3, 4, 5}


def test_wcss_curve_non_increasing():
    res = planted_results(n_cards=15, k=4, participants=20, noise=0.2, seed=3)
    emb = mds_embed(complement(build_similarity(res)))
    curve = wcss_curve(emb, 2, 10, seed=1)
    assert curve.ks == tuple(range(2, 11))
    assert all(b <= a + 1e-9 for a, b in zip(curve.wcss, curve.wcss[1:]))
    assert wcss_curve(emb, 2, 10, seed=1) == curve


def test_knee_example_curve():
    curve = WcssCurve(tuple(range(1, 8)), (100, 40, 12, 10, 9, 8.5, 8))
    knee = knee_point(curve)
    assert knee.k == 3 and not knee.no_knee
    assert knee.k == discrete_curvature_knee(curve.ks, curve.wcss)


@given(st.floats(0.01, 1000), st.floats(0, 1000))
def test_knee_affine_invariant(scale, shift):
    w = np.array([100, 40, 12, 10, 9, 8.5, 8.0]) * scale + shift
    assert knee_point(WcssCurve(tuple(range(1, 8)), tuple(w))).k == 3


def test_knee_linear_curve_flags_no_knee():
    knee = knee_point(WcssCurve(tuple(range(1, 8)), tuple(float(70 - 10 * k) for k in range(7))))
    assert knee.no_knee and knee.k == 2


def test_knee_short_curves():
    assert knee_point(WcssCurve((2, 3, 4), (10.0, 2.0, 1.0))).method == "second-difference"
    k4 = knee_point(WcssCurve((2, 3, 4, 5), (10.0, 2.0, 1.5, 1.0)))
    assert k4.method == "interpolating-spline" and k4.k in (3, 4)
    flat = knee_point(WcssCurve((2, 3, 4, 5, 6), (1.0,) * 5))
    assert flat.no_knee


@pytest.mark.parametrize("k, n, noise", [(3, 15, 0.0), (4, 20, 0.1), (6, 30, 0.0), (8, 40, 0.1)])
def test_planted_partition_recovered(k, n, noise):
    res = planted_results(n_cards=n, k=k, participants=40, noise=noise, seed=k)
    lab = cluster_cards(complement(build_similarity(res)), seed=0)
    truth = Clustering.from_labels(res.config.card_ids, planted_groups(n, k))
    assert lab.k == k
    assert nmi(lab.clustering, truth) == 1.0


def test_cluster_cards_deterministic():
    res = planted_results(n_cards=12, k=3, participants=10, noise=0.3, seed=9)
    d = complement(build_similarity(res))
    assert cluster_cards(d, 5).clustering == cluster_cards(d, 5).clustering


def test_cluster_cards_k_in_range(real10):
    lab = cluster_cards(complement(build_similarity(real10)), 0, ClusterConfig(k_max=6))
    assert 2 <= lab.k <= 6


def test_cluster_cards_degenerate():
    with pytest.raises(DegenerateStructureError):
        cluster_cards(DistanceMatrix(tuple(range(5)), np.zeros((5, 5))), 0)
    with pytest.raises(ValueError):
        cluster_cards(_euclid([[0], [1], [2]]), 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_knee_within_interior(seed):
    res = planted_results(n_cards=10, k=3, participants=8, noise=0.4, seed=seed % 1000)
    try:
        lab = cluster_cards(complement(build_similarity(res)), seed)
    except DegenerateStructureError:
        return
    assert lab.knee.k in lab.curve.ks[1:-1]


def test_mds_zero_matrix_and_two_points():
    emb = mds_embed(DistanceMatrix((0, 1, 2), np.zeros((3, 3))))
    assert not emb.coords.any()
    two = mds_embed(DistanceMatrix((0, 1), np.array([[0, 100.0], [100.0, 0]])), d=1)
    assert abs(two.coords[0, 0] - two.coords[1, 0]) == pytest.approx(100.0)


def test_kmeans_extremes():
    P = np.random.default_rng(7).normal(size=(7, 2))
    emb = mds_embed(_euclid(P))
    assert kmeans(emb, 7, seed=0).wcss_at_k == pytest.approx(0.0, abs=1e-9)
    total = ((emb.coords - emb.coords.mean(axis=0)) ** 2).sum()
    assert kmeans(emb, 1, seed=0).wcss_at_k == pytest.approx(total)
    curve = wcss_curve(emb, 1, 7, seed=0)
    assert curve.wcss[-1] == pytest.approx(0.0, abs=1e-9)


def test_more_restarts_never_worse():
    P = np.random.default_rng(8).normal(size=(25, 3))
    emb = mds_embed(_euclid(P))
    w = [kmeans(emb, 5, seed=3, restarts=r).wcss_at_k for r in (1, 2, 5, 10, 20)]
    assert all(b <= a for a, b in zip(w, w[1:]))


def test_knee_piecewise_linear_breakpoint():
    ks = tuple(range(1, 11))
    w = tuple(100 - 25 * (k - 1) if k <= 4 else 25 - 2 * (k - 4) for k in ks)
    assert knee_point(WcssCurve(ks, w)).k == 4


def test_four_card_reverse_matrix():
    from cardsim.simmatrix import clustering_to_matrix

    cl = Clustering({"x": (0, 1), "y": (2, 3)})
    lab = cluster_cards(complement(clustering_to_matrix(cl, (0, 1, 2, 3))), 0)
    assert lab.clustering.same_partition(cl)


def test_unanimous_three_categories():
    res = planted_results(n_cards=12, k=3, participants=20, noise=0.0)
    assert cluster_cards(complement(build_similarity(res)), 0).k == 3
