import numpy as np
import pytest

from localrecal.errors import DomainError
from localrecal.knn import PointSet, build_index, query_knn, query_radius


def brute_knn(pts, q, k):
    d2 = np.sum((pts - q) ** 2, axis=1)
    order = np.lexsort((np.arange(len(pts)), d2))[:k]
    return order, np.sqrt(d2[order])


class TestBuild:
    def test_single_point(self):
        idx = build_index(np.array([[1.0, 2.0]]), leaf_size=4)
        nl = query_knn(idx, [1.0, 2.0], 1)
        assert nl.ids.tolist() == [0]
        assert nl.distances[0] == 0.0

    def test_collinear_median_split(self):
        # 4 points on one axis, leaf_size=1: root splits that axis, two levels
        pts = np.array([[0.0, 5.0], [1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
        idx = build_index(pts, leaf_size=1)
        assert idx.depth == 3  # root + 2 split levels
        nl = query_knn(idx, [1.4, 5.0], 2)
        assert nl.ids.tolist() == [1, 2]

    def test_leaf_partition(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(1000, 3))
        idx = build_index(pts, leaf_size=16)
        leaves = np.flatnonzero(idx.left < 0)
        sizes = idx.end[leaves] - idx.start[leaves]
        assert sizes.max() <= 16
        assert sizes.sum() == 1000
        covered = np.concatenate([idx.ids[idx.start[i]:idx.end[i]] for i in leaves])
        assert np.array_equal(np.sort(covered), np.arange(1000))

    def test_depth_bound(self):
        rng = np.random.default_rng(1)
        for n, leaf in ((33, 16), (1000, 16), (4097, 8), (17, 16)):
            idx = build_index(rng.normal(size=(n, 2)), leaf_size=leaf)
            assert idx.depth - 1 <= int(np.ceil(np.log2(n / leaf))) + 1

    def test_invalid_inputs(self):
        with pytest.raises(DomainError):
            build_index(np.empty((0, 2)))
        with pytest.raises(DomainError):
            build_index(np.array([[np.nan, 1.0]]))
        with pytest.raises(DomainError):
            PointSet.from_array(np.ones((3, 2)), ids=[1, 1, 2])

    def test_custom_ids_returned(self):
        pts = np.array([[0.0], [1.0], [5.0]])
        ps = PointSet.from_array(pts, ids=[70, 30, 90])
        idx = build_index(ps, leaf_size=1)
        nl = query_knn(idx, [0.9], 2)
        assert nl.ids.tolist() == [30, 70]


class TestQueryKnn:
    def test_hand_geometry(self):
        idx = build_index(np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]))
        nl = query_knn(idx, [0.9, 0.0], 2)
        assert nl.ids.tolist() == [1, 0]
        assert np.allclose(nl.distances, [0.1, 0.9])

    def test_self_match(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(100, 4))
        idx = build_index(pts)
        nl = query_knn(idx, pts[17], 1)
        assert nl.ids.tolist() == [17]
        assert nl.distances[0] == 0.0

    def test_exact_matches_brute_force(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(2000, 5))
        idx = build_index(pts)
        for _ in range(100):
            q = rng.normal(size=5)
            nl = query_knn(idx, q, 10)
            ids, dists = brute_knn(pts, q, 10)
            assert np.array_equal(nl.ids, ids)
            assert np.allclose(nl.distances, dists)

    def test_exact_randomized_suite(self):
        rng = np.random.default_rng(4)
        for n, d, leaf in ((5000, 25, 16), (734, 2, 1), (1500, 8, 32)):
            pts = rng.normal(size=(n, d))
            idx = build_index(pts, leaf_size=leaf)
            for _ in range(15):
                q = rng.normal(size=d)
                k = int(rng.integers(1, min(n, 64)))
                nl = query_knn(idx, q, k, eps=0.0)
                ids, dists = brute_knn(pts, q, k)
                assert np.array_equal(nl.ids, ids)

    def test_approximation_bound(self):
        rng = np.random.default_rng(5)
        for n, d in ((3000, 3), (1200, 10)):
            pts = rng.normal(size=(n, d))
            idx = build_index(pts)
            for eps in (0.5, 1.0):
                for _ in range(25):
                    q = rng.normal(size=d)
                    k = int(rng.integers(1, 40))
                    nl = query_knn(idx, q, k, eps=eps)
                    _, true_d = brute_knn(pts, q, k)
                    assert len(nl) == k
                    assert np.all(nl.distances <= (1 + eps) * true_d + 1e-12)

    def test_approximation_never_visits_more(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(2000, 6))
        idx = build_index(pts)
        for _ in range(40):
            q = rng.normal(size=6)
            exact = query_knn(idx, q, 25, eps=0.0)
            approx = query_knn(idx, q, 25, eps=1.0)
            assert approx.pruned_subtrees <= exact.pruned_subtrees + exact.visited_nodes
            assert approx.visited_nodes <= exact.visited_nodes

    def test_tie_break_by_lower_id(self):
        pts = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        idx = build_index(pts, leaf_size=1)
        nl = query_knn(idx, [0.0, 0.0], 2)
        assert nl.ids.tolist() == [0, 1]

    def test_determinism_between_builds(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(600, 4))
        a = build_index(pts)
        b = build_index(pts.copy())
        for _ in range(30):
            q = rng.normal(size=4)
            na = query_knn(a, q, 15, eps=0.5)
            nb = query_knn(b, q, 15, eps=0.5)
            assert np.array_equal(na.ids, nb.ids)
            assert np.array_equal(na.distances, nb.distances)

    def test_errors(self):
        idx = build_index(np.zeros((5, 2)))
        with pytest.raises(DomainError):
            query_knn(idx, [0.0, 0.0], 6)
        with pytest.raises(DomainError):
            query_knn(idx, [0.0, 0.0], 0)
        with pytest.raises(DomainError):
            query_knn(idx, [0.0], 1)
        with pytest.raises(DomainError):
            query_knn(idx, [0.0, 0.0], 1, eps=-0.5)


class TestQueryRadius:
    def test_trivial_ball(self):
        idx = build_index(np.array([[0.0, 0.0], [1.0, 0.0]]))
        nl = query_radius(idx, [0.0, 0.0], 0.5)
        assert nl.ids.tolist() == [0]

    def test_exhaustive_ball(self):
        rng = np.random.default_rng(8)
        pts = rng.uniform(size=(200, 3))
        idx = build_index(pts)
        nl = query_radius(idx, [0.5, 0.5, 0.5], 10.0)
        assert len(nl) == 200

    def test_matches_brute_force(self):
        rng = np.random.default_rng(9)
        pts = rng.uniform(size=(500, 2))
        idx = build_index(pts, leaf_size=4)
        for _ in range(20):
            q = rng.uniform(size=2)
            r = float(rng.uniform(0.05, 0.7))
            nl = query_radius(idx, q, r)
            d = np.sqrt(np.sum((pts - q) ** 2, axis=1))
            expected = set(np.flatnonzero(d <= r).tolist())
            assert set(nl.ids.tolist()) == expected
            assert np.all(np.diff(nl.distances) >= 0)

    def test_empty_result(self):
        idx = build_index(np.zeros((3, 2)))
        nl = query_radius(idx, [50.0, 50.0], 1.0)
        assert len(nl) == 0

    def test_invalid_radius(self):
        idx = build_index(np.zeros((3, 2)))
        with pytest.raises(DomainError):
            query_radius(idx, [0.0, 0.0], 0.0)
