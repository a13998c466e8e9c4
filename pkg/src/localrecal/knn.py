"""KD-tree with exact and (1+eps)-approximate k-nearest-neighbor and
fixed-radius queries over Euclidean space.

The tree is built by median splits on the widest-spread dimension and stores
leaf points contiguously so leaf scans are vectorized. Queries prune a
subtree when its bounding box is farther than (current k-th distance)/(1+eps);
with eps=0 results are exact. Ties are broken by lower point id everywhere.
Indexes are immutable after build and safe for concurrent queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class PointSet:
    """n points in d dimensions plus unique integer ids."""

    points: np.ndarray
    ids: np.ndarray

    @classmethod
    def from_array(cls, points, ids=None):
        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DomainError("points must be a non-empty n x d matrix")
        if not np.all(np.isfinite(pts)):
            raise DomainError("points must be finite")
        if ids is None:
            ids = np.arange(pts.shape[0], dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64)
            if ids.shape != (pts.shape[0],):
                raise DomainError("ids must have one entry per point")
            if np.unique(ids).size != ids.size:
                raise DomainError("ids must be unique")
        return cls(points=pts, ids=ids)


@dataclass(frozen=True)
class NeighborList:
    """Neighbor ids and distances, ascending by (distance, id)."""

    ids: np.ndarray
    distances: np.ndarray
    visited_nodes: int = 0
    pruned_subtrees: int = 0

    def __len__(self):
        return self.ids.size

    def entries(self):
        return list(zip(self.ids.tolist(), self.distances.tolist()))


class KnnIndex:
    """Immutable KD-tree over a PointSet. Build with :func:`build_index`."""

    def __init__(self, points, ids, leaf_size):
        n, d = points.shape
        self.n = n
        self.dim = d
        self.leaf_size = leaf_size

        perm = np.arange(n, dtype=np.int64)
        # node arrays are appended during the recursive build
        self._left = []
        self._right = []
        self._start = []
        self._end = []
        self._bbox_min = []
        self._bbox_max = []
        self._depth = 0
        self._build(points, perm, 0, n, 1)

        self.pts = np.ascontiguousarray(points[perm])
        self.ids = ids[perm]
        self.left = np.asarray(self._left, dtype=np.int64)
        self.right = np.asarray(self._right, dtype=np.int64)
        self.start = np.asarray(self._start, dtype=np.int64)
        self.end = np.asarray(self._end, dtype=np.int64)
        self.bbox_min = np.asarray(self._bbox_min)
        self.bbox_max = np.asarray(self._bbox_max)
        self.depth = self._depth
        del self._left, self._right, self._start, self._end
        del self._bbox_min, self._bbox_max

    def _build(self, points, perm, start, end, level):
        node = len(self._left)
        self._depth = max(self._depth, level)
        block = points[perm[start:end]]
        self._bbox_min.append(block.min(axis=0))
        self._bbox_max.append(block.max(axis=0))
        self._left.append(-1)
        self._right.append(-1)
        self._start.append(start)
        self._end.append(end)
        if end - start <= self.leaf_size:
            return node
        spread = self._bbox_max[node] - self._bbox_min[node]
        dim = int(np.argmax(spread))
        # stable sort keeps equal coordinates in input order, so median ties
        # break toward the lower original index
        order = np.argsort(block[:, dim], kind="stable")
        perm[start:end] = perm[start:end][order]
        mid = (end - start) // 2
        self._left[node] = self._build(points, perm, start, start + mid, level + 1)
        self._right[node] = self._build(points, perm, start + mid, end, level + 1)
        return node

    def _box_dist2(self, node, q):
        delta = np.maximum(self.bbox_min[node] - q, q - self.bbox_max[node])
        delta = np.maximum(delta, 0.0)
        return float(delta @ delta)

    def _check_query(self, q):
        q = np.asarray(q, dtype=float).ravel()
        if q.size != self.dim:
            raise DomainError(f"query has dimension {q.size}, index has {self.dim}")
        if not np.all(np.isfinite(q)):
            raise DomainError("query must be finite")
        return q


def build_index(points, leaf_size=16):
    """Build a KD-tree over ``points`` (a PointSet or an n x d array).

    Median splits on the widest-spread dimension give a balanced tree;
    construction is deterministic for a fixed input order.
    """
    if not isinstance(points, PointSet):
        points = PointSet.from_array(points)
    if leaf_size < 1:
        raise DomainError("leaf_size must be >= 1")
    return KnnIndex(points.points, points.ids, int(leaf_size))


def query_knn(index, q, k, eps=0.0):
    """Return the k (1+eps)-approximate nearest neighbors of ``q``.

    With eps=0 the result is exact. Each returned distance is at most
    (1+eps) times the true distance of the same rank.

    Leaf candidates are buffered in arrays and periodically compacted to the
    best k via np.partition; the pruning bound is the k-th distance of the
    last compaction, which is never tighter than the true current k-th, so
    the approximation guarantee is preserved.
    """
    q = index._check_query(q)
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise DomainError("k must be a positive integer")
    if k > index.n:
        raise DomainError(f"k={k} exceeds the number of indexed points ({index.n})")
    if not (np.isfinite(eps) and eps >= 0.0):
        raise DomainError("eps must be >= 0")
    k = int(k)

    inv_eps2 = 1.0 / (1.0 + eps) ** 2
    visited = 0
    pruned = 0
    bound2 = np.inf  # k-th best distance^2 at the last compaction
    buf_d2 = []
    buf_id = []
    count = 0
    cap = max(2 * k, 64)

    pts = index.pts
    ids = index.ids
    left = index.left
    right = index.right
    start = index.start
    end = index.end
    bbox_min = index.bbox_min
    bbox_max = index.bbox_max

    stack = [(0.0, 0)]
    while stack:
        box2, node = stack.pop()
        if box2 > bound2 * inv_eps2:
            pruned += 1
            continue
        visited += 1
        child = left[node]
        if child < 0:
            s, e = start[node], end[node]
            diff = pts[s:e] - q
            d2s = np.einsum("ij,ij->i", diff, diff)
            block_ids = ids[s:e]
            if bound2 < np.inf:
                keep = d2s <= bound2
                d2s = d2s[keep]
                block_ids = block_ids[keep]
            if d2s.size:
                buf_d2.append(d2s)
                buf_id.append(block_ids)
                count += d2s.size
            if count > cap or (bound2 == np.inf and count >= k):
                all_d2 = np.concatenate(buf_d2)
                all_id = np.concatenate(buf_id)
                kth = np.partition(all_d2, k - 1)[k - 1]
                keep = all_d2 <= kth  # ties at the boundary stay until the end
                buf_d2 = [all_d2[keep]]
                buf_id = [all_id[keep]]
                count = int(keep.sum())
                bound2 = float(kth)
        else:
            pair = (child, right[node])
            delta = np.maximum(bbox_min[pair,] - q, q - bbox_max[pair,])
            np.maximum(delta, 0.0, out=delta)
            b2 = np.einsum("ij,ij->i", delta, delta)
            if b2[0] > b2[1]:
                pair = (pair[1], pair[0])
                b2 = b2[::-1]
            limit = bound2 * inv_eps2
            if b2[1] <= limit:
                stack.append((float(b2[1]), pair[1]))
            else:
                pruned += 1
            if b2[0] <= limit:
                stack.append((float(b2[0]), pair[0]))
            else:
                pruned += 1

    all_d2 = np.concatenate(buf_d2)
    all_id = np.concatenate(buf_id)
    order = np.lexsort((all_id, all_d2))[:k]
    return NeighborList(ids=all_id[order], distances=np.sqrt(all_d2[order]),
                        visited_nodes=visited, pruned_subtrees=pruned)


def query_radius(index, q, r):
    """Return every indexed point within Euclidean distance ``r`` of ``q``,
    ascending by (distance, id). May be empty."""
    q = index._check_query(q)
    if not (np.isfinite(r) and r > 0.0):
        raise DomainError("r must be finite and > 0")
    r2 = r * r

    pts = index.pts
    ids = index.ids
    left = index.left
    visited = 0
    pruned = 0
    hit_d2 = []
    hit_ids = []

    stack = [0]
    while stack:
        node = stack.pop()
        if index._box_dist2(node, q) > r2:
            pruned += 1
            continue
        visited += 1
        child = left[node]
        if child < 0:
            s, e = index.start[node], index.end[node]
            diff = pts[s:e] - q
            d2s = np.einsum("ij,ij->i", diff, diff)
            mask = d2s <= r2
            if mask.any():
                hit_d2.append(d2s[mask])
                hit_ids.append(ids[s:e][mask])
        else:
            stack.append(index.right[node])
            stack.append(child)

    if not hit_d2:
        return NeighborList(ids=np.empty(0, dtype=np.int64), distances=np.empty(0),
                            visited_nodes=visited, pruned_subtrees=pruned)
    d2s = np.concatenate(hit_d2)
    out_ids = np.concatenate(hit_ids)
    order = np.lexsort((out_ids, d2s))
    return NeighborList(ids=out_ids[order], distances=np.sqrt(d2s[order]),
                        visited_nodes=visited, pruned_subtrees=pruned)
