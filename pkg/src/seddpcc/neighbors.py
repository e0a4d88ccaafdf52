"""Exact nearest-neighbor search over integer voxel coordinates.

A k-d tree provides candidates; squared distances are then re-ranked in
integer arithmetic with ties broken by the lowest Morton code of the target
point, so results are bit-identical to a brute-force linear scan.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .cloud import morton_encode


class NearestNeighborIndex:
    """Read-only NN index over a fixed coordinate set."""

    def __init__(self, coords: np.ndarray):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        if len(coords) == 0:
            raise ValueError("cannot build an index over an empty coordinate set")
        self.coords = coords
        self._morton = morton_encode(coords)
        self._tree = cKDTree(coords)

    def __len__(self) -> int:
        return len(self.coords)

    def query_many(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest target row per query. Returns (indices, squared distances)."""
        q = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
        n = len(self.coords)
        out_idx = np.empty(len(q), dtype=np.int64)
        out_d2 = np.empty(len(q), dtype=np.int64)
        pending = np.arange(len(q))
        k = min(8, n)
        while len(pending):
            _, cand = self._tree.query(q[pending], k=k)
            cand = np.atleast_2d(cand)
            if cand.shape[0] != len(pending):  # k == 1 collapses the axis
                cand = cand.reshape(len(pending), -1)
            diff = self.coords[cand] - q[pending][:, None, :]
            d2 = np.einsum("qkc,qkc->qk", diff, diff)
            best_d2 = d2.min(axis=1)
            # Smallest Morton code among exact-tie candidates.
            tie_key = np.where(d2 == best_d2[:, None], self._morton[cand], np.iinfo(np.int64).max)
            pick = tie_key.argmin(axis=1)
            out_idx[pending] = cand[np.arange(len(pending)), pick]
            out_d2[pending] = best_d2
            if k >= n:
                break
            # If every returned candidate ties, a lower-Morton tie may exist
            # beyond the returned k; widen the search for those rows only.
            saturated = (d2 == best_d2[:, None]).all(axis=1)
            pending = pending[saturated]
            k = min(k * 4, n)
        return out_idx, out_d2

    def query(self, coord) -> tuple[int, int]:
        """Single-query convenience wrapper: (target row, squared distance)."""
        idx, d2 = self.query_many(np.asarray(coord).reshape(1, 3))
        return int(idx[0]), int(d2[0])


def nearest_neighbors(queries: np.ndarray, target_coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-shot helper building a temporary index."""
    return NearestNeighborIndex(target_coords).query_many(queries)
