"""Voxel point clouds: Morton ordering, color spaces, voxelization, partitioning.

Coordinates are non-negative integer voxel positions on a cubic grid of side
2**depth.  Colors are RGB triples normalized to [0, 1].  All functions are
pure and deterministic; canonical point order is ascending Morton (z-order)
code so that logically equal clouds compare bit-identically.
"""

from __future__ import annotations

import dataclasses

import numpy as np

# BT.709 analog luma weights, full range, no chroma offset.
_KR = 0.2126
_KG = 0.7152
_KB = 0.0722
_U_SCALE = 2.0 * (1.0 - _KB)  # 1.8556
_V_SCALE = 2.0 * (1.0 - _KR)  # 1.5748

_M0 = np.int64(0x1F00000000FFFF)
_M1 = np.int64(0x1F0000FF0000FF)
_M2 = np.int64(0x100F00F00F00F00F)
_M3 = np.int64(0x10C30C30C30C30C3)
_M4 = np.int64(0x1249249249249249)


def _spread_bits(v: np.ndarray) -> np.ndarray:
    """Spread the low 21 bits of each value so consecutive bits are 3 apart."""
    v = v & np.int64(0x1FFFFF)
    v = (v | (v << 32)) & _M0
    v = (v | (v << 16)) & _M1
    v = (v | (v << 8)) & _M2
    v = (v | (v << 4)) & _M3
    v = (v | (v << 2)) & _M4
    return v


def _compact_bits(v: np.ndarray) -> np.ndarray:
    v = v & _M4
    v = (v | (v >> 2)) & _M3
    v = (v | (v >> 4)) & _M2
    v = (v | (v >> 8)) & _M1
    v = (v | (v >> 16)) & _M0
    v = (v | (v >> 32)) & np.int64(0x1FFFFF)
    return v


def morton_encode(coords: np.ndarray) -> np.ndarray:
    """Interleave x, y, z bits (x highest) into one code per row.

    The bit layout matches octree child indexing: at every level the child
    slot is (x_bit << 2) | (y_bit << 1) | z_bit, so ascending Morton order
    equals breadth-first octree traversal order.
    """
    c = np.asarray(coords, dtype=np.int64)
    if c.ndim == 1:
        c = c[None, :]
    return (_spread_bits(c[:, 0]) << 2) | (_spread_bits(c[:, 1]) << 1) | _spread_bits(c[:, 2])


def morton_decode(codes: np.ndarray) -> np.ndarray:
    """Inverse of :func:`morton_encode`; returns an (N, 3) int64 array."""
    m = np.asarray(codes, dtype=np.int64)
    return np.stack(
        [_compact_bits(m >> 2), _compact_bits(m >> 1), _compact_bits(m)], axis=1
    )


def morton_argsort(coords: np.ndarray) -> np.ndarray:
    """Permutation that puts rows of ``coords`` in canonical Morton order."""
    return np.argsort(morton_encode(coords), kind="stable")


@dataclasses.dataclass(frozen=True, eq=False)
class PointCloud:
    """Colored voxel cloud at bit depth ``depth``.

    Invariants: coordinates are unique, each component lies in
    [0, 2**depth - 1], and there is one RGB row per coordinate.
    """

    coords: np.ndarray
    colors: np.ndarray
    depth: int

    def __post_init__(self):
        coords = np.ascontiguousarray(np.asarray(self.coords, dtype=np.int64).reshape(-1, 3))
        colors = np.ascontiguousarray(np.asarray(self.colors, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "colors", colors)
        if not 1 <= self.depth <= 16:
            raise ValueError(f"depth must be in [1, 16], got {self.depth}")
        if len(coords) != len(colors):
            raise ValueError(f"{len(coords)} coords vs {len(colors)} colors")
        if len(coords):
            if coords.min() < 0 or coords.max() > (1 << self.depth) - 1:
                raise ValueError("coordinate outside [0, 2^depth - 1]")
            codes = morton_encode(coords)
            if len(np.unique(codes)) != len(codes):
                raise ValueError("duplicate voxel coordinates")

    def __len__(self) -> int:
        return len(self.coords)

    def canonicalized(self) -> "PointCloud":
        """Same cloud with points in ascending Morton order."""
        order = morton_argsort(self.coords)
        return PointCloud(self.coords[order], self.colors[order], self.depth)

    def same_points(self, other: "PointCloud", color_tol: float = 0.0) -> bool:
        """True if both clouds hold the same voxels with colors within tol."""
        if len(self) != len(other) or self.depth != other.depth:
            return False
        a, b = self.canonicalized(), other.canonicalized()
        return bool(
            np.array_equal(a.coords, b.coords)
            and np.all(np.abs(a.colors - b.colors) <= color_tol + 1e-15)
        )


def merge_duplicates(coords: np.ndarray, colors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Collapse repeated coordinates, averaging their colors.

    Output rows are in canonical Morton order.
    """
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    if len(coords) == 0:
        return coords, colors
    codes = morton_encode(coords)
    order = np.argsort(codes, kind="stable")
    codes, colors = codes[order], colors[order]
    uniq, start = np.unique(codes, return_index=True)
    sums = np.add.reduceat(colors, start, axis=0)
    counts = np.diff(np.append(start, len(codes)))[:, None]
    return morton_decode(uniq), sums / counts


def voxelize(points: np.ndarray, colors: np.ndarray, depth: int) -> PointCloud:
    """Quantize real-valued points onto the 2**depth grid.

    Points already inside [0, 2^depth - 1] are only rounded (so integer
    clouds pass through unchanged); otherwise the cloud is shifted and
    uniformly scaled to fit.  Colliding points merge with mean color.
    """
    if not 1 <= depth <= 16:
        raise ValueError(f"depth must be in [1, 16], got {depth}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cols = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return PointCloud(np.zeros((0, 3), np.int64), np.zeros((0, 3)), depth)
    hi = float((1 << depth) - 1)
    lo_in, hi_in = pts.min(), pts.max()
    if lo_in < 0.0 or hi_in > hi:
        span = hi_in - lo_in
        scale = hi / span if span > 0 else 1.0
        pts = (pts - lo_in) * scale
    grid = np.clip(np.rint(pts), 0, hi).astype(np.int64)
    merged_coords, merged_colors = merge_duplicates(grid, cols)
    return PointCloud(merged_coords, merged_colors, depth)


def partition_cubes(pc: PointCloud, cube_bits: int) -> list[tuple[np.ndarray, PointCloud]]:
    """Split a cloud into non-overlapping cubes of side 2**cube_bits.

    Returns (origin, local cloud) pairs ordered by origin Morton code; empty
    cubes are omitted and local coordinates are relative to the origin.
    """
    if cube_bits > pc.depth:
        raise ValueError(f"cube_bits {cube_bits} exceeds cloud depth {pc.depth}")
    if len(pc) == 0:
        return []
    origins = (pc.coords >> cube_bits) << cube_bits
    keys = morton_encode(origins)
    order = np.argsort(keys, kind="stable")
    keys_sorted = keys[order]
    uniq, start = np.unique(keys_sorted, return_index=True)
    bounds = np.append(start, len(keys_sorted))
    out = []
    for j in range(len(uniq)):
        rows = order[bounds[j]:bounds[j + 1]]
        origin = morton_decode(uniq[j:j + 1])[0]
        local = pc.coords[rows] - origin
        out.append((origin, PointCloud(local, pc.colors[rows], cube_bits)))
    return out


def assemble_cubes(parts: list[tuple[np.ndarray, PointCloud]], depth: int) -> PointCloud:
    """Inverse of :func:`partition_cubes`."""
    if not parts:
        return PointCloud(np.zeros((0, 3), np.int64), np.zeros((0, 3)), depth)
    coords = np.concatenate([origin + part.coords for origin, part in parts])
    colors = np.concatenate([part.colors for _, part in parts])
    order = morton_argsort(coords)
    return PointCloud(coords[order], colors[order], depth)


def downsample_coords(coords: np.ndarray, factor: int) -> np.ndarray:
    """Unique floor(c / factor) set in canonical order; factor in {2, 4, 8}."""
    if factor not in (2, 4, 8):
        raise ValueError(f"factor must be 2, 4 or 8, got {factor}")
    c = np.asarray(coords, dtype=np.int64).reshape(-1, 3) // factor
    if len(c) == 0:
        return c
    return morton_decode(np.unique(morton_encode(c)))


def pool_colors(coords: np.ndarray, colors: np.ndarray, factor: int) -> tuple[np.ndarray, np.ndarray]:
    """Voxel-mean colors on the grid coarsened by ``factor``.

    Returns (coarse coords in canonical order, mean color per coarse voxel).
    """
    c = np.asarray(coords, dtype=np.int64).reshape(-1, 3) // factor
    return merge_duplicates(c, colors)


def rgb_to_yuv(rgb: np.ndarray) -> np.ndarray:
    """Full-range BT.709-analog RGB -> YUV. Y in [0,1], U/V in [-0.5, 0.5]."""
    a = np.asarray(rgb, dtype=np.float64)
    r, g, b = a[..., 0], a[..., 1], a[..., 2]
    y = _KR * r + _KG * g + _KB * b
    u = (b - y) / _U_SCALE
    v = (r - y) / _V_SCALE
    return np.stack([y, u, v], axis=-1)


def yuv_to_rgb(yuv: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_yuv`, clamped to [0, 1]."""
    a = np.asarray(yuv, dtype=np.float64)
    y, u, v = a[..., 0], a[..., 1], a[..., 2]
    r = y + _V_SCALE * v
    b = y + _U_SCALE * u
    g = (y - _KR * r - _KB * b) / _KG
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def yuv_matrix() -> np.ndarray:
    """3x3 matrix M with yuv = rgb @ M.T (row-vector convention)."""
    m = np.array(
        [
            [_KR, _KG, _KB],
            [-_KR / _U_SCALE, -_KG / _U_SCALE, (1.0 - _KB) / _U_SCALE],
            [(1.0 - _KR) / _V_SCALE, -_KG / _V_SCALE, -_KB / _V_SCALE],
        ]
    )
    return m
