"""Lossless octree coordinate codec.

Coordinates are serialized breadth-first as one occupancy byte per occupied
node (bit (x_bit << 2) | (y_bit << 1) | z_bit set when that child exists),
then squeezed through the adaptive order-0 byte model of the range coder.
The byte stream is self-terminating given the tree depth, and its content
is independent of input point order.
"""

from __future__ import annotations

import numpy as np

from .cloud import morton_decode, morton_encode
from .rangecoder import AdaptiveByteDecoder, adaptive_encode_bytes


class OctreeError(ValueError):
    pass


def occupancy_bytes(coords: np.ndarray, depth: int) -> bytes:
    """Breadth-first occupancy bytes for a unique coordinate set."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    if len(coords) == 0:
        raise OctreeError("cannot octree-encode an empty coordinate set")
    if depth < 0 or depth > 16:
        raise OctreeError(f"depth must be in [0, 16], got {depth}")
    if coords.min() < 0 or coords.max() >= (1 << depth):
        raise OctreeError("coordinate outside [0, 2^depth - 1]")
    codes = np.unique(morton_encode(coords))
    if len(codes) != len(coords):
        raise OctreeError("duplicate coordinates")
    out = bytearray()
    for level in range(depth):
        shift = 3 * (depth - level)
        parents = codes >> shift
        child = (codes >> (shift - 3)) & 7
        _, starts = np.unique(parents, return_index=True)
        bits = np.left_shift(np.int64(1), child)
        out.extend(np.bitwise_or.reduceat(bits, starts).astype(np.uint8).tobytes())
    return bytes(out)


def coords_from_occupancy(data: bytes, depth: int) -> np.ndarray:
    """Rebuild the coordinate set from raw occupancy bytes."""
    prefixes = np.zeros(1, dtype=np.int64)
    pos = 0
    for _ in range(depth):
        need = len(prefixes)
        if pos + need > len(data):
            raise OctreeError("occupancy stream truncated")
        level = np.frombuffer(data[pos:pos + need], dtype=np.uint8).astype(np.int64)
        pos += need
        if np.any(level == 0):
            raise OctreeError("empty occupancy byte in stream")
        children = [
            (prefixes[(level & (1 << b)) > 0] << 3) | b for b in range(8)
        ]
        prefixes = np.sort(np.concatenate(children))
    if pos != len(data):
        raise OctreeError(f"{len(data) - pos} trailing occupancy bytes")
    return morton_decode(prefixes)


def octree_encode(coords: np.ndarray, depth: int) -> bytes:
    """Losslessly encode a unique coordinate set at the given bit depth."""
    if depth == 0:
        # Depth 0 holds exactly the origin voxel; nothing to transmit.
        c = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        if len(c) != 1 or c.any():
            raise OctreeError("depth-0 tree can only hold the origin voxel")
        return b""
    return adaptive_encode_bytes(occupancy_bytes(coords, depth))


def octree_decode(data: bytes, depth: int) -> np.ndarray:
    """Inverse of :func:`octree_encode`; returns coords in canonical order."""
    if depth == 0:
        return np.zeros((1, 3), dtype=np.int64)
    dec = AdaptiveByteDecoder(data)
    prefixes = np.zeros(1, dtype=np.int64)
    for _ in range(depth):
        level = np.array([dec.next_byte() for _ in range(len(prefixes))], dtype=np.int64)
        if np.any(level == 0):
            raise OctreeError("empty occupancy byte in stream")
        children = [
            (prefixes[(level & (1 << b)) > 0] << 3) | b for b in range(8)
        ]
        prefixes = np.sort(np.concatenate(children))
    return morton_decode(prefixes)
