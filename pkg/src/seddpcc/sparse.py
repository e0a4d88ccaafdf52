"""Sparse voxel tensors and the convolution ops the codec is built from.

A :class:`SparseTensor` stores occupied coordinates (canonically Morton
sorted, all divisible by the tensor stride) plus one feature row per
coordinate.  Convolutions gather neighbors through binary search over the
sorted Morton codes; the per-offset accumulation order is fixed so results
are bit-reproducible.  Feature math runs through :mod:`seddpcc.autodiff`.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .cloud import morton_decode, morton_encode

_OFFSET_RANGE = {1: (0,), 2: (0, 1), 3: (-1, 0, 1)}


def kernel_offsets(kernel_size: int) -> np.ndarray:
    """Kernel support offsets in fixed lexicographic (dx, dy, dz) order."""
    if kernel_size not in _OFFSET_RANGE:
        raise ValueError(f"kernel_size must be 1, 2 or 3, got {kernel_size}")
    r = _OFFSET_RANGE[kernel_size]
    return np.array(list(itertools.product(r, r, r)), dtype=np.int64)


class SparseTensor:
    """Coordinates + features at a power-of-two stride."""

    __slots__ = ("coords", "feats", "stride", "morton", "_digest")

    def __init__(self, coords, feats, stride: int = 1, *, _canonical: bool = False,
                 _morton: np.ndarray | None = None):
        coords = np.ascontiguousarray(np.asarray(coords, dtype=np.int64).reshape(-1, 3))
        feats = ad.as_var(feats)
        if feats.data.ndim != 2 or feats.data.shape[0] != len(coords):
            raise ValueError(
                f"feats shape {feats.data.shape} does not match {len(coords)} coords"
            )
        if stride < 1 or stride & (stride - 1):
            raise ValueError(f"stride must be a positive power of two, got {stride}")
        if len(coords) and np.any(coords % stride):
            raise ValueError("coordinates not divisible by stride")
        if _canonical:
            morton = _morton if _morton is not None else morton_encode(coords)
        else:
            morton = morton_encode(coords)
            order = np.argsort(morton, kind="stable")
            if not np.array_equal(order, np.arange(len(order))):
                coords = np.ascontiguousarray(coords[order])
                feats = ad.gather_rows(feats, order)
                morton = morton[order]
            if len(morton) and np.any(morton[1:] == morton[:-1]):
                raise ValueError("duplicate coordinates in sparse tensor")
        self.coords = coords
        self.feats = feats
        self.stride = stride
        self.morton = morton
        self._digest = None

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def channels(self) -> int:
        return self.feats.data.shape[1]

    @property
    def feats_data(self) -> np.ndarray:
        return self.feats.data

    def with_feats(self, feats) -> "SparseTensor":
        out = SparseTensor(self.coords, feats, self.stride, _canonical=True, _morton=self.morton)
        out._digest = self._digest
        return out

    def digest(self) -> bytes:
        if self._digest is None:
            self._digest = hashlib.blake2b(self.coords.tobytes(), digest_size=16).digest()
        return self._digest

    def __repr__(self):
        return f"SparseTensor(n={len(self)}, c={self.channels}, stride={self.stride})"


@dataclasses.dataclass
class ConvParams:
    """Convolution weights: kernel (K^3, C_in, C_out) in offset order, bias (C_out,)."""

    kernel: ad.Var
    bias: ad.Var
    kernel_size: int
    stride: int = 1
    transposed: bool = False

    def __post_init__(self):
        k3 = self.kernel_size ** 3
        kshape = self.kernel.data.shape
        if kshape[0] != k3 or len(kshape) != 3:
            raise ValueError(f"kernel shape {kshape} inconsistent with K={self.kernel_size}")
        if self.bias.data.shape != (kshape[2],):
            raise ValueError(f"bias shape {self.bias.data.shape} != ({kshape[2]},)")
        if not (np.all(np.isfinite(self.kernel.data)) and np.all(np.isfinite(self.bias.data))):
            raise ValueError("non-finite convolution parameters")

    @property
    def in_channels(self) -> int:
        return self.kernel.data.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.data.shape[2]


def xavier_kernel(rng: np.random.Generator, kernel_size: int, cin: int, cout: int) -> np.ndarray:
    k3 = kernel_size ** 3
    limit = np.sqrt(6.0 / (cin * k3 + cout * k3))
    return rng.uniform(-limit, limit, size=(k3, cin, cout))


# --- neighbor plans -----------------------------------------------------------

@dataclasses.dataclass
class _Plan:
    out_coords: np.ndarray
    out_morton: np.ndarray
    pairs: list  # (offset index, input rows, output rows)
    same_coords: bool  # stride-1 conv: output coordinate set equals input's


_PLAN_CACHE: OrderedDict = OrderedDict()
_PLAN_CAP = 32


def _cache_get(key):
    plan = _PLAN_CACHE.get(key)
    if plan is not None:
        _PLAN_CACHE.move_to_end(key)
    return plan


def _cache_put(key, plan):
    _PLAN_CACHE[key] = plan
    if len(_PLAN_CACHE) > _PLAN_CAP:
        _PLAN_CACHE.popitem(last=False)


def clear_plan_cache() -> None:
    _PLAN_CACHE.clear()


def _lookup(sorted_morton: np.ndarray, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Positions of ``keys`` in a sorted code array; (found mask, positions)."""
    pos = np.searchsorted(sorted_morton, keys)
    pos_c = np.minimum(pos, len(sorted_morton) - 1) if len(sorted_morton) else pos
    found = (pos < len(sorted_morton)) & (sorted_morton[pos_c] == keys) if len(sorted_morton) else np.zeros(len(keys), bool)
    return found, pos_c


def _conv_plan(x: SparseTensor, kernel_size: int, conv_stride: int) -> _Plan:
    key = (x.digest(), x.stride, kernel_size, conv_stride, False)
    plan = _cache_get(key)
    if plan is not None:
        return plan

    offsets = kernel_offsets(kernel_size)
    if conv_stride == 1:
        out_coords, out_morton, same = x.coords, x.morton, True
    else:
        snap = 2 * x.stride
        out_morton = np.unique(morton_encode((x.coords // snap) * snap))
        out_coords = morton_decode(out_morton)
        same = False

    pairs = []
    for j, off in enumerate(offsets):
        if kernel_size == 1 and conv_stride == 1:
            rows = np.arange(len(out_coords))
            pairs.append((j, rows, rows))
            continue
        nb = out_coords + off * x.stride
        ok = (nb >= 0).all(axis=1)
        keys = morton_encode(nb[ok])
        found, pos = _lookup(x.morton, keys)
        if found.any():
            out_rows = np.nonzero(ok)[0][found]
            pairs.append((j, pos[found], out_rows))
    plan = _Plan(out_coords, out_morton, pairs, same)
    _cache_put(key, plan)
    return plan


def _upconv_plan(x: SparseTensor) -> _Plan:
    key = (x.digest(), x.stride, 2, 2, True)
    plan = _cache_get(key)
    if plan is not None:
        return plan

    half = x.stride // 2
    offsets = kernel_offsets(2)
    children = [morton_encode(x.coords + off * half) for off in offsets]
    out_morton = np.unique(np.concatenate(children))
    out_coords = morton_decode(out_morton)
    pairs = []
    rows_in = np.arange(len(x))
    for j, child_m in enumerate(children):
        out_rows = np.searchsorted(out_morton, child_m)
        pairs.append((j, rows_in, out_rows))
    plan = _Plan(out_coords, out_morton, pairs, False)
    _cache_put(key, plan)
    return plan


# --- convolution ops ----------------------------------------------------------

def _apply_plan(x: SparseTensor, p: ConvParams, plan: _Plan, out_stride: int) -> SparseTensor:
    xf, kernel, bias = x.feats, p.kernel, p.bias
    n_out = len(plan.out_coords)
    cout = p.out_channels
    out = np.broadcast_to(bias.data, (n_out, cout)).copy()
    for j, in_rows, out_rows in plan.pairs:
        out[out_rows] += xf.data[in_rows] @ kernel.data[j]

    def vjp(g):
        gx = np.zeros_like(xf.data)
        gk = np.zeros_like(kernel.data)
        for j, in_rows, out_rows in plan.pairs:
            go = g[out_rows]
            gx[in_rows] += go @ kernel.data[j].T
            gk[j] = xf.data[in_rows].T @ go
        return gx, gk, g.sum(axis=0)

    feats = ad.custom(out, (xf, kernel, bias), vjp)
    coords = x.coords if plan.same_coords else plan.out_coords
    res = SparseTensor(coords, feats, out_stride, _canonical=True, _morton=plan.out_morton)
    if plan.same_coords:
        res._digest = x._digest
    return res


def sparse_conv(x: SparseTensor, p: ConvParams) -> SparseTensor:
    """Generalized sparse convolution, stride 1 (coords preserved) or 2
    (coords snapped to the doubled grid)."""
    if p.transposed:
        raise ValueError("use generative_upconv for transposed convolutions")
    if p.stride not in (1, 2):
        raise ValueError(f"conv stride must be 1 or 2, got {p.stride}")
    if x.channels != p.in_channels:
        raise ValueError(f"input has {x.channels} channels, kernel expects {p.in_channels}")
    plan = _conv_plan(x, p.kernel_size, p.stride)
    return _apply_plan(x, p, plan, x.stride * p.stride)


def generative_upconv(x: SparseTensor, p: ConvParams) -> SparseTensor:
    """Transposed K=2/s=2 convolution emitting all 8 children per parent."""
    if not p.transposed or p.kernel_size != 2 or p.stride != 2:
        raise ValueError("generative_upconv requires transposed=True, K=2, stride=2")
    if x.stride < 2:
        raise ValueError("cannot upsample below unit stride")
    if x.channels != p.in_channels:
        raise ValueError(f"input has {x.channels} channels, kernel expects {p.in_channels}")
    plan = _upconv_plan(x)
    return _apply_plan(x, p, plan, x.stride // 2)


# --- coordinate-preserving glue ----------------------------------------------

def _like(x: SparseTensor, feats) -> SparseTensor:
    out = SparseTensor(x.coords, feats, x.stride, _canonical=True, _morton=x.morton)
    out._digest = x._digest
    return out


def relu(x: SparseTensor) -> SparseTensor:
    return _like(x, ad.relu(x.feats))


def add(x: SparseTensor, y: SparseTensor) -> SparseTensor:
    if x.coords is not y.coords and not np.array_equal(x.morton, y.morton):
        raise ValueError("coordinate sets differ; aligned addition impossible")
    return _like(x, ad.add(x.feats, y.feats))


def concat(parts: list[SparseTensor]) -> SparseTensor:
    first = parts[0]
    for p in parts[1:]:
        if p.coords is not first.coords and not np.array_equal(p.morton, first.morton):
            raise ValueError("coordinate sets differ; cannot concat channels")
    return _like(first, ad.concat_cols([p.feats for p in parts]))


def scale(x: SparseTensor, s: float) -> SparseTensor:
    return _like(x, ad.scale(x.feats, s))


def prune_topk(x: SparseTensor, logits, k: int) -> SparseTensor:
    """Keep the min(k, n) highest-logit coordinates (ties: lower Morton code).

    Features are gathered (gradients pass through for kept rows only) and
    canonical order is preserved.
    """
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    lg = ad.value(logits).reshape(-1)
    if len(lg) != len(x):
        raise ValueError(f"{len(lg)} logits for {len(x)} coordinates")
    k = min(k, len(x))
    order = np.lexsort((x.morton, -lg))
    keep = np.sort(order[:k])
    return SparseTensor(
        x.coords[keep],
        ad.gather_rows(x.feats, keep),
        x.stride,
        _canonical=True,
        _morton=x.morton[keep],
    )


def irn_block(
    x: SparseTensor,
    branch_a: ConvParams,
    branch_b: ConvParams,
    branch_c1: ConvParams,
    branch_c2: ConvParams,
    project: ConvParams,
) -> SparseTensor:
    """Inception-residual unit over C channels (C divisible by 4).

    Three ReLU branches (K3 -> C/4, K1 -> C/4, K3+K3 -> C/2) are channel-
    concatenated, linearly projected back to C with a 1x1x1 conv, and added
    to the input.  No activation after the residual add; coordinates are
    unchanged.
    """
    c = x.channels
    if c % 4:
        raise ValueError(f"IRN needs channels divisible by 4, got {c}")
    a = relu(sparse_conv(x, branch_a))
    b = relu(sparse_conv(x, branch_b))
    cc = relu(sparse_conv(relu(sparse_conv(x, branch_c1)), branch_c2))
    y = sparse_conv(concat([a, b, cc]), project)
    return add(x, y)
