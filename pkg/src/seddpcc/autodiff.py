"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records operations while active; :func:`backward` replays
the records in reverse creation order (a valid reverse topological order,
since parents are always created before children) and accumulates vector-
Jacobian products.  Everything is float64.  With no active tape, ops just
compute values, so inference paths pay no recording cost.
"""

from __future__ import annotations

import math
from typing import Callable, Mapping, Sequence

import numpy as np

_STACK: list = []  # active Tape, or None sentinels pushed by pause()

LOG2E = 1.0 / math.log(2.0)


class Tape:
    """Operation recorder; use as a context manager around a forward pass."""

    def __init__(self):
        self.nodes: list[Var] = []

    def __enter__(self) -> "Tape":
        _STACK.append(self)
        return self

    def __exit__(self, *exc):
        _STACK.pop()
        return False


class pause:
    """Context manager suspending recording (e.g. frozen teacher passes)."""

    def __enter__(self):
        _STACK.append(None)
        return self

    def __exit__(self, *exc):
        _STACK.pop()
        return False


def _active() -> Tape | None:
    return _STACK[-1] if _STACK else None


class Var:
    """Array node.  Leaves have no vjp; op results are recorded on the tape."""

    __slots__ = ("data", "parents", "vjp")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents: tuple = ()
        self.vjp = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Var(shape={self.data.shape})"


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def value(x) -> np.ndarray:
    return x.data if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def custom(data: np.ndarray, parents: Sequence[Var], vjp: Callable) -> Var:
    """Create an op node.  ``vjp(grad)`` must return one gradient (or None)
    per parent, shaped like that parent's data."""
    out = Var(data)
    tape = _active()
    if tape is not None:
        out.parents = tuple(parents)
        out.vjp = vjp
        tape.nodes.append(out)
    return out


def backward(tape: Tape, loss: Var, params: Mapping[str, Var] | None = None):
    """Gradients of a scalar ``loss`` recorded on ``tape``.

    With ``params`` given, returns {name: gradient array} covering every
    entry (zeros for parameters the loss never touched).  Otherwise returns
    the raw {id(var): gradient} map for all leaf variables reached.
    """
    if loss.data.shape != ():
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    if params is None:
        return grads
    return {
        name: grads.get(id(v), np.zeros_like(v.data)) for name, v in params.items()
    }


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- elementwise / linear ops ------------------------------------------------

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return custom(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return custom(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def neg(a) -> Var:
    a = as_var(a)
    return custom(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return custom(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def scale(a, s: float) -> Var:
    a = as_var(a)
    s = float(s)
    return custom(a.data * s, (a,), lambda g: (g * s,))


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return custom(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def relu(a) -> Var:
    a = as_var(a)
    mask = a.data > 0
    return custom(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.data)
    return custom(out, (a,), lambda g: (g * out,))


def log(a) -> Var:
    a = as_var(a)
    return custom(np.log(a.data), (a,), lambda g: (g / a.data,))


def softplus(a) -> Var:
    """log(1 + e^x), overflow-safe."""
    a = as_var(a)
    out = np.logaddexp(0.0, a.data)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    return custom(out, (a,), lambda g: (g * sig,))


def maximum_const(a, c: float) -> Var:
    """max(a, c) elementwise against a constant; gradient flows where a > c."""
    a = as_var(a)
    mask = a.data > c
    return custom(np.where(mask, a.data, c), (a,), lambda g: (g * mask,))


def clamp01(a) -> Var:
    a = as_var(a)
    inside = (a.data > 0.0) & (a.data < 1.0)
    return custom(np.clip(a.data, 0.0, 1.0), (a,), lambda g: (g * inside,))


def max_pair(a, b) -> Var:
    """Scalar max; subgradient routes to the larger operand (ties: first)."""
    a, b = as_var(a), as_var(b)
    take_a = a.data >= b.data
    return custom(
        np.where(take_a, a.data, b.data),
        (a, b),
        lambda g: (g * take_a, g * (~take_a)),
    )


def laplace_cdf(z) -> Var:
    """CDF of the unit Laplace distribution; density 0.5*e^{-|z|} as vjp."""
    z = as_var(z)
    zd = z.data
    out = np.where(zd < 0, 0.5 * np.exp(np.minimum(zd, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(zd, 0.0)))
    dens = 0.5 * np.exp(-np.abs(zd))
    return custom(out, (z,), lambda g: (g * dens,))


# --- reductions / shape ops --------------------------------------------------

def sum_all(a) -> Var:
    a = as_var(a)
    shape = a.data.shape
    return custom(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a) -> Var:
    a = as_var(a)
    n = max(a.data.size, 1)
    return scale(sum_all(a), 1.0 / n)


def sum_rows(a) -> Var:
    """Sum over axis 0 (e.g. bias gradients)."""
    a = as_var(a)
    shape = a.data.shape
    return custom(
        np.sum(a.data, axis=0),
        (a,),
        lambda g: (np.broadcast_to(g, shape).copy(),),
    )


def gather_rows(a, idx: np.ndarray) -> Var:
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.int64)
    n = a.data.shape[0]

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    del n
    return custom(a.data[idx], (a,), vjp)


def concat_cols(parts: Sequence) -> Var:
    parts = [as_var(p) for p in parts]
    widths = [p.data.shape[1] for p in parts]
    splits = np.cumsum(widths)[:-1]
    return custom(
        np.concatenate([p.data for p in parts], axis=1),
        tuple(parts),
        lambda g: tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=1)),
    )


def slice_cols(a, lo: int, hi: int) -> Var:
    a = as_var(a)
    shape = a.data.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, lo:hi] = g
        return (out,)

    return custom(np.ascontiguousarray(a.data[:, lo:hi]), (a,), vjp)


# --- numeric gradient checking ------------------------------------------------

def finite_difference(fn: Callable[[], float], var: Var, idx, eps: float = 1e-4) -> float:
    """Central difference of ``fn`` w.r.t. one entry of ``var``."""
    orig = var.data[idx]
    var.data[idx] = orig + eps
    fp = float(fn())
    var.data[idx] = orig - eps
    fm = float(fn())
    var.data[idx] = orig
    return (fp - fm) / (2.0 * eps)


def grad_check(
    fn: Callable[[], Var],
    wrt: Mapping[str, Var],
    seed: int = 0,
    eps: float = 1e-4,
    max_entries: int | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must be a deterministic closure returning the scalar loss Var.
    With ``max_entries`` set, that many entries per array are sampled
    (deterministically from ``seed``); otherwise every entry is checked.
    Relative error is |analytic - numeric| / max(1e-8, |numeric|).
    """
    with Tape() as tape:
        loss = fn()
    analytic = backward(tape, loss, wrt)

    def loss_value() -> float:
        with pause():
            return float(fn().data)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in sorted(wrt):
        var = wrt[name]
        size = var.data.size
        if size == 0:
            continue
        if max_entries is None or size <= max_entries:
            flat_indices = np.arange(size)
        else:
            flat_indices = rng.choice(size, size=max_entries, replace=False)
        for flat in flat_indices:
            idx = np.unravel_index(int(flat), var.data.shape)
            num = finite_difference(loss_value, var, idx, eps)
            ana = float(analytic[name][idx])
            rel = abs(ana - num) / max(1e-8, abs(num))
            worst = max(worst, rel)
    return worst
