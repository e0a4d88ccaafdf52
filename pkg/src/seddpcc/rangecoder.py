"""Carry-less 32-bit renormalizing range coder with 16-bit fixed-point models.

Probabilities enter the coder as integer frequency tables so that encoder
and decoder derive bit-identical intervals on any platform.  Static models
use :class:`Pmf16` (frequencies summing to exactly 2^16); the adaptive
order-0 byte model serves the octree occupancy stream.
"""

from __future__ import annotations

import numpy as np

_TOP = 1 << 24
_BOT = 1 << 16
_MASK = (1 << 32) - 1

PMF_TOTAL = 1 << 16


class RangeCoderError(ValueError):
    pass


class Pmf16:
    """Fixed-point pmf: integer frequencies >= 1 summing to exactly 2^16."""

    __slots__ = ("freq", "cum")

    def __init__(self, freq):
        freq = np.asarray(freq, dtype=np.int64)
        if freq.ndim != 1 or len(freq) < 1:
            raise RangeCoderError("frequency table must be a non-empty vector")
        if freq.min() < 1:
            raise RangeCoderError("every symbol needs frequency >= 1")
        if int(freq.sum()) != PMF_TOTAL:
            raise RangeCoderError(f"frequencies must sum to {PMF_TOTAL}, got {int(freq.sum())}")
        self.freq = freq
        self.cum = np.concatenate([[0], np.cumsum(freq)])

    def __len__(self) -> int:
        return len(self.freq)

    def probabilities(self) -> np.ndarray:
        return self.freq / float(PMF_TOTAL)


def quantize_pmf(probs) -> Pmf16:
    """Largest-remainder rounding of real probabilities to a :class:`Pmf16`.

    Every symbol keeps at least frequency 1; ties are resolved by symbol
    index, so the result is deterministic.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or len(p) < 1:
        raise RangeCoderError("probability vector required")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise RangeCoderError("probabilities must be finite and non-negative")
    total = p.sum()
    if total <= 0:
        raise RangeCoderError("probabilities sum to zero")
    ideal = p / total * PMF_TOTAL
    base = np.maximum(np.floor(ideal).astype(np.int64), 1)
    remainder = ideal - np.floor(ideal)
    delta = PMF_TOTAL - int(base.sum())
    if delta > 0:
        # Grant +1 to the largest remainders (index breaks ties).
        order = np.lexsort((np.arange(len(p)), -remainder))
        base[order[:delta]] += 1
    elif delta < 0:
        # Reclaim from the largest frequencies, never dropping below 1.
        order = np.lexsort((np.arange(len(p)), -base))
        i = 0
        while delta < 0:
            j = order[i % len(p)]
            if base[j] > 1:
                base[j] -= 1
                delta += 1
            i += 1
            if i > 64 * len(p):  # cannot happen: sum > len >= needed reclaim
                raise RangeCoderError("pmf quantization failed to converge")
    return Pmf16(base)


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.out = bytearray()

    def encode(self, cum_lo: int, freq: int, total: int) -> None:
        if freq <= 0:
            raise RangeCoderError("zero-frequency symbol")
        r = self.range // total
        self.low += r * cum_lo
        self.range = r * freq
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                pass
            elif self.range < _BOT:
                self.range = (-self.low) & (_BOT - 1)
            else:
                break
            self.out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & _MASK
            self.range = (self.range << 8) & _MASK

    def finish(self) -> bytes:
        for _ in range(4):
            self.out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & _MASK
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.low = 0
        self.range = _MASK
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._byte()

    def _byte(self) -> int:
        if self.pos >= len(self.data):
            raise RangeCoderError("range decoder ran past end of stream")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode_target(self, total: int) -> int:
        self._r = self.range // total
        return min((self.code - self.low) // self._r, total - 1)

    def decode_update(self, cum_lo: int, freq: int) -> None:
        self.low += self._r * cum_lo
        self.range = self._r * freq
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                pass
            elif self.range < _BOT:
                self.range = (-self.low) & (_BOT - 1)
            else:
                break
            self.code = ((self.code << 8) | self._byte()) & _MASK
            self.low = (self.low << 8) & _MASK
            self.range = (self.range << 8) & _MASK


def range_encode(symbols, pmfs) -> bytes:
    """Encode integer symbols; ``pmfs`` is one Pmf16 for all symbols or a
    sequence with one table per symbol."""
    enc = RangeEncoder()
    shared = isinstance(pmfs, Pmf16)
    symbols = list(symbols)
    if not shared and len(pmfs) != len(symbols):
        raise RangeCoderError(f"{len(pmfs)} pmfs for {len(symbols)} symbols")
    for i, s in enumerate(symbols):
        pmf = pmfs if shared else pmfs[i]
        s = int(s)
        if not 0 <= s < len(pmf):
            raise RangeCoderError(f"symbol {s} outside alphabet of size {len(pmf)}")
        enc.encode(int(pmf.cum[s]), int(pmf.freq[s]), PMF_TOTAL)
    return enc.finish()


def range_decode(data: bytes, count: int, pmfs) -> list[int]:
    """Inverse of :func:`range_encode` for ``count`` symbols."""
    dec = RangeDecoder(data)
    shared = isinstance(pmfs, Pmf16)
    if not shared and len(pmfs) != count:
        raise RangeCoderError(f"{len(pmfs)} pmfs for {count} symbols")
    out = []
    for i in range(count):
        pmf = pmfs if shared else pmfs[i]
        target = dec.decode_target(PMF_TOTAL)
        s = int(np.searchsorted(pmf.cum, target, side="right")) - 1
        dec.decode_update(int(pmf.cum[s]), int(pmf.freq[s]))
        out.append(s)
    return out


class AdaptiveByteModel:
    """Order-0 adaptive model over bytes: counts start at 1, grow by 32,
    and halve (floored at 1) once the total reaches 2^15."""

    INCREMENT = 32
    LIMIT = 1 << 15

    def __init__(self):
        self.freq = np.ones(256, dtype=np.int64)
        self.total = 256

    def cumulative(self, symbol: int) -> tuple[int, int]:
        return int(self.freq[:symbol].sum()), int(self.freq[symbol])

    def find(self, target: int) -> tuple[int, int, int]:
        cum = np.cumsum(self.freq)
        s = int(np.searchsorted(cum, target, side="right"))
        lo = int(cum[s - 1]) if s else 0
        return s, lo, int(self.freq[s])

    def update(self, symbol: int) -> None:
        self.freq[symbol] += self.INCREMENT
        self.total += self.INCREMENT
        if self.total >= self.LIMIT:
            self.freq = np.maximum(self.freq >> 1, 1)
            self.total = int(self.freq.sum())


def adaptive_encode_bytes(payload: bytes) -> bytes:
    model = AdaptiveByteModel()
    enc = RangeEncoder()
    for b in payload:
        lo, fr = model.cumulative(b)
        enc.encode(lo, fr, model.total)
        model.update(b)
    return enc.finish()


class AdaptiveByteDecoder:
    """Streaming decode counterpart of :func:`adaptive_encode_bytes`."""

    def __init__(self, data: bytes):
        self.model = AdaptiveByteModel()
        self.dec = RangeDecoder(data)

    def next_byte(self) -> int:
        target = self.dec.decode_target(self.model.total)
        s, lo, fr = self.model.find(target)
        self.dec.decode_update(lo, fr)
        self.model.update(s)
        return s
