"""Piecewise-constant analysis on dyadic grids of [0,1) and [0,1)^2.

A rank-p grid splits [0,1) into 2^p half-open cells [i/2^p, (i+1)/2^p).
Functions constant on those cells are stored as float arrays; step functions
with exact dyadic endpoints and values are kept symbolic (fractions.Fraction)
until rasterized.  The Walsh functions used throughout are indexed the
standard dyadic way: W_0 = 1 and W_n = prod r_k over the set bits k of n,
where r_k flips sign on each half of every rank-k cell.  With that indexing
the transform of a rank-p grid is a length-2^p vector of exact averages,
computed by a butterfly over bit-reversed cell order.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ResolutionError

# refuse to materialize grids beyond this many cells (per array)
MAX_GRID_CELLS = 1 << 24

__all__ = [
    "MAX_GRID_CELLS",
    "as_dyadic",
    "bit_reverse",
    "rademacher",
    "walsh",
    "walsh_signs",
    "fwht",
    "ifwht",
    "fwht2",
    "ifwht2",
    "dirichlet_packet",
    "DyadicGrid1D",
    "DyadicGrid2D",
    "DyadicSet1D",
    "DyadicSet2D",
    "DyadicInterval",
    "DyadicRect",
    "StepFunction1D",
    "StepFunction2D",
    "product_set",
    "weighted_l1",
    "sup_norm",
]


def as_dyadic(value):
    """Coerce to Fraction and require a power-of-two denominator."""
    f = Fraction(value)
    d = f.denominator
    if d & (d - 1):
        raise ValueError(f"denominator of {f} is not a power of two")
    return f


def _check_rank(rank):
    if not isinstance(rank, (int, np.integer)) or rank < 0:
        raise ResolutionError(f"rank must be a nonnegative integer, got {rank!r}")
    if (1 << rank) > MAX_GRID_CELLS:
        raise ResolutionError(f"rank {rank} exceeds the {MAX_GRID_CELLS}-cell guard")
    return int(rank)


_BITREV_CACHE = {}


def bit_reverse(rank):
    """Permutation sending cell index i to its rank-bit reversal."""
    rank = _check_rank(rank)
    perm = _BITREV_CACHE.get(rank)
    if perm is None:
        idx = np.arange(1 << rank, dtype=np.int64)
        perm = np.zeros_like(idx)
        for b in range(rank):
            perm |= ((idx >> b) & 1) << (rank - 1 - b)
        perm.flags.writeable = False
        _BITREV_CACHE[rank] = perm
    return perm


if hasattr(np, "bitwise_count"):
    def _popcount(a):
        return np.bitwise_count(a)
else:  # numpy < 2.0
    _POP8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)

    def _popcount(a):
        a = np.asarray(a, dtype=np.int64)
        out = np.zeros(a.shape, dtype=np.int64)
        for shift in range(0, 64, 8):
            out += _POP8[(a >> shift) & 0xFF]
        return out


def walsh_signs(ns, rank):
    """Sign matrix S[t, i] = value of Walsh function ns[t] on cell i.

    Uses W_n(cell i) = (-1)^popcount(n & bitrev(i)); rows are float64 so the
    result can feed straight into accumulation code.
    """
    rank = _check_rank(rank)
    ns = np.asarray(ns, dtype=np.int64)
    if ns.size and (ns.min() < 0 or ns.max() >= (1 << rank)):
        raise ResolutionError(f"walsh index out of range for rank {rank}")
    rev = bit_reverse(rank)
    bits = _popcount(np.bitwise_and.outer(ns, rev)) & 1
    return np.where(bits.astype(bool), -1.0, 1.0)


def rademacher(k, rank):
    """The k-th sign function: +1 on the left half of every rank-k cell."""
    rank = _check_rank(rank)
    if not 0 <= k < rank:
        raise ResolutionError(f"rademacher index {k} needs rank > {k}")
    idx = np.arange(1 << rank, dtype=np.int64)
    vals = np.where((idx >> (rank - 1 - k)) & 1, -1.0, 1.0)
    return DyadicGrid1D(rank, vals)


def walsh(n, rank):
    """Walsh function number n (n < 2^rank) as a rank-`rank` grid."""
    return DyadicGrid1D(rank, walsh_signs([n], rank)[0])


def _butterfly(v):
    # in-place style fast transform with H[a,b] = (-1)^popcount(a & b)
    out = np.array(v, dtype=np.float64, copy=True)
    n = out.shape[0]
    assert n & (n - 1) == 0
    tail = out.shape[1:]
    flat = out.reshape(n, -1)
    h = 1
    while h < n:
        blk = flat.reshape(-1, 2, h, flat.shape[-1])
        x = blk[:, 0].copy()
        y = blk[:, 1].copy()
        blk[:, 0] = x + y
        blk[:, 1] = x - y
        h *= 2
    return flat.reshape((n,) + tail)


def fwht(g):
    """Analysis transform: coefficient j is the integral of g against W_j."""
    if isinstance(g, DyadicGrid1D):
        rank, vals = g.rank, g.values
    else:
        vals = np.asarray(g, dtype=np.float64)
        rank = _rank_of_length(vals.shape[0])
    rev = bit_reverse(rank)
    return _butterfly(vals[rev]) / (1 << rank)


def ifwht(coeffs):
    """Synthesis transform: grid values of sum_j coeffs[j] * W_j."""
    c = np.asarray(coeffs, dtype=np.float64)
    rank = _rank_of_length(c.shape[0])
    vals = _butterfly(c)[bit_reverse(rank)]
    return DyadicGrid1D(rank, vals)


def fwht2(g):
    """Per-axis analysis transform of a 2-D grid."""
    if isinstance(g, DyadicGrid2D):
        (p, q), vals = g.ranks, g.values
    else:
        vals = np.asarray(g, dtype=np.float64)
        p = _rank_of_length(vals.shape[0])
        q = _rank_of_length(vals.shape[1])
    a = _butterfly(vals[bit_reverse(p), :])
    a = _butterfly(a.T[bit_reverse(q), :]).T
    return a / (1 << (p + q))


def ifwht2(coeffs):
    """Synthesis of a 2-D coefficient array back to grid values."""
    c = np.asarray(coeffs, dtype=np.float64)
    p = _rank_of_length(c.shape[0])
    q = _rank_of_length(c.shape[1])
    a = _butterfly(c)[bit_reverse(p), :]
    a = _butterfly(a.T)[bit_reverse(q), :].T
    return DyadicGrid2D((p, q), a)


def _rank_of_length(n):
    rank = int(n).bit_length() - 1
    if n <= 0 or (1 << rank) != n:
        raise ResolutionError(f"array length {n} is not a power of two")
    return rank


def dirichlet_packet(m, rank):
    """Sum of the first 2^m Walsh functions, synthesized at the given rank.

    Equals 2^m on [0, 2^-m) and 0 elsewhere, exactly; the round-trip through
    the synthesis butterfly is integer arithmetic in disguise, so tests can
    compare with == rather than a tolerance.
    """
    rank = _check_rank(rank)
    if not 0 <= m <= rank:
        raise ResolutionError(f"packet order {m} needs rank >= {m}")
    c = np.zeros(1 << rank)
    c[: 1 << m] = 1.0
    return ifwht(c)


# ---------------------------------------------------------------------------
# grids and sets


@dataclass(frozen=True, eq=False)
class DyadicGrid1D:
    rank: int
    values: np.ndarray

    def __post_init__(self):
        _check_rank(self.rank)
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (1 << self.rank,):
            raise ResolutionError(
                f"rank-{self.rank} grid needs {1 << self.rank} values, got {v.shape}"
            )
        object.__setattr__(self, "values", v)

    @property
    def cell_measure(self):
        return 1.0 / (1 << self.rank)

    def refine(self, rank):
        if rank < self.rank:
            raise ResolutionError(f"cannot coarsen rank {self.rank} grid to {rank}")
        if rank == self.rank:
            return self
        return DyadicGrid1D(rank, np.repeat(self.values, 1 << (rank - self.rank)))

    def integral(self):
        return float(self.values.sum()) / (1 << self.rank)


@dataclass(frozen=True, eq=False)
class DyadicGrid2D:
    ranks: tuple
    values: np.ndarray

    def __post_init__(self):
        p, q = (int(r) for r in self.ranks)
        _check_rank(p), _check_rank(q)
        if (1 << (p + q)) > MAX_GRID_CELLS:
            raise ResolutionError(f"ranks {(p, q)} exceed the cell guard")
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (1 << p, 1 << q):
            raise ResolutionError(f"ranks {(p, q)} need shape {(1 << p, 1 << q)}, got {v.shape}")
        object.__setattr__(self, "ranks", (p, q))
        object.__setattr__(self, "values", v)

    @property
    def cell_measure(self):
        p, q = self.ranks
        return 1.0 / (1 << (p + q))

    def refine(self, ranks):
        p, q = self.ranks
        rp, rq = ranks
        if rp < p or rq < q:
            raise ResolutionError(f"cannot coarsen ranks {self.ranks} to {ranks}")
        v = self.values
        if rp > p:
            v = np.repeat(v, 1 << (rp - p), axis=0)
        if rq > q:
            v = np.repeat(v, 1 << (rq - q), axis=1)
        return DyadicGrid2D((rp, rq), v) if (rp, rq) != (p, q) else self

    def integral(self):
        p, q = self.ranks
        return float(self.values.sum()) / (1 << (p + q))


@dataclass(frozen=True, eq=False)
class DyadicSet1D:
    rank: int
    mask: np.ndarray

    def __post_init__(self):
        _check_rank(self.rank)
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != (1 << self.rank,):
            raise ResolutionError("mask length must be 2**rank")
        object.__setattr__(self, "mask", m)

    @classmethod
    def full(cls, rank=0):
        return cls(rank, np.ones(1 << rank, dtype=bool))

    @property
    def measure(self):
        return float(int(self.mask.sum())) / (1 << self.rank)

    @property
    def measure_exact(self):
        return Fraction(int(self.mask.sum()), 1 << self.rank)

    def refine(self, rank):
        if rank < self.rank:
            raise ResolutionError("cannot coarsen a set")
        if rank == self.rank:
            return self
        return DyadicSet1D(rank, np.repeat(self.mask, 1 << (rank - self.rank)))

    def complement(self):
        return DyadicSet1D(self.rank, ~self.mask)

    def intersect(self, other):
        r = max(self.rank, other.rank)
        return DyadicSet1D(r, self.refine(r).mask & other.refine(r).mask)

    def union(self, other):
        r = max(self.rank, other.rank)
        return DyadicSet1D(r, self.refine(r).mask | other.refine(r).mask)


@dataclass(frozen=True, eq=False)
class DyadicSet2D:
    ranks: tuple
    mask: np.ndarray

    def __post_init__(self):
        p, q = (int(r) for r in self.ranks)
        _check_rank(p), _check_rank(q)
        if (1 << (p + q)) > MAX_GRID_CELLS:
            raise ResolutionError(f"ranks {(p, q)} exceed the cell guard")
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != (1 << p, 1 << q):
            raise ResolutionError("mask shape must be (2**p, 2**q)")
        object.__setattr__(self, "ranks", (p, q))
        object.__setattr__(self, "mask", m)

    @classmethod
    def full(cls, ranks=(0, 0)):
        p, q = (int(r) for r in ranks)
        if (1 << (p + q)) > MAX_GRID_CELLS:
            raise ResolutionError(f"ranks {(p, q)} exceed the cell guard")
        return cls((p, q), np.ones((1 << p, 1 << q), dtype=bool))

    @property
    def measure(self):
        p, q = self.ranks
        return float(int(self.mask.sum())) / (1 << (p + q))

    @property
    def measure_exact(self):
        p, q = self.ranks
        return Fraction(int(self.mask.sum()), 1 << (p + q))

    def refine(self, ranks):
        p, q = self.ranks
        rp, rq = ranks
        if rp < p or rq < q:
            raise ResolutionError("cannot coarsen a set")
        if (1 << (rp + rq)) > MAX_GRID_CELLS:
            raise ResolutionError(f"refining to ranks {(rp, rq)} exceeds the cell guard")
        m = self.mask
        if rp > p:
            m = np.repeat(m, 1 << (rp - p), axis=0)
        if rq > q:
            m = np.repeat(m, 1 << (rq - q), axis=1)
        return DyadicSet2D((rp, rq), m) if (rp, rq) != (p, q) else self

    def complement(self):
        return DyadicSet2D(self.ranks, ~self.mask)

    def intersect(self, other):
        r = (max(self.ranks[0], other.ranks[0]), max(self.ranks[1], other.ranks[1]))
        return DyadicSet2D(r, self.refine(r).mask & other.refine(r).mask)

    def union(self, other):
        r = (max(self.ranks[0], other.ranks[0]), max(self.ranks[1], other.ranks[1]))
        return DyadicSet2D(r, self.refine(r).mask | other.refine(r).mask)


def product_set(sx, sy):
    """Cartesian product of two 1-D dyadic sets."""
    return DyadicSet2D((sx.rank, sy.rank), np.logical_and.outer(sx.mask, sy.mask))


# ---------------------------------------------------------------------------
# step functions


@dataclass(frozen=True)
class DyadicInterval:
    """Half-open interval [(index-1)/2^rank, index/2^rank), 1 <= index <= 2^rank."""

    rank: int
    index: int

    def __post_init__(self):
        _check_rank(self.rank)
        if not 1 <= self.index <= (1 << self.rank):
            raise ResolutionError(
                f"interval index {self.index} out of range for rank {self.rank}"
            )

    @property
    def left(self):
        return Fraction(self.index - 1, 1 << self.rank)

    @property
    def right(self):
        return Fraction(self.index, 1 << self.rank)

    @property
    def measure(self):
        return Fraction(1, 1 << self.rank)

    def overlaps(self, other):
        return self.left < other.right and other.left < self.right

    def cell_slice(self, rank):
        # slice of rank-`rank` cells covered by this interval
        if rank < self.rank:
            raise ResolutionError(f"rank {rank} too coarse for a rank-{self.rank} interval")
        w = 1 << (rank - self.rank)
        return slice((self.index - 1) * w, self.index * w)

    def mask(self, rank):
        m = np.zeros(1 << rank, dtype=bool)
        m[self.cell_slice(rank)] = True
        return DyadicSet1D(rank, m)


@dataclass(frozen=True)
class DyadicRect:
    x: DyadicInterval
    y: DyadicInterval

    @property
    def measure(self):
        return self.x.measure * self.y.measure

    def overlaps(self, other):
        return self.x.overlaps(other.x) and self.y.overlaps(other.y)


def _validated_pieces(pieces, overlap_check):
    out = []
    for region, value in pieces:
        out.append((region, as_dyadic(value)))
    live = [r for r, v in out if v != 0]
    for i in range(len(live)):
        for j in range(i + 1, len(live)):
            if overlap_check(live[i], live[j]):
                raise ValueError(f"pieces {live[i]} and {live[j]} overlap")
    return tuple(out)


@dataclass(frozen=True)
class StepFunction1D:
    """Finite sum of dyadic-interval indicators with exact dyadic values."""

    pieces: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "pieces", _validated_pieces(self.pieces, DyadicInterval.overlaps)
        )

    @property
    def min_rank(self):
        return max((iv.rank for iv, _ in self.pieces), default=0)

    def support_measure(self):
        return sum((iv.measure for iv, v in self.pieces if v != 0), Fraction(0))

    def abs_integral(self):
        return sum((abs(v) * iv.measure for iv, v in self.pieces), Fraction(0))

    def sup(self):
        return max((abs(v) for _, v in self.pieces), default=Fraction(0))

    def support_mask(self, rank):
        m = np.zeros(1 << rank, dtype=bool)
        for iv, v in self.pieces:
            if v != 0:
                m[iv.cell_slice(rank)] = True
        return DyadicSet1D(rank, m)

    def to_grid(self, rank):
        if rank < self.min_rank:
            raise ResolutionError(f"rank {rank} below piece rank {self.min_rank}")
        vals = np.zeros(1 << rank)
        for iv, v in self.pieces:
            vals[iv.cell_slice(rank)] += float(v)
        return DyadicGrid1D(rank, vals)

    def scaled(self, factor):
        factor = as_dyadic(factor)
        return StepFunction1D(tuple((iv, v * factor) for iv, v in self.pieces))


@dataclass(frozen=True)
class StepFunction2D:
    """Finite sum of indicator functions of disjoint dyadic rectangles."""

    pieces: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "pieces", _validated_pieces(self.pieces, DyadicRect.overlaps)
        )

    @property
    def min_ranks(self):
        px = max((r.x.rank for r, _ in self.pieces), default=0)
        py = max((r.y.rank for r, _ in self.pieces), default=0)
        return (px, py)

    def support_measure(self):
        return sum((r.measure for r, v in self.pieces if v != 0), Fraction(0))

    def abs_integral(self):
        return sum((abs(v) * r.measure for r, v in self.pieces), Fraction(0))

    def sup(self):
        return max((abs(v) for _, v in self.pieces), default=Fraction(0))

    def to_grid(self, ranks):
        px, py = self.min_ranks
        rp, rq = ranks
        if rp < px or rq < py:
            raise ResolutionError(f"ranks {ranks} below piece ranks {(px, py)}")
        if (1 << (rp + rq)) > MAX_GRID_CELLS:
            raise ResolutionError(f"rasterizing at ranks {ranks} exceeds the cell guard")
        vals = np.zeros((1 << rp, 1 << rq))
        for r, v in self.pieces:
            vals[r.x.cell_slice(rp), r.y.cell_slice(rq)] += float(v)
        return DyadicGrid2D((rp, rq), vals)

    def nonzero(self):
        return tuple((r, v) for r, v in self.pieces if v != 0)


# ---------------------------------------------------------------------------
# norms


def _weight_values(w, like):
    if w is None:
        return 1.0
    if isinstance(w, (int, float)):
        return float(w)
    if isinstance(w, (DyadicGrid1D, DyadicGrid2D)):
        return w
    # duck-typed weights (e.g. pipeline.WeightFunction) render themselves
    if hasattr(w, "to_grid"):
        return w.to_grid(like.ranks if isinstance(like, DyadicGrid2D) else like.rank)
    raise TypeError(f"unsupported weight {type(w).__name__}")


def weighted_l1(g, w=None):
    """Integral of |g| * w over the unit interval or square."""
    w = _weight_values(w, g)
    if isinstance(g, DyadicGrid1D):
        if isinstance(w, DyadicGrid1D):
            r = max(g.rank, w.rank)
            g, w = g.refine(r), w.refine(r).values
        elif isinstance(w, DyadicGrid2D):
            raise ResolutionError("2-D weight against a 1-D grid")
        return float(np.sum(np.abs(g.values) * w)) * g.cell_measure
    if isinstance(g, DyadicGrid2D):
        if isinstance(w, DyadicGrid2D):
            r = (max(g.ranks[0], w.ranks[0]), max(g.ranks[1], w.ranks[1]))
            g, w = g.refine(r), w.refine(r).values
        elif isinstance(w, DyadicGrid1D):
            raise ResolutionError("1-D weight against a 2-D grid")
        return float(np.sum(np.abs(g.values) * w)) * g.cell_measure
    raise TypeError(f"unsupported grid {type(g).__name__}")


def sup_norm(g):
    v = g.values if isinstance(g, (DyadicGrid1D, DyadicGrid2D)) else np.asarray(g)
    return float(np.max(np.abs(v))) if v.size else 0.0
