"""Sparse Walsh series on the unit square and their partial sums.

Coefficients are stored as sorted triples (k, nu, c) with k, nu >= 1.  A
series drawn from the block constructor additionally carries its block
boundaries 1 = N_0 < N_1 < ... < N_S, with every nonzero coefficient inside
one of the diagonal squares [N_{s-1}, N_s)^2.  Partial sums come in two
shapes: rectangular (all k <= n and nu <= m) and spherical (an annulus
lower <= k^2 + nu^2 <= r^2 with ties included on both sides).  Both are
piecewise constant, so each is evaluated exactly on a dyadic grid, and both
only change at finitely many cuts, enumerated by distinct_cuts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ResolutionError
from .grids import (
    MAX_GRID_CELLS,
    DyadicGrid1D,
    DyadicGrid2D,
    DyadicSet1D,
    DyadicSet2D,
    ifwht,
    ifwht2,
)

__all__ = [
    "SparseCoeffs1D",
    "SparseCoeffs2D",
    "WalshSeries2D",
    "PartialSumCut",
    "rect_partial_sum",
    "sph_partial_sum",
    "distinct_cuts",
    "coeff_power_norm",
    "worst_subset_margin",
]


@dataclass(frozen=True, eq=False)
class SparseCoeffs1D:
    """Nonzero Walsh coefficients of a 1-D polynomial, sorted by frequency."""

    ks: np.ndarray
    cs: np.ndarray

    def __post_init__(self):
        ks = np.asarray(self.ks, dtype=np.int64)
        cs = np.asarray(self.cs, dtype=np.float64)
        if ks.shape != cs.shape or ks.ndim != 1:
            raise ValueError("ks and cs must be 1-D arrays of equal length")
        order = np.argsort(ks, kind="stable")
        ks, cs = ks[order], cs[order]
        if ks.size:
            if ks[0] < 0:
                raise ValueError("negative frequency")
            if np.any(np.diff(ks) == 0):
                raise ValueError("duplicate frequency")
        keep = cs != 0.0
        object.__setattr__(self, "ks", ks[keep])
        object.__setattr__(self, "cs", cs[keep])

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))

    @property
    def nnz(self):
        return int(self.ks.size)

    def top(self, default=0):
        return int(self.ks[-1]) if self.ks.size else default

    def bottom(self, default=0):
        return int(self.ks[0]) if self.ks.size else default

    def power_norm(self, exponent):
        if exponent <= 0:
            raise ValueError("exponent must be positive")
        return float(np.sum(np.abs(self.cs) ** exponent))

    def energy(self):
        return float(np.sum(self.cs**2))

    def to_grid(self, rank):
        if self.top() >= (1 << rank):
            raise ResolutionError(f"rank {rank} too coarse for frequency {self.top()}")
        dense = np.zeros(1 << rank)
        dense[self.ks] = self.cs
        return ifwht(dense)


@dataclass(frozen=True, eq=False)
class SparseCoeffs2D:
    """Nonzero coefficients of a double Walsh series, lexsorted by (k, nu)."""

    ks: np.ndarray
    nus: np.ndarray
    cs: np.ndarray

    def __post_init__(self):
        ks = np.asarray(self.ks, dtype=np.int64)
        nus = np.asarray(self.nus, dtype=np.int64)
        cs = np.asarray(self.cs, dtype=np.float64)
        if not (ks.shape == nus.shape == cs.shape) or ks.ndim != 1:
            raise ValueError("ks, nus, cs must be 1-D arrays of equal length")
        order = np.lexsort((nus, ks))
        ks, nus, cs = ks[order], nus[order], cs[order]
        if ks.size:
            if ks[0] < 1 or nus.min() < 1:
                raise ValueError("frequencies must be >= 1")
            same = (np.diff(ks) == 0) & (np.diff(nus) == 0)
            if np.any(same):
                raise ValueError("duplicate frequency pair")
        keep = cs != 0.0
        object.__setattr__(self, "ks", ks[keep])
        object.__setattr__(self, "nus", nus[keep])
        object.__setattr__(self, "cs", cs[keep])

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), np.zeros(0))

    @classmethod
    def from_triples(cls, triples):
        if not triples:
            return cls.empty()
        ks, nus, cs = zip(*triples)
        return cls(np.array(ks), np.array(nus), np.array(cs))

    @classmethod
    def tensor(cls, x, y):
        """Outer product of two 1-D coefficient sets."""
        ks = np.repeat(x.ks, y.nnz)
        nus = np.tile(y.ks, x.nnz)
        cs = np.multiply.outer(x.cs, y.cs).reshape(-1)
        return cls(ks, nus, cs)

    @classmethod
    def merge(cls, parts):
        parts = [p for p in parts if p.nnz]
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.ks for p in parts]),
            np.concatenate([p.nus for p in parts]),
            np.concatenate([p.cs for p in parts]),
        )

    @property
    def nnz(self):
        return int(self.ks.size)

    def top(self, default=0):
        if not self.ks.size:
            return default
        return int(max(self.ks.max(), self.nus.max()))

    def radii_sq(self):
        return self.ks**2 + self.nus**2

    def power_norm(self, exponent):
        if exponent <= 0:
            raise ValueError("exponent must be positive")
        return float(np.sum(np.abs(self.cs) ** exponent))

    def energy(self):
        return float(np.sum(self.cs**2))

    def select(self, mask):
        return SparseCoeffs2D(self.ks[mask], self.nus[mask], self.cs[mask])

    def to_grid(self, ranks):
        p, q = ranks
        if (1 << (p + q)) > MAX_GRID_CELLS:
            raise ResolutionError(f"ranks {ranks} exceed the cell guard")
        if self.nnz and (self.ks.max() >= (1 << p) or self.nus.max() >= (1 << q)):
            raise ResolutionError(f"ranks {ranks} too coarse for {self.top()}")
        dense = np.zeros((1 << p, 1 << q))
        dense[self.ks, self.nus] = self.cs
        return ifwht2(dense)


def _block_index(bounds, vals):
    # bounds = [N_0, ..., N_S]; index of the block square containing each val
    idx = np.searchsorted(bounds, vals, side="right") - 1
    return idx


@dataclass(frozen=True, eq=False)
class WalshSeries2D:
    """A sparse double series split into diagonal block squares.

    `records` optionally carries one opaque metadata object per block (the
    pipeline stores its per-block build reports there).
    """

    coeffs: SparseCoeffs2D
    blocks: tuple
    records: tuple = ()

    def __post_init__(self):
        blocks = tuple(int(b) for b in self.blocks)
        if not blocks or blocks[0] != 1:
            raise ValueError("block bounds must start at 1")
        if any(lo >= hi for lo, hi in zip(blocks, blocks[1:])):
            raise ValueError("block bounds must be strictly increasing")
        object.__setattr__(self, "blocks", blocks)
        c = self.coeffs
        if c.nnz:
            b = np.asarray(blocks)
            ik = _block_index(b, c.ks)
            inu = _block_index(b, c.nus)
            ok = (ik == inu) & (ik >= 0) & (ik < len(blocks) - 1)
            if not bool(np.all(ok)):
                bad = int(np.flatnonzero(~ok)[0])
                raise ValueError(
                    f"coefficient ({int(c.ks[bad])}, {int(c.nus[bad])}) is outside "
                    "every diagonal block square"
                )
        records = tuple(self.records)
        if records and len(records) != len(blocks) - 1:
            raise ValueError(f"need one record per block, got {len(records)}")
        object.__setattr__(self, "records", records)

    @property
    def depth(self):
        return len(self.blocks) - 1

    def block_range(self, s):
        if not 1 <= s <= self.depth:
            raise IndexError(f"block {s} out of range 1..{self.depth}")
        return self.blocks[s - 1], self.blocks[s]

    def block_coeffs(self, s):
        lo, hi = self.block_range(s)
        c = self.coeffs
        mask = (c.ks >= lo) & (c.ks < hi)
        return c.select(mask)


@dataclass(frozen=True)
class PartialSumCut:
    """One place where a partial sum changes: a rectangle corner or a radius."""

    kind: str  # "rect" | "sph"
    n: int | None = None
    m: int | None = None
    r_sq: int | None = None
    lower_sq: int = 0

    def __post_init__(self):
        if self.kind not in ("rect", "sph"):
            raise ValueError(f"unknown cut kind {self.kind!r}")
        if self.kind == "rect":
            if self.n is None or self.m is None:
                raise ValueError("rect cut needs n and m")
            if self.n < 1 or self.m < 1:
                raise ValueError("rect cut indices must be >= 1")
        if self.kind == "sph":
            if self.r_sq is None or self.r_sq < 0:
                raise ValueError("sph cut needs r_sq >= 0")
            if self.lower_sq > self.r_sq:
                raise ValueError("annulus lower bound exceeds its radius")


def _coeffs_of(obj):
    return obj.coeffs if isinstance(obj, WalshSeries2D) else obj


def rect_partial_sum(series, n, m, ranks):
    """Grid of the rectangular partial sum over k <= n, nu <= m."""
    c = _coeffs_of(series)
    return c.select((c.ks <= n) & (c.nus <= m)).to_grid(ranks)


def sph_partial_sum(series, r, lower=0.0, ranks=(0, 0)):
    """Grid of the annular partial sum over lower <= k^2 + nu^2 <= r^2.

    `lower` is compared against k^2 + nu^2 directly (it is already squared);
    both ends include ties.
    """
    c = _coeffs_of(series)
    rad = c.radii_sq()
    return c.select((rad >= lower) & (rad <= float(r) ** 2)).to_grid(ranks)


def distinct_cuts(series, block=None, kind="both"):
    """All cuts at which the partial sums change, in deterministic order.

    Rectangular cuts are the distinct nonzero k-values crossed with the
    distinct nu-values (plus the block's top boundary when a block is named);
    spherical cuts are the distinct squared radii, ascending.
    """
    if isinstance(series, WalshSeries2D) and block is not None:
        c = series.block_coeffs(block)
        endpoint = series.block_range(block)[1] - 1
    else:
        c = _coeffs_of(series)
        endpoint = None
    cuts = []
    if kind in ("rect", "both"):
        ns = sorted(set(int(k) for k in c.ks))
        ms = sorted(set(int(v) for v in c.nus))
        if endpoint is not None:
            if ns and ns[-1] != endpoint:
                ns.append(endpoint)
            if ms and ms[-1] != endpoint:
                ms.append(endpoint)
        cuts += [PartialSumCut("rect", n=n, m=m) for n in ns for m in ms]
    if kind in ("sph", "both"):
        radii = sorted(set(int(r) for r in c.radii_sq()))
        cuts += [PartialSumCut("sph", r_sq=r) for r in radii]
    return cuts


def coeff_power_norm(series, exponent, block=None):
    """Sum of |c|^exponent over the series or one of its blocks."""
    if isinstance(series, WalshSeries2D) and block is not None:
        return series.block_coeffs(block).power_norm(exponent)
    return _coeffs_of(series).power_norm(exponent)


def worst_subset_margin(g, budget=0.0, region=None):
    """max over subsets e of `region` of  integral_e(|g| - budget).

    The maximizing subset keeps exactly the cells where |g| exceeds the
    budget, so the margin equals sum(relu(|g| - budget)) * cell measure.
    Nonnegative; 0 means no subset violates the budget anywhere.
    """
    if isinstance(g, DyadicGrid1D):
        grids = [g] + [x for x in (budget, region) if isinstance(x, (DyadicGrid1D, DyadicSet1D))]
        rank = max(x.rank for x in grids)
        g = g.refine(rank)
        budget = budget.refine(rank).values if isinstance(budget, DyadicGrid1D) else float(budget)
        mask = region.refine(rank).mask if region is not None else None
    elif isinstance(g, DyadicGrid2D):
        grids = [g] + [x for x in (budget, region) if isinstance(x, (DyadicGrid2D, DyadicSet2D))]
        rank = (max(x.ranks[0] for x in grids), max(x.ranks[1] for x in grids))
        g = g.refine(rank)
        budget = budget.refine(rank).values if isinstance(budget, DyadicGrid2D) else float(budget)
        mask = region.refine(rank).mask if region is not None else None
    else:
        raise TypeError(f"unsupported grid {type(g).__name__}")
    excess = np.abs(g.values) - budget
    np.maximum(excess, 0.0, out=excess)
    if mask is not None:
        excess = excess[mask]
    return float(excess.sum()) * g.cell_measure
