"""Catalog-driven assembly of a universal double Walsh series.

The pipeline stacks the block builder: a deterministic catalog of dyadic
step functions supplies one target per block, each block is matched by a
polynomial on its own diagonal frequency square and re-verified there; the
tower of kept sets then induces a weight function (1 almost everywhere,
tiny constants on the exceptional shells) under which every partial sum
stays integrable; finally a greedy pass selects blocks whose sum tracks a
requested target in the weighted norm, certifying the residual and every
distinct partial-sum cut along the way.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import checker
from .builders import DEFAULT_LIMITS_2D, step_match_2d
from .checker import CheckItem, CheckReport, _cellwise, _loose, _strict
from .errors import (
    ConstructionFailed,
    FrequencyBudgetExceeded,
    InsufficientDepth,
    TargetNotApproximable,
)
from .grids import (
    DyadicGrid2D,
    DyadicInterval,
    DyadicRect,
    DyadicSet2D,
    StepFunction2D,
    sup_norm,
)
from .series import SparseCoeffs2D, WalshSeries2D


def block_tolerance(index):
    """Matching tolerance of block s: 4^-(s+1), the strictest of the
    per-block constants, so one builder call covers every condition."""
    if index < 1:
        raise ValueError("block index must be >= 1")
    return Fraction(1, 4 ** (index + 1))


def weight_start_index(eps):
    """First controlled weight level: one past the largest m with 2^-m >= eps."""
    e = Fraction(eps)
    if not 0 < e < 1:
        raise ValueError("eps must be in (0, 1)")
    m = 0
    while Fraction(1, 1 << (m + 1)) >= e:
        m += 1
        if m > 128:
            raise ValueError("eps is too small to place the start level")
    return m + 1


# ---------------------------------------------------------------------------
# catalogs


def _entry_key(f):
    # piece-set identity; entries produced by one generator share pieces
    return tuple(
        sorted((r.x.rank, r.x.index, r.y.rank, r.y.index, v) for r, v in f.pieces if v)
    )


@dataclass(frozen=True, eq=False)
class Catalog:
    """Ordered pool of dyadic step-function targets, one per block index.

    With `repeats` >= 2 every distinct entry occupies at least `repeats`
    positions, so an equally good entry always exists past any index the
    index-monotone greedy selection has already consumed.
    """

    entries: tuple
    repeats: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ValueError("catalog needs at least one entry")
        if any(not isinstance(e, StepFunction2D) for e in entries):
            raise TypeError("catalog entries must be StepFunction2D")
        if self.repeats < 1:
            raise ValueError("repeat count must be >= 1")
        if self.repeats >= 2:
            counts = Counter(_entry_key(e) for e in entries)
            short = sum(1 for c in counts.values() if c < self.repeats)
            if short:
                raise ValueError(
                    f"{short} distinct entries occur fewer than {self.repeats} times"
                )
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)


def generate_catalog(max_rank=1, value_sup=1, repeats=3, size_cap=100_000):
    """Enumerate dyadic step functions stratum by stratum.

    Stratum t holds the functions constant on the 2^t x 2^t dyadic
    partition with values j/2^t for |j| <= value_sup * 2^t, skipping any
    function a coarser stratum already produced.  Strata are concatenated
    in increasing t -- the zero function first, then per-cell value order
    0, -1, +1, -2, +2, ... with the last cell varying fastest -- and the
    whole list is repeated `repeats` times.
    """
    if not 0 <= max_rank <= 3:
        raise ValueError("stratum rank must be in 0..3")
    if value_sup < 1:
        raise ValueError("value bound must be >= 1")
    if repeats < 1:
        raise ValueError("repeat count must be >= 1")
    raw = sum(
        (2 * value_sup * (1 << t) + 1) ** ((1 << t) ** 2) for t in range(max_rank + 1)
    )
    if raw * repeats > size_cap:
        raise ValueError(f"catalog of {raw * repeats} entries exceeds cap {size_cap}")

    once = []
    seen = set()
    side_max = 1 << max_rank
    for t in range(max_rank + 1):
        side = 1 << t
        step = Fraction(1, side)
        order = [0]
        for j in range(1, value_sup * side + 1):
            order += [-j, j]
        cells = [(i, j) for i in range(side) for j in range(side)]
        for combo in itertools.product(order, repeat=len(cells)):
            vals = np.zeros((side, side))
            for (i, j), v in zip(cells, combo):
                vals[i, j] = v * float(step)  # dyadic: exact in binary
            key = np.kron(
                vals, np.ones((side_max // side, side_max // side))
            ).tobytes()
            if key in seen:
                continue
            seen.add(key)
            pieces = tuple(
                (DyadicRect(DyadicInterval(t, i + 1), DyadicInterval(t, j + 1)), v * step)
                for (i, j), v in zip(cells, combo)
                if v
            )
            once.append(StepFunction2D(pieces))
    params = {
        "style": "grid",
        "max_rank": max_rank,
        "value_sup": value_sup,
        "repeats": repeats,
    }
    return Catalog(tuple(once) * repeats, repeats, params)


def micro_catalog(depth):
    """Deep-tower catalog: zero functions at odd positions, hairline strips
    at even ones.

    Strip s is 2^-(2s+8) wide -- half of block s's per-piece thinness
    budget -- so every block matches with the empty polynomial and the
    tower reaches depth `depth` under any frequency cap.
    """
    if not 1 <= depth <= 10:
        # deeper strips would sink under the builders' thinness slack
        raise ValueError("micro catalog depth must be in 1..10")
    full_y = DyadicInterval(0, 1)
    entries = []
    for s in range(1, depth + 1):
        if s % 2:
            entries.append(StepFunction2D(()))
        else:
            x = DyadicInterval(2 * s + 8, s)
            value = Fraction((-1) ** (s // 2), 2)
            entries.append(StepFunction2D(((DyadicRect(x, full_y), value),)))
    return Catalog(tuple(entries), 1, {"style": "micro", "depth": depth})


# ---------------------------------------------------------------------------
# block tower


@dataclass(frozen=True, eq=False)
class BlockRecord:
    """One built block: catalog target, polynomial on [lo, hi)^2, kept set,
    sup-norm budget, and the verified condition margins."""

    index: int
    target: StepFunction2D
    coeffs: SparseCoeffs2D
    lo: int
    hi: int
    keep: DyadicSet2D
    sup_budget: float
    report: CheckReport

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("block index must be >= 1")
        if not 1 <= self.lo < self.hi:
            raise ValueError("block bounds must satisfy 1 <= lo < hi")
        if self.sup_budget < 1.0:
            raise ValueError("the sup budget includes +1, so it is >= 1")
        c = self.coeffs
        if c.nnz:
            fmin = int(min(c.ks.min(), c.nus.min()))
            fmax = int(max(c.ks.max(), c.nus.max()))
            if fmin < self.lo or fmax >= self.hi:
                raise ValueError("coefficients stick out of the block square")


def _sup_budget(target, coeffs, lo, hi):
    """Sup norm of the target plus the worst rectangular and annular
    partial-sum sups over the block window, plus one.

    Exact via distinct cuts; past 20000 cut classes the partial-sum sups
    fall back to the sum of |coefficients|, which over-weights (sound: a
    larger budget only shrinks the weight levels).
    """
    rect_m = sph_m = 0.0
    if coeffs.nnz:
        r = checker._rank_for(coeffs.top())
        ranks = (r, r)
        uks = sorted(set(int(k) for k in coeffs.ks))
        unus = sorted(set(int(v) for v in coeffs.nus))
        txs = checker.realized_prefixes(uks, lo, hi)
        tys = checker.realized_prefixes(unus, lo, hi)
        radii = coeffs.radii_sq()
        r_cuts = checker.sph_thresholds(radii, 2 * lo * lo, 2 * hi * hi)
        if len(txs) * len(tys) + len(r_cuts) > 20000:
            rect_m = sph_m = float(np.sum(np.abs(coeffs.cs)))
        else:
            for tx in txs:
                kmax = uks[tx - 1] if tx else lo - 1
                for ty in tys:
                    nmax = unus[ty - 1] if ty else lo - 1
                    sel = coeffs.select((coeffs.ks <= kmax) & (coeffs.nus <= nmax))
                    if sel.nnz:
                        rect_m = max(rect_m, sup_norm(sel.to_grid(ranks)))
            for r_sq in r_cuts:
                sel = coeffs.select(radii <= r_sq)
                if sel.nnz:
                    sph_m = max(sph_m, sup_norm(sel.to_grid(ranks)))
    return float(target.sup()) + rect_m + sph_m + 1.0


def verify_block(target, coeffs, keep, lo, hi, index, mode="strict",
                 pair_cap=10**6, work_cap=2 * 10**9):
    """Re-check one block on its own frequency square.

    Covers: the polynomial sits inside [lo, hi)^2, equals the target on the
    kept set, the kept set fills all but the block tolerance, the power sum
    at the block's own exponent 2 + 4^-s stays under 4^-s, and every
    rectangular cut in [lo, hi) x [lo, hi) plus every annulus between
    sqrt(2)*lo and sqrt(2)*hi respects the subset budget
    2*integral_e|target| + 4^-(s+1).  Rect mode does not claim the annuli.
    """
    if mode not in ("strict", "rect"):
        raise ValueError(f"unknown mode {mode!r}")
    tol = block_tolerance(index)
    items = []

    if coeffs.nnz:
        fmin = int(min(coeffs.ks.min(), coeffs.nus.min()))
        fmax = int(max(coeffs.ks.max(), coeffs.nus.max()))
        inside = fmin >= lo and fmax < hi
        items.append(
            CheckItem(
                "support_square", bool(inside), float(min(fmin - lo, hi - 1 - fmax))
            )
        )
    else:
        items.append(CheckItem("support_square", True, 0.0, "empty polynomial"))

    ranks = checker._grid_ranks(coeffs, keep, target.min_ranks)
    p_vals = coeffs.to_grid(ranks).values
    f_vals = target.to_grid(ranks).values
    mask = keep.refine(ranks).mask
    dev = float(np.max(np.abs(p_vals - f_vals)[mask])) if mask.any() else 0.0
    items.append(_cellwise("match_on_kept", dev, f"sup dev {dev:.2e}"))

    measure_margin = keep.measure_exact - (1 - tol)
    items.append(
        CheckItem(
            "kept_measure",
            bool(measure_margin >= checker.STRICT_EPS),
            float(measure_margin),
        )
    )
    items.append(
        _strict("tail_power", coeffs.power_norm(2.0 + 4.0 ** (-index)), 4.0 ** (-index))
    )

    keep_r = keep.refine(ranks)
    target_abs = DyadicGrid2D(ranks, np.abs(f_vals))
    if mode == "strict":
        sph_lo, sph_hi = 2 * lo * lo, 2 * hi * hi
    else:
        sph_lo, sph_hi = 0, 0  # degenerate window: only the empty annulus
    items.append(
        checker.cut_budget_vs_target(
            coeffs,
            target_abs,
            keep_r,
            float(tol),
            rect_lo=lo,
            rect_hi=hi,
            sph_lo_sq=sph_lo,
            sph_hi_sq=sph_hi,
            pair_cap=pair_cap,
            work_cap=work_cap,
        )
    )
    if mode == "rect":
        items.append(CheckItem("sph_cut_budget", None, 0.0, "not claimed in rect mode"))
    return CheckReport(tuple(items))


def build_universal(catalog, depth, mode="strict", limits=None):
    """Build the first `depth` blocks of the series from the catalog.

    Block s targets catalog entry s on the frequency square
    [N_{s-1}, N_s)^2 with tolerance 4^-(s+1); N_0 = 1 and N_s is one past
    the block's highest used frequency.  Every block is re-verified at the
    square level before the next starts.  Returns the assembled series
    (records embedded) together with the record list.
    """
    if not isinstance(catalog, Catalog):
        raise TypeError("catalog must be a Catalog")
    depth = int(depth)
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if depth > len(catalog):
        raise ValueError(f"depth {depth} exceeds the {len(catalog)}-entry catalog")
    if mode not in ("strict", "rect"):
        raise ValueError(f"unknown mode {mode!r}")
    limits = limits if limits is not None else DEFAULT_LIMITS_2D

    bounds = [1]
    records = []
    for s in range(1, depth + 1):
        target = catalog.entries[s - 1]
        lo = bounds[-1]
        try:
            match = step_match_2d(target, lo, block_tolerance(s), limits=limits, mode=mode)
        except FrequencyBudgetExceeded as exc:
            raise FrequencyBudgetExceeded(
                f"block {s}/{depth} ran out of frequencies ({exc}); "
                f"deepest completed block: {s - 1}",
                report=exc.report,
            ) from None
        except ConstructionFailed as exc:
            raise ConstructionFailed(
                f"block {s}/{depth}: {exc}", report=exc.report
            ) from None
        hi = match.top + 1
        report = verify_block(
            target, match.coeffs, match.keep, lo, hi, s,
            mode=mode, pair_cap=limits.pair_cap, work_cap=limits.work_cap,
        )
        if not report.ok:
            raise ConstructionFailed(
                f"block {s}/{depth} failed its square-level checks", report=report
            )
        records.append(
            BlockRecord(
                index=s,
                target=target,
                coeffs=match.coeffs,
                lo=lo,
                hi=hi,
                keep=match.keep,
                sup_budget=_sup_budget(target, match.coeffs, lo, hi),
                report=report,
            )
        )
        bounds.append(hi)
    merged = (
        SparseCoeffs2D.merge([r.coeffs for r in records])
        if records
        else SparseCoeffs2D.empty()
    )
    series = WalshSeries2D(merged, tuple(bounds), tuple(records))
    return series, records


# ---------------------------------------------------------------------------
# weight


@dataclass(frozen=True, eq=False)
class WeightFunction:
    """Piecewise-constant weight: 1 on the good set and outside the tower,
    a tiny level constant on each tower shell.

    levels[i] = (n, set, value) for n = start..depth; the sets ascend with
    n (each intersects the kept sets from block n upward), the first level
    is the good set (weight 1 there), and shell n minus shell n-1 carries
    the level-n value.
    """

    eps: float
    start: int
    levels: tuple
    depth: int
    report: CheckReport | None = None

    def __post_init__(self):
        levels = tuple((int(n), omega, float(v)) for n, omega, v in self.levels)
        if not levels:
            raise ValueError("weight needs at least one level")
        ns = [n for n, _, _ in levels]
        if ns != list(range(self.start, self.depth + 1)):
            raise ValueError("levels must run consecutively from start to depth")
        if any(not 0.0 < v <= 1.0 for _, _, v in levels):
            raise ValueError("level values must lie in (0, 1]")
        for (_, a, _), (_, b, _) in zip(levels, levels[1:]):
            inter = a.intersect(b)
            if inter.measure_exact != a.measure_exact:
                raise ValueError("level sets must be nested upward")
        object.__setattr__(self, "levels", levels)

    @property
    def good(self):
        """The set that keeps full weight besides the tower complement."""
        return self.levels[0][1]

    @property
    def min_ranks(self):
        px = max(o.ranks[0] for _, o, _ in self.levels)
        py = max(o.ranks[1] for _, o, _ in self.levels)
        return (px, py)

    def level_values(self):
        return tuple(v for _, _, v in self.levels)

    def ne_one_measure(self):
        """Exact measure of {weight != 1}: the top level minus the good set."""
        return self.levels[-1][1].measure_exact - self.levels[0][1].measure_exact

    def to_grid(self, ranks):
        vals = np.ones((1 << ranks[0], 1 << ranks[1]))
        below = self.levels[0][1].refine(ranks).mask
        for _, omega, v in self.levels[1:]:
            m = omega.refine(ranks).mask
            vals[m & ~below] = v
            below = m
        return DyadicGrid2D(ranks, vals)


def build_weight(blocks, eps):
    """Assemble the weight function from a built block tower.

    Level n is the intersection of kept sets from block n upward; its
    constant is 4^-n over the running product of the blocks' sup-norm
    budgets (recomputed here from the raw blocks), so shells shrink fast
    enough for the weighted tail estimates.  Verifies the range conditions
    0 < weight <= 1 and measure{weight != 1} < eps before returning.
    """
    blocks = list(blocks)
    if any(b.index != i + 1 for i, b in enumerate(blocks)):
        raise ValueError("blocks must form the contiguous tower 1..depth")
    depth = len(blocks)
    n0 = weight_start_index(eps)
    if depth <= n0:
        raise InsufficientDepth(
            f"weight at eps={eps} starts at level {n0}; "
            f"need at least {n0 + 1} blocks, have {depth}"
        )

    budgets = [_sup_budget(b.target, b.coeffs, b.lo, b.hi) for b in blocks]
    prod = 1.0
    mus = {}
    for n in range(1, depth + 1):
        prod *= budgets[n - 1]
        if n >= n0:
            mus[n] = 1.0 / (4.0**n * prod)

    omegas = {}
    om = None
    for n in range(depth, n0 - 1, -1):
        keep = blocks[n - 1].keep
        om = keep if om is None else om.intersect(keep)
        omegas[n] = om

    levels = tuple((n, omegas[n], mus[n]) for n in range(n0, depth + 1))
    values = [mus[n] for n in range(n0, depth + 1)]
    ne_one = omegas[depth].measure_exact - omegas[n0].measure_exact
    eps_frac = Fraction(eps)
    items = (
        CheckItem("weight_positive", bool(min(values) > 0.0), float(min(values))),
        _loose("weight_at_most_one", max(values), 1.0),
        CheckItem(
            "off_one_measure",
            bool(ne_one < eps_frac),  # exact dyadic comparison
            float(eps_frac - ne_one),
        ),
    )
    report = CheckReport(items)
    if not report.ok:
        raise ConstructionFailed("weight failed its range checks", report=report)
    return WeightFunction(float(eps), n0, levels, depth, report)


# ---------------------------------------------------------------------------
# greedy approximation


@dataclass(frozen=True)
class ApproxStep:
    """One greedy step: the chosen block and its certified errors."""

    step: int
    block: int
    err_mu: float
    bound_mu: float
    err_rect: float
    err_sph: float
    bound_cut: float
    status: str  # "verified" | "unverified"
    report: CheckReport


@dataclass(frozen=True, eq=False)
class ApproxTrace:
    """Greedy selection result: per-step records plus the selected sum."""

    steps: tuple
    coeffs: SparseCoeffs2D

    @property
    def blocks(self):
        return tuple(s.block for s in self.steps)

    @property
    def ok(self):
        return all(s.status == "verified" for s in self.steps)


def _join_ranks(*pairs):
    return (max(p for p, _ in pairs), max(q for _, q in pairs))


def _shape_ranks(f):
    if isinstance(f, StepFunction2D):
        return f.min_ranks
    if isinstance(f, DyadicGrid2D):
        return f.ranks
    raise TypeError("target must be a StepFunction2D or DyadicGrid2D")


def _vals_at(obj, ranks):
    if isinstance(obj, StepFunction2D):
        return obj.to_grid(ranks).values
    if isinstance(obj, DyadicGrid2D):
        return obj.refine(ranks).values
    return obj.to_grid(ranks).values  # SparseCoeffs2D


def _wint(vals, weight_vals, ranks, mask=None):
    # integral of |vals| * weight, optionally restricted to mask
    a = np.abs(vals) * weight_vals
    if mask is not None:
        a = a[mask]
    return float(a.sum()) / (1 << (ranks[0] + ranks[1]))


class _WeightGrids:
    """Per-rank cache of rendered weight values."""

    def __init__(self, weight):
        self.weight = weight
        self._cache = {}

    def at(self, ranks):
        if ranks not in self._cache:
            self._cache[ranks] = self.weight.to_grid(ranks).values
        return self._cache[ranks]


def _block_prefix_grids(coeffs, lo, hi, ranks, kind):
    """Yield (grid values or None, label) for every distinct partial-sum cut
    of a block polynomial in its window; None stands for the empty sum."""
    if kind == "rect":
        uks = sorted(set(int(k) for k in coeffs.ks))
        unus = sorted(set(int(v) for v in coeffs.nus))
        for tx in checker.realized_prefixes(uks, lo, hi):
            kmax = uks[tx - 1] if tx else lo - 1
            for ty in checker.realized_prefixes(unus, lo, hi):
                nmax = unus[ty - 1] if ty else lo - 1
                sel = coeffs.select((coeffs.ks <= kmax) & (coeffs.nus <= nmax))
                yield (sel.to_grid(ranks).values if sel.nnz else None), (kmax, nmax)
    else:
        radii = coeffs.radii_sq()
        for r_sq in checker.sph_thresholds(radii, 2 * lo * lo, 2 * hi * hi):
            sel = coeffs.select(radii <= r_sq)
            yield (sel.to_grid(ranks).values if sel.nnz else None), r_sq


def greedy_subseries(f, series, blocks, weight, steps):
    """Select blocks greedily so their sum tracks `f` in the weighted norm.

    Step q admits block n past the previous pick (past level start+1 at the
    first step) when the weighted distance from the current residual to the
    block's target is under the step budget (4^-1 once, then 2*4^-q); the
    smallest admissible index wins.  Each step then certifies the residual,
    the block-vs-target error at the block's own scale, and the error of
    every distinct rectangular and annular cut of the selected sum, against
    21*4^-q; failing certificates mark the step "unverified".
    """
    steps = int(steps)
    if steps < 1:
        raise ValueError("need at least one step")
    blocks = list(blocks)
    if len(blocks) != series.depth:
        raise ValueError("need one block record per series block")
    if any(b.index != i + 1 for i, b in enumerate(blocks)):
        raise ValueError("blocks must form the contiguous tower 1..depth")
    if weight.depth != series.depth:
        raise ValueError("weight depth does not match the series")

    top_rank = checker._rank_for(series.coeffs.top())
    base = _join_ranks(weight.min_ranks, _shape_ranks(f), (top_rank, top_rank))
    wg = _WeightGrids(weight)

    sub = SparseCoeffs2D.empty()
    out = []
    prev = weight.start + 1  # first pick must land strictly past start+1
    for q in range(1, steps + 1):
        sel_bound = 0.25 if q == 1 else 2.0 * 4.0 ** (-q)
        chosen = None
        best = math.inf
        for n in range(prev + 1, series.depth + 1):
            cand = blocks[n - 1].target
            ranks = _join_ranks(base, cand.min_ranks)
            w = wg.at(ranks)
            resid = _vals_at(f, ranks) - _vals_at(sub, ranks) - _vals_at(cand, ranks)
            err = _wint(resid, w, ranks)
            best = min(best, err)
            if err < sel_bound:
                chosen = n
                break
        if chosen is None:
            exc = TargetNotApproximable(
                f"step {q}: no block past index {prev} within {sel_bound:.3g} "
                f"(best candidate distance {best:.3g})",
                step=q,
                best=best,
            )
            exc.trace = ApproxTrace(tuple(out), sub)
            raise exc

        rec = blocks[chosen - 1]
        sub = SparseCoeffs2D.merge([sub, rec.coeffs])
        bound_mu = 2.0 * 4.0 ** (-q)
        bound_cut = 21.0 * 4.0 ** (-q)

        ranks = _join_ranks(base, rec.target.min_ranks)
        w = wg.at(ranks)
        f_vals = _vals_at(f, ranks)
        sub_vals = _vals_at(sub, ranks)
        block_vals = (
            rec.coeffs.to_grid(ranks).values
            if rec.coeffs.nnz
            else np.zeros_like(f_vals)
        )
        prior_vals = sub_vals - block_vals

        err_mu = _wint(f_vals - sub_vals, w, ranks)
        items = [_strict("residual", err_mu, bound_mu)]
        tgt_gap = _wint(_vals_at(rec.target, ranks) - block_vals, w, ranks)
        items.append(_strict("block_vs_target", tgt_gap, 4.0 ** (-rec.index)))

        err_rect = err_sph = block_cut_w = 0.0
        n_rect = n_sph = 0
        for kind in ("rect", "sph"):
            for pv, _label in _block_prefix_grids(rec.coeffs, rec.lo, rec.hi, ranks, kind):
                cut_vals = prior_vals if pv is None else prior_vals + pv
                err = _wint(cut_vals - f_vals, w, ranks)
                if pv is not None:
                    block_cut_w = max(block_cut_w, _wint(pv, w, ranks))
                if kind == "rect":
                    err_rect = max(err_rect, err)
                    n_rect += 1
                else:
                    err_sph = max(err_sph, err)
                    n_sph += 1
        items.append(_strict("rect_cuts", err_rect, bound_cut, f"{n_rect} cuts"))
        items.append(_strict("sph_cuts", err_sph, bound_cut, f"{n_sph} cuts"))
        items.append(_strict("block_cuts_weighted", block_cut_w, 19.0 * 4.0 ** (-q)))

        report = CheckReport(tuple(items))
        out.append(
            ApproxStep(
                step=q,
                block=chosen,
                err_mu=err_mu,
                bound_mu=bound_mu,
                err_rect=err_rect,
                err_sph=err_sph,
                bound_cut=bound_cut,
                status="verified" if report.ok else "unverified",
                report=report,
            )
        )
        prev = chosen
    return ApproxTrace(tuple(out), sub)


# ---------------------------------------------------------------------------
# whole-construction verification


def verify_construction(series, blocks, weight):
    """Recompute the weighted tail estimates the construction promises.

    For every level s from the weight's start: the worst rectangular and
    annular partial-sum cut of block s integrated off level set s (bound
    4^-s / 3), the weighted block-vs-target error (bound 4^-s), and the
    same cuts integrated over the whole square against twice the target's
    weighted mass plus 4^-s.  Also reports the whole-series power sums at
    exponents 2.1, 2.5, 3 as finite-tail evidence.  Failures land in the
    report; nothing raises.
    """
    blocks = list(blocks)
    if len(blocks) != series.depth:
        raise ValueError("need one block record per series block")
    if weight.depth != series.depth:
        raise ValueError("weight depth does not match the series")
    if series.depth == 0:
        return CheckReport(())

    wg = _WeightGrids(weight)
    omega = {n: om for n, om, _ in weight.levels}
    items = []
    for s in range(weight.start, series.depth + 1):
        rec = blocks[s - 1]
        top_rank = checker._rank_for(rec.hi - 1)
        ranks = _join_ranks(weight.min_ranks, rec.target.min_ranks, (top_rank, top_rank))
        w = wg.at(ranks)
        off = ~omega[s].refine(ranks).mask
        bound_off = 4.0 ** (-s) / 3.0

        tgt_vals = rec.target.to_grid(ranks).values
        block_vals = (
            rec.coeffs.to_grid(ranks).values
            if rec.coeffs.nnz
            else np.zeros_like(tgt_vals)
        )
        tgt_mass = _wint(tgt_vals, w, ranks)

        for kind in ("rect", "sph"):
            off_max = full_max = 0.0
            count = 0
            for pv, _label in _block_prefix_grids(rec.coeffs, rec.lo, rec.hi, ranks, kind):
                count += 1
                if pv is None:
                    continue
                off_max = max(off_max, _wint(pv, w, ranks, mask=off))
                full_max = max(full_max, _wint(pv, w, ranks))
            note = f"{count} cuts"
            items.append(_strict(f"off_level_{kind}_s{s}", off_max, bound_off, note))
            items.append(
                _strict(
                    f"weighted_{kind}_s{s}",
                    full_max,
                    2.0 * tgt_mass + 4.0 ** (-s),
                    note,
                )
            )
        gap = _wint(block_vals - tgt_vals, w, ranks)
        items.append(_strict(f"block_error_s{s}", gap, 4.0 ** (-s)))

    for expo in (2.1, 2.5, 3.0):
        items.append(
            CheckItem(
                f"tail_norm_q{expo:g}",
                None,
                series.coeffs.power_norm(expo),
                "whole-series power sum",
            )
        )
    return CheckReport(tuple(items))
