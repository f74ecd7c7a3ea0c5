"""Independent verification of matching-polynomial results.

Everything here re-derives its verdicts from coefficients, masks, and step
functions using only the grid and series primitives — no construction code.
Each verdict is a CheckItem with a signed margin (nonnegative = satisfied);
`ok=None` marks a condition a mode explicitly does not claim.

Quantifiers are discharged exactly:
  - "for every subset e" reduces to worst_subset_margin (cellwise relu sum);
  - "for every cut" reduces to the finitely many realized prefix classes /
    squared-radius thresholds, enumerated below.

Tolerance policy: a strict inequality passes only with margin >= 1e-9; a
non-strict one tolerates -1e-12; cellwise equalities must agree to 1e-9.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .grids import DyadicGrid1D, DyadicGrid2D, StepFunction2D, walsh_signs
from .series import worst_subset_margin

__all__ = [
    "STRICT_EPS",
    "LOOSE_EPS",
    "CheckItem",
    "CheckReport",
    "realized_prefixes",
    "sph_thresholds",
    "verify_band_match",
    "verify_tensor_match",
    "verify_step_match",
    "cut_budget_vs_target",
]

STRICT_EPS = 1e-9  # strict "<" passes only when bound - value >= this
LOOSE_EPS = 1e-12  # non-strict "<=" tolerates this much overshoot


@dataclass(frozen=True)
class CheckItem:
    name: str
    ok: bool | None  # None: not claimed (e.g. spherical bounds in rect mode)
    margin: float
    note: str = ""


@dataclass(frozen=True)
class CheckReport:
    items: tuple

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    @property
    def ok(self):
        return all(it.ok is not False for it in self.items)

    def item(self, name):
        for it in self.items:
            if it.name == name:
                return it
        raise KeyError(name)

    @property
    def worst(self):
        claimed = [it.margin for it in self.items if it.ok is not None]
        return min(claimed) if claimed else math.inf

    def lines(self):
        out = []
        for it in self.items:
            verdict = "SKIP" if it.ok is None else ("PASS" if it.ok else "FAIL")
            suffix = f"  [{it.note}]" if it.note else ""
            out.append(f"{verdict}  {it.name}  margin={it.margin:+.3e}{suffix}")
        return out


def _strict(name, value, bound, note=""):
    m = bound - value
    return CheckItem(name, bool(m >= STRICT_EPS), float(m), note)


def _loose(name, value, bound, note=""):
    m = bound - value
    return CheckItem(name, bool(m >= -LOOSE_EPS), float(m), note)


def _cellwise(name, deviation, note=""):
    return CheckItem(name, bool(deviation <= STRICT_EPS), float(STRICT_EPS - deviation), note)


def _rank_for(top):
    # smallest rank whose grid resolves frequency `top`
    return max(int(top).bit_length(), 0)


# ---------------------------------------------------------------------------
# cut enumeration


def realized_prefixes(ks, lo, hi):
    """Prefix lengths t of the sorted frequencies ks realized by some
    threshold m in [lo, hi): the partial sum over k <= m keeps exactly ks[:t].
    """
    ks = [int(k) for k in ks]
    out = []
    for t in range(len(ks) + 1):
        left = lo if t == 0 else max(lo, ks[t - 1])
        right = hi if t == len(ks) else min(hi, ks[t])
        if left < right:
            out.append(t)
    return out


def sph_thresholds(radii, lo_sq, hi_sq):
    """Squared radii R^2 in [lo_sq, hi_sq] at which the annulus sum changes,
    ascending; a leading lo_sq marks the empty annulus when it is realized."""
    rs = sorted(set(int(r) for r in radii if lo_sq <= r <= hi_sq))
    if not rs or rs[0] > lo_sq:
        return [int(lo_sq)] + rs
    return rs


# ---------------------------------------------------------------------------
# 1-D conditions


def verify_band_match(f, start, tol, coeffs, keep):
    """Check the four matching conditions for a 1-D band polynomial.

    f: StepFunction1D target; start: lowest allowed frequency; tol: the
    shared bound for the keep-measure, power-sum, and prefix-budget
    conditions; coeffs/keep: the candidate polynomial and matching set.
    """
    tol = float(tol)
    tol_frac = Fraction(tol)
    ks, cs = coeffs.ks, coeffs.cs
    items = []

    if ks.size:
        items.append(
            CheckItem("band_support", bool(ks[0] >= start), float(int(ks[0]) - start))
        )
    else:
        items.append(CheckItem("band_support", True, 0.0, "empty polynomial"))

    rank = max(keep.rank, f.min_rank, _rank_for(coeffs.top()))
    p_vals = coeffs.to_grid(rank).values if ks.size else np.zeros(1 << rank)
    f_vals = f.to_grid(rank).values
    mask = keep.refine(rank).mask
    dev = float(np.max(np.abs(p_vals - f_vals)[mask])) if mask.any() else 0.0
    items.append(_cellwise("match_on_keep", dev, f"sup dev {dev:.2e}"))

    measure_margin = keep.measure_exact - (1 - tol_frac)
    items.append(
        CheckItem("keep_measure", bool(measure_margin >= STRICT_EPS), float(measure_margin))
    )

    items.append(_strict("power_sum", coeffs.power_norm(2.0 + tol), tol))

    # every threshold m in [start, top) and every e subset of keep:
    # integral_e |prefix sum| < tol + integral_e |f|
    budget = DyadicGrid1D(rank, np.abs(f_vals))
    keep_r = keep.refine(rank)
    worst = 0.0
    running = np.zeros(1 << rank)
    prefixes = realized_prefixes(ks, start, coeffs.top(default=start))
    done = 0
    for t in prefixes:
        for j in range(done, t):
            running += cs[j] * walsh_signs([int(ks[j])], rank)[0]
        done = t
        m = worst_subset_margin(DyadicGrid1D(rank, running), budget, keep_r)
        worst = max(worst, m)
    items.append(_strict("prefix_budget", worst, tol, f"{len(prefixes)} prefix classes"))
    return CheckReport(tuple(items))


# ---------------------------------------------------------------------------
# 2-D sweeps


def _grid_ranks(coeffs, keep, min_ranks=(0, 0)):
    p = max(_rank_for(int(coeffs.ks.max())) if coeffs.nnz else 0, keep.ranks[0], min_ranks[0])
    q = max(_rank_for(int(coeffs.nus.max())) if coeffs.nnz else 0, keep.ranks[1], min_ranks[1])
    return (p, q)


def _tensor_factors(coeffs):
    """Recover (uks, unus, a, b) if coeffs is an outer product, else None."""
    if not coeffs.nnz:
        return None
    uks, kinv = np.unique(coeffs.ks, return_inverse=True)
    unus, ninv = np.unique(coeffs.nus, return_inverse=True)
    if coeffs.nnz != uks.size * unus.size:
        return None
    dense = np.zeros((uks.size, unus.size))
    dense[kinv, ninv] = coeffs.cs
    i0, j0 = np.unravel_index(np.argmax(np.abs(dense)), dense.shape)
    pivot = dense[i0, j0]
    a = dense[:, j0]
    b = dense[i0, :] / pivot
    if np.max(np.abs(dense - np.multiply.outer(a, b))) > 1e-12 * abs(pivot):
        return None
    return uks, unus, a, b


def _prefix_abs_grids(freqs, weights, rank, prefix_lengths):
    """|partial sum| grid per prefix length, as a (len(prefixes), 2^rank) array."""
    out = np.zeros((len(prefix_lengths), 1 << rank))
    running = np.zeros(1 << rank)
    done = 0
    for row, t in enumerate(prefix_lengths):
        for j in range(done, t):
            running += weights[j] * walsh_signs([int(freqs[j])], rank)[0]
        done = t
        out[row] = np.abs(running)
    return out


def _rect_sweep_max(coeffs, keep, lo, hi, work_cap):
    """max over realized rectangular cuts (n, m in [lo, hi)) of the integral
    of |S_{n,m}| over `keep`.  Exact; tensor inputs use mask bilinear forms."""
    if not coeffs.nnz:
        return 0.0, 1
    p, q = keep.ranks
    area = 1.0 / (1 << (p + q))
    mask = keep.mask.astype(np.float64)
    fac = _tensor_factors(coeffs)
    if fac is not None:
        uks, unus, a, b = fac
        txs = realized_prefixes(uks, lo, hi)
        tys = realized_prefixes(unus, lo, hi)
        # integral over keep of |A(x)||B(y)| = a^T . mask . b: precompute the
        # x side for every prefix, stream the y side one prefix at a time
        aa = _prefix_abs_grids(uks, a, p, txs)
        am = aa @ mask  # (n_tx, 2^q)
        best = 0.0
        running = np.zeros(1 << q)
        done = 0
        for ty in tys:
            for j in range(done, ty):
                running += b[j] * walsh_signs([int(unus[j])], q)[0]
            done = ty
            best = max(best, float((am @ np.abs(running)).max()))
        return best * area, len(txs) * len(tys)
    uks = sorted(set(int(k) for k in coeffs.ks))
    unus = sorted(set(int(v) for v in coeffs.nus))
    txs = realized_prefixes(uks, lo, hi)
    tys = realized_prefixes(unus, lo, hi)
    cells = 1 << (p + q)
    if len(txs) * len(tys) * cells > min(work_cap, 2 * 10**8):
        raise MemoryError("rectangular sweep exceeds the work cap")
    best = 0.0
    for tx in txs:
        kmax = uks[tx - 1] if tx else lo - 1
        for ty in tys:
            nmax = unus[ty - 1] if ty else lo - 1
            sel = coeffs.select((coeffs.ks <= kmax) & (coeffs.nus <= nmax))
            if sel.nnz:
                g = np.abs(sel.to_grid((p, q)).values)
                best = max(best, float((g * mask).sum()) * area)
    return best, len(txs) * len(tys)


def _sph_sweep_max(coeffs, keep, lo_sq, hi_sq, work_cap):
    """max over annulus cuts (lo_sq <= k^2+nu^2 <= R^2 <= hi_sq) of the
    integral of |S| over `keep`.

    Returns (value, n_cuts, exact_flag): exact incremental synthesis when the
    work fits the cap; else a sound tensor upper bound (outer products with
    separated bands); else the L2 energy bound.  Never raises past the cap —
    a bound that fails the budget reads as "not verified at this scale".
    """
    if not coeffs.nnz:
        return 0.0, 1, True
    p, q = keep.ranks
    cells = 1 << (p + q)
    area = 1.0 / cells
    radii = coeffs.radii_sq()
    cuts = sph_thresholds(radii, lo_sq, hi_sq)
    mask = keep.mask.astype(np.float64)
    if len(cuts) * cells <= work_cap:
        order = np.argsort(radii, kind="stable")
        running = np.zeros((1 << p, 1 << q))
        best = 0.0
        done = 0
        for r_sq in cuts:
            while done < order.size and radii[order[done]] <= r_sq:
                idx = order[done]
                if radii[idx] >= lo_sq:
                    wk = walsh_signs([int(coeffs.ks[idx])], p)[0]
                    wn = walsh_signs([int(coeffs.nus[idx])], q)[0]
                    running += coeffs.cs[idx] * np.multiply.outer(wk, wn)
                done += 1
            best = max(best, float((np.abs(running) * mask).sum()) * area)
        return best, len(cuts), True
    # too big to synthesize every cut: fall back to sound upper bounds.  Last
    # resort is Parseval + Cauchy-Schwarz over the coefficients any annulus
    # in the window could keep; the tensor route below is much tighter.
    in_window = (radii >= lo_sq) & (radii <= hi_sq)
    l2_bound = float(np.sqrt(np.sum(coeffs.cs[in_window] ** 2)))
    fac = _tensor_factors(coeffs)
    if fac is None:
        return l2_bound, len(cuts), False
    ka, kb, av, bv = fac
    # frequency-separated axes: radii group strictly by the y-frequency
    # (adjacent y rows differ by 2*min_y+1 > x-band spread), so an annulus is
    # a full tensor block (all x, lower y-rows) plus one partial row; bound
    # the integral by the two pieces separately (triangle inequality), each
    # factoring exactly through the mask bilinear form
    if ka.size > 1 and 2 * int(kb[0]) + 1 <= int(ka[-1]) ** 2 - int(ka[0]) ** 2:
        return l2_bound, len(cuts), False
    if lo_sq > int(ka[0]) ** 2 + int(kb[0]) ** 2:
        return l2_bound, len(cuts), False
    xa = _prefix_abs_grids(ka, av, p, list(range(ka.size + 1)))
    rowsum_x = xa @ mask  # (#x-prefixes, 2^q)
    full_row = rowsum_x[-1]  # (2^q,)
    best = 0.0
    n_cuts = 0
    running_b = np.zeros(1 << q)
    for j, s in enumerate(kb):
        w_s = walsh_signs([int(s)], q)[0]
        for tx in range(1, ka.size + 1):
            r_sq = int(ka[tx - 1]) ** 2 + int(s) ** 2
            if not lo_sq <= r_sq <= hi_sq:
                continue
            n_cuts += 1
            whole = float(full_row @ np.abs(running_b)) * area
            partial = float(rowsum_x[tx] @ np.abs(bv[j] * w_s)) * area
            best = max(best, whole + partial)
        running_b += bv[j] * w_s
    if n_cuts == 0:
        best = 0.0  # only the empty annulus is realized
    return best, max(n_cuts, 1), False


def verify_tensor_match(gamma, delta, start, tol, coeffs, keep, mode="strict", work_cap=2 * 10**9):
    """Check the square-matching conditions for a 2-D product polynomial.

    delta is the target DyadicRect, gamma its height.  In "rect" mode only a
    unit frequency gap between the axis bands is required and the spherical
    part of the cut budget is reported as not claimed.
    """
    tol = float(tol)
    tol_frac = Fraction(tol)
    items = []
    top = coeffs.top(default=start)

    if coeffs.nnz:
        kmin, kmax = int(coeffs.ks.min()), int(coeffs.ks.max())
        nmin = int(coeffs.nus.min())
        items.append(CheckItem("support_band", bool(kmin >= start), float(kmin - start)))
        gap_floor = 2 * (kmax**2 + 1) if mode == "strict" else kmax + 1
        items.append(
            CheckItem(
                "band_separation",
                bool(nmin >= gap_floor),
                float(nmin - gap_floor),
                f"y-band floor {gap_floor}",
            )
        )
    else:
        items.append(CheckItem("support_band", True, 0.0, "empty polynomial"))
        items.append(CheckItem("band_separation", True, 0.0, "empty polynomial"))

    target = StepFunction2D(((delta, gamma),))
    ranks = _grid_ranks(coeffs, keep, target.min_ranks)
    p_vals = coeffs.to_grid(ranks).values
    f_vals = target.to_grid(ranks).values
    mask = keep.refine(ranks).mask
    dev = float(np.max(np.abs(p_vals - f_vals)[mask])) if mask.any() else 0.0
    items.append(_cellwise("match_on_keep", dev, f"sup dev {dev:.2e}"))

    measure_margin = keep.measure_exact - (1 - tol_frac)
    items.append(
        CheckItem("keep_measure", bool(measure_margin >= STRICT_EPS), float(measure_margin))
    )
    items.append(_strict("power_sum", coeffs.power_norm(2.0 + tol), tol))

    # cut budget: max over rectangular cuts plus max over annulus cuts of the
    # integral over e, for every e inside keep; both integrands are
    # nonnegative with a constant budget, so e = keep is the worst subset
    bound = abs(float(gamma)) * 16.0 * float(delta.measure)
    keep_r = keep.refine(ranks)
    rect_max, n_rect = _rect_sweep_max(coeffs, keep_r, start, top + 1, work_cap)
    if mode == "strict":
        sph_max, n_sph, exact = _sph_sweep_max(
            coeffs, keep_r, 2 * start**2, 2 * top**2, work_cap
        )
        note = f"{n_rect} rect + {n_sph} sph cuts, {'exact' if exact else 'bounded'} sweep"
        items.append(_loose("cut_budget", rect_max + sph_max, bound, note))
    else:
        items.append(_loose("cut_budget", rect_max, bound, f"{n_rect} rect cuts"))
        items.append(CheckItem("sph_cut_budget", None, 0.0, "not claimed in rect mode"))
    return CheckReport(tuple(items))


# ---------------------------------------------------------------------------
# e-dependent cut budgets (shared by the multi-rectangle and block checks)


def cut_budget_vs_target(
    coeffs,
    target_abs,
    keep,
    eps,
    rect_lo,
    rect_hi,
    sph_lo_sq,
    sph_hi_sq,
    pair_cap=10**6,
    work_cap=2 * 10**9,
):
    """Discharge: for every subset e of keep, every rectangular cut in
    [rect_lo, rect_hi) and every annulus cut in [sph_lo_sq, sph_hi_sq],
    integral_e|S_rect| + integral_e|S_ann| <= 2*integral_e(target_abs) + eps.

    target_abs: DyadicGrid2D of |f|.  Exact pair enumeration when it fits the
    caps (max and sup over e commute, so checking every cut pair is exact);
    otherwise the sound split bound.  Returns a CheckItem whose note names
    the mode that ran.
    """
    eps = float(eps)
    ranks = keep.ranks
    cells = 1 << (ranks[0] + ranks[1])
    keep_mask = keep.mask
    budget = DyadicGrid2D(ranks, 2.0 * target_abs.values)

    if not coeffs.nnz:
        return _loose("cut_budget", 0.0, eps, "empty polynomial")

    # every partial sum (any cut shape) keeps a subset of the coefficients,
    # so by Parseval + Cauchy-Schwarz integral_e|S| <= sqrt(sum c^2); when
    # twice that clears eps the whole quantified family passes at once
    energy = float(np.dot(coeffs.cs, coeffs.cs))
    if 2.0 * math.sqrt(energy) <= eps:
        return _loose(
            "cut_budget", 2.0 * math.sqrt(energy), eps, "L2 energy bound, all cuts"
        )

    uks = sorted(set(int(k) for k in coeffs.ks))
    unus = sorted(set(int(v) for v in coeffs.nus))
    txs = realized_prefixes(uks, rect_lo, rect_hi)
    tys = realized_prefixes(unus, rect_lo, rect_hi)
    radii = coeffs.radii_sq()
    cuts = sph_thresholds(radii, sph_lo_sq, sph_hi_sq)
    n_rect = len(txs) * len(tys)
    n_pairs = n_rect * len(cuts)
    grid_budget = (n_rect + len(cuts)) * cells <= 2 * 10**8

    if n_pairs <= pair_cap and n_pairs * cells <= work_cap and grid_budget:
        rect_grids = []
        for tx in txs:
            kmax = uks[tx - 1] if tx else rect_lo - 1
            for ty in tys:
                nmax = unus[ty - 1] if ty else rect_lo - 1
                sel = coeffs.select((coeffs.ks <= kmax) & (coeffs.nus <= nmax))
                vals = sel.to_grid(ranks).values if sel.nnz else np.zeros((1 << ranks[0], 1 << ranks[1]))
                rect_grids.append(np.abs(vals))
        sph_grids = []
        for r_sq in cuts:
            sel = coeffs.select((radii >= sph_lo_sq) & (radii <= r_sq))
            vals = sel.to_grid(ranks).values if sel.nnz else np.zeros((1 << ranks[0], 1 << ranks[1]))
            sph_grids.append(np.abs(vals))
        worst = 0.0
        for rg in rect_grids:
            for sg in sph_grids:
                m = worst_subset_margin(DyadicGrid2D(ranks, rg + sg), budget, keep)
                worst = max(worst, m)
        return _loose("cut_budget", worst, eps, f"exact pairs ({n_pairs})")

    # split bound: pull the spherical max out of the subset quantifier
    if n_rect * cells <= min(work_cap, 2 * 10**8):
        rect_worst = 0.0
        for tx in txs:
            kmax = uks[tx - 1] if tx else rect_lo - 1
            for ty in tys:
                nmax = unus[ty - 1] if ty else rect_lo - 1
                sel = coeffs.select((coeffs.ks <= kmax) & (coeffs.nus <= nmax))
                if sel.nnz:
                    g = sel.to_grid(ranks)
                    rect_worst = max(rect_worst, worst_subset_margin(g, budget, keep))
        rect_note = f"{n_rect} rect"
    else:
        rect_worst = math.sqrt(energy)  # budget >= 0, so relu part <= integral|S|
        rect_note = f"{n_rect} rect bounded by L2"
    sph_max, n_sph, exact = _sph_sweep_max(coeffs, keep, sph_lo_sq, sph_hi_sq, work_cap)
    note = f"split bound ({rect_note} x {n_sph} sph, {'exact' if exact else 'bounded'} sph)"
    return _loose("cut_budget", rect_worst + sph_max, eps, note)


def verify_step_match(f, start, tol, coeffs, keep, pair_cap=10**6, work_cap=2 * 10**9):
    """Check the four matching conditions for a multi-rectangle target.

    f: StepFunction2D; tol: the shared bound; the cut budget uses the
    e-dependent form 2*integral_e|f| + tol with rectangular cuts in
    [start, top) and annuli between sqrt(2)*start and sqrt(2)*top.
    """
    tol = float(tol)
    tol_frac = Fraction(tol)
    items = []
    top = coeffs.top(default=start)

    if coeffs.nnz:
        fmin = int(min(coeffs.ks.min(), coeffs.nus.min()))
        items.append(CheckItem("support_band", bool(fmin >= start), float(fmin - start)))
    else:
        items.append(CheckItem("support_band", True, 0.0, "empty polynomial"))

    ranks = _grid_ranks(coeffs, keep, f.min_ranks)
    p_vals = coeffs.to_grid(ranks).values
    f_vals = f.to_grid(ranks).values
    mask = keep.refine(ranks).mask
    dev = float(np.max(np.abs(p_vals - f_vals)[mask])) if mask.any() else 0.0
    items.append(_cellwise("match_on_keep", dev, f"sup dev {dev:.2e}"))

    measure_margin = keep.measure_exact - (1 - tol_frac)
    items.append(
        CheckItem("keep_measure", bool(measure_margin >= STRICT_EPS), float(measure_margin))
    )
    items.append(_strict("power_sum", coeffs.power_norm(2.0 + tol), tol))

    keep_r = keep.refine(ranks)
    target_abs = DyadicGrid2D(ranks, np.abs(f_vals))
    items.append(
        cut_budget_vs_target(
            coeffs,
            target_abs,
            keep_r,
            tol,
            rect_lo=start,
            rect_hi=top,
            sph_lo_sq=2 * start**2,
            sph_hi_sq=2 * top**2,
            pair_cap=pair_cap,
            work_cap=work_cap,
        )
    )
    return CheckReport(tuple(items))
