"""Search procedures that produce verified matching polynomials.

Builders only propose candidates; every returned result has been judged by
the independent `checker` module and carries its report.  A failed search
raises ConstructionFailed with the best report seen, so the caller can tell
which condition blocked it and by how much.

The three levels mirror each other:

  band_match_1d    one step function, one frequency band
  tensor_match_2d  a scaled rectangle, as a product of two 1-D bands
  step_match_2d    a multi-rectangle step function, one tensor build per piece

Measure comparisons that decide a construction path are done in exact
rational arithmetic with a 1e-9 safety gap, so float noise can never flip a
branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import checker
from .errors import ConstructionFailed, FrequencyBudgetExceeded
from .grids import (
    DyadicRect,
    DyadicSet1D,
    DyadicSet2D,
    StepFunction1D,
    StepFunction2D,
    as_dyadic,
    fwht,
    product_set,
)
from .series import SparseCoeffs1D, SparseCoeffs2D

__all__ = [
    "BuildLimits",
    "BandMatch1D",
    "TensorMatch2D",
    "StepMatch2D",
    "band_match_1d",
    "tensor_match_2d",
    "step_match_2d",
]

# measure inequalities must clear this gap before a branch is taken
THIN_SLACK = Fraction(1, 10**9)


@dataclass(frozen=True)
class BuildLimits:
    """Search budget shared by all builders.

    fmax caps every frequency (per axis in 2-D); max_rank caps 1-D working
    grids; retries counts randomized placements per band candidate, on top
    of the two deterministic ones; max_attempts caps total candidates tried
    per 1-D search; seed feeds the placement generator.
    """

    fmax: int = 1 << 14
    max_rank: int = 14
    retries: int = 4
    max_attempts: int = 256
    pair_cap: int = 10**6
    work_cap: int = 2 * 10**9
    seed: int = 0


DEFAULT_LIMITS_2D = BuildLimits(fmax=1 << 10)


def _ceil_log2(n):
    return (int(n) - 1).bit_length()


def _band_rank_cap(fmax):
    # largest rank whose top frequency 2^r - 1 still fits the cap
    return (int(fmax) + 1).bit_length() - 1


def _as_tol(tol):
    t = Fraction(tol)
    if not 0 < t < 1:
        raise ValueError(f"tolerance must lie in (0, 1), got {tol}")
    return t


# ---------------------------------------------------------------------------
# 1-D: one band above `start` matching a step function off a small set


@dataclass(frozen=True, eq=False)
class BandMatch1D:
    coeffs: SparseCoeffs1D
    keep: DyadicSet1D
    start: int
    tol: float
    top: int  # highest frequency used; == start for the empty polynomial
    report: checker.CheckReport
    detail: dict = field(default_factory=dict)


def _placements(A, beta, K, limits):
    """Subcell choices for the reflected mass, deterministic ones first.

    Yields (label, chooser); chooser maps an active cell index to the K
    subcell offsets that receive the reflection.
    """
    sub = 1 << beta
    tail = np.arange(sub - K, sub)
    head = np.arange(K)
    yield "tail", lambda c: tail
    yield "head", lambda c: head
    for r in range(limits.retries):
        rng = np.random.default_rng([limits.seed, A, beta, K, r])
        yield f"random{r}", lambda c, rng=rng: rng.choice(sub, size=K, replace=False)


def _reflect(f_vals_A, A, beta, K, chooser):
    """Push each rank-A cell value into a mean-zero rank-(A+beta) profile.

    The K chosen subcells of every active cell absorb -value*L/K (L = the
    other subcell count), which cancels the cell mean exactly, so the
    analysis coefficients below 2^A vanish and the polynomial lives in the
    band [2^A, 2^(A+beta)).  Returns (coeffs, keep) or None when the low
    block fails to cancel to float precision.
    """
    sub = 1 << beta
    L = sub - K
    n = f_vals_A.size << beta
    g = np.repeat(f_vals_A, sub)
    xmask = np.zeros(n, dtype=bool)
    for c in np.flatnonzero(f_vals_A):
        cols = c * sub + np.asarray(chooser(c))
        g[cols] = -f_vals_A[c] * L / K
        xmask[cols] = True
    coeffs_all = fwht(g)
    low = 1 << A
    if np.max(np.abs(coeffs_all[:low])) > 1e-9:
        return None
    band = coeffs_all[low:]
    scale = np.max(np.abs(band)) if band.size else 0.0
    live = np.flatnonzero(np.abs(band) > 1e-15 * scale)
    coeffs = SparseCoeffs1D(live + low, band[live])
    return coeffs, DyadicSet1D(A + beta, ~xmask)


def band_match_1d(f, start, tol, limits=None):
    """Find a polynomial on frequencies >= start equal to f off a set of
    measure < tol, with small power sum and controlled partial sums.

    Thin targets (support measure within tol) are matched by the zero
    polynomial off their own support.  Otherwise candidate bands
    (2^A <= start band bottom, width 2^beta, K reflected subcells) are tried
    in order of predicted coefficient energy until the checker passes.
    """
    if not isinstance(f, StepFunction1D):
        raise TypeError("target must be a StepFunction1D")
    start = int(start)
    if start < 1:
        raise ValueError("start frequency must be >= 1")
    limits = limits if limits is not None else BuildLimits()
    tol_frac = _as_tol(tol)
    tol_f = float(tol_frac)

    if f.support_measure() <= tol_frac - THIN_SLACK:
        keep = f.support_mask(f.min_rank).complement()
        coeffs = SparseCoeffs1D.empty()
        report = checker.verify_band_match(f, start, tol_f, coeffs, keep)
        if not report.ok:
            raise ConstructionFailed("thin-support match failed verification", report)
        return BandMatch1D(coeffs, keep, start, tol_f, start, report, {"path": "thin"})

    a_min = max(f.min_rank, _ceil_log2(start))
    p_cap = min(limits.max_rank, _band_rank_cap(limits.fmax))
    if a_min + 1 > p_cap:
        raise FrequencyBudgetExceeded(
            f"band bottom 2^{a_min} leaves no room under the frequency cap {limits.fmax}"
        )

    grids = {A: f.to_grid(A).values for A in range(a_min, p_cap)}
    candidates = []
    for A in range(a_min, p_cap):
        vals = grids[A]
        n_active = int(np.count_nonzero(vals))
        sq = float(np.sum(vals * vals))
        for beta in range(1, p_cap - A + 1):
            sub = 1 << beta
            # largest reflected-subcell count the measure budget allows;
            # bigger K spreads the correction thinner, flattening the band
            k_cap = int((tol_frac - THIN_SLACK) * (1 << (A + beta)) / n_active)
            k_cap = min(k_cap, sub - 1)
            if k_cap < 1:
                continue
            ks = {1 << j for j in range(beta)}
            ks |= {sub - 1, k_cap, max(k_cap - 1, 1), (3 * k_cap) // 4, k_cap // 2}
            for K in sorted(k for k in ks if 1 <= k <= k_cap):
                if Fraction(n_active * K, 1 << (A + beta)) > tol_frac - THIN_SLACK:
                    continue
                L = sub - K
                energy = sq * (L + L * L / K) / (1 << (A + beta))
                # the reflected function's exact coefficient energy is known
                # before building, so the Hoelder floor
                #   sum |c|^(2+t) >= energy^(1+t/2) / D^(t/2)
                # rules a candidate out for any placement whatsoever
                d_band = (1 << (A + beta)) - (1 << A)
                floor = energy ** (1 + tol_f / 2) / d_band ** (tol_f / 2)
                if floor >= tol_f - checker.STRICT_EPS:
                    continue
                # cheapest rank first, likeliest power sum within a rank
                candidates.append((A + beta, energy, A, K, beta))
    if not candidates:
        raise FrequencyBudgetExceeded(
            f"no band within frequency cap {limits.fmax} can pass: every"
            f" candidate breaks the measure budget {tol_f} or the power floor"
        )
    candidates.sort()

    best = None
    best_worst = -math.inf
    attempts = 0
    for _, energy, A, K, beta in candidates:
        for label, chooser in _placements(A, beta, K, limits):
            if attempts >= limits.max_attempts:
                raise ConstructionFailed(
                    f"no matching band found in {attempts} attempts", best
                )
            attempts += 1
            built = _reflect(grids[A], A, beta, K, chooser)
            if built is None:
                continue
            coeffs, keep = built
            report = checker.verify_band_match(f, start, tol_f, coeffs, keep)
            if report.ok:
                detail = {
                    "path": "reflect",
                    "A": A,
                    "beta": beta,
                    "K": K,
                    "placement": label,
                    "attempt": attempts,
                    "predicted_energy": energy,
                }
                return BandMatch1D(
                    coeffs, keep, start, tol_f, coeffs.top(), report, detail
                )
            if report.worst > best_worst:
                best, best_worst = report, report.worst
            failed = {it.name for it in report.items if it.ok is False}
            if failed <= {"keep_measure", "band_support"}:
                # |X| and the band bottom don't depend on where the reflected
                # mass sits; more placements of this candidate can't help.
                # Everything else (power sum, prefix sums, the match itself)
                # does change under random scattering, so keep trying.
                break
    raise ConstructionFailed(
        f"no matching band found in {attempts} attempts", best
    )


# ---------------------------------------------------------------------------
# 2-D: a scaled rectangle as a product of two separated bands


@dataclass(frozen=True, eq=False)
class TensorMatch2D:
    coeffs: SparseCoeffs2D
    keep: DyadicSet2D
    start: int
    tol: float
    top: int
    mode: str
    report: checker.CheckReport
    detail: dict = field(default_factory=dict)


def _tensor_attempt(gamma, delta, start, sub_tol, limits, mode):
    """One build at internal tolerance sub_tol; returns parts before the
    final 2-D verification.  Either axis whose interval is thinner than
    sub_tol collapses the whole product to the zero polynomial."""
    if delta.x.measure <= sub_tol - THIN_SLACK:
        keep = product_set(delta.x.mask(delta.x.rank).complement(), DyadicSet1D.full(0))
        return SparseCoeffs2D.empty(), keep, start, {"path": "x-thin"}
    if delta.y.measure <= sub_tol - THIN_SLACK:
        keep = product_set(DyadicSet1D.full(0), delta.y.mask(delta.y.rank).complement())
        return SparseCoeffs2D.empty(), keep, start, {"path": "y-thin"}
    x_res = band_match_1d(StepFunction1D(((delta.x, gamma),)), start, sub_tol, limits)
    n1 = x_res.top
    m0 = 2 * (n1 * n1 + 1) if mode == "strict" else n1 + 1
    if m0 >= limits.fmax:
        raise FrequencyBudgetExceeded(
            f"separated band must start at {m0}, above the frequency cap {limits.fmax}"
        )
    y_res = band_match_1d(StepFunction1D(((delta.y, 1),)), m0, sub_tol, limits)
    coeffs = SparseCoeffs2D.tensor(x_res.coeffs, y_res.coeffs)
    keep = product_set(x_res.keep, y_res.keep)
    detail = {
        "path": "tensor",
        "x": x_res.detail,
        "y": y_res.detail,
        "n1": n1,
        "m0": m0,
    }
    return coeffs, keep, y_res.top, detail


def tensor_match_2d(gamma, delta, start, tol, limits=None, mode="strict"):
    """Match gamma * the indicator of a dyadic rectangle by a polynomial
    supported on a frequency square, off a 2-D set of measure < tol.

    mode "strict" separates the axis bands far enough that annulus cuts
    split cleanly and claims the spherical budget; "rect" only keeps the
    bands disjoint and claims rectangular cuts alone.  The internal 1-D
    tolerance starts at tol/2 and halves when verification fails.
    """
    if mode not in ("strict", "rect"):
        raise ValueError(f"unknown mode {mode!r}")
    if not isinstance(delta, DyadicRect):
        raise TypeError("target region must be a DyadicRect")
    gamma = as_dyadic(gamma)
    if gamma == 0:
        raise ValueError("rectangle height must be nonzero")
    start = int(start)
    if start < 2:
        raise ValueError("start frequency must be >= 2")
    limits = limits if limits is not None else DEFAULT_LIMITS_2D
    tol_frac = _as_tol(tol)
    tol_f = float(tol_frac)

    best = None
    best_worst = -math.inf
    for rung in range(3):
        sub_tol = tol_frac / (2 << rung)
        try:
            coeffs, keep, top, detail = _tensor_attempt(
                gamma, delta, start, sub_tol, limits, mode
            )
        except FrequencyBudgetExceeded:
            if best is None:
                raise
            break
        except ConstructionFailed as exc:
            if exc.report is not None and exc.report.worst > best_worst:
                best, best_worst = exc.report, exc.report.worst
            continue
        report = checker.verify_tensor_match(
            gamma, delta, start, tol_f, coeffs, keep, mode=mode, work_cap=limits.work_cap
        )
        if report.ok:
            detail = dict(detail, sub_tol=float(sub_tol), rung=rung)
            return TensorMatch2D(
                coeffs, keep, start, tol_f, top, mode, report, detail
            )
        if report.worst > best_worst:
            best, best_worst = report, report.worst
    raise ConstructionFailed("no tensor match passed verification", best)


# ---------------------------------------------------------------------------
# 2-D: multi-rectangle step functions, one separated band square per piece


@dataclass(frozen=True, eq=False)
class StepMatch2D:
    coeffs: SparseCoeffs2D
    keep: DyadicSet2D
    start: int
    tol: float
    top: int
    mode: str
    report: checker.CheckReport
    detail: dict = field(default_factory=dict)


def _presplit(pieces, threshold):
    """Bisect the heaviest piece (by |value| * area) along its longer side
    until every product is under threshold, so ranks stay balanced."""
    pieces = list(pieces)
    while pieces:
        weights = [abs(v) * r.measure for r, v in pieces]
        heaviest = max(range(len(pieces)), key=lambda i: (weights[i], -i))
        if weights[heaviest] < threshold:
            break
        rect, v = pieces[heaviest]
        axis_x = rect.x.rank <= rect.y.rank
        side = rect.x if axis_x else rect.y
        lo = type(side)(side.rank + 1, 2 * side.index - 1)
        hi = type(side)(side.rank + 1, 2 * side.index)
        if axis_x:
            halves = [DyadicRect(lo, rect.y), DyadicRect(hi, rect.y)]
        else:
            halves = [DyadicRect(rect.x, lo), DyadicRect(rect.x, hi)]
        pieces[heaviest : heaviest + 1] = [(h, v) for h in halves]
    return pieces


def step_match_2d(f, start, tol, limits=None, mode="strict"):
    """Match a 2-D step function off a set of measure < tol by a polynomial
    on frequencies >= start, one separated frequency square per rectangle.

    Rectangles are pre-split until each carries little mass, then matched in
    turn with shrinking tolerances on consecutive frequency ranges; the kept
    set is the intersection of the per-piece kept sets.
    """
    if mode not in ("strict", "rect"):
        raise ValueError(f"unknown mode {mode!r}")
    if not isinstance(f, StepFunction2D):
        raise TypeError("target must be a StepFunction2D")
    start = int(start)
    if start < 1:
        raise ValueError("start frequency must be >= 1")
    limits = limits if limits is not None else DEFAULT_LIMITS_2D
    tol_frac = _as_tol(tol)
    tol_f = float(tol_frac)

    pieces = _presplit(f.nonzero(), tol_frac / 32)

    best = None
    best_worst = -math.inf
    for rung in range(3):
        shrink = 1 << rung
        nu0 = len(pieces)
        parts = []
        keep = DyadicSet2D.full((0, 0))
        n_next = max(start, 2)
        top = start
        try:
            for nu, (rect, gamma) in enumerate(pieces, 1):
                d_nu = min(
                    tol_frac / (1 << (nu + 4)), tol_frac / (16 * max(nu0, 1))
                ) / shrink
                coeffs_nu, keep_nu, top_nu, detail_nu = _tensor_attempt(
                    gamma, rect, n_next, d_nu, limits, mode
                )
                parts.append((coeffs_nu, detail_nu, n_next, top_nu))
                keep = keep.intersect(keep_nu)
                top = max(top, top_nu)
                n_next = top_nu + 1
        except ConstructionFailed as exc:
            if isinstance(exc, FrequencyBudgetExceeded) and best is None and rung == 0:
                raise
            if exc.report is not None and exc.report.worst > best_worst:
                best, best_worst = exc.report, exc.report.worst
            continue
        coeffs = SparseCoeffs2D.merge([p[0] for p in parts])
        report = checker.verify_step_match(
            f,
            start,
            tol_f,
            coeffs,
            keep,
            pair_cap=limits.pair_cap,
            work_cap=limits.work_cap,
        )
        if report.ok:
            detail = {
                "pieces": nu0,
                "rung": rung,
                "bands": [(p[2], p[3]) for p in parts],
                "parts": [p[1] for p in parts],
            }
            return StepMatch2D(coeffs, keep, start, tol_f, top, mode, report, detail)
        if report.worst > best_worst:
            best, best_worst = report, report.worst
    raise ConstructionFailed("no multi-rectangle match passed verification", best)
