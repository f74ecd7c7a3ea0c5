"""Verification layer: cut enumeration, sweeps, and condition reports.

Every enumeration helper is compared against a brute-force oracle that walks
all integer thresholds (and, for subset quantifiers, all subsets of a small
grid).  Sweep fallback modes are checked for soundness: a bound may only ever
sit above the exact value it replaces.
"""

import itertools
import math

import numpy as np
import pytest

from walsh_universal.checker import (
    CheckItem,
    CheckReport,
    cut_budget_vs_target,
    realized_prefixes,
    sph_thresholds,
    verify_band_match,
    verify_tensor_match,
    _rect_sweep_max,
    _sph_sweep_max,
    _tensor_factors,
)
from walsh_universal.grids import (
    DyadicGrid2D,
    DyadicInterval,
    DyadicSet1D,
    DyadicSet2D,
    StepFunction1D,
    walsh,
)
from walsh_universal.series import SparseCoeffs1D, SparseCoeffs2D


def oracle_sign(n, i, rank):
    s = 1
    for t in range(n.bit_length()):
        if (n >> t) & 1 and (i >> (rank - 1 - t)) & 1:
            s = -s
    return s


def oracle_grid2(triples, p, q, keep=lambda k, nu: True):
    vals = np.zeros((1 << p, 1 << q))
    for k, nu, c in triples:
        if keep(k, nu):
            for i in range(1 << p):
                for j in range(1 << q):
                    vals[i, j] += c * oracle_sign(k, i, p) * oracle_sign(nu, j, q)
    return vals


def keep_integral(vals, mask):
    return float(np.abs(vals)[mask].sum()) / vals.size


# ---------------------------------------------------------------------------
# cut enumeration vs exhaustive thresholds


def test_realized_prefixes_match_all_thresholds():
    cases = [
        ([2, 3, 4, 5, 6, 7], 2, 7),
        ([2, 5, 11], 1, 20),
        ([4], 4, 4),  # empty window
        ([3, 9], 5, 9),  # window strictly inside the frequencies
        ([], 1, 6),
        ([7, 8], 9, 30),  # window entirely above
    ]
    for ks, lo, hi in cases:
        brute = sorted({sum(1 for k in ks if k <= m) for m in range(lo, hi)})
        assert realized_prefixes(ks, lo, hi) == brute, (ks, lo, hi)


def test_realized_prefixes_random():
    rng = np.random.default_rng(41)
    for _ in range(50):
        ks = sorted(rng.choice(30, size=int(rng.integers(1, 8)), replace=False) + 1)
        lo = int(rng.integers(1, 25))
        hi = lo + int(rng.integers(0, 15))
        brute = sorted({sum(1 for k in ks if k <= m) for m in range(lo, hi)})
        assert realized_prefixes(ks, lo, hi) == brute


def test_sph_thresholds_match_all_radii():
    cases = [
        ([5, 10, 45], 0, 50),
        ([5, 10, 45], 5, 45),  # lower bound sits on a radius: no empty annulus
        ([5, 10, 45], 6, 44),  # neither endpoint realized
        ([13], 0, 12),  # everything above the window
        ([8, 8, 20], 8, 30),  # duplicates collapse
    ]
    for radii, lo_sq, hi_sq in cases:
        seen = {}
        for r_sq in range(lo_sq, hi_sq + 1):
            kept = frozenset(r for r in radii if lo_sq <= r <= r_sq)
            seen.setdefault(kept, r_sq)
        brute = sorted(seen.values())
        assert sph_thresholds(np.array(radii), lo_sq, hi_sq) == brute, (radii, lo_sq, hi_sq)


# ---------------------------------------------------------------------------
# tensor factor recovery


def test_tensor_factors_recovers_outer_products():
    x = SparseCoeffs1D(np.array([2, 5, 6]), np.array([0.5, -0.25, 1.0]))
    y = SparseCoeffs1D(np.array([9, 11]), np.array([2.0, -0.125]))
    t = SparseCoeffs2D.tensor(x, y)
    uks, unus, a, b = _tensor_factors(t)
    assert uks.tolist() == [2, 5, 6] and unus.tolist() == [9, 11]
    dense = np.zeros((3, 2))
    for k, nu, c in zip(t.ks, t.nus, t.cs):
        dense[uks.tolist().index(k), unus.tolist().index(nu)] = c
    np.testing.assert_allclose(np.multiply.outer(a, b), dense, atol=1e-14)


def test_tensor_factors_rejects_non_products():
    assert _tensor_factors(SparseCoeffs2D.empty()) is None
    # missing cell of the 2x2 grid
    holey = SparseCoeffs2D.from_triples([(2, 9, 1.0), (2, 11, 2.0), (5, 9, 3.0)])
    assert _tensor_factors(holey) is None
    # full grid, rank 2
    full = SparseCoeffs2D.from_triples(
        [(2, 9, 1.0), (2, 11, 2.0), (5, 9, 3.0), (5, 11, 7.0)]
    )
    assert _tensor_factors(full) is None
    single = _tensor_factors(SparseCoeffs2D.from_triples([(4, 7, -0.5)]))
    assert single is not None and single[2].tolist() == [-0.5]


# ---------------------------------------------------------------------------
# 1-D report: a hand case and its mutations


def walsh_step(rank, vals):
    return StepFunction1D(
        tuple((DyadicInterval(rank, i + 1), v) for i, v in enumerate(vals))
    )


def test_band_match_hand_case():
    c = SparseCoeffs1D(np.array([2]), np.array([0.25]))
    f = walsh_step(2, 0.25 * walsh(2, 2).values)
    rep = verify_band_match(f, 2, 0.5, c, DyadicSet1D.full(2))
    assert rep.ok
    assert rep.item("band_support").margin == 0.0
    assert rep.item("keep_measure").margin == pytest.approx(0.5)
    assert rep.item("power_sum").margin == pytest.approx(0.5 - 0.25**2.5)
    # window [start, top) is empty for a single frequency: vacuous prefixes
    assert rep.item("prefix_budget").margin == pytest.approx(0.5)
    assert "0 prefix classes" in rep.item("prefix_budget").note


def test_band_match_mutations_each_trip_one_item():
    c = SparseCoeffs1D(np.array([2]), np.array([0.25]))
    f = walsh_step(2, 0.25 * walsh(2, 2).values)
    full = DyadicSet1D.full(2)

    low = verify_band_match(f, 3, 0.5, c, full)  # frequency below the band
    assert low.item("band_support").ok is False

    wrong = walsh_step(2, 0.25 * walsh(3, 2).values)  # different target
    assert verify_band_match(wrong, 2, 0.5, c, full).item("match_on_keep").ok is False

    thin = DyadicSet1D(2, np.array([True, False, False, False]))
    assert verify_band_match(f, 2, 0.5, c, thin).item("keep_measure").ok is False

    tight = verify_band_match(f, 2, 0.01, c, full)  # 0.25^2.01 > 0.01
    assert tight.item("power_sum").ok is False


def test_prefix_budget_matches_exhaustive_pairs():
    # every threshold m in [start, top) x every subset of the 8 keep cells
    ks = np.array([2, 3, 5, 6])
    cs = np.array([0.25, -0.5, 0.125, 0.375])
    coeffs = SparseCoeffs1D(ks, cs)
    f_vals = coeffs.to_grid(3).values  # exact target: only prefixes can violate
    f = walsh_step(3, f_vals)
    tol = 0.5
    rep = verify_band_match(f, 2, tol, coeffs, DyadicSet1D.full(3))

    worst = 0.0
    for m in range(2, 6):
        s = np.zeros(8)
        for k, c in zip(ks, cs):
            if k <= m:
                s += c * np.array([oracle_sign(int(k), i, 3) for i in range(8)])
        for r in range(9):
            for cells in itertools.combinations(range(8), r):
                tot = sum(abs(s[i]) - abs(f_vals[i]) for i in cells) / 8.0
                worst = max(worst, tot)
    assert rep.item("prefix_budget").margin == pytest.approx(tol - worst)


# ---------------------------------------------------------------------------
# 2-D sweeps vs brute force


SWEEP_TRIPLES = [(2, 3, 0.5), (2, 6, -0.25), (5, 3, 0.75), (5, 6, 0.125), (7, 2, -0.5)]


def sweep_setup():
    coeffs = SparseCoeffs2D.from_triples(SWEEP_TRIPLES)
    rng = np.random.default_rng(43)
    keep = DyadicSet2D((3, 3), rng.integers(0, 2, size=(8, 8)).astype(bool))
    return coeffs, keep


def test_rect_sweep_generic_matches_brute_force():
    coeffs, keep = sweep_setup()
    assert _tensor_factors(coeffs) is None
    got, n_cuts = _rect_sweep_max(coeffs, keep, 2, 8, 10**9)
    brute = 0.0
    for n in range(2, 8):
        for m in range(2, 8):
            g = oracle_grid2(SWEEP_TRIPLES, 3, 3, keep=lambda k, nu: k <= n and nu <= m)
            brute = max(brute, keep_integral(g, keep.mask))
    assert got == pytest.approx(brute, abs=1e-12)
    assert n_cuts == len(realized_prefixes([2, 5, 7], 2, 8)) * len(
        realized_prefixes([2, 3, 6], 2, 8)
    )


def test_rect_sweep_tensor_path_matches_generic():
    x = SparseCoeffs1D(np.array([2, 3]), np.array([0.5, -0.25]))
    y = SparseCoeffs1D(np.array([4, 6]), np.array([1.0, 0.5]))
    coeffs = SparseCoeffs2D.tensor(x, y)
    assert _tensor_factors(coeffs) is not None
    _, keep = sweep_setup()
    got, _ = _rect_sweep_max(coeffs, keep, 1, 7, 10**9)
    triples = [(int(k), int(nu), float(c)) for k, nu, c in zip(coeffs.ks, coeffs.nus, coeffs.cs)]
    brute = 0.0
    for n in range(1, 7):
        for m in range(1, 7):
            g = oracle_grid2(triples, 3, 3, keep=lambda k, nu: k <= n and nu <= m)
            brute = max(brute, keep_integral(g, keep.mask))
    assert got == pytest.approx(brute, abs=1e-12)


def test_sph_sweep_exact_matches_brute_force():
    coeffs, keep = sweep_setup()
    lo_sq, hi_sq = 8, 90
    got, n_cuts, exact = _sph_sweep_max(coeffs, keep, lo_sq, hi_sq, 10**9)
    assert exact is True
    brute = 0.0
    for r_sq in range(lo_sq, hi_sq + 1):
        g = oracle_grid2(
            SWEEP_TRIPLES, 3, 3, keep=lambda k, nu: lo_sq <= k**2 + nu**2 <= r_sq
        )
        brute = max(brute, keep_integral(g, keep.mask))
    assert got == pytest.approx(brute, abs=1e-12)
    assert n_cuts == len(sph_thresholds(coeffs.radii_sq(), lo_sq, hi_sq))


def test_sph_sweep_empty_window():
    coeffs, keep = sweep_setup()
    got, n_cuts, exact = _sph_sweep_max(coeffs, keep, 200, 300, 10**9)
    assert (got, n_cuts, exact) == (0.0, 1, True)


def test_sph_sweep_tensor_bound_is_sound():
    # separated bands: y rows cannot interleave with the x spread
    x = SparseCoeffs1D(np.array([2, 3]), np.array([0.5, -0.25]))
    y = SparseCoeffs1D(np.array([32, 40]), np.array([1.0, -0.5]))
    coeffs = SparseCoeffs2D.tensor(x, y)
    keep = DyadicSet2D.full((2, 6))
    exact_val, _, flag = _sph_sweep_max(coeffs, keep, 0, 2 * 40**2, 10**9)
    assert flag is True
    bound, n_cuts, flag = _sph_sweep_max(coeffs, keep, 0, 2 * 40**2, 1)
    assert flag is False and n_cuts >= 1
    assert bound >= exact_val - 1e-12


def test_sph_sweep_l2_fallback_is_sound():
    coeffs, keep = sweep_setup()
    lo_sq, hi_sq = 8, 90
    exact_val, _, _ = _sph_sweep_max(coeffs, keep, lo_sq, hi_sq, 10**9)
    bound, _, flag = _sph_sweep_max(coeffs, keep, lo_sq, hi_sq, 1)  # not a tensor
    assert flag is False
    in_window = [c for k, nu, c in SWEEP_TRIPLES if lo_sq <= k**2 + nu**2 <= hi_sq]
    assert bound == pytest.approx(math.sqrt(sum(c * c for c in in_window)))
    assert bound >= exact_val - 1e-12


def test_sph_sweep_l2_fallback_when_rows_interleave():
    # adjacent y rows differ by less than the x spread: tensor bound unsound,
    # the L2 fallback must kick in instead
    x = SparseCoeffs1D(np.array([2, 7]), np.array([0.5, -0.25]))
    y = SparseCoeffs1D(np.array([8, 9]), np.array([1.0, -0.5]))
    coeffs = SparseCoeffs2D.tensor(x, y)
    keep = DyadicSet2D.full((3, 4))
    bound, _, flag = _sph_sweep_max(coeffs, keep, 0, 2 * 9**2, 1)
    assert flag is False
    assert bound == pytest.approx(math.sqrt(coeffs.energy()))


# ---------------------------------------------------------------------------
# e-dependent cut budget: modes and soundness


def budget_setup():
    # alternating signs keep partial sums well under the L2 energy bound,
    # so eps can be placed between the exact worst margin and 2*sqrt(energy)
    triples = [(2, 3, 0.25), (3, 5, -0.25), (5, 2, 0.25), (6, 6, -0.25)]
    coeffs = SparseCoeffs2D.from_triples(triples)
    keep = DyadicSet2D.full((3, 3))
    target = DyadicGrid2D((3, 3), np.zeros((8, 8)))
    return triples, coeffs, keep, target


def brute_pair_worst(triples, keep, rect_window, sph_window):
    worst = 0.0
    for n in range(*rect_window):
        for m in range(*rect_window):
            s_r = oracle_grid2(triples, 3, 3, keep=lambda k, nu: k <= n and nu <= m)
            for r_sq in range(sph_window[0], sph_window[1] + 1):
                s_a = oracle_grid2(
                    triples,
                    3,
                    3,
                    keep=lambda k, nu: sph_window[0] <= k**2 + nu**2 <= r_sq,
                )
                # worst subset keeps exactly the cells in excess (budget = 0)
                worst = max(worst, keep_integral(np.abs(s_r) + np.abs(s_a), keep.mask))
    return worst


def test_cut_budget_exact_pairs_matches_brute_force():
    triples, coeffs, keep, target = budget_setup()
    brute = brute_pair_worst(triples, keep, (2, 6), (8, 50))
    floor = 2.0 * math.sqrt(coeffs.energy())
    assert brute < floor  # sanity: the energy shortcut must not engage below
    eps = (brute + floor) / 2
    item = cut_budget_vs_target(coeffs, target, keep, eps, 2, 6, 8, 50)
    assert item.ok is True and "exact pairs" in item.note
    assert item.margin == pytest.approx(eps - brute, abs=1e-12)

    failing = cut_budget_vs_target(coeffs, target, keep, brute - 0.01, 2, 6, 8, 50)
    assert failing.ok is False


def test_cut_budget_energy_shortcut():
    _, coeffs, keep, target = budget_setup()
    eps = 2.0 * math.sqrt(coeffs.energy()) + 0.125
    item = cut_budget_vs_target(coeffs, target, keep, eps, 2, 6, 8, 50)
    assert item.ok is True and item.note == "L2 energy bound, all cuts"
    assert item.margin == pytest.approx(0.125)


def test_cut_budget_split_mode_is_conservative():
    triples, coeffs, keep, target = budget_setup()
    brute = brute_pair_worst(triples, keep, (2, 6), (8, 50))
    eps = (brute + 2.0 * math.sqrt(coeffs.energy())) / 2
    exact = cut_budget_vs_target(coeffs, target, keep, eps, 2, 6, 8, 50)
    split = cut_budget_vs_target(coeffs, target, keep, eps, 2, 6, 8, 50, pair_cap=0)
    assert "split bound" in split.note
    assert split.margin <= exact.margin + 1e-12


def test_cut_budget_empty_polynomial():
    _, _, keep, target = budget_setup()
    item = cut_budget_vs_target(SparseCoeffs2D.empty(), target, keep, 0.5, 1, 4, 2, 32)
    assert item.ok is True and item.note == "empty polynomial"
    assert item.margin == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# 2-D tensor report: band floors and mode differences


def test_tensor_band_separation_floors():
    from walsh_universal.grids import DyadicRect

    delta = DyadicRect(DyadicInterval(1, 1), DyadicInterval(1, 1))
    keep = DyadicSet2D.full((2, 5))
    # x top 3 -> strict floor 2*(9+1) = 20, rect floor 4
    at_floor = SparseCoeffs2D.from_triples([(3, 20, 0.5)])
    below = SparseCoeffs2D.from_triples([(3, 19, 0.5)])
    rect_ok = SparseCoeffs2D.from_triples([(3, 4, 0.5)])

    rep = verify_tensor_match(0.5, delta, 2, 0.5, at_floor, keep, mode="strict")
    assert rep.item("band_separation").ok is True
    assert rep.item("band_separation").margin == 0.0
    assert "y-band floor 20" in rep.item("band_separation").note

    rep = verify_tensor_match(0.5, delta, 2, 0.5, below, keep, mode="strict")
    assert rep.item("band_separation").ok is False

    rep = verify_tensor_match(0.5, delta, 2, 0.5, rect_ok, keep, mode="rect")
    assert rep.item("band_separation").ok is True
    assert rep.item("sph_cut_budget").ok is None
    assert "not claimed" in rep.item("sph_cut_budget").note

    low = verify_tensor_match(0.5, delta, 4, 0.5, at_floor, keep, mode="strict")
    assert low.item("support_band").ok is False


def test_tensor_report_empty_polynomial():
    from walsh_universal.grids import DyadicRect

    delta = DyadicRect(DyadicInterval(1, 1), DyadicInterval(1, 1))
    # gamma = 0: the zero polynomial matches everywhere, nothing is claimed away
    rep = verify_tensor_match(
        0.0, delta, 2, 0.5, SparseCoeffs2D.empty(), DyadicSet2D.full((1, 1))
    )
    assert rep.ok
    assert rep.item("support_band").note == "empty polynomial"


# ---------------------------------------------------------------------------
# report mechanics


def test_report_mechanics():
    items = (
        CheckItem("a", True, 0.25),
        CheckItem("b", None, -1.0, "not claimed"),
        CheckItem("c", True, 0.125, "tight"),
    )
    rep = CheckReport(items)
    assert rep.ok  # None does not fail a report
    assert rep.worst == 0.125  # and is excluded from the worst margin
    assert rep.item("b").note == "not claimed"
    with pytest.raises(KeyError):
        rep.item("missing")
    lines = rep.lines()
    assert lines[0].startswith("PASS  a") and lines[1].startswith("SKIP  b")
    assert "[tight]" in lines[2]

    bad = CheckReport((CheckItem("x", False, -0.5),))
    assert not bad.ok and bad.worst == -0.5
    assert bad.lines()[0].startswith("FAIL  x")
    assert CheckReport(()).worst == math.inf
