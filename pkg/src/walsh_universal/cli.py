"""Command-line front end: build | weight | approx | verify | info.

Exit codes are scriptable: 0 all conditions verified, 2 something was
built or traced but a verified condition failed, 3 hard errors (bad
flags, unreadable files, frequency budget exhausted).
"""

import argparse
import sys
from dataclasses import dataclass
from fractions import Fraction

from .builders import BuildLimits, DEFAULT_LIMITS_2D
from .errors import (
    ConstructionFailed,
    FrequencyBudgetExceeded,
    InsufficientDepth,
    ResolutionError,
    SeriesFileError,
    TargetNotApproximable,
)
from .pipeline import (
    _sup_budget,
    build_universal,
    build_weight,
    generate_catalog,
    greedy_subseries,
    micro_catalog,
    verify_block,
    verify_construction,
)
from .storage import FORMAT, load_series, load_target, save_series

EXIT_OK = 0
EXIT_UNVERIFIED = 2
EXIT_ERROR = 3

CSV_SCHEMA = "q,n_q,err_mu,bound_mu,err_rect_max,err_sph_max,bound_ps,status"


@dataclass(frozen=True)
class RunConfig:
    """One reproducible invocation: everything a build or trace depends on."""

    depth: int = 2
    epsilon: Fraction | None = None
    mode: str = "strict"
    fmax: int = DEFAULT_LIMITS_2D.fmax
    grid_rank: int | None = None
    seed: int = 0
    catalog_style: str = "micro"
    catalog_rank: int = 1
    catalog_repeats: int = 3
    target: str | None = None
    steps: int = 3
    out: str | None = None

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.mode not in ("strict", "rect"):
            raise ValueError(f"mode must be strict or rect, got {self.mode!r}")
        if self.fmax < 1 or self.steps < 1:
            raise ValueError("fmax and steps must be positive")
        if self.epsilon is not None and not 0 < self.epsilon < 1:
            raise ValueError("epsilon must be in (0, 1)")
        if self.catalog_style not in ("micro", "grid"):
            raise ValueError(f"catalog style must be micro or grid, got {self.catalog_style!r}")

    def echo(self):
        return {
            "depth": self.depth,
            "epsilon": None if self.epsilon is None else str(self.epsilon),
            "mode": self.mode,
            "fmax": self.fmax,
            "grid_rank": self.grid_rank,
            "seed": self.seed,
            "catalog": {
                "style": self.catalog_style,
                "rank": self.catalog_rank,
                "repeats": self.catalog_repeats,
            },
            "target": self.target,
            "steps": self.steps,
            # volatile: identical runs must give identical bytes wherever written
            "out": None,
        }


def _catalog_for(cfg):
    if cfg.catalog_style == "micro":
        return micro_catalog(max(cfg.depth, 1))
    return generate_catalog(max_rank=cfg.catalog_rank, repeats=cfg.catalog_repeats)


def _fmt_margin(m):
    return f"{m:+.6g}"


def _print_report(rep, indent="  ", file=None):
    file = file or sys.stdout
    for it in rep.items:
        status = "SKIP" if it.ok is None else ("PASS" if it.ok else "FAIL")
        note = f"  ({it.note})" if it.note else ""
        print(f"{indent}{it.name:<22} {status}  margin {_fmt_margin(it.margin)}{note}", file=file)


# ---------------------------------------------------------------------------
# subcommands


def cmd_build(args):
    cfg = RunConfig(
        depth=args.depth,
        epsilon=None if args.epsilon is None else Fraction(args.epsilon),
        mode=args.mode,
        fmax=args.fmax,
        grid_rank=args.grid_rank,
        seed=args.seed,
        catalog_style=args.catalog_style,
        catalog_rank=args.catalog_rank,
        catalog_repeats=args.catalog_repeats,
        out=args.out,
    )
    limits = BuildLimits(fmax=cfg.fmax, seed=cfg.seed)
    catalog = _catalog_for(cfg)
    series, records = build_universal(catalog, cfg.depth, mode=cfg.mode, limits=limits)
    weight = None
    if cfg.epsilon is not None:
        weight = build_weight(records, cfg.epsilon)
    save_series(cfg.out, series, records, weight, config=cfg.echo())

    print(f"built {series.depth} block(s), {cfg.mode} mode, frequencies < {series.blocks[-1]}")
    for rec in records:
        print(f"block {rec.index}: square [{rec.lo}, {rec.hi})  nnz {rec.coeffs.nnz}  "
              f"kept {rec.keep.measure:.6f}  h_s {rec.sup_budget:g}")
        _print_report(rec.report)
    if weight is not None:
        print(f"weight: eps {cfg.epsilon}, start level {weight.start}, "
              f"off-one measure {float(weight.ne_one_measure()):.3g}")
        _print_report(weight.report)
    print(f"wrote {cfg.out}")
    return EXIT_OK


def cmd_weight(args):
    series, records, _, config = load_series(args.series)
    eps = Fraction(args.epsilon)
    if not 0 < eps < 1:
        raise SeriesFileError("epsilon must be in (0, 1)", "--epsilon")
    weight = build_weight(records, eps)
    out = args.out or args.series
    if isinstance(config, dict):
        config = dict(config, epsilon=str(eps))
    save_series(out, series, records, weight, config=config)
    print(f"weight: eps {eps}, start level {weight.start}, depth {weight.depth}")
    for n, om, v in weight.levels:
        print(f"  level {n}: |Omega| = {om.measure:.10f}, mu_{n} = {v!r}")
    _print_report(weight.report)
    print(f"wrote {out}")
    return EXIT_OK


def _csv_rows(steps):
    rows = []
    for st in steps:
        bound_mu = 0.25 if st.step == 1 else 2.0 * 4.0 ** (-st.step)
        rows.append(
            f"{st.step},{st.block},{st.err_mu!r},{bound_mu!r},"
            f"{st.err_rect!r},{st.err_sph!r},{st.bound_cut!r},{st.status}"
        )
    return rows


def _emit_csv(lines, out):
    text = "\n".join(lines) + "\n"
    if out:
        with open(out, "w", encoding="ascii") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_approx(args):
    series, records, weight, _ = load_series(args.series)
    if weight is None:
        raise SeriesFileError(
            "series file has no weight section; run the weight subcommand first",
            args.series,
        )
    target = load_target(args.target)
    if args.grid_rank is not None and hasattr(target, "refine"):
        r = args.grid_rank
        target = target.refine((max(r, target.ranks[0]), max(r, target.ranks[1])))

    lines = [
        "# walsh-universal approx trace; bound_mu is the step admission bound"
        " (4^-1 at q=1, then 2*4^-q), bound_ps = 21*4^-q for the cut errors",
        CSV_SCHEMA,
    ]
    try:
        trace = greedy_subseries(target, series, records, weight, args.steps)
    except TargetNotApproximable as exc:
        lines += _csv_rows(exc.trace.steps)
        lines.append(f"# not approximable at step {exc.step}: best residual {exc.best!r}")
        _emit_csv(lines, args.out)
        print(f"approximation stopped: {exc}", file=sys.stderr)
        return EXIT_UNVERIFIED
    lines += _csv_rows(trace.steps)
    _emit_csv(lines, args.out)
    return EXIT_OK if trace.ok else EXIT_UNVERIFIED


def cmd_verify(args):
    series, records, weight, config = load_series(args.series)
    mode = config.get("mode", "strict") if isinstance(config, dict) else "strict"
    failures = []

    for rec in records:
        fresh = verify_block(
            rec.target, rec.coeffs, rec.keep, rec.lo, rec.hi, rec.index, mode=mode
        )
        for it in fresh.items:
            if it.ok is False:
                failures.append(
                    f"block {rec.index}: {it.name} fails, margin {_fmt_margin(it.margin)}"
                )
        stored = {it.name: it for it in rec.report.items}
        for it in fresh.items:
            old = stored.get(it.name)
            if old is None:
                failures.append(f"block {rec.index}: {it.name} missing from stored report")
            elif (old.ok, old.margin) != (it.ok, it.margin):
                failures.append(
                    f"block {rec.index}: {it.name} stored margin {old.margin!r} "
                    f"!= recomputed {it.margin!r}"
                )
        budget = _sup_budget(rec.target, rec.coeffs, rec.lo, rec.hi)
        if budget != rec.sup_budget:
            failures.append(
                f"block {rec.index}: stored h_s {rec.sup_budget!r} != recomputed {budget!r}"
            )
        print(f"block {rec.index}: {len(fresh.items)} conditions recomputed")
        _print_report(fresh)

    if weight is not None:
        eps = None
        if isinstance(config, dict) and config.get("epsilon"):
            eps = Fraction(config["epsilon"])
        rebuilt = build_weight(records, eps if eps is not None else weight.eps)
        if rebuilt.level_values() != weight.level_values():
            failures.append(
                f"weight: stored level values {weight.level_values()} "
                f"!= recomputed {rebuilt.level_values()}"
            )
        whole = verify_construction(series, records, weight)
        print(f"construction: {len(whole.items)} conditions recomputed")
        _print_report(whole)
        for it in whole.items:
            if it.ok is False:
                failures.append(f"construction: {it.name} fails, margin {_fmt_margin(it.margin)}")

    if failures:
        print(f"{len(failures)} condition(s) FAILED:", file=sys.stderr)
        for f in failures:
            print(f"  {f}", file=sys.stderr)
        return EXIT_UNVERIFIED
    print("all conditions verified; stored margins reproduced")
    return EXIT_OK


def cmd_info(args):
    series, records, weight, config = load_series(args.series)
    print(f"format: {FORMAT}")
    if isinstance(config, dict) and config:
        mode = config.get("mode", "?")
        seed = config.get("seed", "?")
        print(f"config: depth {series.depth}, mode {mode}, seed {seed}")
    print(f"bounds N_s: {list(series.blocks)}")
    if not records:
        print("blocks: none")
    for rec in records:
        print(f"block {rec.index}: square [{rec.lo}, {rec.hi})  nnz {rec.coeffs.nnz}  "
              f"kept {rec.keep.measure:.6f}")
    print(f"total nonzero coefficients: {series.coeffs.nnz}")
    for expo in (2.1, 2.5, 3.0):
        print(f"power sum at exponent {expo:g}: {series.coeffs.power_norm(expo)!r}")
    if weight is None:
        print("weight: none")
    else:
        print(f"weight: eps {weight.eps!r}, start level {weight.start}, "
              f"off-one measure {float(weight.ne_one_measure()):.3g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; 2 means "unverified" here, so remap
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _build_parser():
    p = _Parser(prog="walsh-universal", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build a block tower (and optionally its weight)")
    b.add_argument("--depth", type=int, default=2, help="number of blocks S (default 2)")
    b.add_argument("--epsilon", help="also build the weight at this epsilon (rational or decimal)")
    b.add_argument("--mode", choices=("strict", "rect"), default="strict")
    b.add_argument("--fmax", type=int, default=DEFAULT_LIMITS_2D.fmax,
                   help=f"frequency cap per axis (default {DEFAULT_LIMITS_2D.fmax})")
    b.add_argument("--grid-rank", type=int, default=None,
                   help="recorded in the config echo; grids size themselves")
    b.add_argument("--seed", type=int, default=0, help="placement seed; fixes the build bytes")
    b.add_argument("--catalog-style", choices=("micro", "grid"), default="micro",
                   help="micro: deep hairline-strip tower; grid: dense value grids")
    b.add_argument("--catalog-rank", type=int, default=1, help="grid catalog stratum cap")
    b.add_argument("--catalog-repeats", type=int, default=3, help="grid catalog repeat count")
    b.add_argument("--out", required=True, help="series file to write")
    b.set_defaults(func=cmd_build)

    w = sub.add_parser("weight", help="add or rebuild the weight on a series file")
    w.add_argument("series", help="series file from build")
    w.add_argument("--epsilon", required=True, help="weight epsilon (rational or decimal)")
    w.add_argument("--out", help="write here instead of updating in place")
    w.set_defaults(func=cmd_weight)

    a = sub.add_parser("approx", help="greedy approximation trace as CSV")
    a.add_argument("series", help="series file with a weight section")
    a.add_argument("--target", required=True,
                   help="target file: piece list or comma-separated grid")
    a.add_argument("--steps", type=int, default=3, help="number of greedy steps Q")
    a.add_argument("--grid-rank", type=int, default=None,
                   help="refine a grid target to at least this rank per axis")
    a.add_argument("--out", help="CSV path (default: stdout)")
    a.set_defaults(func=cmd_approx)

    v = sub.add_parser("verify", help="recompute all conditions from raw data")
    v.add_argument("series", help="series file to verify")
    v.set_defaults(func=cmd_verify)

    i = sub.add_parser("info", help="summarize a series file")
    i.add_argument("series", help="series file to inspect")
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SeriesFileError, InsufficientDepth, ResolutionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except FrequencyBudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ConstructionFailed as exc:
        print(f"failed: {exc}", file=sys.stderr)
        if exc.report is not None:
            _print_report(exc.report, file=sys.stderr)
        return EXIT_UNVERIFIED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
